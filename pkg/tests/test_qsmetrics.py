import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stellagen.qsmetrics import (
    FieldOnSurface,
    GridResolutionError,
    constraint_errors,
    j_qs,
    qs_projection,
    qs_report,
    read_field_csv,
    read_field_json,
    run_external_evaluator,
    write_field_csv,
    write_field_json,
)
from stellagen.surface import build_grid, circular_torus, save_surface


def grid(n_phi, n_theta):
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    return np.meshgrid(phi, theta, indexing="ij")


def torus_weights(n_phi, n_theta, R=2.0, r=0.5):
    _, T = grid(n_phi, n_theta)
    return r * (R + r * np.cos(T))


def quadrature_oracle(B_fn, w_fn, nfp, n_phi, n_theta):
    """Axisymmetric J_QS by brute-force sums: phi-average each theta column."""
    P, T = grid(n_phi, n_theta)
    B, w = B_fn(P, T), w_fn(P, T)
    num = den = 0.0
    for q in range(n_theta):
        avg = sum(B[p, q] * w[p, q] for p in range(n_phi)) / sum(w[p, q] for p in range(n_phi))
        for p in range(n_phi):
            num += (B[p, q] - avg) ** 2 * w[p, q]
            den += avg**2 * w[p, q]
    return math.sqrt(num / den)


def test_constant_field():
    f = FieldOnSurface(3, 0, np.ones((12, 10)), torus_weights(12, 10))
    np.testing.assert_array_equal(qs_projection(f), 1.0)
    assert j_qs(f) == 0.0


def test_theta_only_field_is_its_own_projection():
    P, T = grid(16, 12)
    B = 1.0 + 0.2 * np.cos(T) + 0.05 * np.sin(2 * T)
    f = FieldOnSurface(2, 0, B, torus_weights(16, 12))
    np.testing.assert_allclose(qs_projection(f), B, atol=1e-15)
    assert j_qs(f) < 1e-15


@pytest.mark.parametrize("nfp", [1, 2, 5])
def test_axisymmetric_torus_mirror_field(nfp):
    n_phi, n_theta = 8 * nfp + 8, 24
    P, _ = grid(n_phi, n_theta)
    f = FieldOnSurface(nfp, 0, 1.0 + 0.1 * np.cos(nfp * P), torus_weights(n_phi, n_theta))
    # theta weight cancels; mean of cos^2 over phi is 1/2
    assert j_qs(f) == pytest.approx(0.1 / math.sqrt(2), abs=1e-9)


@pytest.mark.parametrize("nfp, n_phi, n_theta", [(1, 16, 32), (4, 24, 30), (5, 20, 36)])
def test_helical_field_exactly_quasisymmetric(nfp, n_phi, n_theta):
    P, T = grid(n_phi, n_theta)
    B = 1.0 + 0.1 * np.cos(T - nfp * P)
    f = FieldOnSurface(nfp, 1, B, np.ones_like(B))
    np.testing.assert_allclose(qs_projection(f), B, atol=1e-10)
    assert j_qs(f) < 1e-8


def test_helical_field_not_qs_under_axisymmetric_projection():
    P, T = grid(16, 32)
    B = 1.0 + 0.1 * np.cos(T - 2 * P)
    assert j_qs(FieldOnSurface(2, 0, B, np.ones_like(B))) > 0.05


def test_helical_projection_against_explicit_line_average():
    nfp, n_phi, n_theta = 3, 12, 8
    rng = np.random.default_rng(4)
    B = 1.0 + 0.1 * rng.random((n_phi, n_theta))
    w = 0.5 + rng.random((n_phi, n_theta))
    f = FieldOnSurface(nfp, 1, B, w)
    proj = qs_projection(f)
    shift = nfp * n_theta // n_phi
    for line in range(n_theta):
        nodes = [(p, (line + p * shift) % n_theta) for p in range(n_phi)]
        expected = sum(B[n] * w[n] for n in nodes) / sum(w[n] for n in nodes)
        for n in nodes:
            assert proj[n] == pytest.approx(expected, rel=1e-14)


def test_non_closing_helical_grid_raises():
    f = FieldOnSurface(3, 1, np.ones((10, 7)), np.ones((10, 7)))
    with pytest.raises(GridResolutionError, match="n_theta"):
        qs_projection(f)


def test_band_limited_field_matches_fine_quadrature():
    nfp, eps, delta = 2, 0.05, 0.03

    def B_fn(P, T):
        return 1.0 + eps * np.cos(T) + delta * np.cos(nfp * P)

    def w_fn(P, T):
        return 1.0 + 0.0 * P

    coarse = FieldOnSurface(nfp, 0, B_fn(*grid(12, 10)), w_fn(*grid(12, 10)))
    reference = quadrature_oracle(B_fn, w_fn, nfp, 96, 80)
    assert j_qs(coarse) == pytest.approx(reference, rel=1e-8)


def test_report_decomposition_and_orthogonality(rng):
    P, T = grid(20, 16)
    B = 1.0 + 0.1 * np.cos(T) + 0.03 * np.sin(2 * P - T) + 0.01 * rng.standard_normal(P.shape)
    w = torus_weights(20, 16)
    rep = qs_report(FieldOnSurface(2, 0, B, w))
    np.testing.assert_allclose(rep.b_qs + rep.b_nonqs, B, atol=1e-12)
    assert abs(np.sum(rep.b_qs * rep.b_nonqs * w)) < 1e-10
    assert rep.j_qs >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0), st.sampled_from([0, 1]))
def test_scale_invariance_and_decomposition(seed, c, helicity):
    rng = np.random.default_rng(seed)
    nfp, n_phi = 2, 8
    n_theta = 12
    B = 1.0 + 0.3 * rng.random((n_phi, n_theta))
    w = 0.1 + rng.random((n_phi, n_theta))
    f = FieldOnSurface(nfp, helicity, B, w)
    g = FieldOnSurface(nfp, helicity, c * B, w)
    j1, j2 = j_qs(f), j_qs(g)
    assert j1 >= 0
    assert j2 == pytest.approx(j1, rel=1e-12)
    rep = qs_report(f)
    np.testing.assert_allclose(rep.b_qs + rep.b_nonqs, B, atol=1e-12)
    # weighted mean of the non-QS part along each averaging line vanishes
    assert abs(np.sum(rep.b_qs * rep.b_nonqs * w)) < 1e-10


def test_grid_refinement_convergence():
    nfp = 3

    def B_fn(P, T):
        return 1.0 + 0.1 * np.cos(T) + 0.02 * np.cos(T - nfp * P) + 0.01 * np.sin(2 * T + nfp * P)

    def w_fn(P, T):
        return 2.0 + 0.5 * np.cos(T) + 0.1 * np.cos(nfp * P)

    j1 = j_qs(FieldOnSurface(nfp, 0, B_fn(*grid(24, 16)), w_fn(*grid(24, 16))))
    j2 = j_qs(FieldOnSurface(nfp, 0, B_fn(*grid(48, 32)), w_fn(*grid(48, 32))))
    assert abs(j2 / j1 - 1) < 1e-6


def test_field_validation():
    with pytest.raises(ValueError, match="positive"):
        FieldOnSurface(1, 0, np.zeros((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError, match="helicity"):
        FieldOnSurface(1, 2, np.ones((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError, match="matching"):
        FieldOnSurface(1, 0, np.ones((4, 4)), np.ones((4, 5)))


@pytest.mark.parametrize(
    "A, A_star, expected", [(4.2, 4.0, 0.05), (3.8, 4.0, -0.05), (4.0, 4.0, 0.0)]
)
def test_constraint_errors_aspect(A, A_star, expected):
    c_a, c_i = constraint_errors(A, A_star, None, None)
    assert c_a == pytest.approx(expected, abs=1e-15)
    assert c_i is None


def test_constraint_errors_iota():
    assert constraint_errors(4.0, 4.0, 0.3, 0.3) == (0.0, 0.0)
    _, c_i = constraint_errors(4.0, 4.0, 0.33, 0.3)
    assert c_i == pytest.approx(0.1)
    with pytest.raises(ZeroDivisionError):
        constraint_errors(4.0, 0.0, None, None)
    with pytest.raises(ZeroDivisionError):
        constraint_errors(4.0, 4.0, 0.3, 0.0)


def test_field_file_roundtrips(tmp_path, rng):
    B = 1.0 + 0.1 * rng.random((6, 8))
    w = 1.0 + rng.random((6, 8))
    f = FieldOnSurface(3, 1, B, w)
    write_field_csv(f, tmp_path / "f.csv")
    g = read_field_csv(tmp_path / "f.csv", 3, 1)
    assert np.array_equal(g.B, B) and np.array_equal(g.weights, w)
    write_field_json(f, tmp_path / "f.json", mean_iota=0.4, aspect_ratio=6.0)
    h, extras = read_field_json(tmp_path / "f.json")
    assert np.array_equal(h.B, B) and h.helicity == 1
    assert extras == {"mean_iota": 0.4, "aspect_ratio": 6.0}


def test_external_evaluator_stub(tmp_path):
    surface = circular_torus(2.0, 0.5, nfp=2, m_pol=2, n_tor=2)
    save_surface(surface, tmp_path / "s.json")
    cmd = [sys.executable, "-m", "stellagen.stub_evaluator", "--iota", "0.42"]
    field, extras = run_external_evaluator(cmd, tmp_path / "s.json", tmp_path / "out.json")
    assert extras["mean_iota"] == 0.42
    assert extras["aspect_ratio"] == pytest.approx(4.0, abs=1e-9)
    assert j_qs(field) < 1e-10
    # the stub's weights are the surface's area elements
    n_phi, n_theta = field.shape
    np.testing.assert_allclose(field.weights, build_grid(surface, n_phi, n_theta).normal_norms)


def test_external_evaluator_failure(tmp_path):
    cmd = [sys.executable, "-c", "import sys; sys.exit(5)"]
    with pytest.raises(RuntimeError, match="exited with 5"):
        run_external_evaluator(cmd, tmp_path / "s.json", tmp_path / "o.json")


def test_stub_non_qs_component(tmp_path):
    surface = circular_torus(2.0, 0.5, nfp=2, m_pol=2, n_tor=2)
    save_surface(surface, tmp_path / "s.json")
    subprocess.run([sys.executable, "-m", "stellagen.stub_evaluator", str(tmp_path / "s.json"),
                    str(tmp_path / "o.json"), "--non-qs", "0.02"], check=True)
    field, _ = read_field_json(tmp_path / "o.json")
    assert j_qs(field) > 1e-3
