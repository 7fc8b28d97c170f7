"""Quasisymmetry deviation and relative constraint errors.

Field data lives on a uniform periodic grid over ``phi, theta in [0, 2pi)``
(arrays shaped ``(n_phi, n_theta)``). The quasisymmetric part of ``B`` is its
area-weighted mean along lines of constant helical angle
``eta = theta - N * nfp * phi``; for ``N = 0`` these are rows of constant
``theta``. Lines must pass through grid nodes, which requires
``N * nfp * n_theta`` to be divisible by ``n_phi``.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


class GridResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class FieldOnSurface:
    nfp: int
    helicity: int
    B: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        w = np.array(self.weights, dtype=float)
        if B.ndim != 2 or B.shape != w.shape:
            raise ValueError(f"B {B.shape} and weights {w.shape} must be matching 2-D tables")
        if self.nfp < 1:
            raise ValueError("nfp must be positive")
        if self.helicity not in (0, 1):
            raise ValueError(f"helicity must be 0 or 1, got {self.helicity}")
        if not np.all(np.isfinite(B)) or np.any(B <= 0):
            raise ValueError("B must be finite and positive")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and positive")
        B.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.B.shape


@dataclass(frozen=True)
class QsReport:
    j_qs: float
    b_qs: np.ndarray
    b_nonqs: np.ndarray


def helical_shift(n_phi: int, n_theta: int, nfp: int, helicity: int) -> np.ndarray:
    """Theta-index offset of each phi row along a constant-eta line."""
    step = helicity * nfp * n_theta
    if step % n_phi:
        raise GridResolutionError(
            f"helical lines do not close on a {n_phi}x{n_theta} grid with nfp={nfp}; "
            f"choose n_theta so that nfp*n_theta is a multiple of n_phi "
            f"(e.g. n_theta = {n_phi // math.gcd(n_phi, nfp)}*k)"
        )
    return (np.arange(n_phi) * (step // n_phi)) % n_theta


def qs_projection(f: FieldOnSurface) -> np.ndarray:
    """``B_QS`` broadcast back onto the grid."""
    n_phi, n_theta = f.shape
    shift = helical_shift(n_phi, n_theta, f.nfp, f.helicity)
    # gather[p, l] is the theta index where line l crosses row p
    gather = (np.arange(n_theta)[None, :] + shift[:, None]) % n_theta
    rows = np.arange(n_phi)[:, None]
    Bw = (f.B * f.weights)[rows, gather]
    w = f.weights[rows, gather]
    line_mean = Bw.sum(axis=0) / w.sum(axis=0)
    out = np.empty_like(f.B)
    out[rows, gather] = np.broadcast_to(line_mean, (n_phi, n_theta))
    return out


def qs_report(f: FieldOnSurface) -> QsReport:
    b_qs = qs_projection(f)
    b_non = f.B - b_qs
    den = float(np.sum(b_qs**2 * f.weights))
    if den <= 0.0:
        raise ZeroDivisionError("quasisymmetric part of B vanishes")
    j = math.sqrt(float(np.sum(b_non**2 * f.weights)) / den)
    return QsReport(j, b_qs, b_non)


def j_qs(f: FieldOnSurface) -> float:
    return qs_report(f).j_qs


def constraint_errors(A: float, A_star: float, iota_bar: float | None, iota_star: float | None):
    """Signed relative errors ``(c_A, c_iota)``; ``c_iota`` is None without iota."""
    if A_star == 0:
        raise ZeroDivisionError("aspect-ratio target is zero")
    c_a = (A - A_star) / A_star
    if iota_bar is None or iota_star is None:
        return c_a, None
    if iota_star == 0:
        raise ZeroDivisionError("rotational-transform target is zero")
    return c_a, (iota_bar - iota_star) / iota_star


# --- file formats -------------------------------------------------------------

def _rows_to_field(rows, nfp: int, helicity: int) -> FieldOnSurface:
    data = np.array([[r["phi"], r["theta"], r["B"], r["norm_n"]] for r in rows], dtype=float)
    if data.size == 0:
        raise ValueError("field file has no rows")
    phis = np.unique(data[:, 0])
    thetas = np.unique(data[:, 1])
    if phis.size * thetas.size != data.shape[0]:
        raise ValueError("field rows do not form a complete tensor grid")
    ip = np.searchsorted(phis, data[:, 0])
    it = np.searchsorted(thetas, data[:, 1])
    B = np.full((phis.size, thetas.size), np.nan)
    w = np.full_like(B, np.nan)
    B[ip, it] = data[:, 2]
    w[ip, it] = data[:, 3]
    if np.isnan(B).any():
        raise ValueError("field rows contain duplicate nodes")
    return FieldOnSurface(nfp, helicity, B, w)


def _field_rows(f: FieldOnSurface):
    n_phi, n_theta = f.shape
    for p in range(n_phi):
        for q in range(n_theta):
            yield {
                "phi": TWO_PI * p / n_phi,
                "theta": TWO_PI * q / n_theta,
                "B": float(f.B[p, q]),
                "norm_n": float(f.weights[p, q]),
            }


def write_field_json(f: FieldOnSurface, path, **scalars) -> None:
    doc = {"nfp": f.nfp, "helicity": f.helicity, **scalars, "rows": list(_field_rows(f))}
    Path(path).write_text(json.dumps(doc))


def read_field_json(path) -> tuple[FieldOnSurface, dict]:
    """Returns the field and any extra scalars stored alongside it."""
    doc = json.loads(Path(path).read_text())
    field = _rows_to_field(doc["rows"], int(doc["nfp"]), int(doc["helicity"]))
    extras = {k: v for k, v in doc.items() if k not in ("rows", "nfp", "helicity")}
    return field, extras


def write_field_csv(f: FieldOnSurface, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["phi", "theta", "B", "norm_n"])
        writer.writeheader()
        for row in _field_rows(f):
            writer.writerow({k: repr(v) for k, v in row.items()})


def read_field_csv(path, nfp: int, helicity: int) -> FieldOnSurface:
    with open(path, newline="") as fh:
        rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    return _rows_to_field(rows, nfp, helicity)


def run_external_evaluator(command: list[str], surface_path, out_path, timeout: float | None = None):
    """Run ``command + [surface_path, out_path]`` and read its field output.

    The command receives a surface JSON (see ``surface.save_surface``, plus
    ``helicity``) and must write a field JSON with ``nfp``, ``helicity``,
    ``rows`` of ``(phi, theta, B, norm_n)`` and the scalars ``mean_iota`` and
    ``aspect_ratio`` (either may be null).
    """
    proc = subprocess.run(
        [*command, str(surface_path), str(out_path)],
        capture_output=True,
        text=True,
        timeout=timeout,
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"external evaluator exited with {proc.returncode}: {proc.stderr.strip()}"
        )
    return read_field_json(out_path)
