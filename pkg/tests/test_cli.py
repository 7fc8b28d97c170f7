import json
import math
import subprocess
import sys

import numpy as np
import pytest

from stellagen.cli import main
from stellagen.dataset import load_dataset
from stellagen.evaluation import EvaluationRow, read_rows, summarize, write_rows
from stellagen.surface import circular_torus, feature_length, geometry, pack, unpack

M_POL, N_TOR = 2, 2


@pytest.fixture
def config(tmp_path):
    cfg = {
        "seed": 3,
        "surface": {"m_pol": M_POL, "n_tor": N_TOR},
        "synth": {"count": 40, "nfp": 2, "helicity": 0},
        "n_r": 4,
        "schedule": {"T": 5, "beta_start": 1e-3, "beta_end": 0.2},
        "network": {"hidden_width": 8, "hidden_layers": 1, "x_embed_dim": 4, "t_embed_dim": 4,
                    "y_embed_dim": 4, "x_sin_dim": 4, "t_sin_dim": 4, "y_sin_dim": 4},
        "train": {"epochs": 2, "batch_size": 16},
        "n_samples": 2,
        "evaluation": {"field_source": "synthetic"},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*argv):
    assert main(list(argv)) == 0


def test_synth_data_is_consistent_and_reproducible(config, tmp_path):
    run("synth-data", "--config", str(config))
    first = (tmp_path / "data/dataset.jsonl").read_bytes()
    run("synth-data", "--config", str(config), "--out", str(tmp_path / "again.jsonl"))
    assert (tmp_path / "again.jsonl").read_bytes() == first
    data = load_dataset(tmp_path / "data/dataset.jsonl", feature_length(M_POL, N_TOR))
    assert len(data) == 40
    for rec in data:
        iota, aspect, nfp, helicity = rec.conditions
        assert 3.0 <= aspect <= 10.0
        recomputed = geometry(unpack(rec.features, int(nfp), M_POL, N_TOR)).aspect_ratio
        assert recomputed == pytest.approx(aspect, abs=1e-6)


def test_seed_flag_changes_data(config, tmp_path):
    run("synth-data", "--config", str(config))
    run("synth-data", "--config", str(config), "--seed", "4", "--out", str(tmp_path / "b.jsonl"))
    assert (tmp_path / "b.jsonl").read_bytes() != (tmp_path / "data/dataset.jsonl").read_bytes()


def test_ingest_rejects_wrong_length(config, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "z", "nfp": 2, "helicity": 0, "aspect_ratio": 4.0,
                               "mean_iota": 0.3, "coeffs": [1.0, 2.0]}) + "\n")
    assert main(["ingest", "--config", str(config), str(bad)]) == 1
    assert "'z' has 2 coefficients" in capsys.readouterr().err


def test_pca_fit_writes_model_and_curve(config, tmp_path):
    run("synth-data", "--config", str(config))
    run("pca-fit", "--config", str(config), "--curve", str(tmp_path / "curve.csv"))
    doc = json.loads((tmp_path / "models/pca.json").read_text())
    assert doc["n_r"] == 4 and doc["n_x"] == feature_length(M_POL, N_TOR)
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "n_r,fraction"
    fracs = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))


def test_train_twice_gives_identical_checkpoints(config, tmp_path):
    run("synth-data", "--config", str(config))
    run("train", "--config", str(config))
    run("train", "--config", str(config), "--out", str(tmp_path / "again.json"))
    assert (tmp_path / "models/ddpm.json").read_bytes() == (tmp_path / "again.json").read_bytes()
    doc = json.loads((tmp_path / "again.json").read_text())
    assert len(doc["loss_history"]) == 2 and doc["adam"]["step"] == 6


def test_sample_out_of_sample_table(config, tmp_path):
    run("synth-data", "--config", str(config))
    run("train", "--config", str(config))
    run("sample", "--config", str(config), "--conditions", "table1_out", "--n", "64")
    lines = (tmp_path / "out/samples.jsonl").read_text().splitlines()
    assert len(lines) == 8 * 64
    docs = [json.loads(line) for line in lines]
    assert len({d["id"] for d in docs}) == 512
    assert [d["nfp"] for d in docs[::64]] == [2, 3, 3, 4, 5, 6, 7, 8]
    assert all(len(d["coeffs"]) == feature_length(M_POL, N_TOR) for d in docs)


def test_missing_config_fails_cleanly(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stellagen", "train", "--config",
                           str(tmp_path / "nope.json")], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "config file not found" in proc.stderr
    assert "Traceback" not in proc.stderr


def test_unknown_config_key_rejected(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"sead": 1}))
    assert main(["synth-data", "--config", str(path)]) == 1
    assert "unknown RunConfig keys" in capsys.readouterr().err


def write_samples(path, items):
    with open(path, "w") as fh:
        for sid, surface, helicity, aspect, iota in items:
            fh.write(json.dumps({"id": sid, "nfp": surface.nfp, "helicity": helicity,
                                 "aspect_ratio": aspect, "mean_iota": iota, "m_pol": surface.m_pol,
                                 "n_tor": surface.n_tor, "coeffs": pack(surface).tolist()}) + "\n")


def test_evaluate_torus_and_degenerate(config, tmp_path):
    torus = circular_torus(2.0, 0.5, nfp=2, m_pol=M_POL, n_tor=N_TOR)
    zero = unpack(np.zeros(feature_length(M_POL, N_TOR)), 2, M_POL, N_TOR)
    samples = tmp_path / "s.jsonl"
    write_samples(samples, [("torus", torus, 0, 4.0, 0.3), ("helical", torus, 1, 5.0, 0.3),
                            ("flat", zero, 0, 4.0, 0.3)])
    run("evaluate", "--config", str(config), str(samples), "--out", str(tmp_path / "ev.csv"))
    rows = {r.sample_id: r for r in read_rows(tmp_path / "ev.csv")}
    assert rows["torus"].c_aspect == pytest.approx(0.0, abs=1e-9)
    assert rows["helical"].c_aspect == pytest.approx(-0.2, abs=1e-9)
    assert rows["torus"].j_qs < 1e-10 and rows["helical"].j_qs < 1e-10
    assert rows["torus"].iota is None and rows["torus"].c_iota is None
    assert not rows["flat"].valid and rows["flat"].message
    summary = (tmp_path / "ev.summary.csv").read_text().splitlines()
    header = summary[0].split(",")
    overall = dict(zip(header, summary[-1].split(",")))
    assert overall["group"] == "all"
    assert float(overall["invalid_fraction"]) == pytest.approx(1 / 3)


def test_full_pipeline_then_report(config, tmp_path):
    run("synth-data", "--config", str(config))
    run("train", "--config", str(config))
    run("sample", "--config", str(config), "--conditions", "table1-in")
    run("evaluate", "--config", str(config))
    run("report", "--config", str(config))
    rows = read_rows(tmp_path / "out/evaluation.csv")
    assert len(rows) == 7 * 2
    text = (tmp_path / "out/summary.csv").read_text().splitlines()
    assert text[-1].startswith("all,14,")


def quantile_oracle(values, q):
    """Linear interpolation between order statistics at position q*(n-1)."""
    s = sorted(values)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def test_summary_quantiles_against_sort_oracle():
    rng = np.random.default_rng(8)
    rows = []
    for i in range(37):
        c = float(rng.normal(0, 0.05))
        rows.append(EvaluationRow(f"s{i}", "g", 2, 0, 4.0, 0.3, aspect=4 * (1 + c), c_aspect=c,
                                  j_qs=float(rng.random() * 0.02)))
    rows.append(EvaluationRow("bad", "g", 2, 0, 4.0, 0.3, valid=False, message="degenerate"))
    entry = summarize(rows)[0]
    abs_c = [abs(r.c_aspect) for r in rows if r.valid]
    for q in (0.25, 0.5, 0.75):
        assert entry[f"abs_c_aspect_q{int(q * 100)}"] == pytest.approx(quantile_oracle(abs_c, q), rel=1e-14)
    assert entry["invalid_fraction"] == pytest.approx(1 / 38)
    assert entry["frac_c_aspect_ok"] == pytest.approx(sum(v < 0.05 for v in abs_c) / 37)
    assert entry["abs_c_iota_q50"] is None and entry["frac_c_iota_ok"] is None


def test_report_rows_roundtrip(tmp_path):
    rows = [EvaluationRow("a", "g1", 3, 1, 8.0, 1.3, aspect=8.1, c_aspect=0.0125, iota=1.2,
                          c_iota=-1 / 13, j_qs=1e-3),
            EvaluationRow("b", "g2", 2, 0, 4.0, 0.3, valid=False, message="inward, normals")]
    write_rows(rows, tmp_path / "r.csv")
    assert read_rows(tmp_path / "r.csv") == rows
