"""Per-sample evaluation rows, report CSVs and grouped quantile summaries.

Quantiles use linear interpolation between order statistics (numpy's
default ``"linear"`` method). Invalid rows are excluded from quantiles but
always counted in ``invalid_fraction``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .qsmetrics import FieldOnSurface, constraint_errors, j_qs
from .surface import DegenerateSurfaceError, FourierSurface, build_grid, geometry

QUANTILES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class EvaluationRow:
    sample_id: str
    group: str
    nfp: int
    helicity: int
    aspect_target: float
    iota_target: float
    aspect: float | None = None
    c_aspect: float | None = None
    iota: float | None = None
    c_iota: float | None = None
    j_qs: float | None = None
    valid: bool = True
    message: str = ""


_FIELDS = [f.name for f in fields(EvaluationRow)]
_FLOATS = {"aspect_target", "iota_target", "aspect", "c_aspect", "iota", "c_iota", "j_qs"}


def _fmt(name, value) -> str:
    if value is None:
        return ""
    if name in _FLOATS:
        return repr(float(value))
    if name == "valid":
        return "1" if value else "0"
    return str(value)


def _parse(name, text: str):
    if name in _FLOATS:
        return None if text == "" else float(text)
    if name in ("nfp", "helicity"):
        return int(text)
    if name == "valid":
        return text == "1"
    return text


def write_rows(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_FIELDS)
        for row in rows:
            writer.writerow([_fmt(n, getattr(row, n)) for n in _FIELDS])


def read_rows(path) -> list[EvaluationRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EvaluationRow(**{n: _parse(n, r[n]) for n in _FIELDS}) for r in reader]


def synthetic_qs_field(surface: FourierSurface, helicity: int, amplitude: float = 0.1,
                       n_phi: int | None = None, n_theta: int | None = None) -> FieldOnSurface:
    """Exactly quasisymmetric stand-in field ``1 + a cos(theta - N nfp phi)``.

    Uses the surface's own angles as if they were Boozer angles and its
    normals as area weights.
    """
    n_phi, n_theta = qs_resolution(surface, n_phi, n_theta)
    grid = build_grid(surface, n_phi, n_theta)
    eta = grid.theta[None, :] - helicity * surface.nfp * grid.phi[:, None]
    return FieldOnSurface(surface.nfp, helicity, 1.0 + amplitude * np.cos(eta), grid.normal_norms)


def qs_resolution(surface: FourierSurface, n_phi: int | None = None, n_theta: int | None = None):
    """Grid sizes on which helical lines close (``nfp * n_theta`` divisible by ``n_phi``)."""
    n_phi = n_phi or surface.nfp * (4 * surface.n_tor + 16)
    stride = n_phi // math.gcd(n_phi, surface.nfp)
    base = n_theta or 4 * surface.m_pol + 16
    return n_phi, stride * max(1, math.ceil(base / stride))


def evaluate_surface(sample_id: str, group: str, surface: FourierSurface, helicity: int,
                     aspect_target: float, iota_target: float, field_source=None,
                     n_phi: int | None = None, n_theta: int | None = None) -> EvaluationRow:
    """``field_source(surface, helicity) -> (FieldOnSurface | None, mean_iota | None)``."""
    base = dict(sample_id=sample_id, group=group, nfp=surface.nfp, helicity=helicity,
                aspect_target=aspect_target, iota_target=iota_target)
    try:
        aspect = geometry(surface, n_phi, n_theta).aspect_ratio
    except DegenerateSurfaceError as exc:
        return EvaluationRow(**base, valid=False, message=str(exc))
    c_a, _ = constraint_errors(aspect, aspect_target, None, None)
    iota = c_i = jq = None
    if field_source is not None:
        try:
            field, iota = field_source(surface, helicity)
        except Exception as exc:  # evaluator failure marks the sample invalid
            return EvaluationRow(**base, aspect=aspect, c_aspect=c_a, valid=False,
                                 message=f"field evaluation failed: {exc}")
        if field is not None:
            jq = j_qs(field)
        if iota is not None:
            _, c_i = constraint_errors(aspect, aspect_target, iota, iota_target)
    return EvaluationRow(**base, aspect=aspect, c_aspect=c_a, iota=iota, c_iota=c_i, j_qs=jq)


def _quantiles(values) -> list[float | None]:
    if len(values) == 0:
        return [None] * len(QUANTILES)
    return [float(q) for q in np.quantile(np.asarray(values, dtype=float), QUANTILES)]


SUMMARY_FIELDS = ["group", "n_total", "n_valid", "invalid_fraction"] + [
    f"{metric}_q{int(q * 100)}" for metric in ("abs_c_aspect", "abs_c_iota", "j_qs") for q in QUANTILES
] + ["frac_c_aspect_ok", "frac_c_iota_ok", "frac_j_qs_ok"]


def summarize(rows, c_threshold: float = 0.05, j_threshold: float = 0.01) -> list[dict]:
    """One summary per group in first-seen order, plus an ``all`` row."""
    groups: dict[str, list[EvaluationRow]] = {}
    for row in rows:
        groups.setdefault(row.group, []).append(row)
    groups["all"] = list(rows)
    out = []
    for name, members in groups.items():
        valid = [r for r in members if r.valid]
        entry = {"group": name, "n_total": len(members), "n_valid": len(valid),
                 "invalid_fraction": (len(members) - len(valid)) / len(members) if members else 0.0}
        metrics = {
            "abs_c_aspect": [abs(r.c_aspect) for r in valid if r.c_aspect is not None],
            "abs_c_iota": [abs(r.c_iota) for r in valid if r.c_iota is not None],
            "j_qs": [r.j_qs for r in valid if r.j_qs is not None],
        }
        for metric, vals in metrics.items():
            for q, v in zip(QUANTILES, _quantiles(vals)):
                entry[f"{metric}_q{int(q * 100)}"] = v
        for key, metric, thr in (("frac_c_aspect_ok", "abs_c_aspect", c_threshold),
                                 ("frac_c_iota_ok", "abs_c_iota", c_threshold),
                                 ("frac_j_qs_ok", "j_qs", j_threshold)):
            vals = metrics[metric]
            entry[key] = sum(v < thr for v in vals) / len(vals) if vals else None
        out.append(entry)
    return out


def write_summary(summary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for entry in summary:
            writer.writerow({k: "" if entry[k] is None else
                             (repr(entry[k]) if isinstance(entry[k], float) else entry[k])
                             for k in SUMMARY_FIELDS})
