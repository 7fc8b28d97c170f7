"""Principal component analysis by dense SVD of the centered data."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PcaModel:
    """Centered linear projection onto the leading ``n_r`` directions.

    ``variance_spectrum`` holds per-component population variances and
    ``total_variance`` the variance of the full data, so explained fractions
    can be reported without the training set.
    """

    mean: np.ndarray
    components: np.ndarray
    variance_spectrum: np.ndarray
    total_variance: float

    @property
    def n_r(self) -> int:
        return self.components.shape[0]

    @property
    def n_x(self) -> int:
        return self.components.shape[1]

    @property
    def explained_fraction(self) -> float:
        if self.total_variance == 0.0:
            return 1.0
        return float(self.variance_spectrum.sum() / self.total_variance)


def _check_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array of feature vectors")
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 rows")
    return X


def _svd(X: np.ndarray):
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    # sign convention: largest-magnitude entry of each direction is positive
    pivots = vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)]
    vt = vt * np.where(pivots < 0, -1.0, 1.0)[:, None]
    return mean, s, vt


def max_components(data) -> int:
    X = _check_data(data)
    return min(X.shape[0] - 1, X.shape[1])


def fit(data, n_r: int) -> PcaModel:
    X = _check_data(data)
    limit = min(X.shape[0] - 1, X.shape[1])
    if not 1 <= n_r <= limit:
        raise ValueError(f"n_r={n_r} outside [1, {limit}] for data of shape {X.shape}")
    mean, s, vt = _svd(X)
    variances = s**2 / X.shape[0]
    return PcaModel(
        mean=mean,
        components=vt[:n_r].copy(),
        variance_spectrum=variances[:n_r].copy(),
        total_variance=float(variances.sum()),
    )


def encode(model: PcaModel, x) -> np.ndarray:
    """Codes for one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_x:
        raise ValueError(f"expected {model.n_x} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def decode(model: PcaModel, code) -> np.ndarray:
    code = np.asarray(code, dtype=float)
    if code.shape[-1] != model.n_r:
        raise ValueError(f"expected code length {model.n_r}, got {code.shape[-1]}")
    return code @ model.components + model.mean


def explained_variance_curve(data, max_nr: int | None = None) -> list[tuple[int, float]]:
    """Cumulative explained-variance fraction for ``n_r = 1 .. max_nr``."""
    X = _check_data(data)
    limit = min(X.shape[0] - 1, X.shape[1])
    max_nr = limit if max_nr is None else max_nr
    if not 1 <= max_nr <= limit:
        raise ValueError(f"max_nr={max_nr} outside [1, {limit}]")
    _, s, _ = _svd(X)
    var = s**2
    total = var.sum()
    if total == 0.0:
        return [(k, 1.0) for k in range(1, max_nr + 1)]
    frac = np.minimum(np.cumsum(var) / total, 1.0)
    return [(k, float(frac[k - 1])) for k in range(1, max_nr + 1)]


def to_dict(model: PcaModel) -> dict:
    return {
        "n_r": model.n_r,
        "n_x": model.n_x,
        "mean": model.mean.tolist(),
        "components": model.components.ravel().tolist(),
        "variance_spectrum": model.variance_spectrum.tolist(),
        "total_variance": model.total_variance,
    }


def from_dict(d: dict) -> PcaModel:
    n_r, n_x = int(d["n_r"]), int(d["n_x"])
    return PcaModel(
        mean=np.asarray(d["mean"], dtype=float),
        components=np.asarray(d["components"], dtype=float).reshape(n_r, n_x),
        variance_spectrum=np.asarray(d["variance_spectrum"], dtype=float),
        total_variance=float(d["total_variance"]),
    )


def save(model: PcaModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)))


def load(path) -> PcaModel:
    return from_dict(json.loads(Path(path).read_text()))
