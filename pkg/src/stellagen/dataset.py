"""Coefficient/condition records: JSON-Lines I/O, normalization, splits, batches.

Conditions are ordered ``(mean_iota, aspect_ratio, nfp, helicity)`` and
stored as floats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CONDITION_NAMES = ("mean_iota", "aspect_ratio", "nfp", "helicity")
N_CONDITIONS = len(CONDITION_NAMES)


class DatasetFormatError(ValueError):
    pass


def check_conditions(conditions, where: str = "") -> None:
    iota, aspect, nfp, helicity = (float(c) for c in conditions)
    prefix = f"{where}: " if where else ""
    if not (nfp >= 1 and nfp == int(nfp)):
        raise DatasetFormatError(f"{prefix}nfp must be a positive integer, got {nfp}")
    if helicity not in (0.0, 1.0):
        raise DatasetFormatError(f"{prefix}helicity must be 0 or 1, got {helicity}")
    if not aspect > 1.0:
        raise DatasetFormatError(f"{prefix}aspect ratio must exceed 1, got {aspect}")
    if not iota > 0.0:
        raise DatasetFormatError(f"{prefix}mean iota must be positive, got {iota}")


@dataclass(frozen=True)
class Record:
    features: np.ndarray
    conditions: np.ndarray
    id: str = ""


class Dataset:
    """Immutable table of feature vectors with their conditions and ids."""

    def __init__(self, features, conditions, ids: Sequence[str] | None = None, n_x: int | None = None):
        features = np.array(features, dtype=float)
        conditions = np.array(conditions, dtype=float)
        if features.size == 0:
            features = features.reshape(0, n_x or (features.shape[-1] if features.ndim == 2 else 0))
            conditions = conditions.reshape(0, conditions.shape[-1] if conditions.ndim == 2 else N_CONDITIONS)
        if features.ndim != 2 or conditions.ndim != 2 or features.shape[0] != conditions.shape[0]:
            raise ValueError(
                f"features {features.shape} and conditions {conditions.shape} do not align"
            )
        if n_x is not None and features.shape[1] != n_x:
            raise ValueError(f"features have length {features.shape[1]}, expected {n_x}")
        if ids is None:
            ids = [str(i) for i in range(features.shape[0])]
        ids = tuple(str(i) for i in ids)
        if len(ids) != features.shape[0]:
            raise ValueError("ids do not match the number of records")
        features.setflags(write=False)
        conditions.setflags(write=False)
        self.features = features
        self.conditions = conditions
        self.ids = ids

    @property
    def n_x(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Record:
        return Record(self.features[i], self.conditions[i], self.ids[i])

    def __iter__(self) -> Iterator[Record]:
        return (self[i] for i in range(len(self)))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(
            self.features[index], self.conditions[index], [self.ids[i] for i in index], n_x=self.n_x
        )

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.conditions, self.ids)

    def with_conditions(self, conditions) -> "Dataset":
        return Dataset(self.features, conditions, self.ids)


# --- JSON Lines ------------------------------------------------------------------

def load_dataset(path, expected_nx: int) -> Dataset:
    features, conditions, ids = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                rec_id = str(doc["id"])
                coeffs = doc["coeffs"]
                cond = [doc["mean_iota"], doc["aspect_ratio"], doc["nfp"], doc["helicity"]]
                cond = [float(c) for c in cond]
                coeffs = [float(c) for c in coeffs]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if len(coeffs) != expected_nx:
                raise DatasetFormatError(
                    f"record {rec_id!r} has {len(coeffs)} coefficients, expected {expected_nx}"
                )
            check_conditions(cond, f"record {rec_id!r}")
            features.append(coeffs)
            conditions.append(cond)
            ids.append(rec_id)
    return Dataset(
        np.array(features).reshape(len(ids), expected_nx),
        np.array(conditions).reshape(len(ids), N_CONDITIONS),
        ids,
        n_x=expected_nx,
    )


def record_to_json(rec: Record) -> str:
    iota, aspect, nfp, helicity = (float(c) for c in rec.conditions)
    return json.dumps(
        {
            "id": rec.id,
            "nfp": int(nfp),
            "helicity": int(helicity),
            "aspect_ratio": aspect,
            "mean_iota": iota,
            "coeffs": [float(c) for c in rec.features],
        }
    )


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w") as fh:
        for rec in data:
            fh.write(record_to_json(rec) + "\n")


# --- normalization ---------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    condition_mean: np.ndarray
    condition_scale: np.ndarray

    def __post_init__(self):
        for name in ("feature_scale", "condition_scale"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")

    def normalize_features(self, x):
        x = np.asarray(x, dtype=float)
        _check_dim(x, self.feature_mean, "features")
        return (x - self.feature_mean) / self.feature_scale

    def denormalize_features(self, x):
        x = np.asarray(x, dtype=float)
        _check_dim(x, self.feature_mean, "features")
        return x * self.feature_scale + self.feature_mean

    def normalize_conditions(self, y):
        y = np.asarray(y, dtype=float)
        _check_dim(y, self.condition_mean, "conditions")
        return (y - self.condition_mean) / self.condition_scale

    def denormalize_conditions(self, y):
        y = np.asarray(y, dtype=float)
        _check_dim(y, self.condition_mean, "conditions")
        return y * self.condition_scale + self.condition_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature_mean", "feature_scale", "condition_mean", "condition_scale")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def _check_dim(x: np.ndarray, ref: np.ndarray, what: str) -> None:
    if x.shape[-1:] != ref.shape:
        raise ValueError(f"{what} have dimension {x.shape[-1:]}, expected {ref.shape}")


def _mean_scale(a: np.ndarray, floor: float):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std < floor, 1.0, std)


def fit_normalizer(data: Dataset, floor: float = 1e-8) -> Normalizer:
    """Population z-scoring; dimensions with std below ``floor`` get unit scale."""
    if len(data) == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    if floor <= 0:
        raise ValueError("floor must be positive")
    fm, fs = _mean_scale(data.features, floor)
    cm, cs = _mean_scale(data.conditions, floor)
    return Normalizer(fm, fs, cm, cs)


def normalize(rec: Record, norm: Normalizer) -> Record:
    return Record(norm.normalize_features(rec.features), norm.normalize_conditions(rec.conditions), rec.id)


def denormalize(rec: Record, norm: Normalizer) -> Record:
    return Record(
        norm.denormalize_features(rec.features), norm.denormalize_conditions(rec.conditions), rec.id
    )


def normalize_dataset(data: Dataset, norm: Normalizer) -> Dataset:
    return Dataset(
        norm.normalize_features(data.features), norm.normalize_conditions(data.conditions), data.ids
    )


# --- splitting and batching --------------------------------------------------

def split(data: Dataset, fractions: tuple[float, float], seed: int) -> tuple[Dataset, Dataset]:
    train_frac, val_frac = fractions
    if train_frac < 0 or val_frac < 0 or abs(train_frac + val_frac - 1.0) > 1e-9:
        raise ValueError(f"fractions {fractions} must be non-negative and sum to 1")
    order = np.random.default_rng(seed).permutation(len(data))
    n_train = int(round(train_frac * len(data)))
    return data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def batches(data: Dataset, batch_size: int = 4096, seed: int = 0, epoch: int = 0) -> list[Dataset]:
    return [data.subset(idx) for idx in batch_indices(len(data), batch_size, seed, epoch)]


# --- condition table fixture -------------------------------------------------

@dataclass(frozen=True)
class ConditionRow:
    nfp: int
    helicity: int
    aspect_ratio: float
    mean_iota: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.mean_iota, self.aspect_ratio, self.nfp, self.helicity], dtype=float)

    @property
    def label(self) -> str:
        kind = "QA" if self.helicity == 0 else "QH"
        return f"nfp={self.nfp} {kind} A={self.aspect_ratio:g} iota={self.mean_iota:g}"


@dataclass(frozen=True)
class ConditionTable:
    in_sample: tuple[ConditionRow, ...]
    out_of_sample: tuple[ConditionRow, ...]


def _rows(raw) -> tuple[ConditionRow, ...]:
    return tuple(ConditionRow(int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in raw)


def condition_table() -> ConditionTable:
    raw = json.loads(resources.files("stellagen").joinpath("data/table1.json").read_text())
    return ConditionTable(_rows(raw["in_sample"]), _rows(raw["out_of_sample"]))


def load_condition_rows(spec: str) -> tuple[ConditionRow, ...]:
    """``table1-in``, ``table1-out`` or a JSON file of ``[nfp, N, A, iota]`` rows."""
    key = spec.lower().replace("_", "-")
    table = condition_table()
    if key in ("table1-in", "table1-in-sample"):
        return table.in_sample
    if key in ("table1-out", "table1-out-of-sample"):
        return table.out_of_sample
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"condition set {spec!r} is neither a built-in table alias nor a file")
    raw = json.loads(path.read_text())
    if isinstance(raw, dict):
        raw = raw.get("rows", raw.get("out_of_sample", []))
    return _rows(raw)
