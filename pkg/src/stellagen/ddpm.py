"""Conditional DDPM: linear noise schedule, training loop and ancestral sampler.

Timesteps run ``t = 1..T``; schedule arrays are stored 0-based so entry
``t - 1`` belongs to step ``t``. Diffusion acts on normalized PCA codes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mlp
from . import pca as pca_mod
from .dataset import ConditionRow, Dataset, Normalizer, batch_indices
from .surface import FourierSurface, unpack


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, model=None, adam_state=None, checkpoint=None):
        super().__init__(message)
        self.model = model
        self.adam_state = adam_state
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_start: float
    beta_end: float
    variance: str = "beta"

    @property
    def T(self) -> int:
        return self.beta.size

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t != np.round(t)) or np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep outside 1..{self.T}: {t}")
        return t.astype(int)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end,
                "variance": self.variance}


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                    variance: str = "beta") -> NoiseSchedule:
    """Linearly spaced betas. ``variance`` picks ``sigma_t**2 = beta_t`` or the
    posterior variance ``beta_tilde_t`` (``"beta_tilde"``)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if variance == "beta":
        sigma = np.sqrt(beta)
    elif variance == "beta_tilde":
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = np.sqrt(beta * (1.0 - prev) / (1.0 - alpha_bar))
    else:
        raise ValueError(f"unknown variance option {variance!r}")
    return NoiseSchedule(beta, alpha, alpha_bar, sigma, float(beta_start), float(beta_end), variance)


def schedule_from_dict(d: dict) -> NoiseSchedule:
    return linear_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]),
                           d.get("variance", "beta"))


def q_sample(schedule: NoiseSchedule, x0, t, z) -> np.ndarray:
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) z``; ``t`` may be per-row."""
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    if x0.shape != z.shape:
        raise ValueError(f"x0 {x0.shape} and z {z.shape} differ in shape")
    ab = schedule.alpha_bar[schedule.check_t(t) - 1]
    if np.ndim(ab) and x0.ndim > 1:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z


@dataclass
class Ddpm:
    schedule: NoiseSchedule
    network: mlp.Network
    pca: pca_mod.PcaModel | None = None
    normalizer: Normalizer | None = None
    surface_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.pca is not None and self.pca.n_r != self.network.config.input_dim:
            raise ValueError("network input_dim does not match the PCA dimension")


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 4096
    lr: float = 5e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    model: Ddpm
    adam_state: mlp.AdamState
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    rng_state: dict | None = None


def train(model: Ddpm, data: Dataset, config: TrainConfig, adam_state: mlp.AdamState | None = None,
          checkpoint_path=None, progress=None) -> TrainResult:
    """Noise-prediction training on already encoded and normalized records.

    The model's network is updated in place. On a non-finite loss a
    checkpoint is written (when ``checkpoint_path`` is set) and
    :class:`TrainingDiverged` is raised.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if adam_state is None:
        adam_state = mlp.init_adam(model.network, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 1])
    T = model.schedule.T
    result = TrainResult(model, adam_state)
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in batch_indices(len(data), config.batch_size, config.seed, epoch):
            x0 = data.features[idx]
            y = data.conditions[idx]
            t = rng.integers(1, T + 1, size=idx.size)
            z = rng.standard_normal(x0.shape)
            x_t = q_sample(model.schedule, x0, t, z)
            try:
                loss, grads = mlp.backward(model.network, x_t, t, y, z)
            except mlp.NonFiniteError as exc:
                ckpt = None
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path, adam_state=adam_state,
                                    rng_state=rng.bit_generator.state,
                                    history=result.epoch_losses)
                    ckpt = str(checkpoint_path)
                raise TrainingDiverged(
                    f"epoch {epoch}, step {adam_state.step}: {exc}", model, adam_state, ckpt
                ) from exc
            mlp.adam_step(adam_state, model.network, grads)
            result.step_losses.append(loss)
            total += loss * idx.size
            count += idx.size
        result.epoch_losses.append(total / count)
        if progress is not None:
            progress(epoch, result.epoch_losses[-1])
    result.rng_state = rng.bit_generator.state
    return result


def _draw_rng(seed: int, stream: int, draw: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, draw])))


def sample(model: Ddpm, y, count: int, seed: int = 0, stream: int = 0,
           normalized_conditions: bool = False) -> np.ndarray:
    """Ancestral sampling; returns ``(count, n_r)`` codes in normalized space.

    Each draw has its own counter-based noise stream keyed by
    ``(seed, stream, draw)``, so draws do not depend on ``count``.
    """
    n_r = model.network.config.input_dim
    if count == 0:
        return np.zeros((0, n_r))
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("conditions must be finite")
    if model.normalizer is not None and not normalized_conditions:
        y = model.normalizer.normalize_conditions(y)
    T = model.schedule.T
    noise = np.stack([_draw_rng(seed, stream, i).standard_normal((T + 1, n_r)) for i in range(count)])
    x = noise[:, 0]
    yb = np.broadcast_to(y, (count, y.shape[-1]))
    s = model.schedule
    for t in range(T, 0, -1):
        eps = mlp.forward(model.network, x, np.full(count, t), yb)
        a, ab = s.alpha[t - 1], s.alpha_bar[t - 1]
        x = (x - (1.0 - a) / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
        if t > 1:
            x = x + s.sigma[t - 1] * noise[:, T - t + 1]
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step t={t}")
    return x


def decode_codes(model: Ddpm, codes) -> np.ndarray:
    """Normalized codes to full coefficient vectors."""
    if model.pca is None or model.normalizer is None:
        raise ValueError("model has no PCA/normalizer to decode with")
    return pca_mod.decode(model.pca, model.normalizer.denormalize_features(codes))


@dataclass(frozen=True)
class GeneratedSurface:
    id: str
    condition: ConditionRow
    coeffs: np.ndarray
    surface: FourierSurface


def generate_surfaces(model: Ddpm, rows, n_per_condition: int, seed: int = 0) -> list[GeneratedSurface]:
    if model.surface_shape is None:
        raise ValueError("model does not record the surface truncation (m_pol, n_tor)")
    m_pol, n_tor = model.surface_shape
    out = []
    for k, row in enumerate(rows):
        codes = sample(model, row.vector, n_per_condition, seed=seed, stream=k)
        if n_per_condition == 0:
            continue
        for i, coeffs in enumerate(decode_codes(model, codes)):
            out.append(GeneratedSurface(f"c{k:02d}-s{i:04d}", row, coeffs,
                                        unpack(coeffs, row.nfp, m_pol, n_tor)))
    return out


# --- checkpoints ----------------------------------------------------------------

def model_to_dict(model: Ddpm) -> dict:
    return {
        "schedule": model.schedule.to_dict(),
        "network": mlp.network_to_dict(model.network),
        "pca": None if model.pca is None else pca_mod.to_dict(model.pca),
        "normalizer": None if model.normalizer is None else model.normalizer.to_dict(),
        "surface_shape": None if model.surface_shape is None else list(model.surface_shape),
    }


def model_from_dict(d: dict) -> Ddpm:
    return Ddpm(
        schedule=schedule_from_dict(d["schedule"]),
        network=mlp.network_from_dict(d["network"]),
        pca=None if d.get("pca") is None else pca_mod.from_dict(d["pca"]),
        normalizer=None if d.get("normalizer") is None else Normalizer.from_dict(d["normalizer"]),
        surface_shape=None if d.get("surface_shape") is None else tuple(d["surface_shape"]),
    )


def save_checkpoint(model: Ddpm, path, adam_state: mlp.AdamState | None = None,
                    rng_state: dict | None = None, history=None, train_config: TrainConfig | None = None):
    doc = {
        "format": "stellagen-ddpm/1",
        "model": model_to_dict(model),
        "adam": None if adam_state is None else mlp.adam_to_dict(adam_state),
        "rng_state": rng_state,
        "loss_history": list(history or []),
        "train_config": None if train_config is None else asdict(train_config),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[Ddpm, dict]:
    """The model plus the raw document (optimizer state, history, ...)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "stellagen-ddpm/1":
        raise ValueError(f"{path} is not a stellagen checkpoint")
    return model_from_dict(doc["model"]), doc
