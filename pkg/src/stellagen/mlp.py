"""Conditional noise-prediction network with hand-written backprop and Adam.

Layout of ``f(x_t, t, y)``::

    ex = sin_embed(x_t, per scalar) @ Wx + bx          -> x_embed_dim
    et = sin_embed(t)              @ Wt + bt          -> t_embed_dim
    ey = sin_embed(y, per scalar)  @ Wy + by          -> y_embed_dim
    h  = [ex, et, ey]
    h  = gelu(h @ W_k + b_k)   for k in range(hidden_layers)
    out = h @ Wo + bo

Everything is float64 numpy. GELU uses the exact erf form.
"""

from __future__ import annotations

import base64
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

SIN_BASE = 10000.0
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_width: int = 2048
    hidden_layers: int = 4
    x_embed_dim: int = 64
    t_embed_dim: int = 128
    y_embed_dim: int = 128
    cond_dim: int = 4
    x_sin_dim: int = 16
    t_sin_dim: int = 32
    y_sin_dim: int = 16
    output_dim: int | None = None

    def __post_init__(self):
        if self.output_dim is None:
            object.__setattr__(self, "output_dim", self.input_dim)
        if self.output_dim != self.input_dim:
            raise ValueError("output_dim must equal input_dim")
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name in ("x_sin_dim", "t_sin_dim", "y_sin_dim"):
            if getattr(self, name) % 2:
                raise ValueError(f"{name} must be even")

    @property
    def trunk_dim(self) -> int:
        return self.x_embed_dim + self.t_embed_dim + self.y_embed_dim


def sinusoidal_embed(v: float, dim: int) -> np.ndarray:
    """``[sin(v w_0), cos(v w_0), sin(v w_1), ...]`` with ``w_k = base**(-2k/dim)``."""
    if dim % 2:
        raise ValueError(f"embedding dimension must be even, got {dim}")
    return sinusoidal_features(np.array([[float(v)]]), dim)[0]


def _frequencies(dim: int) -> np.ndarray:
    return SIN_BASE ** (-2.0 * np.arange(dim // 2) / dim)


def sinusoidal_features(values: np.ndarray, dim: int) -> np.ndarray:
    """Per-scalar embedding of a ``(B, k)`` array, concatenated to ``(B, k*dim)``."""
    phase = values[:, :, None] * _frequencies(dim)
    out = np.empty(values.shape + (dim,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out.reshape(values.shape[0], -1)


def gelu(a: np.ndarray) -> np.ndarray:
    return 0.5 * a * (1.0 + erf(a * _INV_SQRT2))


def gelu_grad(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(a * _INV_SQRT2)) + a * _INV_SQRT2PI * np.exp(-0.5 * a * a)


def _layer_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, int]]:
    shapes = {
        "x_embed": (cfg.input_dim * cfg.x_sin_dim, cfg.x_embed_dim),
        "t_embed": (cfg.t_sin_dim, cfg.t_embed_dim),
        "y_embed": (cfg.cond_dim * cfg.y_sin_dim, cfg.y_embed_dim),
    }
    fan_in = cfg.trunk_dim
    for k in range(cfg.hidden_layers):
        shapes[f"hidden{k}"] = (fan_in, cfg.hidden_width)
        fan_in = cfg.hidden_width
    shapes["out"] = (fan_in, cfg.output_dim)
    return shapes


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})


def init_network(cfg: NetworkConfig, seed: int = 0) -> Network:
    """He fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fan_in, fan_out) in _layer_shapes(cfg).items():
        params[f"{name}.W"] = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        params[f"{name}.b"] = np.zeros(fan_out)
    return Network(cfg, params)


def zero_network(cfg: NetworkConfig) -> Network:
    net = init_network(cfg)
    return Network(cfg, {k: np.zeros_like(v) for k, v in net.params.items()})


def _as_batch(net: Network, x_t, t, y):
    cfg = net.config
    x_t = np.asarray(x_t, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x_t.ndim == 1
    x_t = np.atleast_2d(x_t)
    B = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (B,))
    y = np.broadcast_to(np.atleast_2d(y), (B, y.shape[-1]))
    if x_t.shape[1] != cfg.input_dim:
        raise ValueError(f"x_t has dimension {x_t.shape[1]}, expected {cfg.input_dim}")
    if y.shape[1] != cfg.cond_dim:
        raise ValueError(f"y has dimension {y.shape[1]}, expected {cfg.cond_dim}")
    for name, arr in (("x_t", x_t), ("t", t), ("y", y)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in {name}")
    return x_t, t, y, single


def _forward(net: Network, x_t, t, y):
    cfg, p = net.config, net.params
    feats = {
        "x_embed": sinusoidal_features(x_t, cfg.x_sin_dim),
        "t_embed": sinusoidal_features(t[:, None], cfg.t_sin_dim),
        "y_embed": sinusoidal_features(y, cfg.y_sin_dim),
    }
    h = np.concatenate([feats[k] @ p[f"{k}.W"] + p[f"{k}.b"] for k in feats], axis=1)
    inputs, pre = [h], []
    for k in range(cfg.hidden_layers):
        a = h @ p[f"hidden{k}.W"] + p[f"hidden{k}.b"]
        h = gelu(a)
        pre.append(a)
        inputs.append(h)
    out = h @ p["out.W"] + p["out.b"]
    return out, (feats, inputs, pre)


def forward(net: Network, x_t, t, y) -> np.ndarray:
    """Predicted noise for one input (1-D ``x_t``) or a batch of rows."""
    x_t, t, y, single = _as_batch(net, x_t, t, y)
    out, _ = _forward(net, x_t, t, y)
    return out[0] if single else out


def backward(net: Network, x_t, t, y, target) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared error over batch and outputs, with exact parameter gradients."""
    x_t, t, y, _ = _as_batch(net, x_t, t, y)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape != (x_t.shape[0], net.config.output_dim):
        raise ValueError(f"target has shape {target.shape}, expected {(x_t.shape[0], net.config.output_dim)}")
    cfg, p = net.config, net.params
    out, (feats, inputs, pre) = _forward(net, x_t, t, y)
    resid = out - target
    loss = float(np.mean(resid**2))
    if not math.isfinite(loss):
        raise NonFiniteError(
            f"non-finite loss (max |out| = {np.nanmax(np.abs(out)):.3g}, "
            f"max |target| = {np.nanmax(np.abs(target)):.3g})"
        )
    grads: dict[str, np.ndarray] = {}
    g = 2.0 * resid / resid.size
    grads["out.W"] = inputs[-1].T @ g
    grads["out.b"] = g.sum(axis=0)
    g = g @ p["out.W"].T
    for k in reversed(range(cfg.hidden_layers)):
        g = g * gelu_grad(pre[k])
        grads[f"hidden{k}.W"] = inputs[k].T @ g
        grads[f"hidden{k}.b"] = g.sum(axis=0)
        g = g @ p[f"hidden{k}.W"].T
    start = 0
    for name, width in (("x_embed", cfg.x_embed_dim), ("t_embed", cfg.t_embed_dim),
                        ("y_embed", cfg.y_embed_dim)):
        gs = g[:, start : start + width]
        grads[f"{name}.W"] = feats[name].T @ gs
        grads[f"{name}.b"] = gs.sum(axis=0)
        start += width
    return loss, {k: grads[k] for k in p}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(net: Network, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in net.params.items()}
    return AdamState({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, net: Network, grads: dict[str, np.ndarray]):
    """Bias-corrected Adam update, applied in place; returns ``(net, state)``."""
    if grads.keys() != net.params.keys():
        raise ValueError("gradient keys do not match network parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, g in grads.items():
        if g.shape != net.params[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, expected {net.params[k].shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        net.params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# --- serialization ------------------------------------------------------------

def array_to_json(a: np.ndarray) -> dict:
    """Row-major little-endian float64, base64 encoded."""
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"dtype": "<f8", "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}


def array_from_json(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d.get("dtype", "<f8")).astype(float).reshape(d["shape"])


def network_to_dict(net: Network) -> dict:
    return {
        "config": asdict(net.config),
        "params": {k: array_to_json(v) for k, v in net.params.items()},
    }


def network_from_dict(d: dict) -> Network:
    cfg = NetworkConfig(**d["config"])
    params = {k: array_from_json(v) for k, v in d["params"].items()}
    net = Network(cfg, params)
    expected = init_network(cfg).params
    for k, v in expected.items():
        if k not in params or params[k].shape != v.shape:
            raise ValueError(f"checkpoint parameter {k} missing or misshapen")
    return net


def adam_to_dict(state: AdamState) -> dict:
    return {
        "step": state.step,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m": {k: array_to_json(v) for k, v in state.m.items()},
        "v": {k: array_to_json(v) for k, v in state.v.items()},
    }


def adam_from_dict(d: dict) -> AdamState:
    return AdamState(
        m={k: array_from_json(v).copy() for k, v in d["m"].items()},
        v={k: array_from_json(v).copy() for k, v in d["v"].items()},
        step=int(d["step"]),
        lr=float(d["lr"]),
        beta1=float(d["beta1"]),
        beta2=float(d["beta2"]),
        eps=float(d["eps"]),
    )
