"""Desk-scale synthetic boundaries: rotating-ellipse tori with mild shaping.

Each surface has major radius 1 and a cross-section whose area is set by a
nominal aspect ratio; the stored aspect ratio is always the one measured by
:func:`stellagen.surface.geometry`, never the nominal value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .surface import FourierSurface, geometry, legal_mask, pack


@dataclass
class SynthConfig:
    count: int = 1000
    nfp: int = 2
    helicity: int = 0
    m_pol: int = 10
    n_tor: int = 10
    aspect_range: tuple[float, float] = (3.0, 10.0)
    holdout: list[float] = field(default_factory=list)
    holdout_halfwidth: float = 0.25
    iota_placeholder: float = 0.5
    elongation_max: float = 0.4
    shaping: float = 0.05
    noise: float = 1e-3


def _excluded(a: float, cfg: SynthConfig) -> bool:
    lo, hi = cfg.aspect_range
    if not lo <= a <= hi:
        return True
    return any(abs(a - h) < cfg.holdout_halfwidth for h in cfg.holdout)


def _nominal_aspect(rng: np.random.Generator, cfg: SynthConfig) -> float:
    lo, hi = cfg.aspect_range
    for _ in range(10000):
        a = rng.uniform(lo, hi)
        if not _excluded(a, cfg):
            return a
    raise ValueError("aspect-ratio range is fully covered by holdout bands")


def random_surface(rng: np.random.Generator, cfg: SynthConfig, aspect: float) -> FourierSurface:
    m, n = cfg.m_pol, cfg.n_tor
    if m < 2 or n < 1:
        raise ValueError("synthetic family needs m_pol >= 2 and n_tor >= 1")
    s = FourierSurface.zeros(cfg.nfp, m, n)
    x, y, z = np.zeros_like(s.x_coeffs), np.zeros_like(s.y_coeffs), np.zeros_like(s.z_coeffs)
    r_eff = 1.0 / aspect
    delta = rng.uniform(0.0, cfg.elongation_max) * r_eff
    r = math.sqrt(r_eff**2 + delta**2)
    # xhat = 1 + r cos(t) + delta cos(t - nfp p);  z = r sin(t) - delta sin(t - nfp p)
    x[0, 0] = 1.0
    x[1, 0] = r
    x[1, 1] = delta
    x[m + 1, n + 1] = delta
    z[m + 1, 0] = r
    z[m + 1, 1] = -delta
    z[1, n + 1] = delta
    # axis excursion, toroidal shift and triangularity
    sh = cfg.shaping * r_eff
    x[0, 1] = rng.uniform(-sh, sh)
    z[0, n + 1] = rng.uniform(-sh, sh)
    y[0, n + 1] = rng.uniform(-sh, sh)
    tri = rng.uniform(-sh, sh)
    x[2, 0] = tri
    z[m + 2, 0] = -tri
    # small broadband noise on the low-order legal coefficients
    amp = cfg.noise * r_eff
    rows = [0, 1, 2, m + 1, m + 2]
    cols = [0, 1, n + 1]
    for name, arr in (("x", x), ("y", y), ("z", z)):
        mask = legal_mask(name, m, n)
        for i in rows:
            for j in cols:
                if mask[i, j]:
                    arr[i, j] += amp * rng.standard_normal()
    return s.with_coeffs(x=x, y=y, z=z)


def synthesize(cfg: SynthConfig, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    features, conditions, ids = [], [], []
    while len(ids) < cfg.count:
        surf = random_surface(rng, cfg, _nominal_aspect(rng, cfg))
        a = geometry(surf).aspect_ratio
        if _excluded(a, cfg):
            continue
        features.append(pack(surf))
        conditions.append([cfg.iota_placeholder, a, cfg.nfp, cfg.helicity])
        ids.append(f"synth-{seed}-{len(ids):05d}")
    return Dataset(np.array(features).reshape(len(ids), -1), np.array(conditions).reshape(len(ids), 4), ids)
