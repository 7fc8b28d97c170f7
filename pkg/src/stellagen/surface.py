"""Tensor-Fourier boundary surfaces in Cartesian form.

A stellarator-symmetric surface with ``nfp`` field periods is described by
three coefficient tables indexed ``(i, j)`` with ``i`` in ``[0, 2*m_pol]``
(poloidal basis ``w_i``) and ``j`` in ``[0, 2*n_tor]`` (toroidal basis
``v_j``)::

    w = 1, cos(theta), ..., cos(m_pol theta), sin(theta), ..., sin(m_pol theta)
    v = 1, cos(nfp phi), ..., cos(n_tor nfp phi), sin(nfp phi), ...

``xhat`` keeps the even block pairs (cos/cos and sin/sin), ``yhat`` and ``z``
keep the odd ones. The rotated frame gives::

    x = xhat cos(phi) - yhat sin(phi)
    y = xhat sin(phi) + yhat cos(phi)

Flattening order for :func:`pack` is ``xhat`` block 1, ``xhat`` block 2,
``yhat`` block 1, ``yhat`` block 2, ``z`` block 1, ``z`` block 2, each block
row-major in ``(i, j)``. :func:`coefficient_labels` lists the position of
every entry and serves as the remapping table for foreign orderings.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi
TABLES = ("x", "y", "z")


class DegenerateSurfaceError(ValueError):
    """Raised when geometry is requested for a surface with vanishing normals."""


def feature_length(m_pol: int, n_tor: int) -> int:
    """Number of free coefficients for the given truncation."""
    if m_pol < 0 or n_tor < 0:
        raise ValueError("m_pol and n_tor must be non-negative")
    even = (m_pol + 1) * (n_tor + 1) + m_pol * n_tor
    odd = (m_pol + 1) * n_tor + m_pol * (n_tor + 1)
    return even + 2 * odd


def _blocks(table: str, m_pol: int, n_tor: int) -> list[tuple[range, range]]:
    low_i, high_i = range(0, m_pol + 1), range(m_pol + 1, 2 * m_pol + 1)
    low_j, high_j = range(0, n_tor + 1), range(n_tor + 1, 2 * n_tor + 1)
    if table == "x":
        return [(low_i, low_j), (high_i, high_j)]
    return [(low_i, high_j), (high_i, low_j)]


def coefficient_labels(m_pol: int, n_tor: int) -> list[tuple[str, int, int]]:
    """``(table, i, j)`` for each position of the packed vector, in order."""
    labels = []
    for table in TABLES:
        for rows, cols in _blocks(table, m_pol, n_tor):
            labels.extend((table, i, j) for i in rows for j in cols)
    return labels


def legal_mask(table: str, m_pol: int, n_tor: int) -> np.ndarray:
    mask = np.zeros((2 * m_pol + 1, 2 * n_tor + 1), dtype=bool)
    for rows, cols in _blocks(table, m_pol, n_tor):
        if len(rows) and len(cols):
            mask[rows.start : rows.stop, cols.start : cols.stop] = True
    return mask


@dataclass(frozen=True)
class FourierSurface:
    """Coefficient tables of shape ``(2*m_pol + 1, 2*n_tor + 1)``.

    Entries outside the legal blocks of each table must be zero.
    """

    nfp: int
    m_pol: int
    n_tor: int
    x_coeffs: np.ndarray
    y_coeffs: np.ndarray
    z_coeffs: np.ndarray

    def __post_init__(self):
        if int(self.nfp) != self.nfp or self.nfp < 1:
            raise ValueError(f"nfp must be a positive integer, got {self.nfp}")
        if self.m_pol < 0 or self.n_tor < 0:
            raise ValueError("m_pol and n_tor must be non-negative")
        shape = (2 * self.m_pol + 1, 2 * self.n_tor + 1)
        for name in TABLES:
            arr = np.array(getattr(self, f"{name}_coeffs"), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name}_coeffs has shape {arr.shape}, expected {shape}")
            if np.any(arr[~legal_mask(name, self.m_pol, self.n_tor)] != 0.0):
                raise ValueError(f"{name}_coeffs has nonzero entries outside the legal blocks")
            arr.setflags(write=False)
            object.__setattr__(self, f"{name}_coeffs", arr)

    @classmethod
    def zeros(cls, nfp: int, m_pol: int, n_tor: int) -> "FourierSurface":
        shape = (2 * m_pol + 1, 2 * n_tor + 1)
        return cls(nfp, m_pol, n_tor, np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def with_coeffs(self, **tables: np.ndarray) -> "FourierSurface":
        current = {f"{t}_coeffs": getattr(self, f"{t}_coeffs") for t in TABLES}
        current.update({f"{k}_coeffs": v for k, v in tables.items()})
        return FourierSurface(self.nfp, self.m_pol, self.n_tor, **current)

    def scaled(self, factor: float) -> "FourierSurface":
        return self.with_coeffs(
            x=factor * self.x_coeffs, y=factor * self.y_coeffs, z=factor * self.z_coeffs
        )


def pack(s: FourierSurface) -> np.ndarray:
    parts = []
    for table in TABLES:
        arr = getattr(s, f"{table}_coeffs")
        for rows, cols in _blocks(table, s.m_pol, s.n_tor):
            parts.append(arr[rows.start : rows.stop, cols.start : cols.stop].ravel())
    return np.concatenate(parts)


def unpack(v, nfp: int, m_pol: int, n_tor: int) -> FourierSurface:
    v = np.asarray(v, dtype=float)
    expected = feature_length(m_pol, n_tor)
    if v.ndim != 1 or v.size != expected:
        raise ValueError(f"coefficient vector has length {v.size}, expected {expected}")
    shape = (2 * m_pol + 1, 2 * n_tor + 1)
    tables = {}
    pos = 0
    for table in TABLES:
        arr = np.zeros(shape)
        for rows, cols in _blocks(table, m_pol, n_tor):
            size = len(rows) * len(cols)
            arr[rows.start : rows.stop, cols.start : cols.stop] = v[pos : pos + size].reshape(
                len(rows), len(cols)
            )
            pos += size
        tables[f"{table}_coeffs"] = arr
    return FourierSurface(nfp, m_pol, n_tor, **tables)


def circular_torus(major: float, minor: float, nfp: int = 1, m_pol: int = 1, n_tor: int = 0):
    """Axisymmetric torus ``xhat = R + r cos(theta)``, ``z = r sin(theta)``."""
    if m_pol < 1:
        raise ValueError("a torus needs m_pol >= 1")
    s = FourierSurface.zeros(nfp, m_pol, n_tor)
    x = np.zeros_like(s.x_coeffs)
    z = np.zeros_like(s.z_coeffs)
    x[0, 0] = major
    x[1, 0] = minor
    z[m_pol + 1, 0] = minor
    return s.with_coeffs(x=x, z=z)


def _basis(angle: np.ndarray, order: int, multiplier: int):
    """Basis values and angle-derivatives, shape ``(len(angle), 2*order + 1)``."""
    # reduce before multiplying by the mode number to keep the phase exact
    a = np.mod(multiplier * np.asarray(angle, dtype=float), TWO_PI)
    k = np.arange(1, order + 1)
    ka = np.outer(a, k)
    cos, sin = np.cos(ka), np.sin(ka)
    ones = np.ones((a.size, 1))
    val = np.hstack([ones, cos, sin])
    kk = multiplier * k
    der = np.hstack([np.zeros((a.size, 1)), -kk * sin, kk * cos])
    return val, der


def _components(s: FourierSurface, phi: np.ndarray, theta: np.ndarray, derivatives: bool):
    """Tensor-product evaluation on ``phi x theta``: arrays of shape (n_phi, n_theta)."""
    w, dw = _basis(theta, s.m_pol, 1)
    v, dv = _basis(phi, s.n_tor, s.nfp)
    out = {}
    for name in TABLES:
        c = getattr(s, f"{name}_coeffs")
        out[name] = v @ c.T @ w.T
        if derivatives:
            out[name + "_p"] = dv @ c.T @ w.T
            out[name + "_t"] = v @ c.T @ dw.T
    return out


def evaluate(s: FourierSurface, phi, theta):
    """Cartesian point(s) at angles ``(phi, theta)``; arrays broadcast elementwise."""
    phi_b, theta_b = np.broadcast_arrays(np.asarray(phi, float), np.asarray(theta, float))
    flat_phi, flat_theta = phi_b.ravel(), theta_b.ravel()
    w, _ = _basis(flat_theta, s.m_pol, 1)
    v, _ = _basis(flat_phi, s.n_tor, s.nfp)
    xh = np.einsum("pj,ij,pi->p", v, s.x_coeffs, w)
    yh = np.einsum("pj,ij,pi->p", v, s.y_coeffs, w)
    z = np.einsum("pj,ij,pi->p", v, s.z_coeffs, w)
    a = np.mod(flat_phi, TWO_PI)
    c, sn = np.cos(a), np.sin(a)
    x = xh * c - yh * sn
    y = xh * sn + yh * c
    shape = phi_b.shape
    if shape == ():
        return float(x[0]), float(y[0]), float(z[0])
    return x.reshape(shape), y.reshape(shape), z.reshape(shape)


@dataclass(frozen=True)
class SurfaceGrid:
    """Points, tangents and normals on a uniform periodic ``(phi, theta)`` grid.

    Arrays are shaped ``(n_phi, n_theta, 3)`` (vectors) or ``(n_phi, n_theta)``.
    """

    n_phi: int
    n_theta: int
    phi: np.ndarray
    theta: np.ndarray
    points: np.ndarray
    d_phi: np.ndarray
    d_theta: np.ndarray
    normals: np.ndarray
    normal_norms: np.ndarray

    @property
    def cell_area(self) -> float:
        """Quadrature weight of one node in ``dphi dtheta``."""
        return (TWO_PI / self.n_phi) * (TWO_PI / self.n_theta)


def uniform_angles(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


def default_resolution(s: FourierSurface) -> tuple[int, int]:
    return 4 * s.n_tor * s.nfp + 16, 4 * s.m_pol + 16


def build_grid(s: FourierSurface, n_phi: int, n_theta: int) -> SurfaceGrid:
    if n_phi < 4 or n_theta < 4:
        raise ValueError("grid needs at least 4 nodes per direction")
    phi, theta = uniform_angles(n_phi), uniform_angles(n_theta)
    comp = _components(s, phi, theta, derivatives=True)
    c = np.cos(phi)[:, None]
    sn = np.sin(phi)[:, None]
    xh, yh = comp["x"], comp["y"]
    points = np.stack([xh * c - yh * sn, xh * sn + yh * c, comp["z"]], axis=-1)
    # product rule on the rotating frame
    d_phi = np.stack(
        [
            (comp["x_p"] - yh) * c - (comp["y_p"] + xh) * sn,
            (comp["x_p"] - yh) * sn + (comp["y_p"] + xh) * c,
            comp["z_p"],
        ],
        axis=-1,
    )
    d_theta = np.stack(
        [
            comp["x_t"] * c - comp["y_t"] * sn,
            comp["x_t"] * sn + comp["y_t"] * c,
            comp["z_t"],
        ],
        axis=-1,
    )
    normals = np.cross(d_phi, d_theta)
    return SurfaceGrid(
        n_phi=n_phi,
        n_theta=n_theta,
        phi=phi,
        theta=theta,
        points=points,
        d_phi=d_phi,
        d_theta=d_theta,
        normals=normals,
        normal_norms=np.linalg.norm(normals, axis=-1),
    )


@dataclass(frozen=True)
class GeometrySummary:
    area: float
    volume: float
    minor_radius: float
    major_radius: float
    aspect_ratio: float


def geometry(
    s: FourierSurface,
    n_phi: int | None = None,
    n_theta: int | None = None,
    tol: float = 1e-12,
) -> GeometrySummary:
    """Area, volume and radii by trapezoidal quadrature over the full torus.

    The minor radius comes from the cross-sectional area averaged over the
    cylindrical angle, the major radius from the volume.
    """
    if n_phi is None or n_theta is None:
        dp, dt = default_resolution(s)
        n_phi = n_phi or dp
        n_theta = n_theta or dt
    g = build_grid(s, n_phi, n_theta)
    scale = max(float(np.max(np.abs(g.points))), 1.0) ** 2
    if float(np.min(g.normal_norms)) <= tol * scale:
        raise DegenerateSurfaceError("surface has vanishing normals")
    w = g.cell_area
    area = float(np.sum(g.normal_norms) * w)
    volume = float(np.sum(np.einsum("pqk,pqk->pq", g.points, g.normals)) * w / 3.0)
    if volume <= 0.0:
        raise DegenerateSurfaceError(
            f"non-positive enclosed volume {volume:.6g}: normals point inward"
        )
    x, y, z = g.points[..., 0], g.points[..., 1], g.points[..., 2]
    rho2 = x * x + y * y
    if float(np.min(rho2)) <= tol * scale:
        raise DegenerateSurfaceError("surface touches the vertical axis")
    # cylindrical-angle derivatives times rho^2
    ang_p = x * g.d_phi[..., 1] - y * g.d_phi[..., 0]
    ang_t = x * g.d_theta[..., 1] - y * g.d_theta[..., 0]
    integrand = (g.d_theta[..., 2] * ang_p - g.d_phi[..., 2] * ang_t) / np.sqrt(rho2)
    mean_section = abs(float(np.sum(integrand)) * w) / TWO_PI
    minor = math.sqrt(mean_section / math.pi)
    major = volume / (2.0 * math.pi**2 * minor**2)
    return GeometrySummary(area, volume, minor, major, major / minor)


def aspect_ratio(s: FourierSurface, n_phi: int | None = None, n_theta: int | None = None) -> float:
    return geometry(s, n_phi, n_theta).aspect_ratio


def surface_to_dict(s: FourierSurface) -> dict:
    return {
        "nfp": int(s.nfp),
        "m_pol": int(s.m_pol),
        "n_tor": int(s.n_tor),
        "x_coeffs": s.x_coeffs.tolist(),
        "y_coeffs": s.y_coeffs.tolist(),
        "z_coeffs": s.z_coeffs.tolist(),
    }


def surface_from_dict(d: dict) -> FourierSurface:
    return FourierSurface(
        int(d["nfp"]),
        int(d["m_pol"]),
        int(d["n_tor"]),
        np.asarray(d["x_coeffs"], dtype=float),
        np.asarray(d["y_coeffs"], dtype=float),
        np.asarray(d["z_coeffs"], dtype=float),
    )


def save_surface(s: FourierSurface, path) -> None:
    Path(path).write_text(json.dumps(surface_to_dict(s)))


def load_surface(path) -> FourierSurface:
    return surface_from_dict(json.loads(Path(path).read_text()))


def write_grid_csv(grid: SurfaceGrid, path) -> None:
    """One row per node: ``phi, theta, x, y, z, norm_n``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phi", "theta", "x", "y", "z", "norm_n"])
        for p in range(grid.n_phi):
            for q in range(grid.n_theta):
                x, y, z = grid.points[p, q]
                values = (grid.phi[p], grid.theta[q], x, y, z, grid.normal_norms[p, q])
                writer.writerow([repr(float(v)) for v in values])
