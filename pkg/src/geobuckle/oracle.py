"""Closed-form synthetic response standing in for the top-load simulation.

The base ring is clamped, the top ring is pushed down by 10 mm, the ribbed
body bulges radially and the reaction force either rises monotonically
(two-parameter family) or peaks inside the load window (four-parameter
family, read as buckling onset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import H_TOTAL, BottleParams, PointCloud

TOP_DISPLACEMENT = 10.0
BULGE_CENTER = 75.0
BULGE_WIDTH = 20.0
DEFAULT_NT = 101


@dataclass
class ForceCurve:
    times: np.ndarray
    forces: np.ndarray
    t_end: float = 1.0

    def __post_init__(self):
        if self.times.shape != self.forces.shape or self.times.ndim != 1:
            raise InputError("force curve times/forces must be equal-length vectors")


def bulge_amplitude(p: BottleParams) -> float:
    return 0.4 * p.r_rib * (p.d_rib / 25.0) * (35.0 / p.r_top)


def displacement_field(
    cloud: PointCloud, p: BottleParams, noise: float = 0.0, seed: int | None = None
) -> np.ndarray:
    """Per-node ``[N, 3]`` displacement (mm).

    ``u_z`` follows a cubic ramp from 0 at the base to -10 at the top; the
    radial bulge is Gaussian about mid-height with amplitude set by the rib
    depth, rib spacing and neck radius. Nodes at ``z == 0`` are exactly zero
    and nodes at ``z == H_TOTAL`` have ``u_z == -10`` exactly, also when noise
    is requested.
    """
    x, y, z = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    if np.any(z < 0.0) or np.any(z > H_TOTAL):
        raise InputError("cloud has nodes outside the bottle height range")
    zeta = z / H_TOTAL
    uz = -TOP_DISPLACEMENT * zeta * zeta * (3.0 - 2.0 * zeta)
    ur = bulge_amplitude(p) * np.exp(-(((z - BULGE_CENTER) / BULGE_WIDTH) ** 2))
    theta = np.arctan2(y, x)
    u = np.stack([ur * np.cos(theta), ur * np.sin(theta), uz], axis=1)
    if noise > 0.0:
        u = u + np.random.default_rng(seed).normal(0.0, noise, size=u.shape)
    base = z == 0.0
    top = z == H_TOTAL
    u[base] = 0.0
    u[top, 2] = -TOP_DISPLACEMENT
    return u


def peak_time(p: BottleParams) -> float:
    """Time of maximum force; beyond the window (1.5) for the two-parameter family."""
    if p.family == "two_param":
        return 1.5
    return 0.4 + 0.5 * (p.r_rib - 2.0) / 2.5


def peak_force(p: BottleParams) -> float:
    return 50.0 * (p.r_top / 20.0) * (25.0 / p.d_rib)


def reaction_curve(
    p: BottleParams, n_t: int = DEFAULT_NT, noise: float = 0.0, seed: int | None = None
) -> ForceCurve:
    """Reaction force ``F(t) = F_peak (t/t*) exp(1 - t/t*)`` on ``t_i = i/(n_t-1)``."""
    if n_t < 2:
        raise InputError("n_t must be at least 2")
    t = np.arange(n_t) / (n_t - 1)
    ts = peak_time(p)
    f = peak_force(p) * (t / ts) * np.exp(1.0 - t / ts)
    if noise > 0.0:
        f = f + np.random.default_rng(seed).normal(0.0, noise, size=f.shape)
        f[0] = 0.0
    return ForceCurve(t, f, 1.0)
