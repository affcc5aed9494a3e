"""Parametric bottle surfaces and design-space sampling.

A bottle is a surface of revolution ``r(z)`` about the z axis: a straight
base/body cylinder, a ribbed band where Gaussian grooves cut into the wall,
a smoothstep shoulder and a short neck.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InputError

Family = Literal["two_param", "four_param"]

# Profile constants (mm).
H_TOTAL = 160.0
R_BASE = 30.0
BASE_TOP = 40.0
SHOULDER_START = 110.0
SHOULDER_END = 150.0
RIB_BAND_START = 45.0
RIB_BAND_SPAN = 60.0
RIB_FIRST_CENTER = 50.0
RIB_LAST_CENTER = 105.0
RIB_WIDTH = 3.0
R_MIN = 5.0

TWO_PARAM_DEFAULTS = {"r_rib": 3.0, "p_rib": 12.0}

PARAM_NAMES = ("r_rib", "r_top", "p_rib", "d_rib")


@dataclass(frozen=True)
class DesignSpace:
    family: Family
    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.lo) or len(self.lo) != len(self.hi):
            raise InputError("design space bounds have inconsistent lengths")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise InputError("design space needs lo < hi on every axis")

    @property
    def dim(self) -> int:
        return len(self.names)

    def contains(self, params: "BottleParams", tol: float = 1e-9) -> bool:
        values = params.as_dict()
        return all(
            lo - tol <= values[n] <= hi + tol for n, lo, hi in zip(self.names, self.lo, self.hi)
        )

    def to_params(self, point) -> "BottleParams":
        values = dict(TWO_PARAM_DEFAULTS) if self.family == "two_param" else {}
        values.update({n: float(v) for n, v in zip(self.names, point)})
        return BottleParams(family=self.family, **values)


TWO_PARAM_SPACE = DesignSpace("two_param", ("r_top", "d_rib"), (20.0, 10.0), (35.0, 25.0))
FOUR_PARAM_SPACE = DesignSpace(
    "four_param", PARAM_NAMES, (2.0, 20.0, 5.0, 10.0), (4.5, 35.0, 20.0, 25.0)
)


def design_space(family: str) -> DesignSpace:
    if family == "two_param":
        return TWO_PARAM_SPACE
    if family == "four_param":
        return FOUR_PARAM_SPACE
    raise InputError(f"unknown bottle family {family!r}")


@dataclass(frozen=True)
class BottleParams:
    r_top: float
    d_rib: float
    r_rib: float = TWO_PARAM_DEFAULTS["r_rib"]
    p_rib: float = TWO_PARAM_DEFAULTS["p_rib"]
    family: Family = "two_param"

    def as_dict(self) -> dict[str, float]:
        return {n: float(getattr(self, n)) for n in PARAM_NAMES}

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "BottleParams":
        return cls(
            r_top=float(d["r_top"]),
            d_rib=float(d["d_rib"]),
            r_rib=float(d["r_rib"]),
            p_rib=float(d["p_rib"]),
            family=d["family"],
        )

    def in_bounds(self) -> bool:
        space = design_space(self.family)
        if not space.contains(self):
            return False
        if self.family == "two_param":
            return self.r_rib == TWO_PARAM_DEFAULTS["r_rib"] and self.p_rib == TWO_PARAM_DEFAULTS["p_rib"]
        return True


# ---------------------------------------------------------------------------
# Profile
# ---------------------------------------------------------------------------


def rib_centers(p: BottleParams) -> np.ndarray:
    n = 0
    while RIB_FIRST_CENTER + n * p.d_rib < RIB_LAST_CENTER:
        n += 1
    return RIB_FIRST_CENTER + p.d_rib * np.arange(n)


def rib_band_end(p: BottleParams) -> float:
    return RIB_BAND_START + p.p_rib * math.floor(RIB_BAND_SPAN / p.d_rib)


def _profile(z: np.ndarray, p: BottleParams) -> tuple[np.ndarray, np.ndarray]:
    """Radius and its z-derivative (clamp not yet applied)."""
    r = np.full_like(z, R_BASE)
    dr = np.zeros_like(z)

    tau = (z - SHOULDER_START) / (SHOULDER_END - SHOULDER_START)
    shoulder = (tau > 0.0) & (tau < 1.0)
    ts = tau[shoulder]
    delta = p.r_top - R_BASE
    r[shoulder] = R_BASE + delta * ts * ts * (3.0 - 2.0 * ts)
    dr[shoulder] = delta * 6.0 * ts * (1.0 - ts) / (SHOULDER_END - SHOULDER_START)
    neck = tau >= 1.0
    r[neck] = p.r_top

    band = (z >= RIB_BAND_START) & (z <= rib_band_end(p))
    zb = z[band]
    for zk in rib_centers(p):
        u = (zb - zk) / RIB_WIDTH
        bump = p.r_rib * np.exp(-u * u)
        r[band] -= bump
        dr[band] += bump * 2.0 * u / RIB_WIDTH
    return r, dr


def _check_z(z: np.ndarray) -> None:
    if np.any(z < 0.0) or np.any(z > H_TOTAL):
        raise InputError(f"z must lie in [0, {H_TOTAL}]")


def profile_radius(z, p: BottleParams):
    """Wall radius (mm) at height ``z`` (scalar or array), clamped at 5 mm."""
    za = np.atleast_1d(np.asarray(z, dtype=np.float64))
    _check_z(za)
    r, _ = _profile(za, p)
    r = np.maximum(r, R_MIN)
    return float(r[0]) if np.ndim(z) == 0 else r


def profile_slope(z, p: BottleParams):
    """Analytic ``dr/dz`` of :func:`profile_radius` (zero where clamped)."""
    za = np.atleast_1d(np.asarray(z, dtype=np.float64))
    _check_z(za)
    r, dr = _profile(za, p)
    dr = np.where(r < R_MIN, 0.0, dr)
    return float(dr[0]) if np.ndim(z) == 0 else dr


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def features(self) -> np.ndarray:
        """``[N, 6]`` concatenation of coordinates and normals."""
        return np.concatenate([self.points, self.normals], axis=1)


def generate_bottle(p: BottleParams, n_z: int = 64, n_theta: int = 16, strict: bool = True) -> PointCloud:
    """Sample the bottle surface on a uniform ``n_z x n_theta`` lattice.

    Points are ordered z-major (all angles of the lowest ring first). Normals
    are the normalized implicit-surface gradient ``(cos t, sin t, -r'(z))``.
    """
    if n_z < 4 or n_theta < 8:
        raise InputError("resolution must satisfy n_z >= 4 and n_theta >= 8")
    if strict and not p.in_bounds():
        raise InputError(f"bottle parameters outside the {p.family} design space: {p}")
    z = np.linspace(0.0, H_TOTAL, n_z)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    r = profile_radius(z, p)
    dr = profile_slope(z, p)

    zz = np.repeat(z, n_theta)
    rr = np.repeat(r, n_theta)
    dd = np.repeat(dr, n_theta)
    c = np.tile(np.cos(theta), n_z)
    s = np.tile(np.sin(theta), n_z)

    points = np.stack([rr * c, rr * s, zz], axis=1)
    normals = np.stack([c, s, -dd], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(points, normals)


# ---------------------------------------------------------------------------
# Design of experiments
# ---------------------------------------------------------------------------


def full_factorial(space: DesignSpace, k_per_axis: int) -> list[BottleParams]:
    """``k**2`` grid designs including the corners of a two-parameter space."""
    if space.dim != 2:
        raise InputError("full factorial sampling is defined for two-parameter spaces")
    if k_per_axis < 2:
        raise InputError("k_per_axis must be at least 2")
    a = np.linspace(space.lo[0], space.hi[0], k_per_axis)
    b = np.linspace(space.lo[1], space.hi[1], k_per_axis)
    return [space.to_params((x, y)) for x in a for y in b]


def latin_hypercube_unit(n: int, dim: int, seed: int, candidates: int = 64) -> np.ndarray:
    """Maximin Latin hypercube in the unit cube.

    Draws ``candidates`` random LHS designs and keeps the one with the
    largest minimum pairwise distance; every design has exactly one sample in
    each of the ``n`` strata along every axis.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    rng = np.random.default_rng(seed)
    best, best_score = None, -np.inf
    for _ in range(candidates):
        perms = np.stack([rng.permutation(n) for _ in range(dim)], axis=1)
        design = (perms + rng.random((n, dim))) / n
        score = pdist(design).min() if n > 1 else 0.0
        if score > best_score:
            best, best_score = design, score
    return best


def latin_hypercube(space: DesignSpace, n: int, seed: int) -> list[BottleParams]:
    unit = latin_hypercube_unit(n, space.dim, seed)
    lo = np.asarray(space.lo)
    hi = np.asarray(space.hi)
    return [space.to_params(row) for row in lo + unit * (hi - lo)]
