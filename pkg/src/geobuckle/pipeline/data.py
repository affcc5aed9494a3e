"""Samples, normalization statistics, splitting and the on-disk dataset layout."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InputError, IntegrityError
from ..geometry import (BottleParams, PointCloud, design_space, full_factorial,
                        generate_bottle, latin_hypercube)
from ..oracle import DEFAULT_NT, ForceCurve, displacement_field, reaction_curve

log = logging.getLogger(__name__)

DATASET_VERSION = 1
NORM_EPS = 1e-8


@dataclass
class PointCloudSample:
    id: str
    params: BottleParams
    points: np.ndarray  # [N, 3] float32
    normals: np.ndarray  # [N, 3] float32
    disp: np.ndarray  # [N, 3] float32
    times: np.ndarray  # [N_t] float32
    forces: np.ndarray  # [N_t] float32

    def __post_init__(self):
        n = self.points.shape[0]
        if self.points.shape != (n, 3) or self.normals.shape != (n, 3) or self.disp.shape != (n, 3):
            raise IntegrityError(f"sample {self.id}: point/normal/displacement arrays disagree on N")
        if self.times.shape != self.forces.shape or self.times.ndim != 1:
            raise IntegrityError(f"sample {self.id}: force curve arrays disagree")
        if self.times.size < 2 or self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise IntegrityError(f"sample {self.id}: times must start at 0 and increase strictly")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.points, self.normals)

    @property
    def curve(self) -> ForceCurve:
        return ForceCurve(self.times, self.forces, float(self.times[-1]))

    def features(self) -> np.ndarray:
        return np.concatenate([self.points, self.normals], axis=1)

    def equals(self, other: "PointCloudSample") -> bool:
        return (
            self.id == other.id
            and self.params == other.params
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    and getattr(self, k).dtype == getattr(other, k).dtype
                    for k in ("points", "normals", "disp", "times", "forces"))
        )


def make_sample(
    sample_id: str, p: BottleParams, n_z: int = 64, n_theta: int = 16, n_t: int = DEFAULT_NT,
    noise: float = 0.0, seed: int | None = None, strict: bool = True,
) -> PointCloudSample:
    """Generate geometry and synthetic response for one design (stored as float32)."""
    cloud = generate_bottle(p, n_z, n_theta, strict=strict)
    u = displacement_field(cloud, p, noise=noise, seed=seed)
    curve = reaction_curve(p, n_t, noise=noise, seed=None if seed is None else seed + 1)
    f32 = np.float32
    return PointCloudSample(
        sample_id, p, cloud.points.astype(f32), cloud.normals.astype(f32), u.astype(f32),
        curve.times.astype(f32), curve.forces.astype(f32),
    )


def design_params(family: str, n_samples: int | None = None, k_per_axis: int | None = None,
                  seed: int = 0) -> list[BottleParams]:
    """Full-factorial designs for ``two_param`` (given ``k_per_axis``), maximin
    LHS otherwise."""
    space = design_space(family)
    if family == "two_param" and k_per_axis is not None:
        return full_factorial(space, k_per_axis)
    if n_samples is None or n_samples < 1:
        raise InputError("n_samples must be a positive integer")
    return latin_hypercube(space, n_samples, seed)


def generate_dataset(params: list[BottleParams], n_z: int = 64, n_theta: int = 16,
                     n_t: int = DEFAULT_NT) -> list[PointCloudSample]:
    return [make_sample(f"s{i:04d}", p, n_z, n_theta, n_t) for i, p in enumerate(params)]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    x_mean: np.ndarray  # [6]
    x_std: np.ndarray
    u_mean: np.ndarray  # [3]
    u_std: np.ndarray
    f_mean: float
    f_std: float
    t_mean: float = 0.0
    t_std: float = 1.0
    eps: float = NORM_EPS

    def norm_x(self, g):
        return (g - self.x_mean) / (self.x_std + self.eps)

    def norm_u(self, u):
        return (u - self.u_mean) / (self.u_std + self.eps)

    def denorm_u(self, u):
        return u * (self.u_std + self.eps) + self.u_mean

    def norm_f(self, f):
        return (f - self.f_mean) / (self.f_std + self.eps)

    def denorm_f(self, f):
        return f * (self.f_std + self.eps) + self.f_mean

    def norm_t(self, t):
        # identity with the default t_mean=0, t_std=1 (eps not applied)
        if self.t_mean == 0.0 and self.t_std == 1.0:
            return t
        return (t - self.t_mean) / (self.t_std + self.eps)

    def to_json(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
            "u_mean": self.u_mean.tolist(), "u_std": self.u_std.tolist(),
            "f_mean": self.f_mean, "f_std": self.f_std,
            "t_mean": self.t_mean, "t_std": self.t_std, "eps": self.eps,
        }

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        return cls(
            np.asarray(d["x_mean"]), np.asarray(d["x_std"]),
            np.asarray(d["u_mean"]), np.asarray(d["u_std"]),
            float(d["f_mean"]), float(d["f_std"]),
            float(d.get("t_mean", 0.0)), float(d.get("t_std", 1.0)), float(d.get("eps", NORM_EPS)),
        )

    def equals(self, other: "NormStats") -> bool:
        return self.to_json() == other.to_json()


def normalize_fit(train: list[PointCloudSample]) -> NormStats:
    """Population mean/std per dimension, pooled over every node (inputs and
    displacements) and every time step (force) of the given samples."""
    if not train:
        raise InputError("cannot fit normalization on an empty split")
    g = np.concatenate([s.features() for s in train]).astype(np.float64)
    u = np.concatenate([s.disp for s in train]).astype(np.float64)
    f = np.concatenate([s.forces for s in train]).astype(np.float64)
    return NormStats(g.mean(0), g.std(0), u.mean(0), u.std(0), float(f.mean()), float(f.std()))


def split_dataset(samples: list, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ``floor(ratio * n)`` go to training
    (254 samples at 0.9 give 228/26)."""
    n = len(samples)
    if n < 2:
        raise InputError("need at least two samples to split")
    if not 0.0 < ratio < 1.0:
        raise InputError("split ratio must lie in (0, 1)")
    n_train = min(max(math.floor(ratio * n + 1e-9), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


# ---------------------------------------------------------------------------
# Disk layout
# ---------------------------------------------------------------------------

_ARRAYS = ("points", "normals", "disp")


def _write_f32(path: Path, a: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_f32(path: Path, n: int) -> np.ndarray:
    if not path.is_file():
        raise IntegrityError(f"missing array file {path}")
    raw = path.read_bytes()
    if len(raw) != n * 3 * 4:
        raise IntegrityError(f"{path}: expected {n}x3 float32 values, found {len(raw)} bytes")
    return np.frombuffer(raw, dtype="<f4").reshape(n, 3).astype(np.float32)


def write_dataset(samples: list[PointCloudSample], out_dir, family: str | None = None,
                  provenance: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise InputError("refusing to write an empty dataset")
    n = samples[0].n
    sizes = {s.times.size for s in samples}
    n_t = sizes.pop() if len(sizes) == 1 else None  # None: ragged time grids
    families = sorted({s.params.family for s in samples})
    manifest = {
        "version": DATASET_VERSION,
        "family": family or (families[0] if len(families) == 1 else "mixed"),
        "N": n,
        "N_t": n_t,
        "samples": [s.id for s in samples],
        "provenance": provenance or {},
    }
    for s in samples:
        if s.n != n:
            raise IntegrityError("all samples in a dataset must share N")
        d = out / s.id
        d.mkdir(exist_ok=True)
        (d / "params.json").write_text(json.dumps(s.params.to_json(), indent=2))
        for name in _ARRAYS:
            _write_f32(d / f"{name}.f32", getattr(s, name))
        with open(d / "force.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "F"])
            for t, f in zip(s.times, s.forces):
                w.writerow([f"{float(t):.9g}", f"{float(f):.9g}"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def read_manifest(path) -> dict:
    mpath = Path(path) / "manifest.json"
    if not mpath.is_file():
        raise IntegrityError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise IntegrityError(f"malformed manifest: {e}") from None
    if manifest.get("version") != DATASET_VERSION:
        raise IntegrityError(f"unsupported dataset version {manifest.get('version')!r}")
    return manifest


def read_dataset(path) -> list[PointCloudSample]:
    root = Path(path)
    manifest = read_manifest(root)
    n = int(manifest["N"])
    samples = []
    for sid in manifest["samples"]:
        d = root / sid
        pfile = d / "params.json"
        if not pfile.is_file():
            raise IntegrityError(f"missing {pfile}")
        params = BottleParams.from_json(json.loads(pfile.read_text()))
        arrays = {name: _read_f32(d / f"{name}.f32", n) for name in _ARRAYS}
        ffile = d / "force.csv"
        if not ffile.is_file():
            raise IntegrityError(f"missing {ffile}")
        with open(ffile, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["t", "F"]:
            raise IntegrityError(f"{ffile}: bad header")
        try:
            tf = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64)
        except ValueError as e:
            raise IntegrityError(f"{ffile}: {e}") from None
        if manifest["N_t"] is not None and tf.shape[0] != int(manifest["N_t"]):
            raise IntegrityError(f"{ffile}: {tf.shape[0]} rows, manifest says {manifest['N_t']}")
        samples.append(PointCloudSample(
            sid, params, arrays["points"], arrays["normals"], arrays["disp"],
            tf[:, 0].astype(np.float32), tf[:, 1].astype(np.float32),
        ))
    return samples
