"""Training loop, prediction wrapper and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .. import numerics as nx
from ..config import TrainConfig
from ..errors import InputError, NumericError
from ..geometry import BottleParams, generate_bottle
from ..model import HybridModel
from ..oracle import displacement_field, reaction_curve
from .data import NormStats, PointCloudSample, normalize_fit
from .metrics import ERROR_COLUMNS, R2_COLUMNS, MetricsReport, r_squared, rel_l2

log = logging.getLogger(__name__)

TERMS = ("ux", "uy", "uz", "fr")


class Predictor(Protocol):
    def predict(self, points: np.ndarray, normals: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Physical-unit ``(u [N, 3], F [N_t])``."""


class Surrogate:
    """A trained model bundled with its normalization statistics."""

    def __init__(self, model: HybridModel, stats: NormStats):
        self.model = model
        self.stats = stats

    def predict(self, points, normals, times):
        st, dtype = self.stats, self.model.dtype
        g = st.norm_x(np.concatenate([points, normals], axis=1).astype(np.float64)).astype(dtype)
        t = st.norm_t(np.asarray(times, dtype=np.float64)).astype(dtype)
        pred = self.model.forward(g, t, pointwise_time=True)
        return (st.denorm_u(pred.u.astype(np.float64)), st.denorm_f(pred.force.astype(np.float64)))


class OraclePredictor:
    """Returns the synthetic ground truth; used to sanity-check the evaluation harness."""

    def __init__(self, params_by_cloud: dict[bytes, BottleParams]):
        self._lookup = params_by_cloud

    @classmethod
    def for_samples(cls, samples: list[PointCloudSample]) -> "OraclePredictor":
        return cls({s.points.tobytes(): s.params for s in samples})

    def predict(self, points, normals, times):
        p = self._lookup[np.asarray(points).tobytes()]
        n_theta = int(np.count_nonzero(points[:, 2] == 0.0))
        cloud = generate_bottle(p, points.shape[0] // n_theta, n_theta, strict=False)
        u = displacement_field(cloud, p)
        f = reaction_curve(p, len(times)).forces
        return u.astype(np.float32).astype(np.float64), f.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def losses(self) -> np.ndarray:
        return np.array([e["loss"] for e in self.epochs])


@dataclass
class _Prepared:
    id: str
    g: np.ndarray
    t: np.ndarray
    u: np.ndarray
    f: np.ndarray


def _prepare(samples, stats: NormStats, dtype) -> list[_Prepared]:
    out = []
    for s in samples:
        g = stats.norm_x(s.features().astype(np.float64)).astype(dtype)
        t = stats.norm_t(s.times.astype(np.float64)).astype(dtype)[:, None]
        u = stats.norm_u(s.disp.astype(np.float64)).astype(dtype)
        f = stats.norm_f(s.forces.astype(np.float64)).astype(dtype)
        out.append(_Prepared(s.id, g, t, u, f))
    return out


def train(
    config: TrainConfig,
    train_samples: list[PointCloudSample],
    test_samples: list[PointCloudSample] | None = None,
    model: HybridModel | None = None,
    progress=None,
) -> tuple[HybridModel, NormStats, TrainingLog]:
    """Adam + one-cycle training with one geometry per step.

    Normalization statistics come from ``train_samples`` only. Every
    ``config.eval_interval`` epochs (and after the last one) the test split,
    if any, is evaluated and appended to the log.
    """
    if len(train_samples) < 1:
        raise InputError("training needs at least one sample")
    dtype = config.dtype
    stats = normalize_fit(train_samples)
    if model is None:
        model = HybridModel.initialize(config.model, config.init_seed, dtype)
    data = _prepare(train_samples, stats, dtype)
    record = TrainingLog()
    if config.epochs == 0:
        return model, stats, record

    total_steps = config.epochs * len(data)
    sched = nx.LrSchedule(config.max_lr, total_steps, config.warmup_fraction,
                          config.initial_divisor, config.final_divisor)
    flat = {"all": model.pack()}
    state = nx.AdamState.zeros_like(flat)
    rng = np.random.default_rng(config.shuffle_seed)
    step = 0
    start = time.perf_counter()
    for epoch in range(config.epochs):
        sums = dict.fromkeys(TERMS, 0.0)
        loss_sum = 0.0
        for i in rng.permutation(len(data)):
            d = data[i]
            loss, terms, grads = model.loss_and_grad(d.g, d.t, d.u, d.f)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss on sample {d.id} at step {step} (epoch {epoch})")
            lr = nx.onecycle_lr(step, sched)
            nx.adam_step(flat, {"all": model.flatten_grads(grads)}, state, lr)
            loss_sum += loss
            for k in TERMS:
                sums[k] += terms[k]
            step += 1
        n = len(data)
        entry = {"epoch": epoch, "loss": loss_sum / n, **{k: v / n for k, v in sums.items()}, "lr": lr}
        record.epochs.append(entry)
        if test_samples and ((epoch + 1) % config.eval_interval == 0 or epoch + 1 == config.epochs):
            report = evaluate(Surrogate(model, stats), test_samples)
            summ = report.summary()["mean"]
            record.evals.append({"epoch": epoch, **{c: summ[c] for c in ERROR_COLUMNS}})
        if progress is not None:
            progress(entry)
    record.seconds = time.perf_counter() - start
    return model, stats, record


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(predictor: Predictor, samples: list[PointCloudSample], node_errors: bool = False) -> MetricsReport:
    """Per-sample relative L2 errors (physical units) and R^2 per displacement component."""
    if not samples:
        raise InputError("cannot evaluate an empty sample set")
    errors = {c: np.empty(len(samples)) for c in ERROR_COLUMNS}
    r2 = {c: np.empty(len(samples)) for c in R2_COLUMNS}
    nodes = {}
    for i, s in enumerate(samples):
        u_hat, f_hat = predictor.predict(s.points, s.normals, s.times)
        u = s.disp.astype(np.float64)
        f = s.forces.astype(np.float64)
        for c in range(3):
            errors[ERROR_COLUMNS[c]][i] = rel_l2(u_hat[:, c], u[:, c])
            try:
                r2[R2_COLUMNS[c]][i] = r_squared(u_hat[:, c], u[:, c])
            except InputError:
                r2[R2_COLUMNS[c]][i] = math.nan
        errors["err_fr"][i] = rel_l2(f_hat, f)
        if node_errors:
            nodes[s.id] = np.abs(u_hat - u)
    return MetricsReport([s.id for s in samples], errors, r2, nodes)
