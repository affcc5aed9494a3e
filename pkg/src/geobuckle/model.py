"""The coupled surrogate: encoder for displacements, operator head for force."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import deeponet as don
from . import transolver as ts
from .config import ModelConfig
from .errors import DimensionError


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute difference."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


def l1_loss_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.sign(pred - target) / pred.size


def total_loss(u_hat, u, f_hat, f) -> tuple[float, dict[str, float]]:
    """Sum of the per-component L1 terms for u_x, u_y, u_z and the force.

    Returns ``(total, terms)``; ``total`` is the left-to-right sum of ``terms``.
    """
    terms = {
        "ux": l1_loss(u_hat[:, 0], u[:, 0]),
        "uy": l1_loss(u_hat[:, 1], u[:, 1]),
        "uz": l1_loss(u_hat[:, 2], u[:, 2]),
        "fr": l1_loss(f_hat, f),
    }
    return terms["ux"] + terms["uy"] + terms["uz"] + terms["fr"], terms


@dataclass
class Prediction:
    u: np.ndarray
    force: np.ndarray
    y_star: np.ndarray


class HybridModel:
    """Encoder + operator head with a flat named parameter dict.

    All inputs and outputs are in normalized units; see
    :mod:`geobuckle.pipeline.data` for the scaling.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "HybridModel":
        rng = np.random.default_rng(seed)
        params = ts.init_transolver_params(config, rng, dtype)
        params.update(don.init_deeponet_params(config, rng, dtype))
        return cls(config, params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        ref = HybridModel.initialize(self.config, 0, np.float32)
        return {k: v.shape for k, v in ref.params.items()}

    def copy(self) -> "HybridModel":
        return HybridModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "HybridModel":
        return HybridModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def pack(self) -> np.ndarray:
        """Move all parameters into one contiguous buffer and rebind
        ``params`` as views into it; returns the buffer."""
        flat = np.concatenate([v.ravel() for v in self.params.values()])
        offset = 0
        for k, v in self.params.items():
            self.params[k] = flat[offset:offset + v.size].reshape(v.shape)
            offset += v.size
        return flat

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in self.params])

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, g: np.ndarray, t: np.ndarray, pointwise_time: bool = True) -> Prediction:
        cfg, p = self.config, self.params
        g = np.asarray(g, dtype=self.dtype)
        t = np.asarray(t, dtype=self.dtype)
        u, y_star, _ = ts.transolver_forward(p, cfg, g)
        b, _ = don.branch_forward(p, cfg, y_star)
        basis, _ = don.trunk_forward(p, cfg, t, pointwise=pointwise_time)
        f = don.force_predict(b, basis, p["force.bias"])
        return Prediction(u, f, y_star)

    def loss_and_grad(self, g, t, u_target, f_target):
        """Forward + hand-written backward of :func:`total_loss`.

        Returns ``(loss, terms, grads)`` with ``grads`` keyed like ``params``.
        """
        cfg, p = self.config, self.params
        u_hat, y_star, tcache = ts.transolver_forward(p, cfg, g)
        b, bcache = don.branch_forward(p, cfg, y_star)
        basis, trcache = don.trunk_forward(p, cfg, t)
        f_hat = don.force_predict(b, basis, p["force.bias"])
        loss, terms = total_loss(u_hat, u_target, f_hat, f_target)

        du = np.empty_like(u_hat)
        for c in range(3):
            du[:, c] = l1_loss_backward(u_hat[:, c], u_target[:, c])
        df = l1_loss_backward(f_hat, f_target)

        grads: dict[str, np.ndarray] = {}
        db, dbasis, grads["force.bias"] = don.force_backward(df, b, basis)
        don.trunk_backward(p, cfg, dbasis, trcache, grads)
        dy_star = don.branch_backward(p, cfg, db, bcache, grads)
        grads.update(ts.transolver_backward(p, cfg, du, dy_star, tcache))
        grads = {k: np.asarray(grads[k], dtype=p[k].dtype).reshape(p[k].shape) for k in p}
        return loss, terms, grads

    def loss(self, g, t, u_target, f_target) -> float:
        cfg, p = self.config, self.params
        u_hat, y_star, _ = ts.transolver_forward(p, cfg, g)
        b, _ = don.branch_forward(p, cfg, y_star)
        basis, _ = don.trunk_forward(p, cfg, t)
        f_hat = don.force_predict(b, basis, p["force.bias"])
        return total_loss(u_hat, u_target, f_hat, f_target)[0]


def parameter_group(name: str) -> str:
    """Coarse grouping used in gradient-check reports (name minus ``.weight``/``.bias``...)."""
    return name.rsplit(".", 1)[0]
