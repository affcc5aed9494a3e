"""Full-model comparison of analytic gradients against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import TOY_MODEL, ModelConfig
from .model import HybridModel

THRESHOLD = 1e-5
PERTURBATION = 1.0
SCALE_FLOOR = 1e-3


@dataclass
class GradcheckReport:
    errors: dict[str, float]  # parameter tensor -> max-norm relative error
    threshold: float = THRESHOLD

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.worst < self.threshold

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.errors)
        out = [f"{k:<{width}}  {v:.3e}  {'ok' if v < self.threshold else 'FAIL'}"
               for k, v in self.errors.items()]
        out.append(f"max relative error {self.worst:.3e} (threshold {self.threshold:g}): "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


def gradcheck_problem(config: ModelConfig = TOY_MODEL, n_points: int = 32, n_t: int = 8, seed: int = 0):
    """Random float64 model and data: features in [-1, 1], targets ~ N(0, 1).

    Parameters are moved away from initialization by Gaussian noise. At the
    raw init the slice weights are nearly uniform, every slice token is about
    the same, and the attention gradients sink to the finite-difference noise.
    """
    rng = np.random.default_rng(seed)
    model = HybridModel.initialize(config, seed, np.float64)
    for v in model.params.values():
        v += PERTURBATION * max(float(v.std()), 0.1) * rng.normal(size=v.shape)
    g = rng.uniform(-1.0, 1.0, (n_points, config.in_features))
    t = np.linspace(0.0, 1.0, n_t)[:, None]
    u = rng.normal(size=(n_points, config.out_features))
    f = rng.normal(size=n_t)
    return model, g, t, u, f


def run_gradcheck(config: ModelConfig = TOY_MODEL, n_points: int = 32, n_t: int = 8, seed: int = 0,
                  h: float = 1e-5, corrupt: str | None = None) -> GradcheckReport:
    """Compare every parameter's analytic gradient with finite differences.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    scaled by 1.01, to confirm the harness notices a faulty backward pass.
    """
    model, g, t, u, f = gradcheck_problem(config, n_points, n_t, seed)
    _, _, grads = model.loss_and_grad(g, t, u, f)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.01
    numeric = nx.finite_diff_grad(lambda: model.loss(g, t, u, f), model.params, h)
    # A tensor whose true gradient is exactly zero (e.g. a bias under balanced
    # L1 signs) is measured against a fraction of the largest gradient entry.
    floor = SCALE_FLOOR * max(np.abs(v).max() for v in numeric.values())
    return GradcheckReport({k: nx.relative_error(grads[k], numeric[k], floor) for k in model.params})
