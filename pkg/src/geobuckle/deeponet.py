"""Branch/trunk operator head that turns the encoder latent into a force curve.

The branch summarizes a geometry by max-pooling the latent over points; the
trunk builds a basis over time; the force is their dot product plus a scalar
bias. The trunk is point-wise in ``t`` so any time grid can be queried.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .errors import DimensionError, InputError


def init_deeponet_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    p: dict[str, np.ndarray] = {
        "branch.ln.scale": np.ones(cfg.width, dtype=dtype),
        "branch.ln.shift": np.zeros(cfg.width, dtype=dtype),
    }
    widths = [cfg.width] + [cfg.branch_width] * cfg.branch_depth + [cfg.basis]
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        for k, v in nx.init_linear(rng, a, b, dtype).items():
            p[f"branch.fc{i}.{k}"] = v
    for k, v in nx.init_linear(rng, 1, cfg.trunk_width, dtype).items():
        p[f"trunk.fc0.{k}"] = v
    for r in range(cfg.trunk_residual):
        for k, v in nx.init_linear(rng, cfg.trunk_width, cfg.trunk_width, dtype).items():
            p[f"trunk.res{r}.{k}"] = v
    for k, v in nx.init_linear(rng, cfg.trunk_width, cfg.basis, dtype).items():
        p[f"trunk.out.{k}"] = v
    p["force.bias"] = np.zeros(1, dtype=dtype)
    return p


# ---------------------------------------------------------------------------
# Branch
# ---------------------------------------------------------------------------


@dataclass
class BranchCache:
    argmax: np.ndarray
    n_points: int
    ln: nx.LayerNormCache
    inputs: list
    pre: list
    cdfs: list


def max_pool(y_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Component-wise maximum over points; returns ``(pooled [D], argmax [D])``."""
    if y_star.shape[0] == 0:
        raise InputError("cannot pool an empty point cloud")
    idx = np.argmax(y_star, axis=0)
    return y_star[idx, np.arange(y_star.shape[1])], idx


def branch_forward(params: dict, cfg: ModelConfig, y_star: np.ndarray):
    """Return ``(b [p], cache)``: max-pool, layer norm, GELU MLP."""
    pooled, idx = max_pool(y_star)
    h, ln = nx.layer_norm_forward(pooled, params["branch.ln.scale"], params["branch.ln.shift"], cfg.ln_eps)
    inputs, pre, cdfs = [], [], []
    n_layers = cfg.branch_depth + 1
    for i in range(n_layers):
        inputs.append(h)
        a = nx.linear_forward(params[f"branch.fc{i}.weight"], params[f"branch.fc{i}.bias"], h)
        pre.append(a)
        if i < n_layers - 1:
            h, cdf = nx.gelu_forward(a)
            cdfs.append(cdf)
        else:
            h = a
    return h, BranchCache(idx, y_star.shape[0], ln, inputs, pre, cdfs)


def branch_backward(params: dict, cfg: ModelConfig, db: np.ndarray, c: BranchCache, grads: dict) -> np.ndarray:
    """Accumulate branch gradients; return ``dL/dy_star`` (sparse, dense array)."""
    n_layers = cfg.branch_depth + 1
    dh = db
    for i in reversed(range(n_layers)):
        da = nx.gelu_backward(dh, c.pre[i], c.cdfs[i]) if i < n_layers - 1 else dh
        w = params[f"branch.fc{i}.weight"]
        grads[f"branch.fc{i}.weight"] = np.outer(da, c.inputs[i])
        grads[f"branch.fc{i}.bias"] = da.copy()
        dh = da @ w
    dpooled, grads["branch.ln.scale"], grads["branch.ln.shift"] = nx.layer_norm_backward(dh, c.ln)
    dy = np.zeros((c.n_points, dpooled.shape[0]), dtype=dpooled.dtype)
    dy[c.argmax, np.arange(dpooled.shape[0])] = dpooled
    return dy


# ---------------------------------------------------------------------------
# Trunk
# ---------------------------------------------------------------------------


@dataclass
class TrunkCache:
    t: np.ndarray
    inputs: list
    pre: list
    cdfs: list


def _check_times(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 1:
        t = t[:, None]
    if t.ndim != 2 or t.shape[1] != 1:
        raise DimensionError(f"time grid must be [N_t] or [N_t, 1], got {t.shape}")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise InputError("time values must lie in [0, 1]")
    return t


def trunk_forward(params: dict, cfg: ModelConfig, t: np.ndarray, pointwise: bool = False):
    """Return ``(basis [N_t, p], cache)``.

    With ``pointwise=True`` each time row is reduced independently of the
    others, so a row is bitwise identical whatever grid it belongs to.
    """
    t = _check_times(t)
    lin = nx.linear_pointwise if pointwise else nx.linear_forward
    a = lin(params["trunk.fc0.weight"], params["trunk.fc0.bias"], t)
    h, cdf = nx.gelu_forward(a)
    inputs, pre, cdfs = [t], [a], [cdf]
    for r in range(cfg.trunk_residual):
        inputs.append(h)
        a = lin(params[f"trunk.res{r}.weight"], params[f"trunk.res{r}.bias"], h)
        pre.append(a)
        act, cdf = nx.gelu_forward(a)
        cdfs.append(cdf)
        h = h + act
    inputs.append(h)
    basis = lin(params["trunk.out.weight"], params["trunk.out.bias"], h)
    return basis, TrunkCache(t, inputs, pre, cdfs)


def trunk_backward(params: dict, cfg: ModelConfig, dbasis: np.ndarray, c: TrunkCache, grads: dict) -> None:
    dh, grads["trunk.out.weight"], grads["trunk.out.bias"] = nx.linear_backward(
        dbasis, params["trunk.out.weight"], c.inputs[-1]
    )
    for r in reversed(range(cfg.trunk_residual)):
        da = nx.gelu_backward(dh, c.pre[r + 1], c.cdfs[r + 1])
        dprev, grads[f"trunk.res{r}.weight"], grads[f"trunk.res{r}.bias"] = nx.linear_backward(
            da, params[f"trunk.res{r}.weight"], c.inputs[r + 1]
        )
        dh = dh + dprev
    da = nx.gelu_backward(dh, c.pre[0], c.cdfs[0])
    _, grads["trunk.fc0.weight"], grads["trunk.fc0.bias"] = nx.linear_backward(
        da, params["trunk.fc0.weight"], c.t, need_dx=False
    )


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------


def force_predict(b: np.ndarray, basis: np.ndarray, bias) -> np.ndarray:
    """``F[i] = sum_k b[k] basis[i, k] + bias``, reduced row by row."""
    b = np.asarray(b).reshape(-1)
    if basis.shape[-1] != b.shape[0]:
        raise DimensionError(f"branch width {b.shape[0]} != trunk width {basis.shape[-1]}")
    return np.einsum("tk,k->t", basis, b) + np.asarray(bias).reshape(())


def force_backward(dF: np.ndarray, b: np.ndarray, basis: np.ndarray):
    """Return ``(db, dbasis, dbias)``."""
    return basis.T @ dF, np.outer(dF, b), np.atleast_1d(dF.sum())
