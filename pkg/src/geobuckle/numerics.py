"""Dense-array primitives with hand-written backward passes.

Every differentiable primitive comes as a ``*_forward`` / ``*_backward`` pair
(or a plain function plus its derivative). Forward functions return the output
together with whatever the backward pass needs; nothing is recorded on a tape.
Arrays are plain :class:`numpy.ndarray`; the dtype of the inputs (float32 for
training, float64 for gradient checks) is preserved throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import erf

from .errors import DimensionError, InputError, NumericError

LN_EPS = 1e-5
_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Linear layer
# ---------------------------------------------------------------------------


def linear_forward(weight: np.ndarray, bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Row-wise affine map ``x @ weight.T + bias``.

    ``weight`` has shape ``(out, in)``; ``x`` may carry any number of leading
    dimensions as long as its last axis has length ``in``.
    """
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"linear expects input width {weight.shape[1]}, got {x.shape[-1]}"
        )
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y


def linear_backward(
    dy: np.ndarray, weight: np.ndarray, x: np.ndarray, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Return ``(dx, dweight, dbias)`` for ``y = x @ weight.T + bias``."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dweight = dy2.T @ x2
    dbias = _col_sum(dy2)
    dx = dy @ weight if need_dx else None
    return dx, dweight, dbias


def linear_pointwise(weight: np.ndarray, bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Same map as :func:`linear_forward`, but each output row is reduced on
    its own, so a row's bits do not depend on how many rows are evaluated
    together. Slower than BLAS; used where bitwise grid consistency matters.
    """
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"linear expects input width {weight.shape[1]}, got {x.shape[-1]}"
        )
    y = np.einsum("...i,oi->...o", x, weight)
    if bias is not None:
        y = y + bias
    return y


# ---------------------------------------------------------------------------
# Activations and normalizations
# ---------------------------------------------------------------------------


_AS_P = 0.3275911
_AS_A = (0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429)


def erf_fast(x: np.ndarray) -> np.ndarray:
    """Rational erf approximation (Abramowitz & Stegun 7.1.26), |error| < 1.5e-7."""
    dt = x.dtype.type
    a1, a2, a3, a4, a5 = (dt(a) for a in _AS_A)
    ax = np.abs(x)
    t = dt(1.0) / (dt(1.0) + dt(_AS_P) * ax)
    poly = ((((a5 * t + a4) * t + a3) * t + a2) * t + a1) * t
    return np.copysign(dt(1.0) - poly * np.exp(-ax * ax), x)


def _erf(x: np.ndarray) -> np.ndarray:
    # float32 training path: the approximation is below single-precision resolution
    if x.dtype == np.float32:
        return erf_fast(x)
    return erf(x)


def gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact-erf GELU; returns ``(y, cdf)`` where ``cdf`` is reused by the backward."""
    cdf = 0.5 * (1.0 + _erf(x * _SQRT_HALF))
    return x * cdf, cdf


def gelu(x: np.ndarray) -> np.ndarray:
    """``0.5 * x * (1 + erf(x / sqrt(2)))``."""
    return gelu_forward(np.asarray(x))[0]


def gelu_backward(dy: np.ndarray, x: np.ndarray, cdf: np.ndarray | None = None) -> np.ndarray:
    if cdf is None:
        cdf = 0.5 * (1.0 + _erf(x * _SQRT_HALF))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``y``."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def _row_mean(x: np.ndarray) -> np.ndarray:
    # mean over the last axis as a matrix-vector product (much faster than
    # ufunc.reduce for narrow rows), keeping the reduced axis
    w = np.full(x.shape[-1], 1.0 / x.shape[-1], dtype=x.dtype)
    return (x @ w)[..., None]


def _col_sum(x: np.ndarray) -> np.ndarray:
    """Sum over all leading axes."""
    if x.ndim == 1:
        return x.copy()
    x2 = x.reshape(-1, x.shape[-1])
    return np.ones(x2.shape[0], dtype=x.dtype) @ x2


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    scale: np.ndarray


def layer_norm_forward(
    x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = LN_EPS
) -> tuple[np.ndarray, LayerNormCache]:
    """Normalize the last axis to zero mean / unit population variance, then
    apply ``scale`` and ``shift``."""
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm needs at least one feature")
    mu = _row_mean(x)
    xc = x - mu
    var = _row_mean(xc * xc)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * scale + shift, LayerNormCache(xhat, inv_std, scale)


def layer_norm(x: np.ndarray, scale, shift, eps: float = LN_EPS) -> np.ndarray:
    return layer_norm_forward(x, np.asarray(scale), np.asarray(shift), eps)[0]


def layer_norm_backward(
    dy: np.ndarray, cache: LayerNormCache
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dx, dscale, dshift)``."""
    xhat = cache.xhat
    dscale = _col_sum(dy * xhat)
    dshift = _col_sum(dy)
    dxhat = dy * cache.scale
    dx = cache.inv_std * (dxhat - _row_mean(dxhat) - xhat * _row_mean(dxhat * xhat))
    return dx, dscale, dshift


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def init_linear(
    rng: np.random.Generator, n_in: int, n_out: int, dtype=np.float64, bias: bool = True
) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform init, U(-1/sqrt(n_in), 1/sqrt(n_in))."""
    bound = 1.0 / math.sqrt(n_in)
    out = {"weight": rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)}
    if bias:
        out["bias"] = rng.uniform(-bound, bound, size=(n_out,)).astype(dtype)
    return out


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise DimensionError("params, grads and optimizer state hold different names")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class LrSchedule:
    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.3
    initial_divisor: float = 25.0
    final_divisor: float = 1e4

    def __post_init__(self):
        if self.total_steps < 1:
            raise InputError("total_steps must be at least 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise InputError("warmup_fraction must lie in (0, 1)")
        if self.max_lr <= 0:
            raise InputError("max_lr must be positive")


def _cos_anneal(start: float, end: float, pct: float) -> float:
    return end + (start - end) / 2.0 * (math.cos(math.pi * pct) + 1.0)


def onecycle_lr(step: float, sched: LrSchedule) -> float:
    """Cosine one-cycle learning rate at ``step``.

    Rises from ``max_lr / initial_divisor`` to ``max_lr`` at
    ``warmup_fraction * total_steps``, then decays to
    ``max_lr / (initial_divisor * final_divisor)`` at ``total_steps - 1``.
    """
    if not 0 <= step < sched.total_steps:
        raise InputError(f"step {step} outside [0, {sched.total_steps})")
    initial = sched.max_lr / sched.initial_divisor
    final = initial / sched.final_divisor
    peak = sched.warmup_fraction * sched.total_steps
    end = sched.total_steps - 1
    if step <= peak:
        return _cos_anneal(initial, sched.max_lr, step / peak)
    if end <= peak:
        return sched.max_lr
    return _cos_anneal(sched.max_lr, final, (step - peak) / (end - peak))


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def finite_diff_grad(
    loss_fn: Callable[[], float] | Callable[[np.ndarray], float],
    params: dict[str, np.ndarray] | np.ndarray,
    h: float = 1e-5,
    names: list[str] | None = None,
) -> dict[str, np.ndarray] | np.ndarray:
    """Central-difference gradient of ``loss_fn``.

    With a dict of parameters, entries are perturbed in place and
    ``loss_fn()`` is called without arguments; with a bare array,
    ``loss_fn(p)`` is called on perturbed copies. Requires float64 storage.
    """
    if isinstance(params, np.ndarray):
        p = np.array(params, dtype=np.float64)
        holder = {"p": p}
        g = finite_diff_grad(lambda: loss_fn(holder["p"]), holder, h)
        return g["p"]

    out: dict[str, np.ndarray] = {}
    for name in names if names is not None else list(params):
        p = params[name]
        if p.dtype != np.float64:
            raise InputError("finite differences require float64 parameters")
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn())
            flat[i] = orig - h
            fm = float(loss_fn())
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative discrepancy ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)
