"""Physics-attention encoder over point clouds.

Points are softly assigned to ``S`` learned slices per head; slice tokens are
weighted means of projected point features, attend to each other, and are
scattered back to points with the same weights. Stacked in pre-norm residual
blocks, followed by a point-wise MLP head that predicts displacements.

Parameters live in a flat ``dict[str, ndarray]`` under ``embed.*``,
``blocks.<l>.*`` and ``head.*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .errors import DimensionError

SLICE_EPS = 1e-12


def _add_linear(params, prefix, rng, n_in, n_out, dtype, bias=True):
    for k, v in nx.init_linear(rng, n_in, n_out, dtype, bias).items():
        params[f"{prefix}.{k}"] = v


def _add_norm(params, prefix, width, dtype):
    params[f"{prefix}.scale"] = np.ones(width, dtype=dtype)
    params[f"{prefix}.shift"] = np.zeros(width, dtype=dtype)


def init_transolver_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    D, H, Dh, S = cfg.width, cfg.heads, cfg.head_width, cfg.slices
    p: dict[str, np.ndarray] = {}
    _add_linear(p, "embed.fc1", rng, cfg.in_features, D, dtype)
    _add_linear(p, "embed.fc2", rng, D, D, dtype)
    for l in range(cfg.blocks):
        b = f"blocks.{l}"
        _add_norm(p, f"{b}.ln1", D, dtype)
        _add_linear(p, f"{b}.slice", rng, D, H * S, dtype)
        _add_linear(p, f"{b}.proj", rng, D, H * Dh, dtype)
        for name in ("q", "k", "v"):
            _add_linear(p, f"{b}.{name}", rng, Dh, Dh, dtype, bias=False)
        _add_linear(p, f"{b}.out", rng, H * Dh, D, dtype)
        _add_norm(p, f"{b}.ln2", D, dtype)
        _add_linear(p, f"{b}.mlp.fc1", rng, D, cfg.mlp_hidden, dtype)
        _add_linear(p, f"{b}.mlp.fc2", rng, cfg.mlp_hidden, D, dtype)
    _add_linear(p, "head.fc1", rng, D, D, dtype)
    _add_linear(p, "head.fc2", rng, D, cfg.out_features, dtype)
    return p


# ---------------------------------------------------------------------------
# Slice operators (stand-alone, shape-explicit)
# ---------------------------------------------------------------------------


def slice_weights(logits: np.ndarray, heads: int, slices: int) -> np.ndarray:
    """``[N, H*S]`` logits -> ``[H, N, S]`` weights, softmax over slices."""
    n = logits.shape[0]
    if logits.shape[1] != heads * slices:
        raise DimensionError(f"expected {heads * slices} slice logits, got {logits.shape[1]}")
    return nx.softmax(logits.reshape(n, heads, slices), axis=-1).transpose(1, 0, 2)


def slice_weights_backward(dw: np.ndarray, w: np.ndarray) -> np.ndarray:
    dlogits = nx.softmax_backward(dw, w, axis=-1)
    h, n, s = w.shape
    return dlogits.transpose(1, 0, 2).reshape(n, h * s)


def slice_aggregate(w: np.ndarray, xt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted slice means ``z[h,s] = sum_j w[h,j,s] xt[h,j] / sum_j w[h,j,s]``.

    Returns ``(z, mass)`` with ``mass = sum_j w + 1e-12``.
    """
    if w.shape[:2] != xt.shape[:2]:
        raise DimensionError(f"weights {w.shape} and features {xt.shape} disagree")
    mass = w.sum(axis=1) + SLICE_EPS
    z = (w.transpose(0, 2, 1) @ xt) / mass[:, :, None]
    return z, mass


def slice_aggregate_backward(dz, w, xt, z, mass):
    """Return ``(dw, dxt)``."""
    dnum = dz / mass[:, :, None]
    dmass = -(dz * z).sum(axis=-1) / mass
    dw = xt @ dnum.transpose(0, 2, 1) + dmass[:, None, :]
    dxt = w @ dnum
    return dw, dxt


@dataclass
class AttentionCache:
    z: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray


def slice_attention(z, wq, wk, wv) -> tuple[np.ndarray, AttentionCache]:
    """Scaled dot-product attention among the ``S`` tokens of each head."""
    dh = z.shape[-1]
    q = z @ wq.T
    k = z @ wk.T
    v = z @ wv.T
    scores = (q @ k.transpose(0, 2, 1)) / math.sqrt(dh)
    att = nx.softmax(scores, axis=-1)
    return att @ v, AttentionCache(z, q, k, v, att)


def slice_attention_backward(dzp, c: AttentionCache, wq, wk, wv):
    """Return ``(dz, dwq, dwk, dwv)``."""
    scale = 1.0 / math.sqrt(c.z.shape[-1])
    datt = dzp @ c.v.transpose(0, 2, 1)
    dv = c.att.transpose(0, 2, 1) @ dzp
    dscores = nx.softmax_backward(datt, c.att, axis=-1) * scale
    dq = dscores @ c.k
    dk = dscores.transpose(0, 2, 1) @ c.q
    dwq = np.einsum("hsi,hsj->ij", dq, c.z)
    dwk = np.einsum("hsi,hsj->ij", dk, c.z)
    dwv = np.einsum("hsi,hsj->ij", dv, c.z)
    dz = dq @ wq + dk @ wk + dv @ wv
    return dz, dwq, dwk, dwv


def deslice(zp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Scatter tokens back to points: ``y[j] = concat_h sum_s w[h,j,s] zp[h,s]``."""
    h, n, _ = w.shape
    y = w @ zp
    return y.transpose(1, 0, 2).reshape(n, h * zp.shape[-1])


def deslice_backward(dy, zp, w):
    """Return ``(dzp, dw)``."""
    h, n, s = w.shape
    dyh = dy.reshape(n, h, zp.shape[-1]).transpose(1, 0, 2)
    dw = dyh @ zp.transpose(0, 2, 1)
    dzp = w.transpose(0, 2, 1) @ dyh
    return dzp, dw


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


def embed_points(params: dict, g: np.ndarray) -> np.ndarray:
    """Point-wise two-layer MLP lifting ``[N, C]`` features to ``[N, D]``."""
    return _embed_forward(params, g)[0]


def _embed_forward(params, g):
    a = nx.linear_forward(params["embed.fc1.weight"], params["embed.fc1.bias"], g)
    h, cdf = nx.gelu_forward(a)
    x = nx.linear_forward(params["embed.fc2.weight"], params["embed.fc2.bias"], h)
    return x, (g, a, h, cdf)


def _embed_backward(params, grads, dx, cache):
    g, a, h, cdf = cache
    dh, grads["embed.fc2.weight"], grads["embed.fc2.bias"] = nx.linear_backward(
        dx, params["embed.fc2.weight"], h
    )
    da = nx.gelu_backward(dh, a, cdf)
    _, grads["embed.fc1.weight"], grads["embed.fc1.bias"] = nx.linear_backward(
        da, params["embed.fc1.weight"], g, need_dx=False
    )


def block_forward(params: dict, cfg: ModelConfig, l: int, x: np.ndarray):
    """One pre-norm physics-attention block. Returns ``(x_out, cache)``."""
    P = f"blocks.{l}"
    H, Dh, S = cfg.heads, cfg.head_width, cfg.slices
    n = x.shape[0]
    a, ln1 = nx.layer_norm_forward(x, params[f"{P}.ln1.scale"], params[f"{P}.ln1.shift"], cfg.ln_eps)
    logits = nx.linear_forward(params[f"{P}.slice.weight"], params[f"{P}.slice.bias"], a)
    w = slice_weights(logits, H, S)
    xt_flat = nx.linear_forward(params[f"{P}.proj.weight"], params[f"{P}.proj.bias"], a)
    xt = xt_flat.reshape(n, H, Dh).transpose(1, 0, 2)
    z, mass = slice_aggregate(w, xt)
    zp, att = slice_attention(z, params[f"{P}.q.weight"], params[f"{P}.k.weight"], params[f"{P}.v.weight"])
    y = deslice(zp, w)
    o = nx.linear_forward(params[f"{P}.out.weight"], params[f"{P}.out.bias"], y)
    x1 = x + o
    b, ln2 = nx.layer_norm_forward(x1, params[f"{P}.ln2.scale"], params[f"{P}.ln2.shift"], cfg.ln_eps)
    m1 = nx.linear_forward(params[f"{P}.mlp.fc1.weight"], params[f"{P}.mlp.fc1.bias"], b)
    gm, gcdf = nx.gelu_forward(m1)
    m2 = nx.linear_forward(params[f"{P}.mlp.fc2.weight"], params[f"{P}.mlp.fc2.bias"], gm)
    x2 = x1 + m2
    cache = dict(a=a, ln1=ln1, w=w, xt=xt, z=z, mass=mass, zp=zp, att=att, y=y,
                 b=b, ln2=ln2, m1=m1, gm=gm, gcdf=gcdf)
    return x2, cache


def block_backward(params: dict, grads: dict, cfg: ModelConfig, l: int, dx2: np.ndarray, c: dict):
    """Accumulate block parameter gradients into ``grads``; return ``dx``."""
    P = f"blocks.{l}"
    H, Dh = cfg.heads, cfg.head_width
    n = dx2.shape[0]

    dgm, grads[f"{P}.mlp.fc2.weight"], grads[f"{P}.mlp.fc2.bias"] = nx.linear_backward(
        dx2, params[f"{P}.mlp.fc2.weight"], c["gm"]
    )
    dm1 = nx.gelu_backward(dgm, c["m1"], c["gcdf"])
    db, grads[f"{P}.mlp.fc1.weight"], grads[f"{P}.mlp.fc1.bias"] = nx.linear_backward(
        dm1, params[f"{P}.mlp.fc1.weight"], c["b"]
    )
    dx1_ln, grads[f"{P}.ln2.scale"], grads[f"{P}.ln2.shift"] = nx.layer_norm_backward(db, c["ln2"])
    dx1 = dx2 + dx1_ln

    dy, grads[f"{P}.out.weight"], grads[f"{P}.out.bias"] = nx.linear_backward(
        dx1, params[f"{P}.out.weight"], c["y"]
    )
    dzp, dw = deslice_backward(dy, c["zp"], c["w"])
    dz, grads[f"{P}.q.weight"], grads[f"{P}.k.weight"], grads[f"{P}.v.weight"] = (
        slice_attention_backward(dzp, c["att"], params[f"{P}.q.weight"],
                                 params[f"{P}.k.weight"], params[f"{P}.v.weight"])
    )
    dw_agg, dxt = slice_aggregate_backward(dz, c["w"], c["xt"], c["z"], c["mass"])
    dw = dw + dw_agg
    dlogits = slice_weights_backward(dw, c["w"])

    dxt_flat = dxt.transpose(1, 0, 2).reshape(n, H * Dh)
    da, grads[f"{P}.proj.weight"], grads[f"{P}.proj.bias"] = nx.linear_backward(
        dxt_flat, params[f"{P}.proj.weight"], c["a"]
    )
    da2, grads[f"{P}.slice.weight"], grads[f"{P}.slice.bias"] = nx.linear_backward(
        dlogits, params[f"{P}.slice.weight"], c["a"]
    )
    dx_ln, grads[f"{P}.ln1.scale"], grads[f"{P}.ln1.shift"] = nx.layer_norm_backward(da + da2, c["ln1"])
    return dx1 + dx_ln


def physics_attention_block(params: dict, cfg: ModelConfig, l: int, x: np.ndarray) -> np.ndarray:
    return block_forward(params, cfg, l, x)[0]


# ---------------------------------------------------------------------------
# Full encoder
# ---------------------------------------------------------------------------


@dataclass
class TransolverCache:
    embed: tuple
    blocks: list
    y_star: np.ndarray
    head_a: np.ndarray
    head_h: np.ndarray
    head_cdf: np.ndarray


def transolver_forward(params: dict, cfg: ModelConfig, g: np.ndarray):
    """Return ``(u_hat [N, C'], y_star [N, D], cache)`` for normalized features ``g``."""
    if g.ndim != 2 or g.shape[1] != cfg.in_features:
        raise DimensionError(f"expected [N, {cfg.in_features}] features, got {g.shape}")
    x, ecache = _embed_forward(params, g)
    bcaches = []
    for l in range(cfg.blocks):
        x, bc = block_forward(params, cfg, l, x)
        bcaches.append(bc)
    y_star = x
    a = nx.linear_forward(params["head.fc1.weight"], params["head.fc1.bias"], y_star)
    h, cdf = nx.gelu_forward(a)
    u = nx.linear_forward(params["head.fc2.weight"], params["head.fc2.bias"], h)
    return u, y_star, TransolverCache(ecache, bcaches, y_star, a, h, cdf)


def transolver_backward(params: dict, cfg: ModelConfig, du: np.ndarray, dy_star_extra, cache: TransolverCache) -> dict:
    """Gradients of all encoder parameters given ``dL/du_hat`` and any extra
    gradient flowing into ``y_star`` (from the branch network)."""
    grads: dict[str, np.ndarray] = {}
    dh, grads["head.fc2.weight"], grads["head.fc2.bias"] = nx.linear_backward(
        du, params["head.fc2.weight"], cache.head_h
    )
    da = nx.gelu_backward(dh, cache.head_a, cache.head_cdf)
    dy, grads["head.fc1.weight"], grads["head.fc1.bias"] = nx.linear_backward(
        da, params["head.fc1.weight"], cache.y_star
    )
    if dy_star_extra is not None:
        dy = dy + dy_star_extra
    for l in reversed(range(cfg.blocks)):
        dy = block_backward(params, grads, cfg, l, dy, cache.blocks[l])
    _embed_backward(params, grads, dy, cache.embed)
    return grads
