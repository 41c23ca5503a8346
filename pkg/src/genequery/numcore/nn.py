"""Neural primitives composed by the GeneQuery network."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from .params import ParamStore, init_weight
from .tensor import (
    Tensor,
    add,
    as_tensor,
    gelu,
    layer_norm_last,
    linear,
    masked_softmax,
    matmul,
    mul,
    reshape,
    swap_last,
    transpose,
)

LN_EPS = 1e-5


def softmax(x):
    """Stable softmax over the last axis; accepts arrays or Tensors."""
    t = as_tensor(x)
    if not t.is_finite():
        raise NumericError("softmax input must be finite")
    out = masked_softmax(t)
    return out if isinstance(x, Tensor) else out.data


def layer_norm(x, gamma, beta, eps: float = LN_EPS):
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    wrap = isinstance(x, Tensor)
    out = layer_norm_last(as_tensor(x), as_tensor(gamma), as_tensor(beta), eps)
    return out if wrap else out.data


def _batched(X: Tensor, mask):
    squeeze = X.ndim == 2
    if squeeze:
        X = reshape(X, (1,) + X.shape)
    if mask is None:
        mask = np.ones(X.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(X.shape[:2])
    if not mask.any(axis=1).all():
        raise ShapeError("every sequence needs at least one valid position")
    return X, mask, squeeze


def multi_head_attention(X, mask, params: ParamStore, heads: int, return_weights: bool = False):
    """Scaled dot-product self-attention over (batch, seq, d) or (seq, d) input.

    ``params`` holds wq/bq, wk, wv/bv, wo/bo. A key bias would shift every
    score of a query equally, so it is omitted. Masked key positions get
    exactly zero weight.
    """
    X = as_tensor(X)
    d = X.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    X, mask, squeeze = _batched(X, mask)
    b, s, _ = X.shape
    dh = d // heads

    def split(t):
        return transpose(reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    q = split(linear(X, params["wq"], params["bq"]))
    k = split(linear(X, params["wk"]))
    v = split(linear(X, params["wv"], params["bv"]))
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(dh))
    weights = masked_softmax(scores, mask[:, None, None, :])
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (b, s, d))
    out = linear(ctx, params["wo"], params["bo"])
    if squeeze:
        out = reshape(out, (s, d))
    if return_weights:
        w = weights.data[0] if squeeze else weights.data
        return out, w
    return out


def transformer_block(X, mask, params: ParamStore, heads: int, eps: float = LN_EPS):
    """Pre-norm residual attention followed by a pre-norm residual GELU MLP."""
    X = as_tensor(X)
    h = layer_norm_last(X, params["ln1.g"], params["ln1.b"], eps)
    X = add(X, multi_head_attention(h, mask, params.subset("attn."), heads))
    h = layer_norm_last(X, params["ln2.g"], params["ln2.b"], eps)
    h = gelu(linear(h, params["mlp.w1"], params["mlp.b1"]))
    return add(X, linear(h, params["mlp.w2"], params["mlp.b2"]))


def init_block(seed: int, prefix: str, d: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Initial values for one block; weights normal(0, 0.02), biases zero, LN identity."""
    hidden = 4 * d
    shapes = {
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "mlp.w1": (d, hidden), "mlp.w2": (hidden, d),
    }
    out = {prefix + n: init_weight(seed, prefix + n, s, dtype) for n, s in shapes.items()}
    for n in ("attn.bq", "attn.bv", "attn.bo", "mlp.b2"):
        out[prefix + n] = np.zeros(d, dtype=dtype)
    out[prefix + "mlp.b1"] = np.zeros(hidden, dtype=dtype)
    out[prefix + "ln1.g"] = np.ones(d, dtype=dtype)
    out[prefix + "ln1.b"] = np.zeros(d, dtype=dtype)
    out[prefix + "ln2.g"] = np.ones(d, dtype=dtype)
    out[prefix + "ln2.b"] = np.zeros(d, dtype=dtype)
    return out


def block_params(seed: int, d: int, dtype=np.float32) -> ParamStore:
    return ParamStore({k: Tensor(v) for k, v in init_block(seed, "", d, dtype).items()})
