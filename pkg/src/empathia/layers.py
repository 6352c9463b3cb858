"""Numpy building blocks with explicit forward/backward passes.

Everything here is functional: forward calls return ``(output, cache)`` and
backward calls take ``(grad, cache)``, so model code can run concurrent
read-only inference without shared mutable state. Parameter gradients are
returned to the caller for accumulation.
"""

import numpy as np

from .errors import NumericError

SQRT_2_OVER_PI = 0.7978845608028654


def xavier(rng, shape):
    """Glorot-uniform init for matmul weights."""
    fan_in, fan_out = shape[-1], shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def normal_init(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtracted)."""
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(x, mask, axis=-1):
    """Softmax over positions where ``mask`` is 1; exact zeros elsewhere."""
    neg = np.where(mask > 0, x, -np.inf)
    m = np.max(neg, axis=axis, keepdims=True)
    e = np.exp(neg - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def strip_trailing_pads(ids, mask):
    """Drop trailing columns that are padding in every row.

    BLAS kernel dispatch depends on matrix shape, so running a padded batch
    through the same matmuls is not bit-identical to the unpadded batch even
    when the extra positions are fully masked. Stripping all-PAD columns at
    the model entry makes appended padding literally invisible.
    """
    cols = np.flatnonzero(mask.any(axis=0))
    if cols.size == 0:
        return ids, mask
    true_len = int(cols[-1]) + 1
    if true_len < ids.shape[1]:
        return ids[:, :true_len], mask[:, :true_len]
    return ids, mask


def softmax_backward(dprobs, probs, axis=-1):
    """Backward of softmax: ``ds = p * (dp - sum(p * dp))``."""
    dot = np.sum(probs * dprobs, axis=axis, keepdims=True)
    return probs * (dprobs - dot)


def require_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


def gelu(x):
    """tanh-approximated GELU."""
    inner = SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(dout, x):
    inner = SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    dinner = SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x ** 2)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def layer_norm(x, gain, bias, eps=1e-12):
    """Per-position layer normalization over the last axis."""
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain + bias
    return out, (xhat, inv)


def layer_norm_backward(dout, cache, gain):
    """Returns (dx, dgain, dbias)."""
    xhat, inv = cache
    d = xhat.shape[-1]
    dgain = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dbias = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dx = inv / d * (d * dxhat
                    - np.sum(dxhat, axis=-1, keepdims=True)
                    - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dgain, dbias


def embedding_backward(dW, ids, dout):
    """Scatter-add gradient into an embedding table (in place)."""
    np.add.at(dW, ids.reshape(-1), dout.reshape(-1, dout.shape[-1]))


def dropout_mask(rng, shape, rate):
    """Inverted dropout mask; ``None`` when rate is 0."""
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def apply_dropout(x, mask):
    return x if mask is None else x * mask


def nll_from_probs(probs, gold, floor=1e-12):
    """Mean negative log-likelihood of ``gold`` ids under ``probs`` rows.

    Returns (loss, picked_probs, n_floored); probabilities below ``floor``
    are clamped so a zero never reaches the log.
    """
    picked = probs[np.arange(len(gold)), gold]
    n_floored = int(np.sum(picked < floor))
    loss = float(np.mean(-np.log(np.maximum(picked, floor))))
    return loss, picked, n_floored


def global_norm(arrays):
    total = 0.0
    for a in arrays:
        total += float(np.sum(a * a))
    return float(np.sqrt(total))
