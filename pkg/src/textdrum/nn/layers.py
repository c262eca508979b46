"""Layer primitives with explicit backward passes.

Every forward function returns ``(output, cache)``; the matching
``*_backward`` consumes the upstream gradient and the cache. Operations keep
the dtype of their inputs, so models run in float32 while gradient checks
can run the same code in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BatchTooSmallError, DegenerateEmbeddingError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


# --------------------------------------------------------------------------
# dense


def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b, (x, W)


def linear_backward(dy: np.ndarray, cache):
    x, W = cache
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# --------------------------------------------------------------------------
# LSTM
#
# Weights are packed as W: (I + H, 4H) acting on concat(x, h), gate order
# input, forget, cell candidate, output.


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int, dtype=np.float32):
    bound = 1.0 / np.sqrt(hidden)
    W = rng.uniform(-bound, bound, size=(n_in + hidden, 4 * hidden)).astype(dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0
    return W, b


def lstm_step(x, h_prev, c_prev, W, b):
    n_in = x.shape[1]
    H = h_prev.shape[1]
    # b may be per-row (B, 4H) to carry a conditioning offset
    if W.shape != (n_in + H, 4 * H) or b.shape not in ((4 * H,), (x.shape[0], 4 * H)) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: x{x.shape} h{h_prev.shape} W{W.shape}")
    xh = np.concatenate([x, h_prev], axis=1)
    a = xh @ W + b
    i = sigmoid(a[:, :H])
    f = sigmoid(a[:, H : 2 * H])
    g = np.tanh(a[:, 2 * H : 3 * H])
    o = sigmoid(a[:, 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xh, c_prev, i, f, g, o, tc)


def lstm_step_backward(dh, dc, cache, W):
    """Gradients for one step.

    Returns ``(dx, dh_prev, dc_prev, (xh, da))``; callers accumulate the
    weight gradient as ``xh.T @ da`` (batched over time for speed).
    """
    xh, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dxh = da @ W.T
    n_in = xh.shape[1] - dh.shape[1]
    return dxh[:, :n_in], dxh[:, n_in:], dc * f, (xh, da)


def lstm_forward(xs, h0, c0, W, b):
    """Run an LSTM over xs of shape (B, T, I); returns hs of shape (B, T, H)."""
    steps = []
    h, c = h0, c0
    hs = []
    for t in range(xs.shape[1]):
        h, c, cache = lstm_step(xs[:, t], h, c, W, b)
        steps.append(cache)
        hs.append(h)
    return np.stack(hs, axis=1), (steps, W)


def lstm_backward(dhs, cache, dh_last=None, dc_last=None):
    """Backpropagation through time.

    ``dhs`` is the gradient w.r.t. every hidden output (B, T, H) or None;
    ``dh_last``/``dc_last`` add gradient at the final state.
    Returns ``(dxs, dh0, dc0, dW, db)``.
    """
    steps, W = cache
    T = len(steps)
    xh0, c0 = steps[0][0], steps[0][1]
    B, H = c0.shape
    n_in = xh0.shape[1] - H
    dh = np.zeros((B, H), dtype=c0.dtype) if dh_last is None else dh_last
    dc = np.zeros((B, H), dtype=c0.dtype) if dc_last is None else dc_last
    dxs = np.empty((B, T, n_in), dtype=c0.dtype)
    xhs, das = [], []
    for t in reversed(range(T)):
        if dhs is not None:
            dh = dh + dhs[:, t]
        dx, dh, dc, (xh, da) = lstm_step_backward(dh, dc, steps[t], W)
        dxs[:, t] = dx
        xhs.append(xh)
        das.append(da)
    XH = np.concatenate(xhs, axis=0)
    DA = np.concatenate(das, axis=0)
    return dxs, dh, dc, XH.T @ DA, DA.sum(axis=0)


# --------------------------------------------------------------------------
# batch norm


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, n: int, dtype=np.float32) -> RunningStats:
        return cls(np.zeros(n, dtype=dtype), np.ones(n, dtype=dtype))


def batch_norm(x, gamma, beta, stats: RunningStats, train: bool, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-feature normalization. Train mode updates ``stats`` in place
    (running variance uses the unbiased batch estimate)."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
        raise ShapeError(f"batch_norm: x{x.shape} gamma{gamma.shape}")
    if train:
        n = x.shape[0]
        if n < 2:
            raise BatchTooSmallError("batch norm needs at least 2 rows in train mode")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu
        stats.var[...] = (1 - momentum) * stats.var + momentum * var * (n / (n - 1))
    else:
        mu, var = stats.mean, stats.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, train)


def batch_norm_backward(dy, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# losses


def mse(pred, target):
    """Mean squared error over all elements; returns (loss, dpred)."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff, dtype=np.float64))
    return loss, (2.0 / diff.size) * diff


def softmax_cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[target]; returns (loss, dlogits)."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits{logits.shape} targets{targets.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(logits.shape[0])
    loss = float(-np.mean(log_p[rows, targets], dtype=np.float64))
    grad = np.exp(log_p)
    grad[rows, targets] -= 1.0
    return loss, grad / logits.shape[0]


# --------------------------------------------------------------------------
# similarity


def l2_normalize(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateEmbeddingError("cannot normalize a zero vector")
    return x / norms, (x / norms, norms)


def l2_normalize_backward(dy, cache):
    unit, norms = cache
    return (dy - unit * (dy * unit).sum(axis=-1, keepdims=True)) / norms


def cosine_similarity_matrix(A, B):
    """S[i, j] = cos(A_i, B_j)."""
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"cosine similarity: {A.shape} vs {B.shape}")
    An, ca = l2_normalize(A)
    Bn, cb = l2_normalize(B)
    return np.clip(An @ Bn.T, -1.0, 1.0), (An, Bn, ca, cb)


def cosine_similarity_backward(dS, cache):
    An, Bn, ca, cb = cache
    return l2_normalize_backward(dS @ Bn, ca), l2_normalize_backward(dS.T @ An, cb)


# --------------------------------------------------------------------------
# timestep encoding


def sinusoidal_encode(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding; scalar t -> (dim,), array t -> (N, dim)."""
    if dim <= 0 or dim % 2:
        raise ShapeError("sinusoidal encoding needs a positive even dimension")
    t_arr = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = t_arr[..., None] * freqs
    enc = np.empty(t_arr.shape + (dim,), dtype=np.float64)
    enc[..., 0::2] = np.sin(angles)
    enc[..., 1::2] = np.cos(angles)
    return enc.astype(np.float32)
