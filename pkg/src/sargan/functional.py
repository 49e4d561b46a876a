"""Differentiable operations used by the despeckling, colorization and
discriminator networks.

Each op computes its forward value with numpy and attaches a closure that
maps the upstream gradient to gradients for its inputs.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LOG_CLAMP = 1e-7

# ITU-R BT.601 luma weights
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _node(data, parents, backward, op):
    return Tensor(data, _parents=tuple(parents), _backward=backward, _op=op)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def shift(x: Tensor, c: float) -> Tensor:
    return _node(x.data + c, (x,), lambda g: (g,), "shift")


def elementwise_div(numerator: Tensor, denominator: Tensor, eps: float = 1e-3) -> Tensor:
    """``numerator / (denominator + eps)``, elementwise."""
    _same_shape("elementwise_div", numerator, denominator)
    if eps < 0:
        raise ContractError("eps must be non-negative")
    den = denominator.data + eps
    out = numerator.data / den

    def backward(g):
        return g / den, -g * numerator.data / (den * den)

    return _node(out, (numerator, denominator), backward, "div")


def absolute(x: Tensor) -> Tensor:
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the value was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return _node(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def unit_tanh(x: Tensor) -> Tensor:
    """``(tanh(x) + 1) / 2``: tanh rescaled onto [0, 1]."""
    t = np.tanh(x.data)
    return _node(0.5 * (t + 1.0), (x,), lambda g: (0.5 * g * (1.0 - t * t),), "unit_tanh")


# ---------------------------------------------------------------------------
# reductions and reshapes
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return _node(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _node(np.mean(x.data), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),), "mean")


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def global_avg_pool(x: Tensor) -> Tensor:
    """N×C×H×W -> N×C."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4 axes, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _node(out, (x,), backward, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """N×Fin @ (Fout×Fin)^T + bias."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _node(out, parents, backward, "linear")


def channel_mix(x: Tensor, weights, order=None) -> Tensor:
    """Weighted sum over the channel axis of an N×C×H×W tensor -> N×1×H×W.

    Channels are accumulated in ``order`` (default: index order).
    """
    w = np.asarray(weights, dtype=x.data.dtype)
    if x.ndim != 4 or x.shape[1] != w.size:
        raise DimensionError(f"channel_mix: {w.size} weights for input {x.shape}")
    order = range(w.size) if order is None else order
    out = None
    for c in order:
        term = w[c] * x.data[:, c:c + 1]
        out = term if out is None else out + term

    def backward(g):
        return (g * w[None, :, None, None],)

    return _node(out, (x,), backward, "channel_mix")


def gray(x: Tensor) -> Tensor:
    """BT.601 luma of an RGB batch; single-channel input passes through."""
    if x.ndim == 4 and x.shape[1] == 1:
        return x
    # green + blue + red sums the weights to exactly 1.0, so gray(1, 1, 1) == 1
    return channel_mix(x, GRAY_WEIGHTS, order=(1, 2, 0))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pads(zero_pad) -> tuple[int, int]:
    if np.isscalar(zero_pad):
        return int(zero_pad), int(zero_pad)
    before, after = zero_pad
    return int(before), int(after)


def conv_output_size(size: int, kernel: int, stride: int, zero_pad) -> int:
    before, after = _pads(zero_pad)
    span = size + before + after - kernel
    if span < 0 or span % stride:
        raise DimensionError(
            f"non-integral output extent: ({size} + {before + after} - {kernel}) / {stride} + 1"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           zero_pad=0) -> Tensor:
    """2-D cross-correlation of an N×Cin×H×W batch with Cout×Cin×kh×kw kernels.

    ``zero_pad`` is either one int applied on every side, or a
    ``(before, after)`` pair applied to both spatial axes.
    """
    if stride < 1:
        raise ContractError("stride must be >= 1")
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-axis input and kernel, got {x.shape}, {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    before, after = _pads(zero_pad)
    ho = conv_output_size(h, kh, stride, zero_pad)
    wo = conv_output_size(w, kw, stride, zero_pad)

    # channels-last layout keeps every copy below a run of contiguous channels
    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (before, after), (before, after), (0, 0)))
    cols = np.empty((n, ho, wo, kh, kw, cin), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * cin)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gk = (gmat.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gcols = (gmat @ wmat).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, before:before + h, before:before + w, :].transpose(0, 3, 1, 2)
        grads = [np.ascontiguousarray(gx), np.ascontiguousarray(gk)]
        if bias is not None:
            grads.append(gmat.sum(axis=0))
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(np.ascontiguousarray(out), parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class RunningStats:
    """Per-channel running mean and variance for batch normalization."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * mean
        self.var = m * self.var + (1.0 - m) * var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats | None = None,
               mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization of an N×C×H×W batch followed by scale and shift."""
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects 4 axes, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    count = x.size // c if c else 0
    if count == 0:
        raise DimensionError("batch_norm: zero-size channel slab")
    axes = (0, 2, 3)
    shape = (1, c, 1, 1)

    if mode == "train":
        if count < 2:
            raise ContractError("batch_norm train mode needs more than one value per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None:
            running.update(mu, var)
    elif mode == "eval":
        if running is None:
            raise ContractError("batch_norm eval mode needs running statistics")
        mu, var = running.mean, running.var
    else:
        raise ContractError(f"unknown batch_norm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        g_gamma = (g * xhat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape)
        if mode == "train":
            gx = (inv_std.reshape(shape) / count) * (
                count * dxhat
                - dxhat.sum(axis=axes).reshape(shape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
            )
        else:
            gx = dxhat * inv_std.reshape(shape)
        return gx, g_gamma, g_beta

    return _node(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_loss(estimate: Tensor, target) -> Tensor:
    """Mean absolute difference over every element."""
    target = as_tensor(target)
    _same_shape("l1_loss", estimate, target)
    return mean(absolute(sub(estimate, target)))


def _scores(d_outputs) -> Tensor:
    if isinstance(d_outputs, Tensor):
        scores = d_outputs
    else:
        scores = Tensor(np.asarray(d_outputs, dtype=float).reshape(-1))
    if scores.size == 0:
        raise ContractError("need at least one discriminator output")
    return scores


def neg_mean_log(p) -> Tensor:
    """``-mean(log(clamp(p, 1e-7, 1 - 1e-7)))``."""
    p = _scores(p)
    return scale(mean(log(clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP))), -1.0)
