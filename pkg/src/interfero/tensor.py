"""Small reverse-mode kernels for the two InSAR CNNs.

Feature maps are plain ``numpy`` arrays shaped ``(C, H, W)`` or batched
``(N, C, H, W)``.  Trainable parameters live in :class:`NetTensor`, which pairs
a value buffer with a gradient buffer of the same shape.

Every convolution is 3x3 with zero padding of one pixel, so spatial size is
preserved.  Matrix products run in the dtype of the inputs (float32 for
training, float64 for gradient checks); explicit sums such as bias gradients
and losses accumulate in float64.

Internally the batched kernels work channel-major, ``(C, N, H, W)``, so that
the im2col matrix and the convolution output need no transposes.  The public
``conv2d_*`` wrappers accept the usual channel-first layouts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "none")
KERNEL_SIZE = 3


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent for an operation."""


class NetTensor:
    """Real array with a paired gradient buffer."""

    def __init__(self, values, dtype=np.float32):
        values = np.array(values, dtype=dtype)
        if values.ndim == 0 or min(values.shape) < 1:
            raise ShapeError(f"all extents must be >= 1, got {values.shape}")
        self.values = values
        self.grad = np.zeros_like(values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"NetTensor(shape={self.shape}, dtype={self.values.dtype})"


@dataclass
class ConvLayer:
    """3x3 convolution with bias and pointwise activation."""

    kernels: NetTensor
    bias: NetTensor
    activation: str = "relu"
    # weight-std penalty strength; 0 disables it
    penalty: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        k = self.kernels.shape
        if len(k) != 4 or k[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeError(f"kernels must be O x C x 3 x 3, got {k}")
        if self.bias.shape != (k[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {k[0]} outputs")

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    def parameters(self):
        return [self.kernels, self.bias]


# --------------------------------------------------------------------------
# activations

def activation_apply(x, kind):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        x = np.asarray(x)
        out = np.empty_like(x, dtype=np.result_type(x, np.float32))
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if kind == "none":
        return np.asarray(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(y, kind):
    """Derivative expressed through the activation output ``y``."""
    if kind == "relu":
        return (y > 0).astype(y.dtype)
    if kind == "sigmoid":
        return y * (1 - y)
    if kind == "none":
        return np.ones_like(y)
    raise ValueError(f"unknown activation {kind!r}")


def _apply_activation_grad(upstream, y, kind):
    if kind == "relu":
        return np.multiply(upstream, y > 0, dtype=upstream.dtype)
    return upstream * activation_derivative(y, kind)


# --------------------------------------------------------------------------
# channel-major convolution kernels

def _shift_slices(d, n):
    """Source/destination slices for a tap offset ``d`` in {0,1,2} with pad 1."""
    src = slice(max(0, d - 1), n + min(0, d - 1))
    dst = slice(max(0, 1 - d), n - max(0, d - 1))
    return src, dst


def _im2col(x):
    """(C, N, H, W) -> (C*9, N*H*W) zero-padded 3x3 windows."""
    c, n, h, w = x.shape
    cols = np.zeros((c, 3, 3, n, h, w), dtype=x.dtype)
    for dy in range(3):
        ys, yd = _shift_slices(dy, h)
        for dx in range(3):
            xs, xd = _shift_slices(dx, w)
            cols[:, dy, dx, :, yd, xd] = x[:, :, ys, xs]
    return cols.reshape(c * 9, n * h * w)


def _col2im(cols, shape):
    """Adjoint of :func:`_im2col`."""
    c, n, h, w = shape
    cols = cols.reshape(c, 3, 3, n, h, w)
    out = np.zeros(shape, dtype=cols.dtype)
    for dy in range(3):
        ys, yd = _shift_slices(dy, h)
        for dx in range(3):
            xs, xd = _shift_slices(dx, w)
            out[:, :, ys, xs] += cols[:, dy, dx, :, yd, xd]
    return out


def _kernel_matrix(layer, dtype):
    return layer.kernels.values.reshape(layer.out_channels, -1).astype(dtype, copy=False)


def _flipped_kernel_matrix(layer, dtype):
    # (C, O*9): kernels with in/out swapped and taps rotated 180 degrees
    k = layer.kernels.values[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(k).reshape(layer.in_channels, -1).astype(dtype, copy=False)


def _finish(z, layer):
    z += layer.bias.values.astype(z.dtype, copy=False)[:, None]
    return activation_apply(z, layer.activation)


def conv_forward_cn(x, layer):
    """Channel-major convolution.  Returns ``(y, ctx)`` for the backward pass."""
    c, n, h, w = x.shape
    if c != layer.in_channels:
        raise ShapeError(f"input has {c} channels, layer expects {layer.in_channels}")
    cols = _im2col(x)
    y = _finish(_kernel_matrix(layer, x.dtype) @ cols, layer)
    y = y.reshape(layer.out_channels, n, h, w)
    return y, (cols, x.shape, y)


def _input_grad_cn(dz4, layer, shape):
    """Gradient wrt the conv input given the pre-activation gradient ``dz4``.

    Picks whichever of col2im or a flipped-kernel convolution moves less data.
    """
    o = layer.out_channels
    c = layer.in_channels
    if o < c:
        return (_flipped_kernel_matrix(layer, dz4.dtype) @ _im2col(dz4)).reshape(shape)
    dz = dz4.reshape(o, -1)
    return _col2im(_kernel_matrix(layer, dz.dtype).T @ dz, shape)


def conv_backward_cn(upstream, layer, ctx, *, input_grad=True):
    """Backward of :func:`conv_forward_cn`.

    Parameter gradients are added into the layer's buffers and also returned.
    """
    cols, shape, y = ctx
    if upstream.shape != y.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {y.shape}")
    dz4 = _apply_activation_grad(upstream, y, layer.activation)
    dz = dz4.reshape(layer.out_channels, -1)
    dtype = layer.kernels.values.dtype
    kernel_grad = (dz @ cols.T).reshape(layer.kernels.shape).astype(dtype, copy=False)
    bias_grad = dz.sum(axis=1, dtype=np.float64).astype(dtype)
    layer.kernels.grad += kernel_grad
    layer.bias.grad += bias_grad
    dx = _input_grad_cn(dz4, layer, shape) if input_grad else None
    return dx, kernel_grad, bias_grad


def _phase_taps(factor):
    """R[a, r, d] = 1 when tap ``d`` of output phase ``a`` reads low-res offset ``r - 1``."""
    r = np.zeros((factor, 3, 3))
    for a in range(factor):
        for d in range(3):
            r[a, (a + d - 1) // factor + 1, d] = 1.0
    return r


def upconv_forward_cn(x, layer, factor):
    """``conv(upsample_nearest(x, factor))`` computed on the low-res grid.

    Each of the ``factor**2`` output phases sees a fixed low-res 3x3
    neighbourhood, so the hi-res convolution collapses to one matrix product
    with phase-combined kernels.  Exact, with 1/factor**2 of the im2col memory.
    """
    if factor == 1:
        return conv_forward_cn(x, layer)
    c, n, h, w = x.shape
    if c != layer.in_channels:
        raise ShapeError(f"input has {c} channels, layer expects {layer.in_channels}")
    o = layer.out_channels
    taps = _phase_taps(factor).astype(x.dtype)
    keff = np.einsum("ard,bse,ocde->abocrs", taps, taps,
                     layer.kernels.values.astype(x.dtype, copy=False))
    keff = keff.reshape(factor * factor * o, c * 9)
    cols = _im2col(x)
    z = (keff @ cols).reshape(factor, factor, o, n, h, w)
    z = z.transpose(2, 3, 4, 0, 5, 1).reshape(o, n * h * factor * w * factor)
    y = _finish(z, layer).reshape(o, n, h * factor, w * factor)
    return y, (cols, x.shape, y, taps, keff, factor)


def upconv_backward_cn(upstream, layer, ctx, *, input_grad=True):
    cols, shape, y, taps, keff, f = ctx
    if upstream.shape != y.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {y.shape}")
    c, n, h, w = shape
    o = layer.out_channels
    dz4 = _apply_activation_grad(upstream, y, layer.activation)
    dtype = layer.kernels.values.dtype
    bias_grad = dz4.reshape(o, -1).sum(axis=1, dtype=np.float64).astype(dtype)
    dz = dz4.reshape(o, n, h, f, w, f).transpose(3, 5, 0, 1, 2, 4).reshape(f * f * o, -1)
    keff_grad = (dz @ cols.T).reshape(f, f, o, c, 3, 3)
    kernel_grad = np.einsum("ard,bse,abocrs->ocde", taps, taps, keff_grad).astype(dtype)
    layer.kernels.grad += kernel_grad
    layer.bias.grad += bias_grad
    dx = _col2im(keff.T @ dz, shape) if input_grad else None
    return dx, kernel_grad, bias_grad


# --------------------------------------------------------------------------
# public channel-first wrappers

def _to_cn(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[:, None], True
    if x.ndim == 4:
        return x.transpose(1, 0, 2, 3), False
    raise ShapeError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")


def _from_cn(y, single):
    if single:
        return np.ascontiguousarray(y[:, 0])
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


def conv2d_forward(x, layer):
    """Same-size 3x3 convolution plus bias, then the layer's activation."""
    xc, single = _to_cn(x)
    y, _ = conv_forward_cn(np.ascontiguousarray(xc), layer)
    return _from_cn(y, single)


def conv2d_backward(x, layer, upstream, *, accumulate=True):
    """Gradients of :func:`conv2d_forward` at input ``x``.

    Returns ``(input_grad, kernel_grad, bias_grad)``.  With ``accumulate`` the
    parameter gradients are also added to the layer's gradient buffers.
    """
    xc, single = _to_cn(x)
    uc, _ = _to_cn(upstream)
    saved = (layer.kernels.grad.copy(), layer.bias.grad.copy())
    _, ctx = conv_forward_cn(np.ascontiguousarray(xc), layer)
    dx, kg, bg = conv_backward_cn(np.ascontiguousarray(uc), layer, ctx)
    if not accumulate:
        layer.kernels.grad[...], layer.bias.grad[...] = saved
    return _from_cn(dx, single), kg, bg


# --------------------------------------------------------------------------
# resampling; these act on the two trailing axes so any leading layout works

def maxpool_forward(x, factor):
    """Non-overlapping ``factor`` x ``factor`` max pooling.

    Returns the pooled map and the argmax index map: for each output cell the
    row-major offset (0 .. factor**2 - 1) of the winning input inside its
    block.  Ties go to the first occurrence.
    """
    x = np.asarray(x)
    *lead, h, w = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by pool factor {factor}")
    ho, wo = h // factor, w // factor
    nd = len(lead)
    blocks = x.reshape(*lead, ho, factor, wo, factor)
    order = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    blocks = blocks.transpose(order).reshape(*lead, ho, wo, factor * factor)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(argmax, upstream, factor):
    """Route each upstream value to its recorded argmax position."""
    u = np.asarray(upstream)
    argmax = np.asarray(argmax)
    if argmax.shape != u.shape:
        raise ShapeError(f"argmax shape {argmax.shape} != upstream shape {u.shape}")
    *lead, ho, wo = u.shape
    nd = len(lead)
    blocks = np.zeros((*lead, ho, wo, factor * factor), dtype=u.dtype)
    np.put_along_axis(blocks, argmax[..., None], u[..., None], axis=-1)
    order = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return (blocks.reshape(*lead, ho, wo, factor, factor)
            .transpose(order)
            .reshape(*lead, ho * factor, wo * factor))


def upsample_nearest(x, factor):
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    x = np.asarray(x)
    return x.repeat(factor, axis=-2).repeat(factor, axis=-1)


def upsample_backward(upstream, factor):
    """Block-sum, the adjoint of :func:`upsample_nearest`."""
    u = np.asarray(upstream)
    *lead, h, w = u.shape
    blocks = u.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.sum(axis=(-3, -1), dtype=np.float64).astype(u.dtype)


# --------------------------------------------------------------------------
# losses and penalties

def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.astype(np.float64) - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype)


def weight_std_penalty(layer, lam, *, accumulate=True):
    """``lam`` times the population std of the layer's kernel weights.

    Returns ``(penalty, kernel_grad)``; the gradient is added to the kernel
    gradient buffer unless ``accumulate`` is false.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    w = layer.kernels.values.astype(np.float64)
    centered = w - w.mean()
    # identical weights must give exactly zero, not mean-rounding residue
    std = 0.0 if np.ptp(w) == 0 else float(np.sqrt(np.mean(centered * centered)))
    if lam == 0 or std == 0.0:
        grad = np.zeros_like(w)
    else:
        grad = lam * centered / (w.size * std)
    grad = grad.astype(layer.kernels.values.dtype)
    if accumulate:
        layer.kernels.grad += grad
    return lam * std, grad


# --------------------------------------------------------------------------
# optimisation

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state):
    """One Adam update of ``params`` (NetTensors) from their ``grad`` buffers."""
    if not state.m:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("Adam state does not match parameter list")
    state.t += 1
    bc1 = 1 - state.beta1 ** state.t
    bc2 = 1 - state.beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad.astype(np.float64)
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.values -= step.astype(p.values.dtype)
    return params, state


def xavier_init(shape, seed, dtype=np.float32):
    """Uniform Glorot initialisation for conv kernels ``(O, C, kh, kw)``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    shape = tuple(shape)
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = (shape[1] if len(shape) > 1 else shape[0]) * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return NetTensor(rng.uniform(-limit, limit, size=shape), dtype=dtype)


def conv_rows_cn(x, layer, factor=1, max_elems=1 << 23):
    """Inference-only convolution (optionally fused with upsampling) in row slabs.

    Each slab carries a one-row halo, so the result equals the unchunked
    computation while the im2col buffer stays below ``max_elems`` values.
    """
    c, n, h, w = x.shape
    per_row = c * 9 * n * w
    rows = max(1, max_elems // per_row)
    if factor == 1:
        def run(a):
            return conv_forward_cn(a, layer)[0]
    else:
        def run(a):
            return upconv_forward_cn(a, layer, factor)[0]
    if rows >= h:
        return run(x)
    pieces = []
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        lo, hi = max(0, r0 - 1), min(h, r1 + 1)
        y = run(x[:, :, lo:hi])
        start = (r0 - lo) * factor
        pieces.append(y[:, :, start:start + (r1 - r0) * factor])
    return np.concatenate(pieces, axis=2)
