"""Dense arrays with reverse-mode automatic differentiation.

Every operation records its parents and a closure that maps the output
gradient to parent gradients.  ``backward`` walks the recorded graph in
reverse topological order.  Data lives in numpy arrays; float32 is the
training precision and float64 is used for gradient checking.

FFT conventions: ``rfft2`` is the unnormalized forward DFT over the last two
axes, keeping ``w // 2 + 1`` columns; ``irfft2`` carries the ``1 / (h * w)``
factor.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Topologically ordered nodes reachable from an output tensor."""

    nodes: list[Tensor]

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents]


def backward(loss: Tensor, graph: Graph | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Returns a mapping from ``id(leaf)`` to its gradient array.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    graph = graph or Graph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            leaves[id(node)] = node.grad
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)
    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None)
    return _make(ad / bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    out = out.astype(a.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def silu(a: Tensor) -> Tensor:
    sig = (1.0 / (1.0 + np.exp(-a.data))).astype(a.dtype, copy=False)
    return _make(a.data * sig, (a,), lambda g: (g * sig * (1.0 + a.data * (1.0 - sig)),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(a.dtype),)
    return _make(np.asarray(out), (a,), bw)


def variance(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (mean of squared deviations)."""
    dev = a - mean(a, axis=axis, keepdims=True)
    return mean(square(dev), axis=axis, keepdims=keepdims)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    index = np.asarray(index)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (out,)
    return _make(np.take(a.data, index, axis=axis), (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb
    return _make(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and pooling (NCHW)
# ---------------------------------------------------------------------------

def _check_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects (B, C, H, W), got {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int | None = None) -> Tensor:
    """Dense 2D cross-correlation; default padding keeps odd kernels 'same'."""
    _check_nchw(x, "conv2d")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if padding is None:
        padding = kh // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if kh == 1 and kw == 1:
        win = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        cols = win.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, C)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C, kh, kw)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0) if (bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:Hp - padding, padding:Wp - padding] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, gb
    return _make(np.ascontiguousarray(out), parents, bw)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 'same' convolution; weight shape (C, k, k), k odd."""
    _check_nchw(x, "depthwise_conv2d")
    B, C, H, W = x.shape
    Cw, k, _ = weight.shape
    if Cw != C:
        raise ShapeError(f"depthwise_conv2d: {C} channels vs weight {Cw}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, H, W, k, k
    out = np.einsum("bchwij,cij->bchw", win, weight.data)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gw = np.einsum("bchwij,bchw->cij", win, g) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            wd = weight.data
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + H, j:j + W] += g * wd[None, :, i, j, None, None]
            gx = gxp[:, :, p:p + H, p:p + W]
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gw, gb
    return _make(out, parents, bw)


def _blocks(a: np.ndarray, f: int) -> np.ndarray:
    *lead, H, W = a.shape
    if H % f or W % f:
        raise ShapeError(f"pool factor {f} does not divide spatial size {(H, W)}")
    return a.reshape(*lead, H // f, f, W // f, f)


def avg_pool2d(x: Tensor, f: int) -> Tensor:
    blocks = _blocks(x.data, f)
    out = blocks.mean(axis=(-3, -1))

    def bw(g):
        g = np.repeat(np.repeat(g, f, axis=-2), f, axis=-1)
        return (g / (f * f),)
    return _make(out, (x,), bw)


def max_pool2d(x: Tensor, f: int) -> Tensor:
    blocks = _blocks(x.data, f)
    out = blocks.max(axis=(-3, -1))

    def bw(g):
        # gradient routed to every tied maximum
        exp_out = out[..., :, None, :, None]
        hit = (blocks == exp_out)
        ties = hit.sum(axis=(-3, -1), keepdims=True)
        gb = hit * (g[..., :, None, :, None] / ties)
        return (gb.reshape(x.shape),)
    return _make(out, (x,), bw)


def upsample_nearest2d(x: Tensor, f: int = 2) -> Tensor:
    out = np.repeat(np.repeat(x.data, f, axis=-2), f, axis=-1)

    def bw(g):
        return (_blocks(g, f).sum(axis=(-3, -1)),)
    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias, weight shaped (out, in)."""
    out = matmul(x, transpose(weight, (1, 0)))
    return out if bias is None else out + bias


def self_attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                   wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor, heads: int = 4) -> Tensor:
    """Multi-head self-attention over the flattened spatial positions of NCHW input."""
    _check_nchw(x, "self_attention")
    B, C, H, W = x.shape
    if C % heads:
        raise ShapeError(f"{C} channels not divisible by {heads} heads")
    dh = C // heads
    L = H * W
    tokens = transpose(reshape(x, (B, C, L)), (0, 2, 1))  # B, L, C

    def split(t):
        return transpose(reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(linear(tokens, wq, bq))
    k = split(linear(tokens, wk, bk))
    v = split(linear(tokens, wv, bv))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = transpose(matmul(attn, v), (0, 2, 1, 3))  # B, L, heads, dh
    out = linear(reshape(ctx, (B, L, C)), wo, bo)
    return reshape(transpose(out, (0, 2, 1)), (B, C, H, W))


# ---------------------------------------------------------------------------
# spectral ops
# ---------------------------------------------------------------------------

@dataclass
class ComplexSpectrum:
    """Half-spectrum of a real signal over the last two axes."""

    re: Tensor
    im: Tensor
    width: int  # spatial width of the signal the spectrum came from

    @property
    def shape(self) -> tuple:
        return self.re.shape


def _check_spectral_rank(shape: tuple, what: str) -> None:
    if len(shape) not in (3, 4):
        raise ShapeError(f"{what} expects (c, h, w) or (B, c, h, w), got {shape}")


def _rfft2_raw(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.fft.rfft2(x, axes=(-2, -1))
    dt = x.dtype
    return s.real.astype(dt), s.imag.astype(dt)


def rfft2(x: Tensor) -> ComplexSpectrum:
    _check_spectral_rank(x.shape, "rfft2")
    h, w = x.shape[-2:]
    wh = w // 2 + 1
    s = np.fft.rfft2(x.data, axes=(-2, -1))
    dt = x.dtype
    joint = np.stack([s.real, s.imag]).astype(dt)

    def bw(g):
        gc = g[0] + 1j * g[1]
        full = np.zeros(gc.shape[:-1] + (w,), dtype=np.complex128)
        full[..., :wh] = gc
        return (np.real(np.fft.ifft2(full, axes=(-2, -1))).astype(dt) * (h * w),)
    packed = _make(joint, (x,), bw)
    return ComplexSpectrum(_index0(packed, 0), _index0(packed, 1), w)


def _index0(a: Tensor, i: int) -> Tensor:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[i] = g
        return (out,)
    return _make(a.data[i], (a,), bw)


def _stack0(a: Tensor, b: Tensor) -> Tensor:
    return _make(np.stack([a.data, b.data]), (a, b), lambda g: (g[0], g[1]))


def irfft2(s: ComplexSpectrum, out_width: int | None = None) -> Tensor:
    out_width = s.width if out_width is None else out_width
    _check_spectral_rank(s.shape, "irfft2")
    h, wh = s.shape[-2:]
    if out_width // 2 + 1 != wh:
        raise ShapeError(f"spectrum width {wh} inconsistent with output width {out_width}")
    dt = s.re.dtype
    packed = _stack0(s.re, s.im)
    spec = packed.data[0] + 1j * packed.data[1]
    out = np.fft.irfft2(spec, s=(h, out_width), axes=(-2, -1)).astype(dt)
    # weight of each half-spectrum column in the Hermitian extension
    col_w = np.full(wh, 2.0)
    col_w[0] = 1.0
    if out_width % 2 == 0:
        col_w[-1] = 1.0

    def bw(g):
        gs = np.fft.rfft2(g, axes=(-2, -1)) * (col_w / (h * out_width))
        return (np.stack([gs.real, gs.imag]).astype(dt),)
    return _make(out, (packed,), bw)


def magphase(s: ComplexSpectrum) -> tuple[Tensor, Tensor]:
    """Magnitude and phase; phase and both gradients are 0 where magnitude is 0."""
    re, im = s.re.data, s.im.data
    amp = np.sqrt(re * re + im * im)
    phase = np.arctan2(im, re)
    zero = amp == 0
    phase = np.where(zero, 0.0, phase).astype(re.dtype)
    safe = np.where(zero, 1.0, amp)
    packed = _stack0(s.re, s.im)

    def bw(g):
        ga, gp = g[0], g[1]
        gre = np.where(zero, 0.0, ga * re / safe - gp * im / (safe * safe))
        gim = np.where(zero, 0.0, ga * im / safe + gp * re / (safe * safe))
        return (np.stack([gre, gim]).astype(re.dtype),)
    both = _make(np.stack([amp, phase]), (packed,), bw)
    return _index0(both, 0), _index0(both, 1)


def polar(amp: Tensor, phase: Tensor, width: int) -> ComplexSpectrum:
    """Recompose a spectrum from magnitude and phase: amp * exp(i * phase)."""
    amp, phase = _coerce_pair(amp, phase)
    a, p = np.broadcast_arrays(amp.data, phase.data)
    c, s = np.cos(p), np.sin(p)

    def bw(g):
        gre, gim = g[0], g[1]
        ga = gre * c + gim * s
        gp = -gre * a * s + gim * a * c
        return _unbroadcast(ga, amp.shape), _unbroadcast(gp, phase.shape)
    both = _make(np.stack([a * c, a * s]), (amp, phase), bw)
    return ComplexSpectrum(_index0(both, 0), _index0(both, 1), width)


__all__ = [
    "Tensor", "Graph", "ComplexSpectrum", "ShapeError", "ContractError", "no_grad",
    "as_tensor", "backward", "add", "sub", "mul", "div", "neg", "power", "square", "exp",
    "log", "sqrt", "sigmoid", "relu", "silu", "softmax", "tsum", "mean", "variance", "reshape",
    "transpose", "concat", "take", "matmul", "linear", "conv2d", "depthwise_conv2d",
    "avg_pool2d", "max_pool2d", "upsample_nearest2d", "self_attention", "rfft2", "irfft2",
    "magphase", "polar", "numeric_grad",
]


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, index: Iterable[tuple],
                 step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar ``fn`` at selected entries of ``param``."""
    out = []
    for idx in index:
        orig = param.data[idx]
        param.data[idx] = orig + step
        with no_grad():
            up = fn().item()
        param.data[idx] = orig - step
        with no_grad():
            down = fn().item()
        param.data[idx] = orig
        out.append((up - down) / (2 * step))
    return np.array(out)
