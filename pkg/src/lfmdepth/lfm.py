"""Routed magnitude-only spectral filtering of latent feature maps.

A bank of ``N`` real masks over the half-spectrum grid rescales the Fourier
magnitude of the input while the phase is kept.  A small routing network
produces a per-pixel softmax over the ``N`` filtered candidates, and the
blend is added back to the input.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, DepthwiseConv2d, Module, SelfAttention
from .tensor import ShapeError, Tensor

ROUTER_VARIANTS = ("PM", "LE+PM", "LE+LKC+PM", "LE+SA+PM")


def _hermitian_rows(h: int) -> np.ndarray:
    return (-np.arange(h)) % h


def symmetrize_masks(bank: Tensor, width: int) -> Tensor:
    """Average the self-conjugate columns (DC, and Nyquist for even width) with
    their row-mirrored bins so the masked half-spectrum stays Hermitian."""
    h, wh = bank.shape[-2:]
    sym_cols = np.zeros(wh, dtype=bool)
    sym_cols[0] = True
    if width % 2 == 0:
        sym_cols[-1] = True
    mirrored = T.take(bank, _hermitian_rows(h), axis=-2)
    sel = sym_cols.astype(bank.dtype)
    return bank * (1.0 - sel) + (bank + mirrored) * (0.5 * sel)


class SpectralBank(Module):
    def __init__(self, n: int, h: int, w: int, learnable: bool = True, dtype=np.float32):
        self.n, self.h, self.w = n, h, w
        self.masks = Tensor(np.ones((n, h, w // 2 + 1), dtype=dtype), requires_grad=learnable)


class Router(Module):
    """conv3x3-relu-conv3x3-relu, optional context stage, then 1x1 projection to N logits."""

    def __init__(self, rng, channels: int, n: int, variant: str = "LE+SA+PM",
                 heads: int = 4, lkc_kernel: int = 7, dtype=np.float32):
        if variant not in ROUTER_VARIANTS:
            raise ValueError(f"unknown router variant {variant!r}; choose from {ROUTER_VARIANTS}")
        self.variant = variant
        self.channels = channels
        self.n = n
        if "LE" in variant:
            self.le1 = Conv2d(rng, channels, channels, 3, dtype=dtype)
            self.le2 = Conv2d(rng, channels, channels, 3, dtype=dtype)
        if "LKC" in variant:
            self.lkc = DepthwiseConv2d(rng, channels, lkc_kernel, dtype=dtype)
        if "SA" in variant:
            self.attn = SelfAttention(rng, channels, heads, dtype=dtype)
        self.proj = Conv2d(rng, channels, n, 1, dtype=dtype)

    def logits(self, x: Tensor) -> Tensor:
        if "LE" in self.variant:
            x = T.relu(self.le1(x))
            x = T.relu(self.le2(x))
        if "LKC" in self.variant:
            x = T.relu(self.lkc(x))
        if "SA" in self.variant:
            x = self.attn(x)
        return self.proj(x)


def route(f_in: Tensor, router: Router) -> Tensor:
    """Mixing map ``(B, N, h, w)``: per-pixel softmax over the router logits."""
    if f_in.ndim != 4 or f_in.shape[1] != router.channels:
        raise ShapeError(f"router expects (B, {router.channels}, h, w), got {f_in.shape}")
    return T.softmax(router.logits(f_in), axis=1)


def apply_masks(f_in: Tensor, bank: SpectralBank) -> Tensor:
    """Candidates ``(B, N, C, h, w)``: each mask scales the magnitude, phase is reused."""
    if f_in.ndim != 4:
        raise ShapeError(f"apply_masks expects (B, C, h, w), got {f_in.shape}")
    B, C, h, w = f_in.shape
    if (h, w) != (bank.h, bank.w):
        raise ShapeError(f"feature grid {(h, w)} does not match bank grid {(bank.h, bank.w)}")
    n = bank.n
    amp, phase = T.magphase(T.rfft2(f_in))
    masks = symmetrize_masks(bank.masks, w)                     # N, h, wh
    scaled = T.reshape(amp, (B, 1, C, h, -1)) * T.reshape(masks, (1, n, 1, h, -1))
    spec = T.polar(scaled, T.reshape(phase, (B, 1, C, h, -1)), w)
    flat = (B * n, C, h, spec.shape[-1])
    out = T.irfft2(T.ComplexSpectrum(T.reshape(spec.re, flat), T.reshape(spec.im, flat), w), w)
    return T.reshape(out, (B, n, C, h, w))


def mix(candidates: Tensor, select: Tensor) -> Tensor:
    """Sum over the bank axis with the mixing map broadcast across channels."""
    B, n, _, h, w = candidates.shape
    return T.tsum(candidates * T.reshape(select, (B, n, 1, h, w)), axis=1)


class LFM(Module):
    def __init__(self, rng, channels: int, h: int, w: int, n: int = 4,
                 variant: str = "LE+SA+PM", learnable_bank: bool = True, dtype=np.float32):
        self.bank = SpectralBank(n, h, w, learnable=learnable_bank, dtype=dtype)
        self.router = Router(rng, channels, n, variant, dtype=dtype)

    def __call__(self, f_in: Tensor) -> Tensor:
        return lfm_forward(f_in, self.bank, self.router)


def lfm_forward(f_in: Tensor, bank: SpectralBank, router: Router) -> Tensor:
    candidates = apply_masks(f_in, bank)
    select = route(f_in, router)
    return f_in + mix(candidates, select)


def lfm_parameter_count(channels: int, h: int, w: int, n: int = 4,
                        variant: str = "LE+SA+PM", lkc_kernel: int = 7) -> int:
    """Closed-form parameter count of one block (bank plus router)."""
    c = channels
    count = n * h * (w // 2 + 1)
    if "LE" in variant:
        count += 2 * (c * c * 9 + c)
    if "LKC" in variant:
        count += c * lkc_kernel * lkc_kernel + c
    if "SA" in variant:
        count += 4 * (c * c + c)
    count += c * n + n
    return count


def lfm_flops(channels: int, h: int, w: int, n: int = 4, variant: str = "LE+SA+PM",
              lkc_kernel: int = 7) -> float:
    """Approximate multiply-accumulate count of one block's forward pass."""
    c, L = channels, h * w
    fft = 5.0 * c * L * np.log2(max(L, 2))        # forward transform
    flops = fft + n * (fft + c * L)               # n inverse transforms, mask products
    if "LE" in variant:
        flops += 2 * 9 * c * c * L
    if "LKC" in variant:
        flops += lkc_kernel * lkc_kernel * c * L
    if "SA" in variant:
        flops += 4 * c * c * L + 2 * L * L * c
    flops += c * n * L + n * c * L                # projection and mixing
    return float(flops)
