"""Lossless space-to-depth latent codec.

Stands in for a learned image autoencoder: every ``r x r`` pixel block of a
``k``-channel image becomes ``r * r * k`` latent channels at ``1/r`` spatial
resolution.  Channel order is (input channel, block row, block column).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


def encode(img: np.ndarray, r: int = 4) -> np.ndarray:
    """``(k, H, W)`` or ``(B, k, H, W)`` image -> latent with ``r*r*k`` channels."""
    img = np.asarray(img)
    batched = img.ndim == 4
    if img.ndim not in (3, 4):
        raise ShapeError(f"encode expects (k, H, W) or (B, k, H, W), got {img.shape}")
    x = img if batched else img[None]
    B, k, H, W = x.shape
    if H % r or W % r:
        raise ShapeError(f"spatial size {(H, W)} not divisible by factor {r}")
    z = x.reshape(B, k, H // r, r, W // r, r).transpose(0, 1, 3, 5, 2, 4)
    z = z.reshape(B, k * r * r, H // r, W // r)
    return z if batched else z[0]


def decode(z: np.ndarray, r: int = 4, k: int = 1) -> np.ndarray:
    z = np.asarray(z)
    batched = z.ndim == 4
    if z.ndim not in (3, 4):
        raise ShapeError(f"decode expects (c, h, w) or (B, c, h, w), got {z.shape}")
    x = z if batched else z[None]
    B, c, h, w = x.shape
    if c != r * r * k:
        raise ShapeError(f"latent has {c} channels, expected r*r*k = {r * r * k}")
    img = x.reshape(B, k, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(B, k, h * r, w * r)
    return img if batched else img[0]


def encode_depth(dn: np.ndarray, r: int = 4, replicas: int = 3) -> np.ndarray:
    """Encode a normalized depth map replicated to ``replicas`` channels.

    Replication gives the depth latent the same channel count as the image
    latent, which the doubled input layer of the denoiser relies on.
    """
    dn = np.asarray(dn)
    if dn.ndim == 2:
        return encode(np.repeat(dn[None], replicas, axis=0), r)
    if dn.ndim == 3:  # batch of maps
        return encode(np.repeat(dn[:, None], replicas, axis=1), r)
    raise ShapeError(f"encode_depth expects (H, W) or (B, H, W), got {dn.shape}")


def decode_depth(z: np.ndarray, r: int = 4, replicas: int = 3) -> np.ndarray:
    """Inverse of :func:`encode_depth`; replicas are averaged."""
    img = decode(z, r, replicas)
    # float64 sum keeps identical replicas exact
    return img.astype(np.float64).mean(axis=-3).astype(img.dtype)
