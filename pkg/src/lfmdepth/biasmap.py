"""Spatial and SNR-aware temporal reweighting of the latent noise loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .schedule import NoiseSchedule
from .tensor import ShapeError, Tensor

KAPPA = 1e-6


def distance_weight(dn: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Linear far-range emphasis, 0 at normalized depth -1 and 1 at +1."""
    w = (np.asarray(dn, dtype=np.float64) + 1.0) / 2.0
    if valid is not None:
        w = np.where(valid, w, 0.0)
    return w


def structure_weight(dn: np.ndarray) -> np.ndarray:
    """Gradient magnitude of the normalized depth scaled to [0, 1] per image.

    Central differences inside the image, one-sided differences on the border.
    Accepts ``(H, W)`` or a batch ``(B, H, W)``.
    """
    d = np.asarray(dn, dtype=np.float64)
    if d.shape[-1] < 2 or d.shape[-2] < 2:
        raise ShapeError(f"structure_weight needs H, W >= 2, got {d.shape}")
    gy, gx = np.gradient(d, axis=(-2, -1))
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max(axis=(-2, -1), keepdims=True)
    peak = np.where(peak < 1e-12, 1.0, peak)
    return mag / peak


def pool_weights(w_dist: np.ndarray, w_struct: np.ndarray, r: int,
                 dist_pool: str = "avg", struct_pool: str = "max") -> tuple[np.ndarray, np.ndarray]:
    """Downsample both maps by ``r``: average for distance, max for structure by default."""
    pools = {"avg": T.avg_pool2d, "max": T.max_pool2d}
    with T.no_grad():
        wd = pools[dist_pool](Tensor(w_dist), r).data
        ws = pools[struct_pool](Tensor(w_struct), r).data
    return wd, ws


def gate(w_dist_bar, w_struct_bar, tau: Tensor) -> Tensor:
    return T.sigmoid(T.as_tensor(np.asarray(w_dist_bar * w_struct_bar, dtype=tau.dtype)) - tau)


def gate_and_normalize(w_dist_bar: np.ndarray, w_struct_bar: np.ndarray, tau: Tensor,
                       kappa: float = KAPPA) -> Tensor:
    """w = g / (<g> + kappa) with <.> the mean over the whole batch tensor."""
    if np.size(w_dist_bar) == 0:
        raise ValueError("empty batch")
    if np.shape(w_dist_bar) != np.shape(w_struct_bar):
        raise ShapeError("distance and structure maps differ in shape")
    g = gate(w_dist_bar, w_struct_bar, tau)
    return g / (T.mean(g) + kappa)


def ramp(t, sched: NoiseSchedule, gamma: float = 5.0) -> np.ndarray:
    """eta_t = (SNR_t / SNR_max) ** gamma."""
    sched.check_t(t)
    return (sched.snr[np.asarray(t)] / sched.snr_max) ** gamma


def temporal_modulate(w, t, sched: NoiseSchedule, gamma: float = 5.0):
    """Convex blend (1 - eta_t) + eta_t * w.

    ``w`` is a Tensor or array; with a batch, ``t`` may hold one step per row.
    """
    eta = ramp(t, sched, gamma)
    if isinstance(w, Tensor):
        eta_b = np.asarray(eta, dtype=w.dtype).reshape(np.shape(eta) + (1,) * (w.ndim - np.ndim(eta)))
        return (1.0 - eta_b) + w * eta_b
    w = np.asarray(w)
    eta_b = np.reshape(eta, np.shape(eta) + (1,) * (w.ndim - np.ndim(eta)))
    return (1.0 - eta_b) + eta_b * w


def latent_weight_maps(dn: np.ndarray, r: int, *, use_dist: bool = True, use_struct: bool = True,
                       dist_pool: str = "avg", struct_pool: str = "max") -> tuple[np.ndarray, np.ndarray]:
    """Pooled distance and structure maps for a batch of normalized depths ``(B, H, W)``.

    A disabled component is replaced by ones so the gate sees the other alone.
    """
    wd = distance_weight(dn) if use_dist else np.ones_like(dn, dtype=np.float64)
    ws = structure_weight(dn) if use_struct else np.ones_like(dn, dtype=np.float64)
    return pool_weights(wd, ws, r, dist_pool, struct_pool)
