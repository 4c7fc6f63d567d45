"""Weighted latent noise regression with a dispersion penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossReport:
    latent: Tensor
    var: Tensor
    total: Tensor
    count: int

    def values(self) -> dict[str, float]:
        return {"L_latent": self.latent.item(), "L_var": self.var.item(), "L_total": self.total.item()}


def _check(eps_hat: Tensor, eps) -> Tensor:
    eps = T.as_tensor(np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=eps_hat.dtype))
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"prediction {eps_hat.shape} vs target {eps.shape}")
    return eps


def latent_loss(eps_hat: Tensor, eps, w_final=None) -> Tensor:
    """(1/M) sum w (eps_hat - eps)^2; spatial weights broadcast over channels."""
    eps_hat = T.as_tensor(eps_hat)
    err = eps_hat - _check(eps_hat, eps)
    sq = T.square(err)
    if w_final is not None:
        sq = sq * w_final
    return T.mean(sq)


def variance_loss(eps_hat: Tensor, eps) -> Tensor:
    """Population variance of the prediction error over all elements."""
    eps_hat = T.as_tensor(eps_hat)
    return T.variance(eps_hat - _check(eps_hat, eps))


def total_loss(eps_hat: Tensor, eps, w_final=None, lam: float = 1.0) -> LossReport:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    eps_hat = T.as_tensor(eps_hat)
    l_lat = latent_loss(eps_hat, eps, w_final)
    l_var = variance_loss(eps_hat, eps)
    total = l_lat + l_var * lam if lam else l_lat
    return LossReport(l_lat, l_var, total, int(np.prod(eps_hat.shape)))
