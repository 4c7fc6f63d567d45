"""Noise schedules, forward noising, deterministic DDIM and ensemble inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import codec
from .rng import stream


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables indexed by ``t`` in ``1..T``; index 0 holds ``alpha_bar = 1``."""

    betas: np.ndarray       # length T + 1, betas[0] unused (0)
    alpha_bar: np.ndarray   # length T + 1, alpha_bar[0] = 1
    snr: np.ndarray         # length T + 1, snr[0] = inf

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def snr_max(self) -> float:
        return float(self.snr[1])

    def check_t(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ScheduleError(f"timestep out of range 1..{self.T}: {t}")


def build_schedule(T: int = 200, beta_start: float = 0.00425, beta_end: float = 0.06,
                   kind: str = "scaled-linear") -> NoiseSchedule:
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled-linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T, dtype=np.float64) ** 2
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    with np.errstate(divide="ignore"):
        snr = alpha_bar / (1.0 - alpha_bar)
    return NoiseSchedule(np.concatenate([[0.0], betas]), alpha_bar, snr)


def _coef(values: np.ndarray, t, ndim: int, dtype) -> np.ndarray:
    c = np.asarray(values[np.asarray(t)], dtype=dtype)
    return c.reshape(c.shape + (1,) * (ndim - c.ndim))


def forward_noise(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; ``t`` scalar or one per batch row."""
    sched.check_t(t)
    ab = sched.alpha_bar
    dt = z0.dtype
    a = _coef(np.sqrt(ab), t, z0.ndim, dt)
    s = _coef(np.sqrt(1.0 - ab), t, z0.ndim, dt)
    return a * z0 + s * eps


def predict_x0(z_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bar[t]
    return (z_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not (t > t_prev >= 0):
        raise ScheduleError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    sched.check_t(t)
    x0 = predict_x0(z_t, eps_hat, t, sched)
    if t_prev == 0:
        return x0.astype(z_t.dtype)
    ab_prev = sched.alpha_bar[t_prev]
    return (np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat).astype(z_t.dtype)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending timesteps ``T = t_0 > ... > t_{steps-1} >= 1``, final target 0 implied."""
    if not (1 <= steps <= T):
        raise ScheduleError(f"need 1 <= steps <= T, got steps={steps}, T={T}")
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)[:-1]
    return [int(t) for t in ts]


EpsPredictor = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def ddim_sample(predict: EpsPredictor, z_T: np.ndarray, cond: np.ndarray,
                sched: NoiseSchedule, steps: int) -> np.ndarray:
    """Run the full reverse trajectory and return the clean-latent estimate."""
    ts = ddim_timesteps(sched.T, steps)
    z = z_T
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps_hat = predict(z, cond, t)
        z = ddim_step(z, eps_hat, t, t_prev, sched)
    return z


def ensemble_infer(predict: EpsPredictor, z_x: np.ndarray, sched: NoiseSchedule,
                   runs: int = 4, seeds: Sequence[int] | int = 0, steps: int = 20,
                   r: int = 4, replicas: int = 3, latent_shape: tuple | None = None) -> np.ndarray:
    """Average of ``runs`` DDIM reconstructions, as normalized depth in [-1, 1].

    ``z_x`` is a batch of image latents ``(B, c, h, w)``.  ``seeds`` is either
    a base seed (run ``i`` uses ``seed + i``) or an explicit per-run list.
    Returns ``(B, H, W)``.
    """
    if runs < 1:
        raise ScheduleError("runs must be >= 1")
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds) + i for i in range(runs)]
    seeds = list(seeds)
    if len(seeds) != runs:
        raise ScheduleError(f"got {len(seeds)} seeds for {runs} runs")
    if latent_shape is None:
        B, _, h, w = z_x.shape
        latent_shape = (B, r * r * replicas, h, w)
    avg = None
    for k, s in enumerate(seeds):
        z_T = stream(s, "ensemble").standard_normal(latent_shape).astype(z_x.dtype)
        z0 = ddim_sample(predict, z_T, z_x, sched, steps)
        depth = np.clip(codec.decode_depth(z0, r, replicas), -1.0, 1.0).astype(np.float64)
        # running mean in fixed seed order; identical runs leave it unchanged bit for bit
        avg = depth if avg is None else avg + (depth - avg) / (k + 1)
    return avg.astype(z_x.dtype)
