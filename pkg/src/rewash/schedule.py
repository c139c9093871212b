"""Variance-preserving noise schedule and deterministic reverse sampling.

Conventions:
    t = 0 is clean data; alpha_bars[0] = 1 exactly so noising to t = 0 is
    the identity. alpha_bars has T+1 entries, alpha_bars[t] = prod_{s<=t}(1 - beta_s)
    with betas indexed 1..T (stored 0-based). All coefficients are kept in
    float64 and cast to the latent dtype at the point of use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


class ScheduleError(ValueError):
    """Invalid schedule parameters or timestep arguments."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and cumulative signal coefficients.

    betas: (T,) per-step variances in (0, 1).
    alpha_bars: (T+1,) cumulative products, alpha_bars[0] = 1.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray
    kind: str = "linear"
    beta_min: float = field(default=0.0, compare=False)
    beta_max: float = field(default=0.0, compare=False)

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t])

    def to_config(self) -> dict:
        """Parameters sufficient to rebuild the schedule (for run manifests)."""
        return {
            "T": self.T,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "kind": self.kind,
        }


def make_schedule(
    T: int,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a variance-preserving schedule with T steps.

    kind "linear" spaces betas linearly between beta_min and beta_max;
    "scaled_linear" spaces sqrt(beta) linearly (the convention of latent
    diffusion backbones). Raises ScheduleError on out-of-range parameters.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_min**0.5, beta_max**0.5, T, dtype=np.float64) ** 2
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    alpha_bars = np.empty(T + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(1.0 - betas)
    return NoiseSchedule(
        betas=betas,
        alpha_bars=alpha_bars,
        kind=kind,
        beta_min=float(beta_min),
        beta_max=float(beta_max),
    )


def default_schedule() -> NoiseSchedule:
    """T=1000 linear schedule, the ceiling of the noising-step sweeps."""
    return make_schedule(1000, 1e-4, 0.02, "linear")


def forward_noise(
    s: NoiseSchedule, z0: torch.Tensor, t_star: int, eps: torch.Tensor
) -> torch.Tensor:
    """Noise z0 to step t_star: sqrt(ab_t)*z0 + sqrt(1-ab_t)*eps.

    Deterministic given eps; t_star = 0 returns z0 unchanged.
    """
    if not 0 <= t_star <= s.T:
        raise ScheduleError(f"t_star {t_star} outside [0, {s.T}]")
    if eps.shape != z0.shape:
        raise ScheduleError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    ab = s.alpha_bars[t_star]
    c_signal = torch.tensor(np.sqrt(ab), dtype=z0.dtype)
    c_noise = torch.tensor(np.sqrt(1.0 - ab), dtype=z0.dtype)
    return c_signal * z0 + c_noise * eps


def forward_noise_batch(
    s: NoiseSchedule, z0: torch.Tensor, t_batch: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """Vectorized forward noising with a per-sample timestep tensor (B,)."""
    if eps.shape != z0.shape:
        raise ScheduleError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    t_np = t_batch.detach().cpu().numpy()
    if t_np.min() < 0 or t_np.max() > s.T:
        raise ScheduleError(f"timesteps outside [0, {s.T}]")
    ab = torch.from_numpy(s.alpha_bars[t_np]).to(z0.dtype)
    shape = (-1,) + (1,) * (z0.ndim - 1)
    return torch.sqrt(ab).view(shape) * z0 + torch.sqrt(1.0 - ab).view(shape) * eps


def reverse_step(
    s: NoiseSchedule,
    z_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
) -> torch.Tensor:
    """One deterministic reverse update from t to t_prev < t.

    Predicted-clean form: z0_hat = (z_t - sqrt(1-ab_t)*eps)/sqrt(ab_t), then
    re-noise z0_hat to t_prev with the same eps. No stochastic term. A zero
    signal coefficient (ab_t = 0, degenerate schedules only) carries no
    information about z0, so z0_hat falls back to the prior mean 0.
    """
    if not 0 <= t_prev < t <= s.T:
        raise ScheduleError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab_t = s.alpha_bars[t]
    ab_p = s.alpha_bars[t_prev]
    dtype = z_t.dtype
    if ab_t > 0.0:
        c1 = torch.tensor(np.sqrt(1.0 - ab_t), dtype=dtype)
        c2 = torch.tensor(1.0 / np.sqrt(ab_t), dtype=dtype)
        z0_hat = (z_t - c1 * eps_pred) * c2
    else:
        z0_hat = torch.zeros_like(z_t)
    c3 = torch.tensor(np.sqrt(ab_p), dtype=dtype)
    c4 = torch.tensor(np.sqrt(1.0 - ab_p), dtype=dtype)
    return c3 * z0_hat + c4 * eps_pred


def strided_times(s: NoiseSchedule, t_star: int, n_steps: int) -> list[int]:
    """Strictly decreasing timestep subsequence t_star = tau_0 > ... > tau_k = 0.

    n_steps is the budget for t_star = T; smaller t_star gets a proportional
    share (at least one step). Endpoints are always included.
    """
    if not 1 <= t_star <= s.T:
        raise ScheduleError(f"t_star {t_star} outside [1, {s.T}]")
    if n_steps < 1:
        raise ScheduleError(f"n_steps must be >= 1, got {n_steps}")
    k = max(1, round(n_steps * t_star / s.T))
    grid = np.linspace(t_star, 0, k + 1)
    times = sorted({int(round(v)) for v in grid}, reverse=True)
    if times[0] != t_star:
        times.insert(0, t_star)
    if times[-1] != 0:
        times.append(0)
    return times
