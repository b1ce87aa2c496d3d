"""DDPM-style noise schedule with a deterministic (DDIM, η = 0) sampler step.

Time steps are 1-based: t ranges over [1, T_max], and ᾱ_t = ∏_{s≤t}(1 − β_s)
with a linear β ramp. t = 0 is the clean state, ᾱ_0 = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DivisionGuardError, ScheduleRangeError

_SQRT_ALPHA_BAR_FLOOR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor  # (T_max,) float64, betas[i] = β_{i+1}
    alpha_bars: torch.Tensor  # (T_max,) float64, alpha_bars[i] = ᾱ_{i+1}

    @property
    def t_max(self) -> int:
        return self.betas.shape[0]

    def _check_t(self, t: torch.Tensor, allow_zero: bool = False):
        lo = 0 if allow_zero else 1
        if ((t < lo) | (t > self.t_max)).any():
            raise ScheduleRangeError(
                f"time step out of range [{lo}, {self.t_max}]: {t}"
            )

    def alpha_bar(self, t: int | torch.Tensor) -> torch.Tensor:
        """ᾱ_t for scalar or batched t; t = 0 returns exactly 1."""
        t = torch.as_tensor(t, dtype=torch.long)
        self._check_t(t, allow_zero=True)
        padded = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars])
        return padded[t]


def make_noise_schedule(
    t_max: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    if t_max < 1:
        raise ScheduleRangeError(f"t_max must be >= 1, got {t_max}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleRangeError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, t_max, dtype=torch.float64)
    return NoiseSchedule(betas=betas, alpha_bars=torch.cumprod(1.0 - betas, dim=0))


def _broadcast_coeff(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Reshape per-sample scalars to (B, 1, 1, ...) matching ``like``."""
    extra = like.dim() - values.dim()
    return values.reshape(values.shape + (1,) * extra).to(like.dtype)


def corrupt_latent(
    latent: torch.Tensor, t: int | torch.Tensor, noise: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Forward process: √ᾱ_t · F + √(1 − ᾱ_t) · ε."""
    if noise.shape != latent.shape:
        raise ScheduleRangeError("noise must match latent shape")
    ab = schedule.alpha_bar(t)
    return (
        _broadcast_coeff(ab.sqrt(), latent) * latent
        + _broadcast_coeff((1.0 - ab).sqrt(), latent) * noise
    )


def x0_from_noise(
    noisy: torch.Tensor, t: int | torch.Tensor, noise_pred: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Invert the forward process: (F̂ − √(1 − ᾱ_t) · ε̂) / √ᾱ_t."""
    ab = schedule.alpha_bar(t)
    sqrt_ab = ab.sqrt()
    if (sqrt_ab < _SQRT_ALPHA_BAR_FLOOR).any():
        raise DivisionGuardError(f"sqrt(alpha_bar) below {_SQRT_ALPHA_BAR_FLOOR} at t={t}")
    return (
        noisy - _broadcast_coeff((1.0 - ab).sqrt(), noisy) * noise_pred
    ) / _broadcast_coeff(sqrt_ab, noisy)


def sampling_timesteps(schedule: NoiseSchedule, steps: int) -> list[int]:
    """Descending sub-schedule of ``steps`` distinct time steps ending at 1."""
    if steps < 1:
        raise ScheduleRangeError(f"steps must be >= 1, got {steps}")
    if steps > schedule.t_max:
        raise ScheduleRangeError(f"steps={steps} exceeds t_max={schedule.t_max}")
    ts = torch.linspace(schedule.t_max, 1, steps).round().long()
    out: list[int] = []
    for t in ts.tolist():
        if not out or t < out[-1]:
            out.append(t)
    return out


def ddim_step(
    noisy: torch.Tensor,
    noise_pred: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Deterministic update x_t -> x_{t_prev} (t_prev < t, t_prev = 0 allowed)."""
    if t_prev >= t:
        raise ScheduleRangeError(f"t_prev={t_prev} must be below t={t}")
    x0 = x0_from_noise(noisy, t, noise_pred, schedule)
    ab_prev = schedule.alpha_bar(t_prev)
    return (
        _broadcast_coeff(ab_prev.sqrt(), noisy) * x0
        + _broadcast_coeff((1.0 - ab_prev).sqrt(), noisy) * noise_pred
    )
