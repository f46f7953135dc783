"""Diffusion timestep arithmetic: variance schedules and per-domain timestep vectors.

Index conventions: t = 0 is clean data (alpha_bar[0] = 1), supervised training
draws t in {1..T}, and t = T is the designated missing-view / pure-noise level.
All tables are precomputed at double precision; products of ~1000 terms lose
accuracy if accumulated in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables over timesteps 0..T.

    ``betas``, ``alphas`` and ``alpha_bars`` all have length T+1 so that the
    natural 1-based indexing of the tables works directly; index 0 of ``betas``
    and ``alphas`` is padding (0 and 1 respectively) and ``alpha_bars[0] = 1``.
    Immutable after construction; safe to share across threads.
    """

    T: int
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars"):
            getattr(self, name).setflags(write=False)

    @property
    def sqrt_alpha_bars(self) -> np.ndarray:
        return np.sqrt(self.alpha_bars)

    @property
    def sqrt_one_minus_alpha_bars(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bars)


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from beta_start at t=1 to beta_end at t=T."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T, dtype=np.float64)])
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas[1:])])
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def validate_tvector(tvec: np.ndarray, m: int, T: int) -> np.ndarray:
    """Check a per-domain timestep vector: length m, integer entries in [0, T]."""
    tvec = np.asarray(tvec)
    if tvec.shape[-1] != m:
        raise ValueError(f"timestep vector has {tvec.shape[-1]} entries, expected {m}")
    if not np.issubdtype(tvec.dtype, np.integer):
        raise ValueError(f"timestep vector must be integer, got dtype {tvec.dtype}")
    if tvec.min() < 0 or tvec.max() > T:
        raise ValueError(f"timestep entries must lie in [0, {T}]")
    return tvec


def build_tvector(mask: np.ndarray, t_sup: np.ndarray, T: int) -> np.ndarray:
    """Per-domain timesteps: t_sup where the view is available, T where missing.

    Broadcasts over leading batch dimensions. Idempotent under re-application
    with the same mask.
    """
    mask = np.asarray(mask)
    t_sup = np.asarray(t_sup)
    if mask.shape != t_sup.shape:
        raise ValueError(f"mask shape {mask.shape} != t_sup shape {t_sup.shape}")
    return np.where(mask.astype(bool), t_sup, T).astype(np.int64)


def gather_coefficients(schedule: NoiseSchedule, tvec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Marginal-noising coefficients (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) per entry.

    The two components squared sum to 1 for every timestep.
    """
    tvec = np.asarray(tvec)
    if not np.issubdtype(tvec.dtype, np.integer):
        raise ValueError(f"timestep vector must be integer, got dtype {tvec.dtype}")
    if tvec.size and (tvec.min() < 0 or tvec.max() > schedule.T):
        raise ValueError(f"timestep entries must lie in [0, {schedule.T}]")
    return schedule.sqrt_alpha_bars[tvec], schedule.sqrt_one_minus_alpha_bars[tvec]
