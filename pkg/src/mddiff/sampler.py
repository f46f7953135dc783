"""Conditional generation: DDPM ancestral and DDIM (eta=0) reverse loops.

Targets start from standard normal noise; at every step the condition slots are
re-noised from the clean condition to the level given by a phi schedule, the
network sees the assembled per-domain state with per-domain timesteps, and only
the target slots receive the reverse update. Condition slots in the returned
arrays are the clean condition, bit-exact.

Two independent noise streams are used: one (seed) for the target
initialization and ancestral noise, one (cond_noise_seed) for the condition
re-noising draws, so runs with identical target streams differ only through
the condition stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .denoiser import DenoiserModel
from .schedule import NoiseSchedule

PHI_FAMILIES = ("vanilla", "skip", "constant", "constant_fading")


@dataclass(frozen=True)
class PhiSchedule:
    """Condition-noise policy: maps the generation timestep t to the condition level.

    c is the condition-noise fraction: constant(0) keeps the condition clean at
    every step, constant(1) degrades it to pure noise.
    """

    family: str = "constant"
    c: float = 0.2

    def __post_init__(self):
        if self.family not in PHI_FAMILIES:
            raise ValueError(f"unknown phi family {self.family!r}")
        if not (0.0 <= self.c <= 1.0):
            raise ValueError(f"c must be in [0, 1], got {self.c}")

    def label(self) -> str:
        return self.family if self.family == "vanilla" else f"{self.family}({self.c:g})"


def phi_eval(phi: PhiSchedule, t: int, T: int) -> int:
    if not (1 <= t <= T):
        raise ValueError(f"t must be in [1, {T}], got {t}")
    if phi.family == "vanilla":
        return t
    level = int(round(phi.c * T))
    if phi.family == "constant":
        return level
    if phi.family == "skip":
        return max(0, t - int(round((1.0 - phi.c) * T)))
    return min(t, level)  # constant_fading


@dataclass
class GenerationRequest:
    x_cond: list[torch.Tensor]  # (B, *shape) per domain; target slots ignored
    cond_mask: tuple[int, ...]  # 1 = condition, 0 = target
    phi: PhiSchedule = field(default_factory=PhiSchedule)
    sampler_kind: str = "ddim"
    ddim_steps: int = 100
    seed: int = 0
    cond_noise_seed: int | None = None  # defaults to seed + 1
    clamp: bool = True
    paper_literal_update: bool = False  # 1/sqrt(alpha_bar) leading coefficient
    sigma_kind: str = "tilde"  # "tilde" (posterior variance) or "beta"
    # Optional per-sample seeds (length B). When set, every noise draw comes
    # from that sample's own stream, making results independent of batching.
    sample_seeds: list[int] | None = None

    def __post_init__(self):
        self.cond_mask = tuple(int(b) for b in self.cond_mask)
        if len(self.cond_mask) != len(self.x_cond):
            raise ValueError("cond_mask length must match the domain count")
        if not any(self.cond_mask) or all(self.cond_mask):
            raise ValueError("need at least one condition and one target domain")
        if self.sampler_kind not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.sampler_kind!r}")
        if self.sigma_kind not in ("tilde", "beta"):
            raise ValueError(f"unknown sigma_kind {self.sigma_kind!r}")

    def metadata(self) -> dict[str, str]:
        return {
            "phi_family": self.phi.family,
            "phi_c": repr(self.phi.c),
            "sampler": self.sampler_kind,
            "steps": str(self.ddim_steps if self.sampler_kind == "ddim" else -1),
            "seed": str(self.seed),
            "cond_mask": "".join(str(b) for b in self.cond_mask),
            "clamp": str(int(self.clamp)),
            "paper_literal_update": str(int(self.paper_literal_update)),
            "sigma_kind": self.sigma_kind,
        }


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Uniform increasing subsequence of 1..T with `steps` entries."""
    if not (1 <= steps <= T):
        raise ValueError(f"ddim_steps must be in [1, {T}], got {steps}")
    taus = np.unique(np.round(np.linspace(1, T, steps)).astype(int))
    return [int(t) for t in taus]


def _check_finite(xs: list[torch.Tensor], step: int) -> None:
    for d, x in enumerate(xs):
        if not torch.isfinite(x).all():
            raise RuntimeError(f"non-finite values in domain {d} at reverse step {step}")


class _LoopState:
    """Shared bookkeeping for both reverse loops."""

    def __init__(self, request: GenerationRequest, model: DenoiserModel, schedule: NoiseSchedule):
        self.req = request
        self.model = model
        self.sched = schedule
        self.m = len(request.x_cond)
        self.is_cond = [bool(b) for b in request.cond_mask]
        self.B = request.x_cond[0].shape[0]
        self.dtype = request.x_cond[0].dtype
        if request.sample_seeds is not None:
            if len(request.sample_seeds) != self.B:
                raise ValueError("sample_seeds length must equal the batch size")
            self.gens = [torch.Generator().manual_seed(s) for s in request.sample_seeds]
            self.cond_gens = [torch.Generator().manual_seed(s + 0x5EED) for s in request.sample_seeds]
        else:
            self.gens = [torch.Generator().manual_seed(request.seed)]
            cseed = request.cond_noise_seed if request.cond_noise_seed is not None else request.seed + 1
            self.cond_gens = [torch.Generator().manual_seed(cseed)]
        self.cond_code = None
        if model.config.cond_code:
            self.cond_code = torch.tensor(request.cond_mask, dtype=self.dtype) \
                .unsqueeze(0).expand(self.B, -1)

    def randn(self, shape: torch.Size, conditioning: bool = False) -> torch.Tensor:
        gens = self.cond_gens if conditioning else self.gens
        if len(gens) == 1:
            return torch.randn(shape, generator=gens[0], dtype=self.dtype)
        return torch.stack([
            torch.randn(shape[1:], generator=g, dtype=self.dtype) for g in gens
        ])

    def init_targets(self, x_init: list[torch.Tensor] | None) -> list[torch.Tensor]:
        xs = []
        for d in range(self.m):
            if self.is_cond[d]:
                xs.append(self.req.x_cond[d].clone())
            elif x_init is not None:
                xs.append(x_init[d].clone())
            else:
                xs.append(self.randn(self.req.x_cond[d].shape))
        return xs

    def renoise_conditions(self, xs: list[torch.Tensor], t_cond: int) -> None:
        sab = float(self.sched.sqrt_alpha_bars[t_cond])
        s1m = float(self.sched.sqrt_one_minus_alpha_bars[t_cond])
        for d in range(self.m):
            if self.is_cond[d]:
                eps = self.randn(xs[d].shape, conditioning=True)
                xs[d] = sab * self.req.x_cond[d] + s1m * eps

    def tvec(self, t: int, t_cond: int) -> torch.Tensor:
        entries = [t_cond if self.is_cond[d] else t for d in range(self.m)]
        return torch.tensor(entries, dtype=torch.int64).unsqueeze(0).expand(self.B, -1)

    def predict(self, xs: list[torch.Tensor], tvec: torch.Tensor) -> list[torch.Tensor]:
        with torch.no_grad():
            return self.model(xs, tvec, self.cond_code)

    def finalize(self, xs: list[torch.Tensor]) -> list[torch.Tensor]:
        out = []
        for d in range(self.m):
            if self.is_cond[d]:
                out.append(self.req.x_cond[d].clone())
            else:
                out.append(xs[d].clamp(-1.0, 1.0) if self.req.clamp else xs[d])
        return out


def ddpm_generate(
    request: GenerationRequest,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    snapshot_steps: set[int] | None = None,
    x_init: list[torch.Tensor] | None = None,
) -> tuple[list[torch.Tensor], dict[int, list[torch.Tensor]]]:
    """Ancestral reverse loop t = T..1.

    Snapshots (keyed by t) hold the denoised estimate x0_hat of each target
    slot at that step; condition slots are None in snapshots.
    """
    st = _LoopState(request, model, schedule)
    T = schedule.T
    xs = st.init_targets(x_init)
    snapshots: dict[int, list[torch.Tensor]] = {}
    for t in range(T, 0, -1):
        t_cond = phi_eval(request.phi, t, T)
        st.renoise_conditions(xs, t_cond)
        tvec = st.tvec(t, t_cond)
        eps_hat = st.predict(xs, tvec)

        alpha_t = float(schedule.alphas[t])
        beta_t = float(schedule.betas[t])
        ab_t = float(schedule.alpha_bars[t])
        ab_prev = float(schedule.alpha_bars[t - 1])
        coef = (1.0 / np.sqrt(ab_t)) if request.paper_literal_update else (1.0 / np.sqrt(alpha_t))
        if request.sigma_kind == "tilde":
            sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta_t)
        else:
            sigma = np.sqrt(beta_t)
        for d in range(st.m):
            if st.is_cond[d]:
                continue
            if snapshot_steps and t in snapshot_steps:
                x0_hat = (xs[d] - np.sqrt(1.0 - ab_t) * eps_hat[d]) / np.sqrt(ab_t)
                snapshots.setdefault(t, [None] * st.m)[d] = x0_hat.clamp(-1.0, 1.0)
            z = st.randn(xs[d].shape) if t > 1 else torch.zeros_like(xs[d])
            xs[d] = coef * (xs[d] - beta_t / np.sqrt(1.0 - ab_t) * eps_hat[d]) + sigma * z
        _check_finite(xs, t)
    return st.finalize(xs), snapshots


def ddim_generate(
    request: GenerationRequest,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    snapshot_steps: set[int] | None = None,
    x_init: list[torch.Tensor] | None = None,
) -> tuple[list[torch.Tensor], dict[int, list[torch.Tensor]]]:
    """Deterministic (eta=0) reverse loop over a uniform timestep subsequence."""
    st = _LoopState(request, model, schedule)
    T = schedule.T
    taus = ddim_timesteps(T, request.ddim_steps)
    xs = st.init_targets(x_init)
    snapshots: dict[int, list[torch.Tensor]] = {}
    for i in range(len(taus) - 1, -1, -1):
        tau = taus[i]
        tau_prev = taus[i - 1] if i > 0 else 0
        t_cond = phi_eval(request.phi, tau, T)
        st.renoise_conditions(xs, t_cond)
        tvec = st.tvec(tau, t_cond)
        eps_hat = st.predict(xs, tvec)

        sab = float(schedule.sqrt_alpha_bars[tau])
        s1m = float(schedule.sqrt_one_minus_alpha_bars[tau])
        sab_prev = float(schedule.sqrt_alpha_bars[tau_prev])
        s1m_prev = float(schedule.sqrt_one_minus_alpha_bars[tau_prev])
        for d in range(st.m):
            if st.is_cond[d]:
                continue
            x0_hat = (xs[d] - s1m * eps_hat[d]) / sab
            if snapshot_steps and tau in snapshot_steps:
                snapshots.setdefault(tau, [None] * st.m)[d] = x0_hat.clamp(-1.0, 1.0)
            xs[d] = sab_prev * x0_hat + s1m_prev * eps_hat[d]
        _check_finite(xs, tau)
    return st.finalize(xs), snapshots


def generate(
    request: GenerationRequest,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    snapshot_steps: set[int] | None = None,
    x_init: list[torch.Tensor] | None = None,
) -> tuple[list[torch.Tensor], dict[int, list[torch.Tensor]]]:
    fn = ddpm_generate if request.sampler_kind == "ddpm" else ddim_generate
    return fn(request, model, schedule, snapshot_steps, x_init)
