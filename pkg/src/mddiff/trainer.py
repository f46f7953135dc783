"""Training schemes over semi-supervised multi-domain batches.

Three ways to build a training step from a batch with per-sample availability
masks:

  mdd        one independent timestep per available domain; missing views are
             pure standard normal noise at timestep T.
  ummcsgm    clean-condition scheme: a random nonempty proper subset of the
             available views is kept clean (timestep 0) and flagged through an
             extra condition-code channel; remaining available views share one
             timestep and are the regression targets.
  noisycond  one shared timestep applied to every available view.

Missing views are filled either with pure noise (timestep T, and usable as a
loss target) or with the constant -1. Condition views never enter the loss;
missing views enter it only under loss_scope="all_domains" and only when their
fill is pure noise (a -1 fill has no noise target).
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .dataset import TriShapeDataset
from .denoiser import (
    DenoiserModel,
    init_optimizer,
    loss_and_gradients,
    masked_mse_loss,
    optimizer_step,
    plateau_update,
)
from .schedule import NoiseSchedule

SCHEME_KINDS = ("mdd", "ummcsgm", "noisycond")
FILL_KINDS = ("pure_noise", "minus_one")
LOSS_SCOPES = ("all_domains", "supervised_only")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingScheme:
    kind: str = "mdd"
    fill: str = "pure_noise"
    loss_scope: str = "all_domains"

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.fill not in FILL_KINDS:
            raise ValueError(f"unknown fill {self.fill!r}")
        if self.loss_scope not in LOSS_SCOPES:
            raise ValueError(f"unknown loss_scope {self.loss_scope!r}")
        if self.kind == "mdd" and self.fill != "pure_noise":
            raise ValueError("mdd fills missing views with pure noise only")

    @property
    def uses_cond_code(self) -> bool:
        return self.kind == "ummcsgm"

    def label(self) -> str:
        if self.kind == "mdd":
            return "MDD"
        base = {"ummcsgm": "UMM-CSGM", "noisycond": "NoisyCond"}[self.kind]
        return base + ("-N" if self.fill == "pure_noise" else "-O")


@dataclass
class MultiDomainBatch:
    """Per-domain arrays (B, *shape) and a (B, m) availability mask.

    Entries where sup_mask is 0 are placeholders and are never propagated into
    network inputs; the fill policy decides what goes in the slot instead.
    """

    x0: list[torch.Tensor]
    sup_mask: torch.Tensor

    def __post_init__(self):
        if self.sup_mask.dim() != 2 or self.sup_mask.shape[1] != len(self.x0):
            raise ValueError("sup_mask must be (B, m) matching the domain count")

    @property
    def batch_size(self) -> int:
        return self.x0[0].shape[0]

    @property
    def num_domains(self) -> int:
        return len(self.x0)


def batch_from_points(ds: TriShapeDataset, indices, dtype=torch.float32) -> MultiDomainBatch:
    shape = ds.view_shape
    m = len(ds.points[0].sup_mask)
    x0 = [
        torch.stack([
            torch.from_numpy(ds.points[i].views[d]).to(dtype)
            if ds.points[i].sup_mask[d]
            else torch.zeros(shape, dtype=dtype)
            for i in indices
        ])
        for d in range(m)
    ]
    sup = torch.tensor(np.stack([ds.points[i].sup_mask for i in indices]), dtype=torch.int64)
    return MultiDomainBatch(x0=x0, sup_mask=sup)


@dataclass
class StepInputs:
    x_in: list[torch.Tensor]
    tvec: torch.Tensor  # (B, m) long
    eps_target: list[torch.Tensor]
    loss_mask: torch.Tensor  # (B, m) float
    cond_code: torch.Tensor | None = None


def _coeffs(schedule: NoiseSchedule, tvec: torch.Tensor, view_dim: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    sab = torch.from_numpy(schedule.sqrt_alpha_bars[tvec.numpy()]).to(dtype)
    s1m = torch.from_numpy(schedule.sqrt_one_minus_alpha_bars[tvec.numpy()]).to(dtype)
    shape = tvec.shape + (1,) * view_dim
    return sab.reshape(shape), s1m.reshape(shape)


def _sample_condition_subsets(sup_mask: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Uniformly choose a nonempty proper subset of each sample's available views.

    A sample with a single available view gets an empty condition set (the view
    becomes the target).
    """
    B, m = sup_mask.shape
    cond = torch.zeros_like(sup_mask)
    for b in range(B):
        avail = [d for d in range(m) if sup_mask[b, d]]
        n = len(avail)
        if n <= 1:
            continue
        # subsets indexed 1 .. 2^n - 2 (nonempty, proper)
        pick = int(torch.randint(1, 2 ** n - 1, (1,), generator=generator).item())
        for j, d in enumerate(avail):
            if pick >> j & 1:
                cond[b, d] = 1
    return cond


def build_step_inputs(
    scheme: TrainingScheme,
    batch: MultiDomainBatch,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    t_override: torch.Tensor | None = None,
    cond_override: torch.Tensor | None = None,
) -> StepInputs:
    """Assemble network inputs, timesteps, noise targets and the loss mask.

    t_override and cond_override are test hooks forcing the sampled timesteps
    and (for ummcsgm) the condition subset.
    """
    B, m, T = batch.batch_size, batch.num_domains, schedule.T
    if B == 0:
        raise ValueError("empty batch")
    sup = batch.sup_mask.to(torch.bool)
    dtype = batch.x0[0].dtype
    view_dim = batch.x0[0].dim() - 1

    if t_override is not None:
        t_sup = t_override.expand(B, m).clone()
    elif scheme.kind == "mdd":
        t_sup = torch.randint(1, T + 1, (B, m), generator=generator)
    else:
        t_shared = torch.randint(1, T + 1, (B, 1), generator=generator)
        t_sup = t_shared.expand(B, m).clone()

    tvec = torch.where(sup, t_sup, torch.full_like(t_sup, T))
    cond = None
    if scheme.kind == "ummcsgm":
        cond = cond_override.clone() if cond_override is not None \
            else _sample_condition_subsets(batch.sup_mask, generator)
        cond = cond & batch.sup_mask
        tvec = torch.where(cond.bool(), torch.zeros_like(tvec), tvec)

    sab, s1m = _coeffs(schedule, tvec, view_dim, dtype)
    x_in, eps_target = [], []
    loss_mask = torch.zeros(B, m, dtype=dtype)
    for d in range(m):
        eps = torch.randn(batch.x0[d].shape, generator=generator, dtype=dtype)
        noised = sab[:, d] * batch.x0[d] + s1m[:, d] * eps
        avail = sup[:, d].reshape((B,) + (1,) * view_dim)
        if scheme.fill == "pure_noise":
            fill = eps
            fill_in_loss = scheme.loss_scope == "all_domains"
        else:
            fill = torch.full_like(eps, -1.0)
            fill_in_loss = False
        x_in.append(torch.where(avail, noised, fill))
        eps_target.append(eps)
        lm = sup[:, d].to(dtype)
        if fill_in_loss:
            lm = torch.ones(B, dtype=dtype)
        if cond is not None:
            lm = lm * (1 - cond[:, d].to(dtype))  # conditions never in the loss
        loss_mask[:, d] = lm

    if cond is not None:
        # clean condition slots: timestep 0 makes `noised` equal x0 already,
        # but make the intent explicit
        for d in range(m):
            is_cond = cond[:, d].bool().reshape((B,) + (1,) * view_dim)
            x_in[d] = torch.where(is_cond, batch.x0[d], x_in[d])
    cond_code = cond.to(dtype) if cond is not None else None
    return StepInputs(x_in=x_in, tvec=tvec, eps_target=eps_target,
                      loss_mask=loss_mask, cond_code=cond_code)


def training_step(
    scheme: TrainingScheme,
    batch: MultiDomainBatch,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    generator: torch.Generator,
) -> tuple[float, dict[str, torch.Tensor]]:
    """One loss/gradient evaluation under the given scheme (no parameter update)."""
    inputs = build_step_inputs(scheme, batch, schedule, generator)
    return loss_and_gradients(
        model, inputs.x_in, inputs.tvec, inputs.eps_target, inputs.loss_mask, inputs.cond_code
    )


@dataclass
class TrainConfig:
    scheme: TrainingScheme = field(default_factory=TrainingScheme)
    epochs: int = 10
    max_steps: int | None = None
    batch_size: int = 32
    lr: float = 2e-5
    patience: int = 10
    factor: float = 0.5
    seed: int = 0
    val_fraction: float = 0.05


@dataclass
class LossRow:
    step: int
    epoch: int
    scheme: str
    split: str
    loss: float
    lr: float


def write_loss_csv(path: str | Path, rows: list[LossRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "epoch", "scheme", "split", "loss", "lr"])
        for r in rows:
            w.writerow([r.step, r.epoch, r.scheme, r.split, repr(r.loss), repr(r.lr)])


def _is_validation(seed: int, index: int, val_fraction: float) -> bool:
    # seed-stable hash split, independent of iteration order
    h = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little") / 2 ** 64 < val_fraction


def split_indices(n: int, seed: int, val_fraction: float) -> tuple[list[int], list[int]]:
    train, val = [], []
    for i in range(n):
        (val if _is_validation(seed, i, val_fraction) else train).append(i)
    if not train:
        raise ValueError("validation split consumed every data point")
    return train, val


def train(
    config: TrainConfig,
    ds: TriShapeDataset,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    out_dir: str | Path | None = None,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
) -> tuple[DenoiserModel, list[LossRow]]:
    """Epoch loop with shuffled batches, validation loss and plateau scheduling.

    Deterministic given the config seed. When out_dir is set, writes loss.csv
    plus best.mddc / last.mddc checkpoints.
    """
    scheme = config.scheme
    if scheme.uses_cond_code != model.config.cond_code:
        raise ValueError("model cond_code flag does not match the training scheme")
    train_idx, val_idx = split_indices(len(ds), config.seed, config.val_fraction)
    opt = init_optimizer(model, config.lr, config.patience, config.factor)
    gen = torch.Generator().manual_seed(config.seed)

    rows: list[LossRow] = []
    best_val = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    step = 0
    done = False
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            idx = [train_idx[i] for i in order[start:start + config.batch_size]]
            batch = batch_from_points(ds, idx)
            loss, grads = training_step(scheme, batch, model, schedule, gen)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}, lr {opt.lr}, scheme {scheme.label()}"
                )
            optimizer_step(model, grads, opt)
            step += 1
            rows.append(LossRow(step, epoch, scheme.label(), "train", loss, opt.lr))
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break

        val_loss = evaluate_loss(
            scheme, ds, val_idx or train_idx[: config.batch_size], model, schedule,
            seed=config.seed + 7919 * (epoch + 1), batch_size=config.batch_size,
        )
        rows.append(LossRow(step, epoch, scheme.label(), "val", val_loss, opt.lr))
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        plateau_update(opt, val_loss)
        if done:
            break

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        extra = {
            "scheme": scheme.kind,
            "fill": scheme.fill,
            "loss_scope": scheme.loss_scope,
            "train_seed": str(config.seed),
        }
        save_checkpoint(out_dir / "last.mddc", model, schedule.T, beta_start, beta_end, extra)
        current = {k: v.detach().clone() for k, v in model.state_dict().items()}
        model.load_state_dict(best_state)
        save_checkpoint(out_dir / "best.mddc", model, schedule.T, beta_start, beta_end, extra)
        model.load_state_dict(current)
        write_loss_csv(out_dir / "loss.csv", rows)
    return model, rows


def evaluate_loss(
    scheme: TrainingScheme,
    ds: TriShapeDataset,
    indices,
    model: DenoiserModel,
    schedule: NoiseSchedule,
    seed: int,
    batch_size: int = 32,
) -> float:
    """Average scheme loss over the given points with a fixed noise stream."""
    gen = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            idx = indices[start:start + batch_size]
            batch = batch_from_points(ds, idx)
            inputs = build_step_inputs(scheme, batch, schedule, gen)
            preds = model(inputs.x_in, inputs.tvec, inputs.cond_code)
            loss = masked_mse_loss(preds, inputs.eps_target, inputs.loss_mask)
            total += float(loss) * len(idx)
            count += len(idx)
    return total / count
