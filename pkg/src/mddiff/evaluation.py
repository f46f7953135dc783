"""Translation MAE metric and the three experiment protocols:
supervision sweep, bridge translation, condition-noise (phi) sweep.

Every emitted row carries config and checkpoint hashes so any reported number
can be recomputed from the stored generations and the dataset factors.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .artifacts import image_grid, sha256_file, sha256_text, write_metadata, write_ppm, write_svg_line_plot
from .checkpoint import load_checkpoint
from .dataset import RANDOM_PAIR_MAE_FLOOR, NUM_DOMAINS, TriShapeDataset
from .denoiser import DenoiserModel
from .sampler import GenerationRequest, PhiSchedule, ddim_timesteps, generate
from .schedule import NoiseSchedule

DOMAIN_NAMES = ("A", "B", "C")


def mae(generated: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean absolute error after mapping both arrays from [-1, 1] to [0, 1]."""
    a = np.asarray(generated)
    b = np.asarray(ground_truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)) / 2.0)


@dataclass
class ResultRow:
    scheme: str
    n_sup: float
    phi_family: str
    c: float
    sampler: str
    seed: int
    source_set: str
    target_set: str
    domain: str
    mae_value: float
    runtime: float
    config_hash: str
    checkpoint_hash: str


@dataclass
class ExperimentResult:
    rows: list[ResultRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    HEADER = ["scheme", "n_sup", "phi_family", "c", "sampler", "seed", "source_set",
              "target_set", "domain", "mae", "runtime", "config_hash", "checkpoint_hash"]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r.scheme, r.n_sup, r.phi_family, r.c, r.sampler, r.seed,
                            r.source_set, r.target_set, r.domain, repr(r.mae_value),
                            f"{r.runtime:.3f}", r.config_hash, r.checkpoint_hash])

    def summary(self):
        """Mean and sd of MAE grouped over seeds."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            key = (r.scheme, r.n_sup, r.phi_family, r.c, r.sampler, r.source_set,
                   r.target_set, r.domain)
            groups.setdefault(key, []).append(r.mae_value)
        out = []
        for key, vals in groups.items():
            arr = np.array(vals)
            out.append(key + (float(arr.mean()), float(arr.std(ddof=1)) if len(vals) > 1 else 0.0,
                              len(vals)))
        return out

    def summary_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["scheme", "n_sup", "phi_family", "c", "sampler", "source_set",
                        "target_set", "domain", "mae_mean", "mae_sd", "n_seeds"])
            for row in self.summary():
                w.writerow(list(row))


def translate(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    ds: TriShapeDataset,
    indices,
    cond_domains: tuple[int, ...],
    phi: PhiSchedule,
    sampler_kind: str = "ddim",
    steps: int = 100,
    seed: int = 0,
    batch_size: int = 64,
    snapshot_steps: set[int] | None = None,
) -> tuple[dict[int, np.ndarray], dict[int, list]]:
    """Generate the complement of cond_domains for the given points.

    Conditions come from ground-truth renders/encodings of the stored factors.
    Returns {target_domain: (n, *shape) array} plus any requested snapshots
    (from the first batch only).
    """
    m = NUM_DOMAINS
    cond_mask = tuple(1 if d in cond_domains else 0 for d in range(m))
    targets = [d for d in range(m) if not cond_mask[d]]
    chunks: dict[int, list[np.ndarray]] = {d: [] for d in targets}
    all_snapshots: dict[int, list] = {}
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        x_cond = []
        for d in range(m):
            if cond_mask[d]:
                arr = np.stack([ds.ground_truth_view(i, d) for i in idx])
            else:
                arr = np.zeros((len(idx),) + ds.view_shape, dtype=np.float32)
            x_cond.append(torch.from_numpy(arr))
        # Per-point seeds keep results independent of the evaluation batch size.
        req = GenerationRequest(
            x_cond=x_cond, cond_mask=cond_mask, phi=phi,
            sampler_kind=sampler_kind, ddim_steps=steps, seed=seed,
            sample_seeds=[seed * 1000003 + int(i) for i in idx],
        )
        out, snaps = generate(req, model, schedule,
                              snapshot_steps if start == 0 else None)
        if start == 0:
            all_snapshots = snaps
        for d in targets:
            chunks[d].append(out[d].numpy())
    return {d: np.concatenate(chunks[d]) for d in targets}, all_snapshots


def translation_mae(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    ds: TriShapeDataset,
    indices,
    cond_domains: tuple[int, ...],
    phi: PhiSchedule,
    sampler_kind: str = "ddim",
    steps: int = 100,
    seed: int = 0,
) -> dict[int, float]:
    """Per-target-domain MAE against exact ground truth."""
    gen, _ = translate(model, schedule, ds, indices, cond_domains, phi,
                       sampler_kind, steps, seed)
    out = {}
    for d, arr in gen.items():
        gt = np.stack([ds.ground_truth_view(i, d) for i in indices])
        out[d] = mae(arr, gt)
    return out


def _domain_set(domains) -> str:
    return "".join(DOMAIN_NAMES[d] for d in sorted(domains))


@dataclass
class ProtocolConfig:
    dataset: TriShapeDataset
    n_eval: int = 128
    seeds: tuple[int, ...] = (0, 1, 2)
    sampler_kind: str = "ddim"
    steps: int = 100
    cond_domains: tuple[int, ...] = (0,)

    def eval_indices(self) -> list[int]:
        return list(range(min(self.n_eval, len(self.dataset))))

    def hash(self) -> str:
        return sha256_text(
            f"{len(self.dataset)}:{self.dataset.seed}:{self.n_eval}:{self.seeds}:"
            f"{self.sampler_kind}:{self.steps}:{self.cond_domains}"
        )


def _eval_checkpoint_cell(
    result: ExperimentResult,
    ckpt_path: str | Path,
    cfg: ProtocolConfig,
    scheme_label: str,
    n_sup: float,
    phi: PhiSchedule,
) -> None:
    model, schedule, _ = load_checkpoint(ckpt_path)
    ckpt_hash = sha256_file(ckpt_path)
    targets = [d for d in range(NUM_DOMAINS) if d not in cfg.cond_domains]
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        maes = translation_mae(model, schedule, cfg.dataset, cfg.eval_indices(),
                               cfg.cond_domains, phi, cfg.sampler_kind, cfg.steps, seed)
        dt = time.perf_counter() - t0
        for d in targets:
            result.rows.append(ResultRow(
                scheme=scheme_label, n_sup=n_sup, phi_family=phi.family, c=phi.c,
                sampler=cfg.sampler_kind, seed=seed,
                source_set=_domain_set(cfg.cond_domains), target_set=_domain_set(targets),
                domain=DOMAIN_NAMES[d], mae_value=maes[d], runtime=dt,
                config_hash=cfg.hash(), checkpoint_hash=ckpt_hash,
            ))


def run_supervision_sweep(
    checkpoints: dict[tuple[str, float], str | Path],
    cfg: ProtocolConfig,
    out_dir: str | Path | None = None,
) -> ExperimentResult:
    """Clean-condition A -> (B, C) MAE per (scheme, supervision fraction) cell.

    Missing checkpoint files are reported in the notes; partial results are
    still emitted.
    """
    result = ExperimentResult()
    phi = PhiSchedule("constant", 0.0)
    for (scheme_label, n_sup), path in sorted(checkpoints.items()):
        if not Path(path).exists():
            result.notes.append(f"missing checkpoint for ({scheme_label}, N={n_sup}): {path}")
            continue
        _eval_checkpoint_cell(result, path, cfg, scheme_label, n_sup, phi)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.to_csv(out_dir / "supervision_sweep.csv")
        result.summary_csv(out_dir / "supervision_sweep_summary.csv")
        if result.notes:
            (out_dir / "notes.txt").write_text("\n".join(result.notes) + "\n")
    return result


def run_bridge(
    ckpt_path: str | Path,
    cfg: ProtocolConfig,
    out_dir: str | Path | None = None,
    n_snapshots: int = 10,
    phi: PhiSchedule | None = None,
) -> ExperimentResult:
    """Bridge protocol: condition on A, generate (B, C); emit MAEs plus
    denoised-estimate snapshots and L1 maps at uniformly spaced reverse steps."""
    phi = phi if phi is not None else PhiSchedule("constant", 0.0)
    model, schedule, _ = load_checkpoint(ckpt_path)
    ckpt_hash = sha256_file(ckpt_path)
    result = ExperimentResult()
    if cfg.sampler_kind == "ddim":
        taus = ddim_timesteps(schedule.T, cfg.steps)
    else:
        taus = list(range(1, schedule.T + 1))
    snap_steps = {taus[i] for i in
                  np.round(np.linspace(0, len(taus) - 1, n_snapshots)).astype(int)}
    indices = cfg.eval_indices()
    targets = [d for d in range(NUM_DOMAINS) if d not in cfg.cond_domains]

    snapshots_first = None
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        gen, snaps = translate(model, schedule, cfg.dataset, indices, cfg.cond_domains,
                               phi, cfg.sampler_kind, cfg.steps, seed,
                               snapshot_steps=snap_steps)
        if snapshots_first is None:
            snapshots_first = snaps
        dt = time.perf_counter() - t0
        for d in targets:
            gt = np.stack([ds_gt for ds_gt in
                           (cfg.dataset.ground_truth_view(i, d) for i in indices)])
            result.rows.append(ResultRow(
                scheme="MDD", n_sup=0.0, phi_family=phi.family, c=phi.c,
                sampler=cfg.sampler_kind, seed=seed,
                source_set=_domain_set(cfg.cond_domains), target_set=_domain_set(targets),
                domain=DOMAIN_NAMES[d], mae_value=mae(gen[d], gt), runtime=dt,
                config_hash=cfg.hash(), checkpoint_hash=ckpt_hash,
            ))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.to_csv(out_dir / "bridge.csv")
        result.summary_csv(out_dir / "bridge_summary.csv")
        _emit_bridge_snapshots(out_dir, cfg, snapshots_first, targets)
        write_metadata(out_dir / "bridge_meta.txt", {
            "checkpoint_hash": ckpt_hash, "config_hash": cfg.hash(),
            "phi_family": phi.family, "phi_c": repr(phi.c),
            "snapshot_steps": ",".join(str(t) for t in sorted(snap_steps)),
        })
    return result


def _emit_bridge_snapshots(out_dir: Path, cfg: ProtocolConfig, snapshots, targets) -> None:
    indices = cfg.eval_indices()[:8]
    for t, per_domain in sorted(snapshots.items(), reverse=True):
        for d in targets:
            est = per_domain[d].numpy()[: len(indices)]
            gt = np.stack([cfg.dataset.ground_truth_view(i, d) for i in indices])
            l1 = np.abs(est - gt) - 1.0  # L1 map rescaled into [-1, 1] display range
            if cfg.dataset.mode == "image":
                write_ppm(out_dir / f"step{t:04d}_{DOMAIN_NAMES[d]}_est.ppm",
                          image_grid(list(est)))
                write_ppm(out_dir / f"step{t:04d}_{DOMAIN_NAMES[d]}_l1.ppm",
                          image_grid(list(l1)))
            else:
                with open(out_dir / f"step{t:04d}_{DOMAIN_NAMES[d]}.csv", "w", newline="") as f:
                    w = csv.writer(f)
                    w.writerow([f"f{i}" for i in range(est.shape[1])] +
                               [f"l1_f{i}" for i in range(est.shape[1])])
                    for row_est, row_l1 in zip(est, np.abs(est - gt)):
                        w.writerow([repr(v) for v in row_est] + [repr(v) for v in row_l1])


DEFAULT_C_GRID = (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


def run_phi_sweep(
    ckpt_path: str | Path,
    cfg: ProtocolConfig,
    out_dir: str | Path | None = None,
    c_grid: tuple[float, ...] = DEFAULT_C_GRID,
) -> ExperimentResult:
    """Evaluate vanilla plus {skip, constant, constant_fading} x c_grid."""
    model, schedule, _ = load_checkpoint(ckpt_path)
    ckpt_hash = sha256_file(ckpt_path)
    result = ExperimentResult()
    phis = [PhiSchedule("vanilla", 0.0)]
    phis += [PhiSchedule(fam, c) for fam in ("skip", "constant", "constant_fading")
             for c in c_grid]
    targets = [d for d in range(NUM_DOMAINS) if d not in cfg.cond_domains]
    indices = cfg.eval_indices()
    for phi in phis:
        for seed in cfg.seeds:
            t0 = time.perf_counter()
            maes = translation_mae(model, schedule, cfg.dataset, indices,
                                   cfg.cond_domains, phi, cfg.sampler_kind, cfg.steps, seed)
            dt = time.perf_counter() - t0
            for d in targets:
                result.rows.append(ResultRow(
                    scheme="MDD", n_sup=0.0, phi_family=phi.family, c=phi.c,
                    sampler=cfg.sampler_kind, seed=seed,
                    source_set=_domain_set(cfg.cond_domains),
                    target_set=_domain_set(targets),
                    domain=DOMAIN_NAMES[d], mae_value=maes[d], runtime=dt,
                    config_hash=cfg.hash(), checkpoint_hash=ckpt_hash,
                ))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.to_csv(out_dir / "phi_sweep.csv")
        result.summary_csv(out_dir / "phi_sweep_summary.csv")
        _plot_phi_sweep(result, out_dir / "phi_sweep.svg")
    return result


def _plot_phi_sweep(result: ExperimentResult, path: str | Path) -> None:
    series: dict[str, tuple[list[float], list[float]]] = {}
    by_phi: dict[tuple[str, float], list[float]] = {}
    for r in result.rows:
        by_phi.setdefault((r.phi_family, r.c), []).append(r.mae_value)
    for (fam, c), vals in sorted(by_phi.items()):
        if fam == "vanilla":
            continue
        xs, ys = series.setdefault(fam, ([], []))
        xs.append(c)
        ys.append(float(np.mean(vals)))
    vanilla = [v for (fam, _), vals in by_phi.items() if fam == "vanilla" for v in vals]
    if vanilla:
        xs = sorted({c for fam, c in by_phi if fam != "vanilla"})
        series["vanilla"] = (list(xs), [float(np.mean(vanilla))] * len(xs))
    write_svg_line_plot(path, series, title="Condition-noise sweep",
                        xlabel="condition-noise fraction c", ylabel="MAE")


def spearman(xs, ys) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="mergesort")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0
            i = j + 1
        return r
    rx, ry = ranks(xs), ranks(ys)
    if rx.std() == 0 or ry.std() == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])


def random_pair_floor(mode: str) -> float:
    return RANDOM_PAIR_MAE_FLOOR[mode]
