"""Command-line entry point: dataset | train | sample | eval | sweep.

Exit codes: 0 ok, 1 runtime failure, 2 configuration error. Flags may come
from a flat key=value config file (--config); command-line values take
precedence and unknown config keys are rejected. Every run writes its fully
resolved configuration next to its outputs. The MDDIFF_OUT_ROOT environment
variable, when set, is the base directory for relative output paths.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import artifacts, dataset as ds_mod, evaluation, sampler as sampler_mod, trainer as trainer_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import DenoiserModel, ModelConfig
from .schedule import make_linear_schedule


class ConfigError(Exception):
    pass


def _out_path(p: str) -> Path:
    root = os.environ.get("MDDIFF_OUT_ROOT")
    path = Path(p)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _resolved_config_text(args: argparse.Namespace) -> str:
    skip = {"func", "config"}
    items = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return "".join(f"{k}={v}\n" for k, v in items.items())


def _write_resolved_config(args: argparse.Namespace, target: Path) -> None:
    if target.is_dir():
        cfg_path = target / "run_config.txt"
    else:
        cfg_path = target.with_name(target.name + ".config.txt")
    cfg_path.write_text(_resolved_config_text(args))


def _parse_domains(spec: str) -> tuple[int, ...]:
    try:
        return tuple(sorted("ABC".index(ch) for ch in spec.replace(",", "").upper()))
    except ValueError:
        raise ConfigError(f"bad domain spec {spec!r}; use letters from A, B, C")


def _model_config_from_args(args, mode: str, cond_code: bool) -> ModelConfig:
    shape = (ds_mod.VECTOR_DIM,) if mode == "vector" else (3, args.size, args.size)
    return ModelConfig(
        mode=mode,
        num_domains=ds_mod.NUM_DOMAINS,
        data_shape=shape,
        hidden=args.hidden,
        depth=args.depth,
        base_channels=args.base_channels,
        num_groups=args.num_groups,
        cond_code=cond_code,
    )


def cmd_dataset(args) -> int:
    if not (0.0 <= args.sup <= 1.0):
        raise ConfigError(f"--sup must be in [0, 1], got {args.sup}")
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        ds = ds_mod.generate_dataset(args.n, size=args.size, sup_fraction=args.sup,
                                     pair_policy=args.pairs, seed=args.seed, mode=args.mode)
    except ValueError as e:
        raise ConfigError(str(e))
    ds_mod.save_dataset(out, ds)
    _write_resolved_config(args, out)
    print(f"wrote {out} ({len(ds)} points, mode={ds.mode})")
    return 0


def cmd_train(args) -> int:
    data_path = _out_path(args.data)
    if not data_path.exists():
        raise ConfigError(f"dataset not found: {data_path}")
    ds = ds_mod.load_dataset(data_path)
    try:
        scheme = trainer_mod.TrainingScheme(kind=args.scheme, fill=args.fill,
                                            loss_scope=args.loss_scope)
    except ValueError as e:
        raise ConfigError(str(e))
    schedule = make_linear_schedule(args.T, args.beta_start, args.beta_end)
    with torch.random.fork_rng():
        torch.manual_seed(args.seed)
        model = DenoiserModel(_model_config_from_args(args, ds.mode, scheme.uses_cond_code))

    epochs = args.epochs
    max_steps = args.steps
    if max_steps is not None and epochs is None:
        per_epoch = max(1, (len(ds) * 19 // 20 + args.batch - 1) // args.batch)
        epochs = (max_steps + per_epoch - 1) // per_epoch
    if epochs is None:
        raise ConfigError("provide --epochs or --steps")
    config = trainer_mod.TrainConfig(
        scheme=scheme, epochs=epochs, max_steps=max_steps, batch_size=args.batch,
        lr=args.lr, patience=args.patience, factor=args.factor, seed=args.seed,
    )
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(args, out)
    (out / "input_hashes.txt").write_text(f"dataset={artifacts.sha256_file(data_path)}\n")
    _, rows = trainer_mod.train(config, ds, model, schedule, out_dir=out,
                                beta_start=args.beta_start, beta_end=args.beta_end)
    final = [r for r in rows if r.split == "train"][-1]
    print(f"trained {scheme.label()} for {final.step} steps, final train loss {final.loss:.4f}")
    print(f"wrote {out}/best.mddc {out}/last.mddc {out}/loss.csv")
    return 0


def cmd_sample(args) -> int:
    ck = _out_path(args.ck)
    if not ck.exists():
        raise ConfigError(f"checkpoint not found: {ck}")
    data_path = _out_path(args.data)
    if not data_path.exists():
        raise ConfigError(f"dataset not found: {data_path}")
    model, schedule, meta = load_checkpoint(ck)
    ds = ds_mod.load_dataset(data_path)
    cond = _parse_domains(args.cond)
    if len(cond) >= ds_mod.NUM_DOMAINS or not cond:
        raise ConfigError("--cond must name a nonempty proper subset of A,B,C")
    try:
        phi = sampler_mod.PhiSchedule(args.phi, args.c)
    except ValueError as e:
        raise ConfigError(str(e))
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(args, out)

    indices = list(range(min(args.n, len(ds))))
    gen, _ = evaluation.translate(model, schedule, ds, indices, cond, phi,
                                  args.sampler, args.steps, args.seed)
    for d, arr in gen.items():
        name = evaluation.DOMAIN_NAMES[d]
        if ds.mode == "image":
            artifacts.write_ppm(out / f"generated_{name}.ppm",
                                artifacts.image_grid(list(arr)))
        else:
            np.savetxt(out / f"generated_{name}.csv", arr, delimiter=",")
    req_meta = {
        "scheme": meta.get("scheme", "?"), "phi_family": phi.family, "phi_c": repr(phi.c),
        "sampler": args.sampler, "steps": str(args.steps), "seed": str(args.seed),
        "cond": args.cond, "checkpoint_hash": artifacts.sha256_file(ck),
        "dataset_hash": artifacts.sha256_file(data_path),
    }
    artifacts.write_metadata(out / "generation_meta.txt", req_meta)
    print(f"wrote generations for {len(indices)} points to {out}")
    return 0


def _protocol_config(args, ds) -> evaluation.ProtocolConfig:
    return evaluation.ProtocolConfig(
        dataset=ds, n_eval=args.n_eval, seeds=tuple(args.seeds),
        sampler_kind=args.sampler, steps=args.steps,
        cond_domains=_parse_domains(args.cond),
    )


def cmd_eval(args) -> int:
    data_path = _out_path(args.data)
    if not data_path.exists():
        raise ConfigError(f"dataset not found: {data_path}")
    ds = ds_mod.load_dataset(data_path)
    cfg = _protocol_config(args, ds)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(args, out)
    if args.protocol == "supervision":
        if not args.cell:
            raise ConfigError("supervision protocol needs at least one --cell label:N:path")
        cells = {}
        for cell in args.cell:
            try:
                label, n_sup, path = cell.split(":", 2)
                cells[(label, float(n_sup))] = _out_path(path)
            except ValueError:
                raise ConfigError(f"bad --cell {cell!r}; expected label:N:path")
        result = evaluation.run_supervision_sweep(cells, cfg, out_dir=out)
    elif args.protocol == "bridge":
        if not args.ck:
            raise ConfigError("bridge protocol needs --ck")
        result = evaluation.run_bridge(_out_path(args.ck), cfg, out_dir=out,
                                       n_snapshots=args.snapshots)
    else:
        raise ConfigError(f"unknown protocol {args.protocol!r}")
    print(f"{len(result.rows)} result rows written to {out}")
    for note in result.notes:
        print(f"note: {note}")
    return 0


def cmd_sweep(args) -> int:
    if args.protocol != "phi":
        raise ConfigError(f"unknown sweep protocol {args.protocol!r}")
    data_path = _out_path(args.data)
    if not data_path.exists():
        raise ConfigError(f"dataset not found: {data_path}")
    if not args.ck:
        raise ConfigError("phi sweep needs --ck")
    ds = ds_mod.load_dataset(data_path)
    cfg = _protocol_config(args, ds)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(args, out)
    result = evaluation.run_phi_sweep(_out_path(args.ck), cfg, out_dir=out)
    print(f"{len(result.rows)} result rows written to {out}")
    return 0


def _add_common_eval_args(p):
    p.add_argument("--data", required=True)
    p.add_argument("--cond", default="A")
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--n-eval", type=int, default=128)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mddiff",
                                     description="Multi-domain diffusion engine")
    parser.add_argument("--config", help="flat key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a TriShape dataset file")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--sup", type=float, default=0.4)
    p.add_argument("--pairs", choices=["equal", "bridge"], default="equal")
    p.add_argument("--mode", choices=["image", "vector"], default="image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=list(trainer_mod.SCHEME_KINDS), default="mdd")
    p.add_argument("--fill", choices=list(trainer_mod.FILL_KINDS), default="pure_noise")
    p.add_argument("--loss-scope", choices=list(trainer_mod.LOSS_SCOPES), default="all_domains")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--factor", type=float, default=0.5)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--num-groups", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="conditional generation from a checkpoint")
    p.add_argument("--ck", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cond", default="A")
    p.add_argument("--phi", choices=list(sampler_mod.PHI_FAMILIES), default="constant")
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="supervision-sweep or bridge protocol")
    p.add_argument("--protocol", choices=["supervision", "bridge"], required=True)
    p.add_argument("--cell", action="append",
                   help="supervision cell as label:N:checkpoint_path (repeatable)")
    p.add_argument("--ck", help="checkpoint for the bridge protocol")
    p.add_argument("--snapshots", type=int, default=10)
    _add_common_eval_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="condition-noise schedule sweep")
    p.add_argument("--protocol", choices=["phi"], default="phi")
    p.add_argument("--ck", required=True)
    _add_common_eval_args(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Prepend config-file entries as flags so command-line values win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        cfg_path = argv[i + 1]
    except IndexError:
        raise ConfigError("--config needs a file path")
    rest = argv[:i] + argv[i + 2:]
    if not rest:
        raise ConfigError("--config requires a subcommand")
    extra: list[str] = []
    for line in Path(cfg_path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"bad config line {line!r}; expected key=value")
        extra.append(f"--{key.strip().replace('_', '-')}")
        for tok in value.strip().split():
            extra.append(tok)
    return [rest[0]] + extra + rest[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
