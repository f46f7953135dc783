"""Binary checkpoint format.

Layout: magic "MDDC", uint32 version, length-prefixed UTF-8 metadata block of
key=value lines (architecture, schedule parameters, domain count, data shapes,
free-form run info), then named parameter arrays as little-endian float32 with
explicit shapes. Round-trips are bit-exact.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
import torch

from .denoiser import DenoiserModel, ModelConfig
from .schedule import NoiseSchedule, make_linear_schedule

MAGIC = b"MDDC"
VERSION = 1


def _meta_to_text(meta: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in sorted(meta.items()))


def _text_to_meta(text: str) -> dict[str, str]:
    meta = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    return meta


def model_metadata(config: ModelConfig, T: int, beta_start: float, beta_end: float) -> dict[str, str]:
    return {
        "mode": config.mode,
        "num_domains": str(config.num_domains),
        "data_shape": ",".join(str(d) for d in config.data_shape),
        "hidden": str(config.hidden),
        "depth": str(config.depth),
        "base_channels": str(config.base_channels),
        "channel_mult": ",".join(str(m) for m in config.channel_mult),
        "num_res_blocks": str(config.num_res_blocks),
        "num_groups": str(config.num_groups),
        "time_dim": str(config.time_dim),
        "cond_code": str(int(config.cond_code)),
        "T": str(T),
        "beta_start": repr(beta_start),
        "beta_end": repr(beta_end),
    }


def config_from_metadata(meta: dict[str, str]) -> ModelConfig:
    return ModelConfig(
        mode=meta["mode"],
        num_domains=int(meta["num_domains"]),
        data_shape=tuple(int(d) for d in meta["data_shape"].split(",")),
        hidden=int(meta["hidden"]),
        depth=int(meta["depth"]),
        base_channels=int(meta["base_channels"]),
        channel_mult=tuple(int(m) for m in meta["channel_mult"].split(",")),
        num_res_blocks=int(meta["num_res_blocks"]),
        num_groups=int(meta["num_groups"]),
        time_dim=int(meta["time_dim"]),
        cond_code=bool(int(meta["cond_code"])),
    )


def save_checkpoint(
    path: str | Path,
    model: DenoiserModel,
    T: int,
    beta_start: float,
    beta_end: float,
    extra_meta: dict[str, str] | None = None,
) -> None:
    meta = model_metadata(model.config, T, beta_start, beta_end)
    if extra_meta:
        overlap = set(meta) & set(extra_meta)
        if overlap:
            raise ValueError(f"extra metadata shadows reserved keys: {sorted(overlap)}")
        meta.update(extra_meta)
    meta_bytes = _meta_to_text(meta).encode("utf-8")
    arrays = {name: p.detach().cpu().numpy().astype("<f4") for name, p in model.named_parameters()}

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[DenoiserModel, NoiseSchedule, dict[str, str]]:
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", buf.read(4))
    meta = _text_to_meta(buf.read(meta_len).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", buf.read(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<I", buf.read(4))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
        arrays[name] = arr

    config = config_from_metadata(meta)
    model = DenoiserModel(config)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    model.load_state_dict(state)
    schedule = make_linear_schedule(
        int(meta["T"]), float(meta["beta_start"]), float(meta["beta_end"])
    )
    return model, schedule, meta
