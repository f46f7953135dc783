"""Train a small vector-mode denoiser end to end (a few minutes on CPU).

Training draws an independent timestep per domain, noises every available
view to its own level, and regresses the added noise. Missing views are
replaced with pure noise pinned at t=T, so the network never sees a special
"absent" token - absence is just the far end of the noise schedule.

Writes a checkpoint and a loss curve; demo 04 consumes the checkpoint.
"""

from pathlib import Path

import torch

from mddiff.artifacts import write_svg_line_plot
from mddiff.dataset import generate_dataset
from mddiff.denoiser import DenoiserModel, ModelConfig
from mddiff.schedule import make_linear_schedule
from mddiff.trainer import TrainConfig, TrainingScheme, train

out = Path("demo_output/train")
out.mkdir(parents=True, exist_ok=True)

ds = generate_dataset(2000, mode="vector", sup_fraction=0.4, seed=11)
schedule = make_linear_schedule(1000, 1e-4, 0.02)
with torch.random.fork_rng():
    torch.manual_seed(0)
    model = DenoiserModel(ModelConfig(mode="vector", num_domains=3, data_shape=(8,)))

config = TrainConfig(
    scheme=TrainingScheme("mdd"),
    epochs=60,
    max_steps=3000,
    batch_size=32,
    lr=1e-3,
    seed=0,
)
print(f"training {config.scheme.label()} on {len(ds)} points "
      f"({int(ds.sup_fraction * 100)}% fully supervised) ...")
_, rows = train(config, ds, model, schedule, out_dir=out)

train_rows = [(r.step, r.loss) for r in rows if r.split == "train"]
val_rows = [(r.step, r.loss) for r in rows if r.split == "val"]
print(f"steps: {train_rows[-1][0]}, "
      f"first/last train loss: {train_rows[0][1]:.3f} / {train_rows[-1][1]:.3f}, "
      f"best val loss: {min(l for _, l in val_rows):.3f}")

write_svg_line_plot(
    out / "loss_curve.svg",
    {
        "train": ([s for s, _ in train_rows[::20]], [l for _, l in train_rows[::20]]),
        "val": ([s for s, _ in val_rows], [l for _, l in val_rows]),
    },
    title="MDD smoke training", xlabel="step", ylabel="loss",
)
print(f"wrote {out}/best.mddc, {out}/loss.csv, {out}/loss_curve.svg")
