"""The packaged experiment protocols, driven through the same CLI users get.

Each protocol writes CSV rows carrying config and checkpoint hashes so every
reported number can be traced back to its inputs. This demo runs scaled-down
versions of all three against the demo 03 checkpoint:

  supervision sweep   MAE per (scheme, supervision fraction) cell
  bridge              A -> (B, C) with denoised-estimate snapshots
  phi sweep           MAE across condition-noise schedules, with an SVG plot

Run demo 03 first to produce demo_output/train/best.mddc.
"""

import sys
from pathlib import Path

from mddiff.cli import main

ck = Path("demo_output/train/best.mddc")
if not ck.exists():
    sys.exit("run demos/03_train_vector_smoke.py first (missing demo_output/train/best.mddc)")

out = Path("demo_output/protocols")
data = out / "eval.mdds"
out.mkdir(parents=True, exist_ok=True)

steps = ["dataset", "--n", "48", "--mode", "vector", "--sup", "1.0",
         "--seed", "123", "--out", str(data)]
print("+ mddiff " + " ".join(steps))
assert main(steps) == 0

sweep = ["eval", "--protocol", "supervision", "--data", str(data),
         "--cell", f"MDD:0.4:{ck}",
         "--n-eval", "32", "--seeds", "0", "1", "--steps", "50",
         "--out", str(out / "supervision")]
print("+ mddiff " + " ".join(sweep))
assert main(sweep) == 0

bridge = ["eval", "--protocol", "bridge", "--data", str(data), "--ck", str(ck),
          "--n-eval", "16", "--seeds", "0", "--steps", "50", "--snapshots", "6",
          "--out", str(out / "bridge")]
print("+ mddiff " + " ".join(bridge))
assert main(bridge) == 0

phi = ["sweep", "--ck", str(ck), "--data", str(data),
       "--n-eval", "16", "--seeds", "0", "--steps", "50",
       "--out", str(out / "phi")]
print("+ mddiff " + " ".join(phi))
assert main(phi) == 0

print(f"\nresults under {out}/: supervision/supervision_sweep_summary.csv,")
print("bridge/bridge.csv with step*.csv snapshots, phi/phi_sweep.svg")
