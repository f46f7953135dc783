"""Tour of the noise schedule and the forward (noising) process.

The linear beta schedule defines how quickly signal decays: at t=0 a view is
untouched, at t=T=1000 it is statistically indistinguishable from unit
Gaussian noise. The per-domain timestep vector lets each domain sit at its own
point on that curve, which is what makes missing views representable as
"noised all the way".
"""

import numpy as np

from mddiff import build_tvector, gather_coefficients, make_linear_schedule

sched = make_linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02)

print("signal/noise coefficients along the schedule")
print(f"{'t':>6} {'sqrt(alpha_bar)':>16} {'sqrt(1-alpha_bar)':>18}")
for t in (0, 1, 10, 100, 500, 900, 1000):
    sab, s1m = gather_coefficients(sched, np.array([t]))
    print(f"{t:>6} {sab[0]:>16.6f} {s1m[0]:>18.6f}")

print()
print("at t=T the signal coefficient is", f"{sched.sqrt_alpha_bars[1000]:.2e},")
print("so a missing view filled with unit noise is exactly a view noised to T.")

# The timestep vector: supervised domains keep their drawn timestep, missing
# domains are pinned at T.
mask = np.array([1, 0, 1])
t_sup = np.array([17, 884, 3])
tvec = build_tvector(mask, t_sup, T=1000)
print()
print(f"sup_mask {mask.tolist()} with drawn timesteps {t_sup.tolist()} "
      f"-> tvec {tvec.tolist()}")

# Forward process sanity: empirical moments of x_t = sab*x0 + s1m*eps.
rng = np.random.default_rng(0)
x0 = 0.37
n = 100_000
for t in (1, 500, 1000):
    sab, s1m = gather_coefficients(sched, np.array([t]))
    xt = sab[0] * x0 + s1m[0] * rng.standard_normal(n)
    print(f"t={t:>4}: mean {xt.mean():+.4f} (theory {sab[0] * x0:+.4f}), "
          f"var {xt.var():.4f} (theory {s1m[0] ** 2:.4f})")
