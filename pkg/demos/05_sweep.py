"""Noise sweep with per-sigma re-optimization (micro scale, a few seconds).

Swap "micro" for "desk" to run the MG tau=30 experiment on the 7-point
grid (about an hour on one core). Finished sigma points are checkpointed,
so an interrupted run picks up where it stopped.
"""

from noisyrc import harness

config = harness.profile("micro", "MG30")
records = harness.run_sweep(config, "sweep_ckpt")
for rec in records:
    print(f"sigma={rec.sigma:.0e}  median RMSE {rec.median('rmse'):.3f}  R_s {rec.Rs:.2f}  "
          f"mean DV {rec.mean('dv'):.3f}")
print("report:", harness.report(records, "sweep_report"))
