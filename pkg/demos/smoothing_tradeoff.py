"""
The smoothing trade-off for a fixed-step Langevin sampler.

A sharp smoothing (small sigma_r) makes the potential so steep that a
step of 1e-3 overshoots and the fit is useless; a wide one keeps the
particles away from the failure set. This script runs a short sweep on
the linear benchmark and prints the nRMSE for each value, the same data
that the ``ula-sweep-fig2`` preset produces at full size.
"""

from aldi_is import load_preset, run_sigma_sweep

cfg = load_preset("ula-sweep-fig2", ["reps=10", "estimator.samples=1000"])
grid = [1e-9, 1e-4, 5e-4, 1e-3, 1e-2, 0.1, 1.0]

print("sigma_r      nRMSE   mean estimate")
for row in run_sigma_sweep(cfg, grid, "ula"):
    print("%-10.0e %7.3f   %.3g" % (row.sigma_r, row.nrmse, row.mean_estimate))
print("reference   %.3g" % cfg.reference_probability())

# With a step of 1e-5 the 100 steps cover a much shorter time, so only a
# steeper potential moves the particles far enough: the useful window
# shifts to smaller sigma_r.
small = load_preset("ula-sweep-fig2", ["reps=10", "estimator.samples=1000", "sampler.ula_step=1e-5"])
print("\nstep 1e-5:")
for row in run_sigma_sweep(small, [1e-7, 1e-5, 1e-4, 1e-3, 1e-1], "ula"):
    print("%-10.0e %7.3f" % (row.sigma_r, row.nrmse))
