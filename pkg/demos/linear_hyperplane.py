"""
Estimate a 1e-7 failure probability in 100 dimensions, one step at a time.

The limit state is the hyperplane g(x) = 5 - sum(x) / sqrt(100), so the
exact answer is Phi(-5). We move an ensemble of 50 particles towards the
failure set with ALDI, fit a von Mises-Fisher-Nakagami density to where
they end up and use it as an importance-sampling proposal.
"""

import numpy as np

from aldi_is import (
    AldiConfig,
    LevelSchedule,
    LinearLSF,
    SmoothingConfig,
    fit_em,
    initial_ensemble,
    is_estimate,
    log_pdf,
    run_schedule,
    sample,
)

rng = np.random.default_rng(2024)
lsf = LinearLSF(dim=100, beta=5.0)
print("exact failure probability: %.4g" % lsf.exact_probability())

# The indicator of {g <= 0} is replaced by a logistic ramp. A tiny reduced
# smoothing parameter keeps the ramp close to a step.
smoothing = SmoothingConfig.from_reduced(1e-9)

# Levels 1, 0.5, 0.05, 0 pull the particles in gradually; gamma blends
# the ensemble covariance with the identity in the preconditioner.
schedule = LevelSchedule.paper()
aldi = AldiConfig(k_min=50, stopping_scope="global")

particles = initial_ensemble(lsf.dim, 50, rng)
particles, diag = run_schedule(particles, lsf, smoothing, schedule, aldi, rng)
print("ALDI iterations per level:", [lv.iterations for lv in diag.levels])
print("gradient calls so far:", lsf.ledger.gradient_calls)

# Where did the particles go? With the running average carried across
# levels the later levels stop almost at once, so the ensemble ends short
# of the threshold 5. The fitted density is wide enough to cover it.
proj = particles.particles.sum(axis=0) / 10.0
print("projection on the normal: mean %.2f, min %.2f, max %.2f" % (proj.mean(), proj.min(), proj.max()))

# One vMFN component is enough for a single failure region.
model = fit_em(particles.particles, K=1)
c = model.components[0]
print("fitted kappa %.1f, Nakagami m %.2f, spread S %.1f" % (c.kappa, c.m, c.S))

draws = sample(model, 2000, rng)
report = is_estimate(draws, lambda z: log_pdf(z, model), lsf)
print("importance-sampling estimate: %.4g  (ESS %.0f of %d)" % (report.p_hat, report.ess, report.n_samples))
print("relative error: %.1f%%" % (100 * abs(report.p_hat / lsf.exact_probability() - 1)))
print("total LSF calls: %d" % lsf.ledger.lsf_calls)
