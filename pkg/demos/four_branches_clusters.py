"""
Four failure branches in two dimensions, and how DBSCAN keeps gradient
calls down.

With clustering switched on, every group of nearby particles shares the
gradient evaluated at the group's mean, so the number of gradient calls
per iteration follows the number of clusters instead of the ensemble size.
"""

import numpy as np

from aldi_is import (
    AldiConfig,
    DbscanConfig,
    FourBranchesLSF,
    LevelSchedule,
    SmoothingConfig,
    dbscan,
    fit_em,
    initial_ensemble,
    is_estimate,
    log_pdf,
    run_schedule,
    sample,
)

P_REF = 2.22e-3  # published reference value
smoothing = SmoothingConfig.from_reduced(1e-3)
schedule = LevelSchedule.paper(final_eps=0.05)

for clustered in (False, True):
    rng = np.random.default_rng(7)
    lsf = FourBranchesLSF()
    cfg = AldiConfig(k_min=10, stopping_scope="level",
                     dbscan=DbscanConfig() if clustered else None)
    ens, diag = run_schedule(initial_ensemble(2, 50, rng), lsf, smoothing, schedule, cfg, rng)
    x = ens.particles

    label = "with DBSCAN" if clustered else "per particle"
    print(f"--- {label}")
    print("iterations per level:", [lv.iterations for lv in diag.levels])
    if clustered:
        print("clusters seen on the last level:", diag.levels[-1].clusters)
    print("gradient calls: %d, LSF calls: %d" % (lsf.ledger.gradient_calls, lsf.ledger.lsf_calls))

    # The particles should sit on the branches; the angles show which ones.
    angles = np.degrees(np.arctan2(x[1], x[0])).round()
    print("particle angles (deg):", sorted(set((angles // 45 * 45).astype(int).tolist())))
    print("DBSCAN on the final ensemble:", dbscan(x, 1.0, 5).n_clusters, "clusters")

    model = fit_em(x, K=1)
    report = is_estimate(sample(model, 1000, rng), lambda z: log_pdf(z, model), lsf)
    print("estimate %.4g  (reference %.3g)" % (report.p_hat, P_REF))
