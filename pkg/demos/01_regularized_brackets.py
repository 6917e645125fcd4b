"""
Regularized brackets of Brownian motion
=======================================

The covariation at scale eps averages (X(r + eps) - X(r)) (Y(r + eps) - Y(r)) / eps
over r.  For Brownian motion it should approach s as eps shrinks, and at
eps = dt it is the plain realized variance.
"""

import numpy as np

from regdirichlet.pathkit import brownian_ensemble, make_grid
from regdirichlet.regcalc import EpsilonSchedule, quadratic_variation, sweep, ucp_diagnostic

# a grid of 10^4 steps on [0, 1] and 200 independent paths
grid = make_grid(0.0, 1.0, 10_000)
W = brownian_ensemble(grid, 1, 200, seed=1)

# %%
# Sweep the scale from 256 dt down to dt.
schedule = EpsilonSchedule((256, 64, 16, 4, 1))
est = sweep(quadratic_variation, schedule, W, kind="QV(W)")
target = np.broadcast_to(grid.points.reshape(-1, 1, 1), W.time_first().shape)
report = ucp_diagnostic(est, target, name="QV(W)")
for eps, m, se in zip(report.epsilons, report.mean_sup_dev, report.std_err):
    print(f"eps = {eps:.1e}   mean sup|QV - s| = {m:.4f} +- {se:.4f}")

# %%
# The sup-deviation shrinks roughly like sqrt(eps): the fitted exponent
print("decay exponent:", report.decay_exponent)

# %%
# At eps = dt the estimate is the realized variance; its mean at s = 1 is
# 1 with standard error sqrt(2 dt / N).
rv = quadratic_variation(W, k=1).time_first()[-1, :, 0]
print(f"E RV(1) = {rv.mean():.4f}  (known SE {np.sqrt(2 * grid.dt / W.n_paths):.4f})")
