"""
Removing a drift by a change of measure
=======================================

With b1 - b in the range of sigma, theta = sigma^+ (b1 - b) defines a
density under which beta = W + int theta ds is Brownian.  The residual of
the representation with B = int h ds, averaged under the new measure,
matches a direct run without the extra drift.
"""

import numpy as np

from regdirichlet import fields as fl
from regdirichlet import pde
from regdirichlet import representation as rp
from regdirichlet.pathkit import brownian_ensemble, gen_sde_euler, make_grid

grid = make_grid(0.0, 1.0, 10_000)
W = brownian_ensemble(grid, 1, 200, seed=1)
heat = pde.CauchyProblem(phi=lambda x: x[..., 0] ** 2, time_homogeneous=True, name="heat")
u = fl.heat_quadratic()

drifted = gen_sde_euler(grid, lambda s, x: 0.5 + 0 * x, heat.sigma, [0.0], W)
plain = gen_sde_euler(grid, heat.b, heat.sigma, [0.0], W)
report = rp.representation_via_girsanov(
    rp.RepresentationCase(u, heat, drifted), bound=1.0,
    direct=rp.RepresentationCase(u, heat, plain))
print("\n".join(report.summary_lines()))

# %%
# A discrepancy outside the range of sigma is refused.
sig = pde.const_sigma(np.array([[1.0, 0.0], [0.0, 0.0]]), 2)
flat = pde.CauchyProblem(n=2, sigma=sig)
S2 = gen_sde_euler(grid, lambda s, x: np.broadcast_to([0.0, 0.3], x.shape), sig, [0.0, 0.0],
                   brownian_ensemble(grid, 2, 20, seed=1))
try:
    rp.girsanov_reweight(rp.RepresentationCase(fl.quadratic(), flat, S2), bound=10.0)
except rp.GirsanovHypothesisError as exc:
    print("refused:", exc)
