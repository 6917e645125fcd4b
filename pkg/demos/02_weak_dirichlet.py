"""
A C^{0,1} field along an Euler path
===================================

For u only once differentiable in space, u(s, S_s) still splits into u at
time t0, a stochastic integral against the martingale part, and a
remainder B.  B has no Itô correction term to speak of but is orthogonal
to every martingale: its covariation with W vanishes as eps -> 0.
"""

import numpy as np

from regdirichlet import dirichlet as dr
from regdirichlet import fields as fl
from regdirichlet.pathkit import brownian_ensemble, gen_sde_euler, make_grid
from regdirichlet.pde import const_sigma
from regdirichlet.regcalc import EpsilonSchedule

grid = make_grid(0.0, 1.0, 10_000)
W = brownian_ensemble(grid, 1, 200, seed=1)

# Ornstein-Uhlenbeck Euler paths started at 0.5
S = gen_sde_euler(grid, lambda s, x: -x, const_sigma(1.0), [0.5], W)
split = dr.WeakDirichletSplit.from_sde(S)

# %%
# |x| smoothed at scale 0.01 stands in for a Lipschitz field with a kink.
u = fl.smoothed_abs(0.01)
B = dr.remainder_B(u, split)
print("remainder at T, first five paths:", np.round(B.trajectory.time_first()[-1, :5, 0], 4))

# %%
# [B, N] against the test martingales W, int sin(kr) dW and int tanh(S) dW
sched = EpsilonSchedule((256, 64, 16, 4, 1))
for name, rep in dr.orthogonality_family(B, W, sched, S=S, tolerance=0.02).items():
    print(f"[B, {name}]: " + "  ".join(f"{m:.4f}" for m in rep.mean_sup_dev),
          "PASS" if rep.passed else "FAIL")

# %%
# For a C^{1,2} field the remainder is explicit: the 1/2 Hessian term
# against [M, M] plus the time derivative plus the integral against A.
for field in (fl.sin_exp(), fl.time_times_x()):
    rep = dr.c12_identity_check(field, split, schedule=sched, tolerance=0.02)
    print(f"C^(1,2) identity for {field.name}: finest deviation {rep.final:.2e}")
