"""Regularized stochastic calculus for weak Dirichlet processes.

Submodules
----------
pathkit
    Time grids, sample paths, counter-based Brownian streams, Euler schemes,
    convolution processes and stopping.
regcalc
    Forward integrals and covariations by epsilon-regularization, with
    u.c.p. convergence diagnostics.
fields
    Scalar fields with analytic derivatives.
dirichlet
    Weak Dirichlet splits, C^{0,1} remainders and their checks.
pde
    Finite differences for backward parabolic and elliptic problems.
representation
    Representation of strong solutions along SDE paths, Girsanov reweighting,
    martingale closedness probes.
harness
    Experiment registry and command line.
"""

__version__ = "0.1.0"
