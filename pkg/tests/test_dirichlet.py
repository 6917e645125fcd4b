import io

import numpy as np
import pytest

from regdirichlet import dirichlet as dr
from regdirichlet import fields as fl
from regdirichlet.pathkit import (ConfigurationError, ExponentialKernel, StoppingRule,
                                  from_time_first, gen_convolution_wd, gen_independent,
                                  gen_sde_euler, make_grid, brownian_ensemble)
from regdirichlet.regcalc import EpsilonSchedule

SCHED = EpsilonSchedule((64, 16, 4, 1))


def unit_sigma(s, x):
    return np.ones(x.shape + (1,))


@pytest.fixture(scope="module")
def ou():
    g = make_grid(0.0, 1.0, 2000)
    W = brownian_ensemble(g, 1, 100, seed=7)
    return W, gen_sde_euler(g, lambda s, x: -x, unit_sigma, [0.5], W)


class TestSplit:
    def test_from_sde_rebuilds_path(self, ou):
        W, S = ou
        split = dr.WeakDirichletSplit.from_sde(S)
        np.testing.assert_allclose(split.D.values, S.values, atol=1e-12)
        assert np.all(split.A.values[:, 0] == 0)

    def test_rejects_nonzero_start(self, ou):
        W, _ = ou
        with pytest.raises(ConfigurationError):
            dr.WeakDirichletSplit(W, W.with_values(W.values + 1.0))

    def test_rejects_foreign_paths(self, ou):
        W, _ = ou
        with pytest.raises(ConfigurationError):
            dr.WeakDirichletSplit.from_sde(W)


class TestRemainder:
    def test_linear_field_has_zero_remainder(self, ou):
        split = dr.WeakDirichletSplit(ou[0], ou[0].with_values(np.zeros_like(ou[0].values)))
        B = dr.remainder_B(fl.linear([3.0]), split).trajectory
        assert np.max(np.abs(B.values)) < 1e-12

    def test_quadratic_remainder_is_realized_variance(self, ou):
        W = ou[0]
        split = dr.WeakDirichletSplit(W, W.with_values(np.zeros_like(W.values)))
        B = dr.remainder_B(fl.quadratic(), split).trajectory.values
        rv = np.concatenate([np.zeros((100, 1, 1)), np.cumsum(np.diff(W.values, axis=1) ** 2, axis=1)], 1)
        np.testing.assert_allclose(B, rv, atol=1e-12)

    def test_remainder_rejects_nonzero_start(self, ou):
        with pytest.raises(ConfigurationError):
            dr.RemainderProcess(ou[0].with_values(ou[0].values + 1), "c01-defect")
        with pytest.raises(ConfigurationError):
            dr.RemainderProcess(ou[0], "guess")

    @pytest.mark.parametrize("field", [fl.quadratic(), fl.time_times_x(), fl.sin_exp(), fl.constant()])
    def test_c12_identity(self, ou, field):
        rep = dr.c12_identity_check(field, dr.WeakDirichletSplit.from_sde(ou[1]), schedule=SCHED,
                                    tolerance=0.02)
        assert rep.passed
        assert rep.mean_sup_dev[-1] < 1e-3

    def test_c12_identity_at_dt_is_exact_for_quadratic(self, ou):
        split = dr.WeakDirichletSplit(ou[0], ou[0].with_values(np.zeros_like(ou[0].values)))
        rep = dr.c12_identity_check(fl.quadratic(), split, eps=ou[0].grid.dt)
        assert rep.final < 1e-12

    def test_missing_hessian(self, ou):
        with pytest.raises(ConfigurationError):
            dr.c12_identity_rhs(fl.sqrt_time_linear(), dr.WeakDirichletSplit.from_sde(ou[1]), 1)

    def test_decomposition_csv(self, ou):
        buf = io.StringIO()
        dr.write_decomposition_csv(fl.smoothed_abs(), dr.WeakDirichletSplit.from_sde(ou[1]), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "s,u_of_D,M_tilde,B_remainder"
        assert len(lines) == 2002


class TestOrthogonality:
    def test_c01_remainder_on_sde(self, ou):
        W, S = ou
        B = dr.remainder_B(fl.smoothed_abs(0.01), dr.WeakDirichletSplit.from_sde(S))
        reps = dr.orthogonality_family(B, W, SCHED, S=S, tolerance=0.02)
        assert set(reps) == {"W", "int sin(1r) dW", "int sin(2r) dW", "int tanh(S) dW"}
        assert all(r.passed for r in reps.values())

    def test_independent_process(self, ou):
        W = ou[0]
        Z = gen_independent(W.grid, "brownian", seed=7, n_paths=W.n_paths)
        assert dr.orthogonality_test(Z, W, SCHED, tolerance=0.05).passed

    def test_convolution_remainder(self, ou):
        W = ou[0]
        X = gen_convolution_wd(W.grid, ExponentialKernel(1.0), W)
        A = X.with_values(X.values - W.values)
        assert dr.orthogonality_test(A, W, SCHED, tolerance=0.02).final < 1e-3

    def test_martingale_is_not_orthogonal_to_itself(self, ou):
        W = ou[0]
        rep = dr.orthogonality_test(W, W, SCHED, tolerance=0.02)
        assert not rep.passed
        assert rep.final == pytest.approx(1.0, abs=0.1)

    def test_stopped(self, ou):
        W, S = ou
        B = dr.remainder_B(fl.smoothed_abs(0.01), dr.WeakDirichletSplit.from_sde(S))
        rep = dr.stopped_orthogonality(B, W, StoppingRule("level-exit", level=1.0, reference=S), SCHED,
                                       tolerance=0.02)
        assert rep.passed

    def test_family_needs_scalar_driver(self, ou):
        g = ou[0].grid
        with pytest.raises(ConfigurationError):
            dr.martingale_test_family(brownian_ensemble(g, 2, 3, seed=0))


class TestZeroQV:
    @pytest.mark.parametrize("field", [fl.sqrt_time_linear(0.1), fl.holder_time_linear(0.75, 0.5)])
    def test_holder_in_time(self, ou, field):
        W = ou[0]
        s = W.grid.points.reshape(-1, 1, 1)
        A = from_time_first(W, np.broadcast_to(0.5 * s, W.time_first().shape).copy())
        B = dr.remainder_B(field, dr.WeakDirichletSplit(W, A))
        assert dr.zero_qv_check(B, SCHED, tolerance=0.01).passed

    def test_qv_of_brownian_is_not_zero(self, ou):
        assert not dr.zero_qv_check(ou[0], SCHED, tolerance=0.01).passed


class TestBrackets:
    def test_bracket_uS(self, ou):
        assert dr.bracket_uS_check(fl.sin_exp(), ou[1], schedule=SCHED, tolerance=0.02).passed

    def test_holder_bracket(self, ou):
        W = ou[0]
        V = W.with_values(np.zeros_like(W.values))
        rep = dr.holder_bracket_check(fl.sin_exp(), fl.quadratic(), V, W, schedule=SCHED,
                                      tolerance=0.02)
        assert rep.passed
