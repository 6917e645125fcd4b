import io

import numpy as np
import pytest

from regdirichlet import fields as fl
from regdirichlet import pde
from regdirichlet import representation as rp
from regdirichlet.pathkit import (ConfigurationError, StoppingRule, brownian_ensemble,
                                  gen_sde_euler, make_grid, stop_at, stopping_index)


@pytest.fixture(scope="module")
def W():
    return brownian_ensemble(make_grid(0.0, 1.0, 2000), 1, 200, seed=7)


@pytest.fixture(scope="module")
def heat():
    return pde.CauchyProblem(phi=lambda x: x[..., 0] ** 2, time_homogeneous=True, name="heat")


def case_for(u, prob, W, b1=None, x0=(0.0,)):
    S = gen_sde_euler(W.grid, b1 or prob.b, prob.sigma, list(x0), W)
    return rp.RepresentationCase(u, prob, S)


class TestRemainder:
    def test_no_drift_gap_gives_source_integral(self, W):
        prob = pde.CauchyProblem(h=lambda t, x: np.cos(x[..., 0]))
        case = case_for(fl.quadratic(), prob, W)
        B = rp.remainder_via_pde(case).trajectory.time_first()[..., 0]
        S = case.ensemble.time_first()[..., 0]
        expect = np.concatenate([np.zeros((1, 200)), np.cumsum(np.cos(S[:-1]) * W.grid.dt, 0)])
        np.testing.assert_allclose(B, expect, atol=1e-13)

    def test_vanishes_without_source_or_gap(self, W, heat):
        B = rp.remainder_via_pde(case_for(fl.heat_quadratic(), heat, W)).trajectory
        assert np.all(B.values == 0)

    def test_constant_drift_gap(self, W, heat):
        mu = 0.5
        case = case_for(fl.heat_quadratic(), heat, W, b1=lambda t, x: np.full(x.shape, mu))
        B = rp.remainder_via_pde(case).trajectory.time_first()[..., 0]
        S = case.ensemble.time_first()[..., 0]
        expect = np.concatenate([np.zeros((1, 200)), np.cumsum(2 * S[:-1] * mu * W.grid.dt, 0)])
        np.testing.assert_allclose(B, expect, atol=1e-12)

    def test_single_path(self, W, heat):
        B = rp.remainder_via_pde(case_for(fl.heat_quadratic(), heat, W), index=3)
        assert B.trajectory.values.shape == (2001, 1)


class TestResidual:
    def test_heat_quadratic_residual_is_realized_variance_gap(self, W, heat):
        case = case_for(fl.heat_quadratic(), heat, W)
        rep = rp.representation_residual(case)
        # R(s) = RV(s) - s, unbiased with fluctuations of order sqrt(dt)
        assert rep.detail["sup_mean_residual"] < 5e-3
        assert rep.final < 0.05

    def test_smooth_solution(self, W):
        prob = pde.CauchyProblem(h=lambda t, x: -1.5 * np.sin(x[..., 0]) * np.exp(-t))
        case = case_for(fl.sin_exp(), prob, W, x0=(0.3,))
        assert rp.representation_residual(case, tolerance=1e-2).passed

    def test_negative_control_drifts(self, W, heat):
        case = case_for(fl.heat_quadratic(), heat, W)
        rep = rp.representation_residual(case, h_shift=1.0)
        np.testing.assert_allclose(rep.detail["mean_residual"][-1], -1.0, atol=0.01)
        assert not rep.passed

    def test_sigma_identity_gate(self, W, heat):
        S = gen_sde_euler(W.grid, heat.b, pde.const_sigma(1.0), [0.0], W)
        with pytest.raises(rp.SigmaMismatchError):
            rp.RepresentationCase(fl.heat_quadratic(), heat, S)
        with pytest.raises(ConfigurationError):
            rp.RepresentationCase(fl.heat_quadratic(), heat, W)

    def test_residual_csv(self, W, heat):
        rep = rp.representation_residual(case_for(fl.heat_quadratic(), heat, W))
        buf = io.StringIO()
        rp.write_residual_csv(rep, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "s,mean_abs_residual,std_err"
        assert lines[1].startswith("0,0,0")

    def test_refinement(self, W, heat):
        rep = rp.residual_refinement(fl.heat_quadratic(), heat, W, [0.0], factors=(16, 4, 1))
        assert list(rep.epsilons) == pytest.approx([16 / 2000, 4 / 2000, 1 / 2000])
        assert rep.monotone

    def test_coarsen_rejects_non_divisor(self, W):
        with pytest.raises(ConfigurationError):
            rp.coarsen(W, 3)


class TestGirsanov:
    def test_unit_weight_without_gap(self, W, heat):
        w = rp.girsanov_reweight(case_for(fl.heat_quadratic(), heat, W), bound=1.0)
        assert np.all(w.log_weight == 0)
        assert w.normalization() == (1.0, 0.0)

    def test_weight_normalized_and_beta_brownian(self, W, heat):
        b1 = lambda t, x: 0.5 * np.tanh(x)  # noqa: E731
        case = case_for(fl.heat_quadratic(), heat, W, b1=b1)
        direct = case_for(fl.heat_quadratic(), heat, W)
        rep = rp.representation_via_girsanov(case, bound=1.0, direct=direct, qv_tolerance=0.05)
        assert rep.weight_normalized and rep.beta_centered and rep.qv_beta.passed
        assert rep.matches_direct
        assert rep.detail["pathwise_vs_P_residual"] < 1e-10
        assert any(line.startswith("mean_weight=") for line in rep.summary_lines())

    def test_bound_violation(self, W, heat):
        case = case_for(fl.heat_quadratic(), heat, W, b1=lambda t, x: np.full(x.shape, 2.0))
        with pytest.raises(rp.GirsanovHypothesisError) as err:
            rp.girsanov_reweight(case, bound=1.0)
        assert err.value.weight.violated
        assert not rp.girsanov_reweight(case, bound=3.0).violated

    def test_range_rejection(self):
        g = make_grid(0.0, 1.0, 100)
        W1 = brownian_ensemble(g, 1, 20, seed=3)
        sig = pde.const_sigma(np.array([[1.0], [0.0]]), n=2, m=1)
        prob = pde.CauchyProblem(sigma=sig, n=2)
        S = gen_sde_euler(g, lambda t, x: np.broadcast_to([0.0, 0.3], x.shape), sig, [0.0, 0.0], W1)
        case = rp.RepresentationCase(fl.quadratic(), prob, S)
        with pytest.raises(rp.GirsanovHypothesisError, match="range"):
            rp.girsanov_reweight(case, bound=10.0)
        assert rp.girsanov_reweight(case, 10.0, refuse=False).range_defect == pytest.approx(0.3)


class TestStopping:
    @pytest.mark.parametrize("level", [0.5, 100.0])
    def test_stopped_remainder_is_stopped_remainder(self, W, heat, level):
        case = case_for(fl.heat_quadratic(), heat, W, b1=lambda t, x: -x)
        rule = StoppingRule("level-exit", level=level)
        k = stopping_index(case.ensemble, rule)
        full = stop_at(rp.remainder_via_pde(case).trajectory, k)
        part = rp.stopped_remainder(case, rule).trajectory
        assert np.array_equal(full.values, part.values)

    def test_against_defect_remainder(self, W, heat):
        case = case_for(fl.heat_quadratic(), heat, W, b1=lambda t, x: -x)
        rep = rp.stopped_defect_check(case, StoppingRule("level-exit", level=0.5), tolerance=0.05)
        assert rep.passed


class TestElliptic:
    def cos_case(self, W, lam):
        ep = pde.EllipticProblem(lam=lam, h=lambda x: (0.5 - lam) * np.cos(x[..., 0]))
        S = gen_sde_euler(W.grid, ep.sde_b, ep.sde_sigma, [0.2], W)
        u = fl.ScalarField(lambda t, x: np.cos(x[..., 0]), lambda t, x: -np.sin(x))
        return u, ep, S

    def test_consistent_mode_passes(self, W):
        out = rp.elliptic_representation_residual(*self.cos_case(W, 2.0))
        assert out["consistent"].passed
        assert not out["as-written"].passed

    def test_harmonic_limit(self, W):
        ep = pde.EllipticProblem(lam=1e-12)
        S = gen_sde_euler(W.grid, ep.sde_b, ep.sde_sigma, [0.2], W)
        out = rp.elliptic_representation_residual(fl.linear([1.0]), ep, S)
        assert max(r.final for r in out.values()) < 1e-10

    def test_unknown_mode(self, W):
        with pytest.raises(ConfigurationError):
            rp.elliptic_representation_residual(*self.cos_case(W, 2.0), mode="other")


class TestClosure:
    def test_limit_and_stopped_values(self, W):
        members = [W.with_values((1 + 1 / n) * W.values) for n in (1, 4, 16)]
        shifted = [W.with_values(W.values + 1 / n) for n in (1, 4, 16)]
        rep = rp.martingale_closure_check(members, W, level=1.5, stopped_members=shifted,
                                          tolerance=0.1)
        assert rep.limit_passed
        assert rep.stopped_gaps[-1] < rep.stopped_gaps[0]
        assert rep.passed
        assert {p["test"] for p in rep.rows()} == {"1", "sign", "tanh", "cos(max)"}

    def test_drift_is_flagged(self, W):
        s = W.grid.points.reshape(1, -1, 1)
        rep = rp.martingale_closure_check([W.with_values(W.values + s)], W)
        assert rep.member_flags[0] is False
