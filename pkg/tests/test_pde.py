import math
import os

import numpy as np
import pytest

from regdirichlet import fields as fl
from regdirichlet import pde
from regdirichlet.pathkit import ConfigurationError


def heat(T=1.0):
    return pde.CauchyProblem(phi=lambda x: x[..., 0] ** 2, T=T, time_homogeneous=True)


def mms(T=1.0):
    return pde.CauchyProblem(
        h=lambda t, x: -1.5 * np.sin(x[..., 0]) * np.exp(-t),
        phi=lambda x: np.sin(x[..., 0]) * math.exp(-T),
        boundary=lambda t, x: np.sin(x[..., 0]) * np.exp(-t), T=T, time_homogeneous=True)


class TestOperator:
    def test_heat_quadratic_is_annihilated(self):
        x = np.linspace(-2, 2, 11)[:, None]
        t = np.full(11, 0.3)
        np.testing.assert_allclose(pde.apply_L0(fl.heat_quadratic(), heat(), t, x), 0, atol=1e-14)

    def test_constant_is_annihilated(self):
        prob = pde.CauchyProblem(b=lambda t, x: -x, sigma=pde.const_sigma(0.7))
        x = np.linspace(-2, 2, 5)[:, None]
        assert np.all(pde.apply_L0(fl.constant(3.0), prob, np.zeros(5), x) == 0)

    def test_linear_field_gives_drift_product(self):
        c = np.array([1.0, -2.0])
        prob = pde.CauchyProblem(b=lambda t, x: np.broadcast_to([0.5, 0.25], x.shape),
                                 sigma=pde.const_sigma(1.0, 2), n=2)
        x = np.random.default_rng(0).normal(size=(6, 2))
        np.testing.assert_allclose(pde.apply_L0(fl.linear(c), prob, np.zeros(6), x), 0.0, atol=1e-14)

    def test_half_trace_factor(self):
        # u = x^2 under sigma = 2: L0 u = 1/2 * 4 * 2 = 4
        prob = pde.CauchyProblem(sigma=pde.const_sigma(2.0))
        out = pde.apply_L0(fl.quadratic(), prob, np.zeros(1), np.zeros((1, 1)))
        assert out[0] == pytest.approx(4.0)

    def test_requires_second_derivatives(self):
        with pytest.raises(ConfigurationError):
            pde.apply_L0(fl.heat_smoothed_abs(), heat(), np.zeros(1), np.zeros((1, 1)))


class TestCauchySolver:
    def test_heat_benchmark(self):
        u = pde.solve_backward_cauchy(heat(), pde.Resolution(8.0, 401, 400))
        x = u.axes[0]
        exact = x[None, :] ** 2 + (1.0 - u.times[:, None])
        mask = np.abs(x) <= 2
        assert np.max(np.abs(u.values - exact)[:, mask]) < 1e-3

    def test_terminal_data_is_exact(self):
        prob = heat()
        u = pde.solve_backward_cauchy(prob, pde.Resolution(4.0, 81, 10))
        assert np.array_equal(u.values[-1], prob.phi(u.axes[0][:, None]))

    def test_zero_data_gives_zero(self):
        u = pde.solve_backward_cauchy(pde.CauchyProblem(), pde.Resolution(4.0, 41, 10))
        assert np.all(u.values == 0)

    def test_manufactured_refinement(self):
        errs = []
        for nx, nt in ((41, 20), (81, 40), (161, 80)):
            u = pde.solve_backward_cauchy(mms(), pde.Resolution(4.0, nx, nt))
            exact = np.sin(u.axes[0])[None, :] * np.exp(-u.times)[:, None]
            errs.append(np.max(np.abs(u.values - exact)))
        assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5

    def test_l0_residual_shrinks(self):
        r = [pde.l0_residual(pde.solve_backward_cauchy(mms(), pde.Resolution(4.0, nx, nt)), mms())
             for nx, nt in ((41, 20), (81, 40))]
        assert r[0] / r[1] >= 1.5

    def test_maximum_principle_implicit(self):
        prob = pde.CauchyProblem(phi=lambda x: np.minimum(np.abs(x[..., 0]), 1.0),
                                 time_homogeneous=True)
        u = pde.solve_backward_cauchy(prob, pde.Resolution(4.0, 161, 50), theta=1.0)
        assert u.values.min() >= -1e-12 and u.values.max() <= 1.0 + 1e-12

    def test_explicit_blowup_is_reported(self):
        with pytest.raises(pde.InstabilityError, match="dt <= dx"):
            pde.solve_backward_cauchy(heat(), pde.Resolution(4.0, 201, 50), theta=0.0)

    def test_two_dimensional_correlated(self):
        S = np.array([[1.0, 0.0], [0.5, 0.8]])
        prob = pde.CauchyProblem(sigma=lambda t, x: np.broadcast_to(S, x.shape[:-1] + (2, 2)),
                                 phi=lambda x: x[..., 0] * x[..., 1], n=2, time_homogeneous=True,
                                 boundary=lambda t, x: x[..., 0] * x[..., 1] + 0.5 * (1.0 - t))
        u = pde.solve_backward_cauchy(prob, pde.Resolution(3.0, 41, 10))
        X, Y = np.meshgrid(u.axes[0], u.axes[1], indexing="ij")
        # E[(x + S1 W)(y + S2 W)] = xy + (S S^T)_{12} (T - t)
        exact = X * Y + (S @ S.T)[0, 1] * 1.0
        inner = (np.abs(X) <= 1.5) & (np.abs(Y) <= 1.5)
        assert np.max(np.abs(u.values[0] - exact)[inner]) < 1e-10

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            pde.solve_backward_cauchy(pde.CauchyProblem(n=3))
        with pytest.raises(ConfigurationError):
            pde.solve_backward_cauchy(heat(), pde.Resolution(4.0, 41, 10), theta=1.5)
        with pytest.raises(ConfigurationError):
            pde.Resolution(1.0, 3, 10)

    def test_interpolated_field_refuses_outside_domain(self):
        u = pde.solve_backward_cauchy(heat(), pde.Resolution(4.0, 81, 20)).as_field()
        assert u.u(np.array([0.5]), np.array([[0.5]]))[0] == pytest.approx(0.75, abs=0.02)
        with pytest.raises(ConfigurationError):
            u.u(np.array([0.5]), np.array([[5.0]]))

    def test_default_boundary_is_first_order_in_time(self):
        prob = pde.CauchyProblem(h=lambda t, x: np.ones(np.shape(x)[:-1]),
                                 phi=lambda x: np.zeros(np.shape(x)[:-1]))
        assert prob.boundary_values(0.25, np.zeros((1, 1)))[0] == pytest.approx(-0.75)


class TestStrongSequence:
    def test_kinked_terminal_gaps_shrink(self):
        prob = pde.CauchyProblem(phi=lambda x: np.abs(x[..., 0]), time_homogeneous=True)
        seq = pde.mollify_strong_sequence(prob, 6, pde.Resolution(4.0, 401, 100))
        assert seq.converges
        assert seq.log["phi"][-1] < seq.log["phi"][0]
        assert seq.final.meta["mollification_scale"] == pytest.approx(1 / 6)

    def test_single_member_is_undecided(self):
        seq = pde.mollify_strong_sequence(heat(), 1, pde.Resolution(4.0, 81, 10))
        assert seq.converges is None

    def test_smooth_data_barely_moves(self):
        prob = pde.CauchyProblem(phi=lambda x: np.cos(x[..., 0]), time_homogeneous=True)
        seq = pde.mollify_strong_sequence(prob, 4, pde.Resolution(4.0, 201, 50),
                                          scales=[0.01, 0.005])
        assert seq.log["u"][1] < 1e-4

    def test_rejects_empty(self):
        with pytest.raises(ConfigurationError):
            pde.mollify_strong_sequence(heat(), 0)


class TestElliptic:
    def test_manufactured_cos(self):
        lam = 2.0
        ep = pde.EllipticProblem(lam=lam, h=lambda x: (0.5 - lam) * np.cos(x[..., 0]),
                                 boundary=lambda x: np.cos(x[..., 0]))
        u = pde.solve_elliptic(ep, pde.Resolution(4.0, 401, 1))
        assert np.max(np.abs(u.values - np.cos(u.axes[0]))) < 1e-3
        assert pde.elliptic_residual(u, ep) < 1e-8

    def test_refined_grid_oracle(self):
        ep = pde.EllipticProblem(lam=1.0, sigma=pde.const_sigma_x(np.sqrt(2.0)),
                                 h=lambda x: x[..., 0] ** 2 - 2)
        fine = pde.solve_elliptic(ep, pde.Resolution(2.0, 1601, 1))
        errs = []
        for nx in (101, 201, 401):
            u = pde.solve_elliptic(ep, pde.Resolution(2.0, nx, 1))
            step = (1601 - 1) // (nx - 1)
            errs.append(np.max(np.abs(u.values - fine.values[::step])))
        assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5
        assert errs[-1] < 1e-3

    def test_zero_source_gives_zero(self):
        u = pde.solve_elliptic(pde.EllipticProblem(lam=1.0), pde.Resolution(4.0, 41, 1))
        assert np.all(u.values == 0)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            pde.EllipticProblem(lam=0.0)

    def test_singular_system(self):
        # lam equal to minus the lowest discrete eigenvalue of u''/2 on the box
        L, nx = 2.0, 5
        dx = 2 * L / (nx - 1)
        mu = (2 - 2 * math.cos(math.pi / (nx - 1))) / dx ** 2
        ep = pde.EllipticProblem(lam=0.5 * mu, h=lambda x: 1 + x[..., 0] ** 2)
        with pytest.raises(pde.SingularSystemError):
            pde.solve_elliptic(ep, pde.Resolution(L, nx, 1))


class TestMollifier:
    def test_preserves_constants_and_smooths(self):
        f = pde.gaussian_mollify(lambda x: np.ones(np.shape(x)[:-1]), 0.1)
        np.testing.assert_allclose(f(np.zeros((3, 1))), 1.0)
        g = pde.gaussian_mollify(lambda x: np.abs(x[..., 0]), 0.1)
        assert g(np.zeros((1, 1)))[0] == pytest.approx(0.1 * math.sqrt(2 / math.pi), rel=1e-3)


def test_write_field(tmp_path):
    u = pde.solve_backward_cauchy(heat(), pde.Resolution(2.0, 11, 4))
    names = pde.write_field(u, tmp_path)
    assert names == ["slice_000000.csv", "slice_000004.csv"]
    lines = (tmp_path / "slice_000004.csv").read_text().splitlines()
    assert lines[0] == "x1,u,du_dx1"
    assert len(lines) == 12
    meta = (tmp_path / "field.meta").read_text()
    assert "scheme" in meta
    assert not any(n.endswith(".tmp") for n in os.listdir(tmp_path))
