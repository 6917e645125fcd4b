import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regdirichlet.pathkit import (
    ConfigurationError, ExponentialKernel, NonFiniteCoefficientError, PathEnsemble,
    SamplePath, SeparableKernel, StoppingRule, brownian_ensemble, gen_bounded_variation,
    gen_brownian, gen_convolution_wd, gen_independent, gen_sde_euler, make_grid,
    path_functional, read_path_csv, stop_at, stop_path, stopping_index, stream,
    write_path_csv,
)


def unit_sigma(s, x):
    return np.ones(x.shape + (1,))


class TestGrid:
    def test_points_and_dt(self):
        g = make_grid(0.0, 1.0, 4)
        assert g.dt == 0.25
        np.testing.assert_array_equal(g.points, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_index_is_left_point(self):
        g = make_grid(0.0, 1.0, 10)
        assert g.index(0.35) == 3
        assert g.index(0.3) == 3
        assert g.index(-1.0) == 0
        assert g.index(5.0) == 10

    @pytest.mark.parametrize("args", [(1.0, 1.0, 10), (0.0, 1.0, 1), (-0.5, 1.0, 10),
                                      (0.0, float("inf"), 10), (0.0, 1.0, 2.5)])
    def test_rejects_bad_grids(self, args):
        with pytest.raises(ConfigurationError):
            make_grid(*args)

    @given(st.integers(min_value=2, max_value=500), st.floats(0.0, 10.0), st.floats(0.01, 5.0))
    def test_last_point_is_T(self, steps, t0, length):
        g = make_grid(t0, t0 + length, steps)
        assert len(g.points) == steps + 1
        assert abs(g.points[-1] - (t0 + length)) <= 1e-12 * (1 + t0 + length)


class TestPaths:
    def test_constant_extension_beyond_T(self):
        g = make_grid(0.0, 1.0, 4)
        p = SamplePath(g, [0.0, 1.0, 2.0, 3.0, 4.0])
        assert p.evaluate(2.0)[0] == 4.0
        assert p.evaluate(0.6)[0] == 2.0

    def test_rejects_non_finite_and_wrong_length(self):
        g = make_grid(0.0, 1.0, 4)
        with pytest.raises(ConfigurationError):
            SamplePath(g, [0.0, np.nan, 0.0, 0.0, 0.0])
        with pytest.raises(ConfigurationError):
            SamplePath(g, [0.0, 1.0])

    def test_csv_round_trip_is_exact(self, small_grid):
        p = gen_brownian(small_grid, 2, seed=3)
        buf = io.StringIO()
        write_path_csv(p, buf)
        assert buf.getvalue().splitlines()[0] == "s,x1,x2"
        q = read_path_csv(io.StringIO(buf.getvalue()), small_grid)
        np.testing.assert_array_equal(p.values, q.values)


class TestBrownian:
    def test_same_stream_same_path(self, small_grid):
        a = gen_brownian(small_grid, 1, seed=11, index=4)
        b = gen_brownian(small_grid, 1, seed=11, index=4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_ensemble_member_equals_single_stream(self, small_grid):
        ens = brownian_ensemble(small_grid, 1, 8, seed=11)
        np.testing.assert_array_equal(ens.values[5], gen_brownian(small_grid, 1, 11, index=5).values)

    def test_worker_count_does_not_change_output(self, small_grid):
        a = brownian_ensemble(small_grid, 2, 17, seed=2, workers=1)
        b = brownian_ensemble(small_grid, 2, 17, seed=2, workers=5)
        np.testing.assert_array_equal(a.values, b.values)

    def test_namespaces_are_disjoint(self, small_grid):
        a = gen_brownian(small_grid, 1, 5, namespace="filtration")
        b = gen_brownian(small_grid, 1, 5, namespace="independent")
        assert not np.array_equal(a.values, b.values)

    def test_increment_variance(self, small_grid):
        ens = brownian_ensemble(small_grid, 1, 200, seed=1)
        dW2 = np.diff(ens.values, axis=1) ** 2
        mean = dW2.mean()
        se = dW2.std(ddof=1) / np.sqrt(dW2.size)
        assert abs(mean - small_grid.dt) <= 4 * se

    def test_stream_is_philox(self):
        assert type(stream(0).bit_generator).__name__ == "Philox"


class TestEuler:
    def test_deterministic_drift_is_exact(self):
        g = make_grid(0.0, 1.0, 8)
        W = brownian_ensemble(g, 1, 3, seed=0)
        S = gen_sde_euler(g, lambda s, x: np.full_like(x, 2.0), lambda s, x: np.zeros(x.shape + (1,)),
                          [1.0], W)
        np.testing.assert_allclose(S.values[:, :, 0], np.broadcast_to(1.0 + 2.0 * g.points, (3, 9)),
                                   rtol=0, atol=1e-14)

    def test_meta_increments_rebuild_path(self, small_grid, small_W):
        S = gen_sde_euler(small_grid, lambda s, x: -x, unit_sigma, [0.5], small_W)
        rebuilt = 0.5 + np.concatenate([np.zeros((100, 1, 1)),
                                        np.cumsum(S.meta["drift"] + S.meta["noise"], axis=1)], axis=1)
        np.testing.assert_allclose(S.values, rebuilt, atol=1e-12)
        np.testing.assert_array_equal(S.meta["noise"], np.diff(small_W.values, axis=1))

    def test_workers_bitwise(self, small_grid, small_W):
        drift = lambda s, x: np.sin(x) - 0.3 * x  # noqa: E731
        a = gen_sde_euler(small_grid, drift, unit_sigma, [0.1], small_W, workers=1)
        b = gen_sde_euler(small_grid, drift, unit_sigma, [0.1], small_W, workers=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_non_finite_coefficient_reports_step(self, small_grid, small_W):
        def drift(s, x):
            out = np.zeros_like(x)
            if s >= 0.5:
                out[3] = np.nan
            return out
        with pytest.raises(NonFiniteCoefficientError) as info:
            gen_sde_euler(small_grid, drift, unit_sigma, [0.0], small_W)
        assert info.value.step == small_grid.index(0.5)
        assert info.value.paths == (3,)

    def test_path_functional_sees_read_only_prefix(self):
        g = make_grid(0.0, 1.0, 5)
        W = brownian_ensemble(g, 1, 2, seed=0)
        seen = []

        @path_functional
        def drift(s, prefix):
            seen.append(prefix.shape)
            with pytest.raises(ValueError):
                prefix[0, 0, 0] = 1.0
            return np.zeros(prefix.shape[1:])
        gen_sde_euler(g, drift, unit_sigma, [0.0], W)
        assert seen == [(k + 1, 2, 1) for k in range(5)]


class TestOtherProcesses:
    def test_bounded_variation_left_sum(self):
        g = make_grid(0.0, 1.0, 4)
        p = gen_bounded_variation(g, lambda s: np.ones_like(s))
        np.testing.assert_allclose(p.values[:, 0], g.points)

    def test_exponential_kernel_matches_direct_sum(self):
        g = make_grid(0.0, 1.0, 60)
        W = brownian_ensemble(g, 1, 3, seed=4)
        fast = gen_convolution_wd(g, ExponentialKernel(1.5), W)
        slow = gen_convolution_wd(g, lambda s, r: np.exp(-1.5 * (s - r)), W)
        np.testing.assert_allclose(fast.values, slow.values, atol=1e-12)

    def test_unit_separable_kernel_is_driver(self, small_grid, small_W):
        X = gen_convolution_wd(small_grid, SeparableKernel(np.ones_like, np.ones_like), small_W)
        np.testing.assert_allclose(X.values, small_W.values, atol=1e-12)

    def test_independent_deterministic(self, small_grid):
        Z = gen_independent(small_grid, "deterministic", f=np.sin, n_paths=4)
        assert Z.meta["independent"]
        np.testing.assert_array_equal(Z.values[2, :, 0], np.sin(small_grid.points))


class TestStopping:
    def test_level_exit_index(self):
        g = make_grid(0.0, 1.0, 5)
        p = SamplePath(g, [0.0, 0.4, 0.9, 1.2, 0.3, 2.0])
        assert stopping_index(p, StoppingRule("level-exit", level=1.0)) == 3
        assert stopping_index(p, StoppingRule("level-exit", level=5.0)) == 5
        np.testing.assert_array_equal(stop_path(p, StoppingRule("level-exit", level=1.0)).values[:, 0],
                                      [0.0, 0.4, 0.9, 1.2, 1.2, 1.2])

    def test_deterministic_time(self, small_W):
        k = stopping_index(small_W, StoppingRule("deterministic-time", time=0.25))
        assert np.all(k == small_W.grid.index(0.25))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2000))
    def test_stopped_path_frozen_after_index(self, k):
        g = make_grid(0.0, 1.0, 2000)
        p = gen_brownian(g, 1, seed=9)
        q = stop_at(p, k)
        np.testing.assert_array_equal(q.values[:k + 1], p.values[:k + 1])
        assert np.all(q.values[k:] == p.values[k])

    def test_rule_validation(self):
        with pytest.raises(ConfigurationError):
            StoppingRule("level-exit", level=-1.0)
        with pytest.raises(ConfigurationError):
            StoppingRule("sometime")

    def test_ensemble_broadcast(self, small_grid):
        p = gen_brownian(small_grid, 1, seed=1)
        E = PathEnsemble.broadcast(p, 3)
        assert E.n_paths == 3
        np.testing.assert_array_equal(E.values[1], p.values)
