import json
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma

from fracsde.errors import DomainError, NumericalError
from fracsde.fbm import TimeGrid, kernel_K, sample_cholesky, sample_from_bm
from fracsde.fracops import volterra_scale
from fracsde.girsanov import (
    LatticeFunction,
    compute_v,
    compute_v_batch,
    exp_moment_bound,
    gaussian_occupation,
    girsanov_record,
    krylov_rhs,
    l2_constant,
    log_inv_density,
    log_inv_density_batch,
    shift_from_v,
    v_bound,
    v_constant,
    v_l2_sq,
)
from fracsde.sde import drift_catalog, euler_solve

UNIT = drift_catalog("constant_capped", value=1.0, R=1e6)


def unit_solution(h, n=512, seed=3):
    d = sample_from_bm(h, TimeGrid(1.0, n), n_paths=1, seed=seed)
    return euler_solve(UNIT, 0.0, d[0])


class TestConstants:
    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    def test_v_constant(self, h):
        assert v_constant(h) == pytest.approx(gamma(1.5 - h) / gamma(2 - 2 * h), rel=1e-14)
        assert l2_constant(h) == pytest.approx(v_constant(h) ** 2, rel=1e-14)

    def test_reference_values(self):
        # Gamma(1.25) / Gamma(1.5)
        assert v_bound(0.25, 1.0, 1.0) == pytest.approx(1.0227656721, rel=1e-9)
        assert v_bound(0.25, 2.0, 0.25) == pytest.approx(2 * 1.0227656721 * 0.25**0.25, rel=1e-9)
        assert exp_moment_bound(0.25, 1.0, 1.0) == pytest.approx(math.exp(0.5 * 1.0227656721**2),
                                                                   rel=1e-9)
        assert exp_moment_bound(0.25, 1.0, 1.0) == pytest.approx(1.6872, abs=1e-4)

    def test_array_bound(self):
        s = np.array([0.0, 0.5, 1.0])
        np.testing.assert_allclose(v_bound(0.2, 1.0, s), v_constant(0.2) * s**0.3)

    def test_overflow(self):
        with pytest.raises(NumericalError, match="overflows"):
            exp_moment_bound(0.2, 100.0, 10.0)

    @pytest.mark.parametrize("args", [(0.2, 1.0, 0.0), (0.2, -1.0, 1.0)])
    def test_bad_moment_args(self, args):
        with pytest.raises(DomainError):
            exp_moment_bound(*args)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            v_bound(0.2, 1.0, -0.1)


class TestComputeV:
    @pytest.mark.parametrize("h", [0.15, 0.3, 0.45])
    def test_constant_drift_closed_form(self, h):
        x = unit_solution(h, n=1024)
        v = compute_v(UNIT, x, h)[0]
        s = x.grid.points[1:]
        want = v_constant(h) * s ** (0.5 - h)
        assert np.max(np.abs(v.values[1:] - want) / want) < 1e-2

    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    def test_shift_reproduces_the_integrated_drift(self, h):
        # independent quadrature of int_0^t K_H(t, s) u(s) ds for the constant-drift shift
        u = lambda s: shift_from_v(v_constant(h) * s ** (0.5 - h), h)
        for t in (0.3, 1.0):
            val = integrate.quad(lambda s: kernel_K(h, t, s) * u(s), 0, t, limit=200)[0]
            assert val == pytest.approx(t, rel=1e-6)

    def test_shift_scale(self):
        assert shift_from_v(1.0, 0.2) == pytest.approx(1 / volterra_scale(0.2))

    def test_bound_holds_for_bounded_drift(self):
        h = 0.2
        d = sample_from_bm(h, TimeGrid(1.0, 256), n_paths=20, seed=5)
        b = drift_catalog("sign_capped")
        x = euler_solve(b, 0.0, d)
        v = compute_v_batch(b, x.values, d.grid, h)
        bound = v_bound(h, b.sup_norm, d.grid.points[1:])
        assert np.all(np.abs(v[:, 0, 1:]) <= bound * 1.02)

    def test_two_dimensions(self):
        h = 0.3
        b = drift_catalog("constant_capped", dim=2, value=1.0, R=1e6)
        d = sample_from_bm(h, TimeGrid(1.0, 256), dim=2, n_paths=1, seed=6)
        v = compute_v(b, euler_solve(b, [0.0, 0.0], d[0]), h)
        assert len(v) == 2 and [f.label for f in v] == ["v_1", "v_2"]
        np.testing.assert_allclose(v[0].values, v[1].values)

    def test_wrong_input(self):
        with pytest.raises(DomainError):
            compute_v(UNIT, np.zeros(5), 0.2)
        grid = TimeGrid(1.0, 8)
        with pytest.raises(DomainError):
            compute_v_batch(UNIT, np.zeros((1, 1, 5)), grid, 0.2)


class TestDensity:
    def test_zero_drift(self):
        h = 0.2
        d = sample_from_bm(h, TimeGrid(1.0, 64), n_paths=1, seed=7)
        b = drift_catalog("zero")
        x = euler_solve(b, 0.0, d[0])
        assert log_inv_density(compute_v(b, x, h), d[0], h) == 0.0

    def test_formula(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(3, 2, 9))
        w = np.cumsum(rng.normal(size=(3, 2, 9)), axis=-1)
        dt, h = 0.125, 0.3
        u = v / volterra_scale(h)
        ito = np.sum(u[..., :-1] * np.diff(w, axis=-1), axis=(1, 2))
        sq = np.sum(u * u, axis=1)
        l2 = dt * (sq.sum(axis=-1) - 0.5 * (sq[:, 0] + sq[:, -1]))
        np.testing.assert_allclose(log_inv_density_batch(v, w, dt, h), -ito - 0.5 * l2)

    def test_l2_trapezoid(self):
        grid = TimeGrid(1.0, 1000)
        v = grid.points[None, None, :] * np.ones((1, 2, 1))
        assert v_l2_sq(v, grid.dt)[0] == pytest.approx(2 / 3, rel=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            log_inv_density_batch(np.zeros((1, 1, 5)), np.zeros((1, 1, 6)), 0.1, 0.2)

    def test_needs_brownian_path(self):
        h = 0.2
        d = sample_cholesky(h, TimeGrid(1.0, 16), n_paths=1, seed=8)
        b = drift_catalog("zero")
        x = euler_solve(b, 0.0, d[0])
        with pytest.raises(DomainError, match="Brownian"):
            log_inv_density(compute_v(b, x, h), d[0], h)

    def test_record(self):
        h = 0.25
        x = unit_solution(h, n=256, seed=9)
        v, rec = girsanov_record(UNIT, x, h)
        assert rec.seed == 9 and rec.path_index == 0 and rec.drift_sup == 1.0
        assert rec.v_l2_bound == pytest.approx(l2_constant(h))
        assert rec.v_l2_sq <= rec.v_l2_bound * 1.01
        assert rec.shift_l2_sq == pytest.approx(rec.v_l2_sq / volterra_scale(h) ** 2)
        assert rec.v_pointwise_ratio == pytest.approx(1.0, abs=1e-2)
        back = json.loads(rec.to_json())
        assert back["log_inv_density"] == rec.log_inv_density
        assert sorted(back) == sorted(rec.__dataclass_fields__)


class TestOccupation:
    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_unit_exponent(self, dim):
        assert gaussian_occupation(1.0, 0.3, dim, 0.7) == pytest.approx(1.0)

    @pytest.mark.parametrize("g,h,t", [(2.0, 0.25, 1.0), (1.5, 0.1, 0.4), (3.0, 0.4, 2.0)])
    def test_against_quadrature(self, g, h, t):
        s2 = t ** (2 * h)
        f = lambda y: (2 * math.pi * s2) ** (-g / 2) * math.exp(-g * y * y / (2 * s2))
        want = integrate.quad(f, -np.inf, np.inf)[0]
        assert gaussian_occupation(g, h, 1, t) == pytest.approx(want, rel=1e-9)

    def test_reference(self):
        assert gaussian_occupation(2.0, 0.25, 1, 1.0) == pytest.approx(0.28209479, rel=1e-7)

    @pytest.mark.parametrize("g,t", [(0.5, 1.0), (2.0, 0.0)])
    def test_domain(self, g, t):
        with pytest.raises(DomainError):
            gaussian_occupation(g, 0.2, 1, t)


class TestKrylovRhs:
    @pytest.mark.parametrize("beta", [1.5, 2.0, 3.0])
    def test_interval(self, beta):
        g = LatticeFunction.ball_indicator(2.0, 0.5, dim=1, n_x=64)
        assert krylov_rhs(g, beta, 0.2) == pytest.approx((2.0 * 1.0) ** (1 / beta), rel=1e-12)

    def test_disc(self):
        g = LatticeFunction.ball_indicator(1.0, 1.0, dim=2, n_x=400)
        assert krylov_rhs(g, 2.0, 0.2) == pytest.approx(math.sqrt(math.pi), rel=1e-2)

    def test_exponent_threshold(self):
        g = LatticeFunction.ball_indicator(1.0, 1.0, dim=2, n_x=8)
        with pytest.raises(DomainError, match="exceed"):
            krylov_rhs(g, 1.4, 0.2)
        assert krylov_rhs(g, 1.41, 0.2) > 0

    @pytest.mark.parametrize("values,dim", [(np.ones(4), 1), (-np.ones((1, 4)), 1),
                                            (np.full((1, 4), np.nan), 1)])
    def test_lattice_validation(self, values, dim):
        with pytest.raises(DomainError):
            LatticeFunction(values, 0.1, 0.1, dim)
