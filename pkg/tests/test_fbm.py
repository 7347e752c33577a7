import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fracsde.errors import CholeskyError, DomainError
from fracsde.fbm import (
    HurstParam,
    TimeGrid,
    as_hurst,
    c_h,
    cholesky_factor,
    covariance,
    covariance_matrix,
    induced_covariance,
    kernel_K,
    kernel_dK_dt,
    kernel_matrix,
    sample_cholesky,
    sample_from_bm,
)

# c_H and K_H(1, 0.3) from 30-digit mpmath quadrature of the defining integral
C_H_REF = {0.1: 0.35768577342233514, 0.25: 0.64599800374075197, 0.4: 0.88072568336372688}
K_REF = {0.1: 0.59004325853404125, 0.25: 0.79976468943422984, 0.4: 0.92888533761203433}


def kernel_by_quad(h, t, s):
    # QUADPACK's algebraic weight carries the (u - s)^{H-1/2} singularity
    inner = integrate.quad(lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0),
                           epsabs=1e-14, epsrel=1e-13)[0]
    a = h - 0.5
    return c_h(h) * ((t / s) ** a * (t - s) ** a - a * s ** (-a) * inner)


class TestHurstParam:
    @pytest.mark.parametrize("h", [0.0, 0.5, 0.7, -0.1, float("nan")])
    def test_rejects_out_of_range(self, h):
        with pytest.raises(DomainError):
            HurstParam(h)

    def test_rejects_bad_dimension(self):
        with pytest.raises(DomainError):
            HurstParam(0.2, 0)

    @pytest.mark.parametrize("dim,bound", [(1, 0.25), (2, 0.1), (3, 1 / 16)])
    def test_uniqueness_bound(self, dim, bound):
        assert HurstParam(0.05, dim).uniqueness_bound == pytest.approx(bound)

    def test_uniqueness_flag(self):
        assert HurstParam(0.2).uniqueness_ok
        assert not HurstParam(0.3).uniqueness_ok
        assert not HurstParam(0.2, 2).uniqueness_ok

    def test_as_hurst(self):
        hp = as_hurst(0.2, 3)
        assert hp == HurstParam(0.2, 3)
        assert as_hurst(hp) is hp
        assert as_hurst(hp, 1).dim == 1


class TestTimeGrid:
    def test_points(self):
        g = TimeGrid(2.0, 4)
        np.testing.assert_allclose(g.points, [0, 0.5, 1, 1.5, 2])
        assert g.dt == 0.5
        assert len(g) == 5

    @pytest.mark.parametrize("horizon,n", [(0.0, 4), (-1.0, 4), (math.inf, 4), (1.0, 0), (1.0, 2.5)])
    def test_rejects(self, horizon, n):
        with pytest.raises(DomainError):
            TimeGrid(horizon, n)

    def test_from_points(self):
        assert TimeGrid.from_points(np.linspace(0, 3, 7)) == TimeGrid(3.0, 6)
        with pytest.raises(DomainError, match="uniform"):
            TimeGrid.from_points([0.0, 0.1, 0.3])


class TestCovariance:
    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    def test_diagonal(self, h):
        t = np.array([0.1, 0.5, 2.0])
        np.testing.assert_allclose(covariance(h, t, t), t ** (2 * h), rtol=1e-14)

    def test_symmetric_and_zero_at_origin(self):
        assert covariance(0.2, 0.3, 0.7) == covariance(0.2, 0.7, 0.3)
        assert covariance(0.2, 0.0, 0.7) == 0.0

    def test_negative_time(self):
        with pytest.raises(DomainError):
            covariance(0.2, -0.1, 0.5)

    def test_matrix_positive_definite(self):
        m = covariance_matrix(0.2, np.linspace(0.01, 1, 50))
        assert np.linalg.eigvalsh(m).min() > 0

    @given(st.floats(0.01, 0.49), st.floats(0.01, 5), st.floats(0.01, 5))
    def test_cauchy_schwarz(self, h, t, s):
        r = covariance(h, t, s)
        assert r * r <= covariance(h, t, t) * covariance(h, s, s) * (1 + 1e-12)


class TestKernel:
    @pytest.mark.parametrize("h", sorted(C_H_REF))
    def test_constant(self, h):
        assert c_h(h) == pytest.approx(C_H_REF[h], rel=1e-14)

    @pytest.mark.parametrize("h", sorted(K_REF))
    @pytest.mark.parametrize("method", ["beta", "quadrature"])
    def test_reference_value(self, h, method):
        assert kernel_K(h, 1.0, 0.3, method=method) == pytest.approx(K_REF[h], rel=1e-12)

    @pytest.mark.parametrize("h", [0.05, 0.2, 0.45])
    @pytest.mark.parametrize("t,s", [(1.0, 0.999), (1.0, 0.5), (3.0, 0.01), (0.2, 0.1)])
    def test_against_direct_quadrature(self, h, t, s):
        assert kernel_K(h, t, s) == pytest.approx(kernel_by_quad(h, t, s), rel=1e-9)

    def test_methods_agree(self):
        t = np.array([1.0, 1.0, 2.0, 5.0])
        s = np.array([1e-6, 0.6, 1.999, 0.3])
        for h in (0.1, 0.3):
            np.testing.assert_allclose(kernel_K(h, t, s, "quadrature"), kernel_K(h, t, s), rtol=1e-12)

    @given(st.floats(0.02, 0.48), st.floats(0.05, 0.95), st.floats(0.1, 10))
    @settings(max_examples=50)
    def test_homogeneous(self, h, ratio, lam):
        base = kernel_K(h, 1.0, ratio)
        assert kernel_K(h, lam, lam * ratio) == pytest.approx(lam ** (h - 0.5) * base, rel=1e-10)

    def test_diverges_at_diagonal(self):
        # the (t - s)^{H-1/2} factor dominates as s -> t
        h = 0.2
        vals = [kernel_K(h, 1.0, 1 - e) for e in (1e-2, 1e-4, 1e-6)]
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] * 1e-6 ** (0.5 - h) == pytest.approx(c_h(h), rel=1e-4)

    @pytest.mark.parametrize("h", [0.1, 0.25, 0.4])
    @pytest.mark.parametrize("t", [0.5, 1.0])
    def test_isometry(self, h, t):
        # int_0^t K(t, s)^2 ds = R_H(t, t)
        val = integrate.quad(lambda s: kernel_K(h, t, s) ** 2, 0, t, limit=400,
                             points=[t / 2, 0.99 * t])[0]
        assert val == pytest.approx(t ** (2 * h), rel=1e-6)

    def test_covariance_from_kernel(self):
        h, t, s = 0.3, 1.0, 0.6
        val = integrate.quad(lambda r: kernel_K(h, t, r) * kernel_K(h, s, r), 0, s, limit=400,
                             points=[0.3, 0.59])[0]
        assert val == pytest.approx(covariance(h, t, s), rel=1e-5)

    @pytest.mark.parametrize("t,s", [(0.5, 0.5), (0.5, 0.7), (1.0, 0.0), (1.0, -0.2)])
    def test_domain(self, t, s):
        with pytest.raises(DomainError):
            kernel_K(0.2, t, s)

    def test_unknown_method(self):
        with pytest.raises(DomainError, match="quadrature"):
            kernel_K(0.2, 1.0, 0.5, method="simpson")


class TestKernelDerivative:
    def test_substitution(self):
        want = c_h(0.25) * (-0.25) * 2 ** -0.25 * 0.5 ** -1.25
        assert kernel_dK_dt(0.25, 1.0, 0.5) == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("h", [0.1, 0.3])
    @pytest.mark.parametrize("t,s", [(1.0, 0.5), (2.0, 0.2)])
    def test_finite_difference(self, h, t, s):
        e = 1e-5
        fd = (kernel_K(h, t + e, s) - kernel_K(h, t - e, s)) / (2 * e)
        assert kernel_dK_dt(h, t, s) == pytest.approx(fd, rel=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            kernel_dK_dt(0.2, 0.5, 0.5)


class TestCholesky:
    def test_factorises_covariance(self):
        grid = TimeGrid(1.0, 64)
        low = cholesky_factor(0.2, grid)
        np.testing.assert_allclose(low @ low.T, covariance_matrix(0.2, grid.points[1:]), atol=1e-12)
        assert not low.flags.writeable

    def test_failure_names_parameters(self, monkeypatch):
        def boom(_):
            raise np.linalg.LinAlgError("not positive definite")

        monkeypatch.setattr(np.linalg, "cholesky", boom)
        with pytest.raises(CholeskyError, match=r"H=0\.123.*grid size 17"):
            cholesky_factor(0.123, TimeGrid(1.0, 17))


class TestKernelMatrix:
    def test_lower_triangular_and_scaling(self):
        k1 = kernel_matrix(0.2, TimeGrid(1.0, 32))
        k2 = kernel_matrix(0.2, TimeGrid(2.0, 32))
        assert np.all(np.triu(k1, 1) == 0)
        np.testing.assert_allclose(k2, k1 * 2 ** -0.3, rtol=1e-14)

    def test_cells_are_averages(self):
        h, grid = 0.3, TimeGrid(1.0, 16)
        k = kernel_matrix(h, grid)
        t = grid.points
        for j, i in [(16, 0), (16, 15), (9, 4), (3, 0)]:
            lo, hi = t[i], t[i + 1]
            val = integrate.quad(lambda s: kernel_K(h, t[j], s), lo, hi, limit=200)[0] / grid.dt
            assert k[j - 1, i] == pytest.approx(val, rel=1e-9)

    def test_induced_covariance_improves(self):
        errs = []
        for n in (64, 128, 256):
            g = TimeGrid(1.0, n)
            errs.append(np.abs(induced_covariance(0.2, g) - covariance_matrix(0.2, g.points[1:])).max())
        assert errs[0] > errs[1] > errs[2]


class TestSamplers:
    grid = TimeGrid(1.0, 64)

    @pytest.mark.parametrize("sampler", [sample_cholesky, sample_from_bm])
    def test_shapes_and_origin(self, sampler):
        b = sampler(0.2, self.grid, dim=2, n_paths=5, seed=1)
        assert b.bh.shape == (5, 2, 65)
        assert np.all(b.bh[:, :, 0] == 0)
        assert len(b) == 5 and b[3].index == 3 and b[-1].dim == 2

    @pytest.mark.parametrize("sampler", [sample_cholesky, sample_from_bm])
    def test_reproducible_and_thread_invariant(self, sampler):
        a = sampler(0.2, self.grid, n_paths=300, seed=9, batch_size=64)
        b = sampler(0.2, self.grid, n_paths=300, seed=9, batch_size=64, threads=3)
        c = sampler(0.2, self.grid, n_paths=300, seed=10, batch_size=64)
        assert np.array_equal(a.bh, b.bh)
        assert not np.array_equal(a.bh, c.bh)

    def test_paths_do_not_depend_on_batch_size(self):
        a = sample_cholesky(0.2, self.grid, n_paths=50, seed=3, batch_size=7)
        b = sample_cholesky(0.2, self.grid, n_paths=50, seed=3, batch_size=256)
        np.testing.assert_array_equal(a.bh, b.bh)

    def test_cholesky_variance(self):
        bh = sample_cholesky(0.3, self.grid, n_paths=4000, seed=5).bh[:, 0, -1]
        assert abs(bh.var() - 1.0) < 4 * math.sqrt(2 / 4000)

    def test_brownian_coupling(self):
        b = sample_from_bm(0.2, self.grid, n_paths=4000, seed=6)
        dw = np.diff(b.w[:, 0], axis=-1)
        assert abs(dw.var() / self.grid.dt - 1) < 0.02
        k = kernel_matrix(0.2, self.grid)
        np.testing.assert_allclose(b.bh[:, 0, 1:], dw @ k.T, atol=1e-12)

    def test_invalid(self):
        with pytest.raises(DomainError):
            sample_cholesky(0.2, self.grid, n_paths=0)
        with pytest.raises(DomainError):
            sample_cholesky(0.2, self.grid, seed=-1)
        with pytest.raises(DomainError):
            sample_from_bm(0.6, self.grid)


class TestExport:
    def test_csv_and_manifest(self, tmp_path):
        b = sample_from_bm(0.2, TimeGrid(1.0, 8), dim=2, n_paths=2, seed=4)
        b.to_csv(tmp_path / "p.csv", index=1)
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "t,W_1,W_2,BH_1,BH_2"
        assert len(lines) == 10
        row = [float(x) for x in lines[3].split(",")]
        assert row[3] == b.bh[1, 0, 2]
        b.write_manifest(tmp_path / "m.json")
        m = json.loads((tmp_path / "m.json").read_text())
        assert m["h"] == 0.2 and m["seed"] == 4 and m["sampler"] == "kernel"
        assert m["n_steps"] == 8 and "version" in m

    def test_cholesky_csv_has_no_brownian_columns(self, tmp_path):
        b = sample_cholesky(0.2, TimeGrid(1.0, 8), n_paths=1)
        b.to_csv(tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,BH_1"
