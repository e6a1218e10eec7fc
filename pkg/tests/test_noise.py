import numpy as np
import pytest
from scipy.stats import unitary_group

from isnls.errors import GridMismatch, NormDiverges, ScalingGridError
from isnls.noise import (DenseKernel, FourierDiagonal, SeparableKernel, WienerPath,
                         default_operator, hs_norm, sample_wiener, scale_operator,
                         scaled_white_noise_check, smooth_operator, stochastic_convolution,
                         trace_density)
from isnls.spectral import Field, Grid, free_phase, random_field, sobolev_norm


class TestHilbertSchmidt:
    def test_diagonal_closed_form(self):
        g = Grid.cube(8, 3)
        op = default_operator(g, 0.5, sigma=2.0)
        ref = 0.5 * np.sqrt(np.sum((1 + g.xi2) ** -2.0))
        assert hs_norm(op, 0.0, homogeneous=False) == pytest.approx(ref, rel=1e-14)
        # the homogeneous seminorm drops the zero mode
        assert hs_norm(op, 0.0) == pytest.approx(np.sqrt(ref**2 - 0.25), rel=1e-14)

    @pytest.mark.parametrize("s", [0.0, 0.75, 1.0])
    def test_diagonal_matches_dense(self, s):
        g = Grid.cube(8, 3)
        op = default_operator(g, 0.3)
        dense = op.to_dense()
        assert hs_norm(dense, s) == pytest.approx(hs_norm(op, s), rel=1e-10)
        assert hs_norm(dense, s, homogeneous=False) == pytest.approx(
            hs_norm(op, s, homogeneous=False), rel=1e-10)

    def test_separable_matches_dense(self, rng):
        g = Grid.cube(8, 2, length=3.0)
        op = SeparableKernel(random_field(g, rng, decay=1.0), random_field(g, rng))
        ref = sobolev_norm(op.g, 0.75, True) * sobolev_norm(op.h, 0.0)
        assert hs_norm(op, 0.75) == pytest.approx(ref, rel=1e-12)
        assert hs_norm(op.to_dense(), 0.75) == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
    def test_basis_independent(self, s, rng):
        g = Grid.cube(8, 2, length=2.0)
        op = DenseKernel(rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64)), g)
        q = unitary_group.rvs(64, random_state=7)
        total = 0.0
        for n in range(64):
            e_n = Field(g, (q[:, n] / np.sqrt(g.cell_volume)).reshape(g.shape), False)
            total += sobolev_norm(op.apply(e_n), s, True) ** 2
        assert hs_norm(op, s) == pytest.approx(np.sqrt(total), rel=1e-10)

    def test_diverges(self):
        g = Grid.cube(8, 1)
        op = FourierDiagonal(g, np.full(8, np.inf))
        with pytest.raises(NormDiverges), np.errstate(invalid="ignore"):
            hs_norm(op, 0.0)

    def test_smooth_operator_consistent(self, rng):
        g = Grid.cube(8, 2)
        op = default_operator(g, 1.0)
        m = (1 + g.xi2) ** -0.25
        a = hs_norm(smooth_operator(op, m), 0.5)
        b = hs_norm(smooth_operator(op.to_dense(), m), 0.5)
        assert a == pytest.approx(b, rel=1e-10)

    def test_trace_density(self, rng):
        g = Grid.cube(8, 2)
        op = default_operator(g, 0.7)
        np.testing.assert_allclose(trace_density(op), trace_density(op.to_dense()), rtol=1e-10)
        assert np.sum(trace_density(op)) * g.cell_volume == pytest.approx(hs_norm(op, 0.0, homogeneous=False) ** 2, rel=1e-12)

    def test_grid_checks(self):
        g = Grid.cube(8, 1)
        with pytest.raises(GridMismatch):
            DenseKernel(np.zeros((8, 7)), g)
        with pytest.raises(GridMismatch):
            default_operator(g).apply(Field.zeros(Grid.cube(10, 1)))


class TestWiener:
    def test_variance_and_mean(self):
        g = Grid.cube(16, 2)
        dt = 0.01
        inc = sample_wiener(3, dt, 200, g).increments
        assert np.mean(np.abs(inc) ** 2) / (2 * dt) == pytest.approx(1.0, rel=0.05)
        se = np.sqrt(dt / inc.size)
        assert abs(inc.real.mean()) < 5 * se and abs(inc.imag.mean()) < 5 * se
        # real and imaginary parts carry equal variance and are uncorrelated
        assert np.var(inc.real) / np.var(inc.imag) == pytest.approx(1.0, rel=0.05)
        assert abs(np.mean(inc.real * inc.imag)) < 5 * dt / np.sqrt(inc.size)

    def test_deterministic(self):
        g = Grid.cube(8, 1)
        a = sample_wiener(11, 0.1, 70, g).increments
        b = sample_wiener(11, 0.1, 70, g).increments
        c = sample_wiener(12, 0.1, 70, g).increments
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_coarsen_sums_fine_increments(self):
        g = Grid.cube(8, 1)
        fine = sample_wiener(5, 0.01, 12, g)
        coarse = fine.coarsen(4)
        assert coarse.dt == pytest.approx(0.04) and coarse.steps == 3
        f = fine.increments
        expected = [f[4 * i].copy() + f[4 * i + 1] + f[4 * i + 2] + f[4 * i + 3] for i in range(3)]
        assert np.array_equal(coarse.increments, np.stack(expected))
        twice = fine.coarsen(2).coarsen(2)
        assert np.array_equal(twice.increments, coarse.increments)
        with pytest.raises(ValueError):
            fine.coarsen(5)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            sample_wiener(0, 0.0, 3, Grid.cube(8, 1))


class TestStochasticConvolution:
    def test_scalar_recursion(self):
        g = Grid.cube(8, 1, length=5.0)
        op = default_operator(g, 0.4)
        path = sample_wiener(1, 0.05, 40, g)
        out = stochastic_convolution(op, path)
        phase = free_phase(g, 0.05)
        incs = path.increments
        for k in range(8):
            psi = 0j
            for j in range(40):
                psi = phase[k] * (psi - 1j * op.coeffs[k] * incs[j, k])
            assert abs(out.snapshots[-1].values[k] - psi) <= 1e-15 * abs(psi)

    def test_second_moment(self):
        g = Grid.cube(256, 1)
        op = FourierDiagonal(g, np.ones(256))
        dt, steps = 0.01, 50
        out = stochastic_convolution(op, sample_wiener(9, dt, steps, g), save_times=[steps * dt])
        t = out.times[-1]
        ratio = np.abs(out.snapshots[-1].values) ** 2 / (2 * t)
        assert abs(ratio.mean() - 1) < 5 / np.sqrt(256)

    def test_linear_in_operator(self):
        g = Grid.cube(8, 2)
        op = default_operator(g, 0.3)
        path = sample_wiener(2, 0.01, 30, g)
        a = stochastic_convolution(op, path).snapshots[-1].values
        b = stochastic_convolution(op.scaled_coeffs(2.0), path).snapshots[-1].values
        assert np.array_equal(2 * a, b)
        other = default_operator(g, 0.2, sigma=1.0)
        c = stochastic_convolution(other, path).snapshots[-1].values
        both = FourierDiagonal(g, op.coeffs + other.coeffs)
        d = stochastic_convolution(both, path).snapshots[-1].values
        np.testing.assert_allclose(d, a + c, atol=1e-15)

    def test_adapted(self):
        g = Grid.cube(8, 1)
        op = default_operator(g)
        long = stochastic_convolution(op, sample_wiener(4, 0.1, 20, g))
        short = stochastic_convolution(op, sample_wiener(4, 0.1, 7, g))
        assert np.array_equal(long.snapshots[7].values, short.snapshots[-1].values)

    def test_save_options(self):
        g = Grid.cube(8, 1)
        op = default_operator(g)
        path = sample_wiener(4, 0.1, 20, g)
        assert len(stochastic_convolution(op, path, save_stride=5)) == 5
        out = stochastic_convolution(op, path, save_times=[0.5, 1.0])
        np.testing.assert_allclose(out.times, [0.5, 1.0])

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            stochastic_convolution(default_operator(Grid.cube(8, 1)),
                                   sample_wiener(0, 0.1, 2, Grid.cube(10, 1)))


class TestScaling:
    @pytest.mark.parametrize("d,lam,s", [(1, 2.0, 0.0), (2, 4.0, 0.75), (3, 2.0, 1.0)])
    def test_hs_norm_ratio(self, d, lam, s):
        g = Grid.cube(8, d)
        op = default_operator(g, 0.5)
        ratio = hs_norm(scale_operator(op, lam), s) / hs_norm(op, s)
        assert ratio == pytest.approx(lam ** (-2 + d / 2 - s), rel=1e-12)

    def test_diagonal_matches_kernel_dilation(self):
        g = Grid.cube(8, 2)
        op = default_operator(g, 1.0)
        lam = 2.0
        via_diag = scale_operator(op, lam).kernel_matrix()
        via_kernel = scale_operator(op.to_dense(), lam).kernel_matrix()
        np.testing.assert_allclose(via_diag, via_kernel, atol=1e-13)

    def test_separable(self, rng):
        g = Grid.cube(8, 1)
        op = SeparableKernel(random_field(g, rng), random_field(g, rng))
        sc = scale_operator(op, 4.0)
        np.testing.assert_allclose(sc.kernel_matrix(), op.kernel_matrix() / 16, atol=1e-14)
        assert sc.grid.box == (4 * g.box[0],)

    def test_identity_and_errors(self):
        g = Grid.cube(8, 1)
        op = default_operator(g)
        assert scale_operator(op, 1.0) is op
        with pytest.raises(ScalingGridError):
            scale_operator(op, 0.5)
        with pytest.raises(ScalingGridError):
            scale_operator(op, 2.0, target_grid=g)

    @pytest.mark.parametrize("lam,a1,a2", [(2.0, 2.0, 1.0), (4.0, 1.0, 0.5)])
    def test_scaled_white_noise(self, lam, a1, a2):
        rep = scaled_white_noise_check(lam, a1, a2, samples=3000)
        assert abs(rep["variance_ratio"] - 1) < 5 * rep["variance_ratio_se"]
        assert abs(rep["neighbour_covariance"]) < 5 * rep["neighbour_covariance_se"]
        assert rep["qv_ratio"] == pytest.approx(1.0, rel=1e-12)

    def test_white_noise_rejects_fractional_ratio(self):
        with pytest.raises(ScalingGridError):
            scaled_white_noise_check(3.0, 0.5, 0.0)


def test_path_dataclass_fields():
    p = WienerPath(1, 0.1, 4, Grid.cube(8, 1))
    assert p.n_modes == 8 and p.dt == 0.1
