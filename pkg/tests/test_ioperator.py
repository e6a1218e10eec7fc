import numpy as np
import pytest
from hypothesis import given, strategies as st

from isnls.errors import GridMismatch, InvalidRegularity
from isnls.ioperator import (apply_I, build_multiplier, commutator, energy, mass,
                             modified_energy, multilinear_symbol)
from isnls.spectral import Field, Grid, plane_wave, random_field, sobolev_norm

from conftest import brute_cubic


class TestMultiplier:
    def test_identity_region(self):
        m = build_multiplier(8, 0.7, Grid.cube(8, 1))
        assert m(np.array([4.0]))[0] == 1.0
        assert m(np.array([8.0]))[0] == 1.0

    def test_power_law_region(self):
        m = build_multiplier(8, 0.5, Grid.cube(8, 1))
        assert m(np.array([32.0]))[0] == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("profile", ["smoothstep", "smootherstep"])
    def test_non_increasing_and_c1(self, profile):
        m = build_multiplier(5, 0.8, Grid.cube(8, 1), profile)
        r = np.linspace(5, 10, 64)
        vals = m(r)
        assert np.all(np.diff(vals) <= 0)
        # one-sided slopes at both ends of the transition match the outer laws
        h = 1e-6
        left = (m(np.array([5 + h]))[0] - 1.0) / h
        assert abs(left) < 1e-4
        right_in = (m(np.array([10.0]))[0] - m(np.array([10 - h]))[0]) / h
        right_out = -(1 - 0.8) * (5 / 10) ** 0.2 / 10
        assert right_in == pytest.approx(right_out, rel=1e-3)

    def test_values_in_unit_interval(self):
        g = Grid.cube(32, 2)
        m = build_multiplier(3, 0.6, g)
        lower = (3 / np.maximum(g.xi_norm, 3)) ** 0.4
        assert np.all(m.values <= 1.0)
        assert np.all(m.values >= lower * (1 - 1e-15))

    @pytest.mark.parametrize("s", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_regularity(self, s):
        with pytest.raises(InvalidRegularity):
            build_multiplier(4, s, Grid.cube(8, 1))

    def test_rejects_small_N(self):
        with pytest.raises(ValueError):
            build_multiplier(0.5, 0.9, Grid.cube(8, 1))


class TestApplyI:
    def test_band_limited_unchanged(self, rng):
        g = Grid.cube(16, 3)
        f = random_field(g, rng, kmax=4)
        out = apply_I(f, build_multiplier(4, 0.9, g))
        np.testing.assert_allclose(out.coefficients(), f.coefficients(), atol=1e-15)

    def test_identity_for_large_N(self, rng):
        g = Grid.cube(8, 2)
        f = random_field(g, rng)
        assert build_multiplier(g.max_wavenumber, 0.9, g).is_identity
        out = apply_I(f, build_multiplier(g.max_wavenumber, 0.9, g))
        np.testing.assert_allclose(out.coefficients(), f.coefficients(), atol=1e-15)

    def test_grid_mismatch(self, rng):
        f = random_field(Grid.cube(8, 2), rng)
        with pytest.raises(GridMismatch):
            apply_I(f, build_multiplier(2, 0.9, Grid.cube(10, 2)))

    @pytest.mark.parametrize("s", [0.86, 0.95])
    def test_h1_bound_on_random_fields(self, s):
        g = Grid.cube(32, 2)
        N = 4
        m = build_multiplier(N, s, g)
        rng = np.random.default_rng(5)
        for _ in range(100):
            f = random_field(g, rng, decay=rng.uniform(0, 3))
            lhs = sobolev_norm(apply_I(f, m), 1.0, True)
            assert lhs <= 2 ** (1 - s) * N ** (1 - s) * sobolev_norm(f, s, True) * (1 + 1e-12)


class TestEnergies:
    def test_zero(self):
        g = Grid.cube(8, 3)
        assert mass(Field.zeros(g)) == 0.0 and energy(Field.zeros(g)) == 0.0

    def test_plane_wave(self):
        g = Grid.cube(8, 3, length=4.0)
        a, k = 0.3 - 0.4j, (1, 2, 0)
        xi2 = sum((2 * np.pi * kj / 4.0) ** 2 for kj in k)
        f = plane_wave(g, k, a)
        V = g.volume
        assert mass(f) == pytest.approx(abs(a) ** 2 * V, rel=1e-12)
        assert energy(f) == pytest.approx(0.5 * abs(a) ** 2 * xi2 * V + 0.25 * abs(a) ** 4 * V, rel=1e-12)

    def test_quadrature_oracle(self, rng):
        g = Grid.cube(16, 2, length=3.0)
        f = random_field(g, rng, decay=2.0, kmax=5)
        # gradient by explicit differentiation of the trigonometric interpolant
        u = f.physical()
        c = np.fft.fftn(u)
        grad2 = 0.0
        for xi in g.wavevectors:
            du = np.fft.ifftn(1j * xi * c)
            grad2 += np.sum(np.abs(du) ** 2) * g.cell_volume
        ref = 0.5 * grad2 + 0.25 * np.sum(np.abs(u) ** 4) * g.cell_volume
        assert energy(f) == pytest.approx(ref, rel=1e-10)

    def test_modified_equals_plain_when_band_limited(self, rng):
        g = Grid.cube(16, 3)
        f = random_field(g, rng, kmax=3)
        assert modified_energy(f, build_multiplier(4, 0.9, g)) == pytest.approx(energy(f), rel=1e-14)

    def test_single_high_mode(self):
        g = Grid.cube(32, 1)
        N, s, a = 2.0, 0.8, 0.7
        f = plane_wave(g, (8,), a)  # |xi| = 4N
        mv = (N / 8) ** (1 - s)
        V = g.volume
        ref = 0.5 * mv**2 * abs(a) ** 2 * 64 * V + 0.25 * (mv * abs(a)) ** 4 * V
        assert modified_energy(f, build_multiplier(N, s, g)) == pytest.approx(ref, rel=1e-12)


class TestCommutator:
    def test_vanishes_when_band_limited(self, rng):
        g = Grid.cube(16, 3)
        N = 6
        f = random_field(g, rng, kmax=N / 3)
        c = commutator(f, build_multiplier(N, 0.9, g))
        assert np.sqrt(mass(c)) <= 1e-12 * np.sqrt(mass(f)) ** 3

    def test_vanishes_for_large_N(self, rng):
        g = Grid.cube(8, 2)
        f = random_field(g, rng)
        c = commutator(f, build_multiplier(3 * g.max_wavenumber, 0.9, g))
        assert np.max(np.abs(c.values)) < 1e-13

    def test_two_mode_against_symbol(self):
        g = Grid.cube(16, 3)
        N, s = 1.5, 0.9
        imult = build_multiplier(N, s, g)
        c = np.zeros(g.shape, complex)
        c[1, 0, 0] = 0.8
        c[6, 0, 0] = 0.3 - 0.2j  # |xi| = 4N
        f = Field(g, c, True)
        got = commutator(f, imult).coefficients()
        # oracle: sum over triples with weight m(k) - m(k1) m(k2) m(k3)
        modes = {1: 0.8, 6: 0.3 - 0.2j}
        ref = np.zeros(g.shape, complex)
        for k1, a in modes.items():
            for k2, b in modes.items():
                for k3, d in modes.items():
                    k = k1 - k2 + k3
                    if not -8 <= k < 8:
                        continue
                    w = imult(np.array([abs(k)]))[0] - np.prod(imult(np.array([k1, k2, k3], float)))
                    ref[k % 16, 0, 0] += w * a * np.conj(b) * d / g.volume
        np.testing.assert_allclose(got, ref, atol=1e-13)
        # the same weights written through the multilinear symbol
        k = 1 - 6 + 6
        m = imult
        w1 = m(np.array([abs(k)]))[0] - np.prod(m(np.array([1.0, 6.0, 6.0])))
        w2 = np.prod(m(np.array([1.0, 6.0, 6.0]))) * multilinear_symbol(m, abs(k), 1.0, 6.0, 6.0)
        assert w1 == pytest.approx(w2, rel=1e-13)

    def test_brute_force_oracle(self, rng):
        g = Grid.cube(16, 3)
        imult = build_multiplier(2, 0.85, g)
        c = np.zeros(g.shape, complex)
        for _ in range(5):
            idx = tuple(rng.integers(-5, 6, size=3) % 16)
            c[idx] = rng.standard_normal() + 1j * rng.standard_normal()
        got = commutator(Field(g, c, True), imult).coefficients()
        m = imult.values
        ref = m * brute_cubic(c, g) - brute_cubic(m * c, g)
        np.testing.assert_allclose(got, ref, atol=1e-8 * np.max(np.abs(ref)))

    @given(st.floats(0.01, 0.3))
    def test_symbol_vanishes_at_low_frequency(self, frac):
        m = build_multiplier(12, 0.9, Grid.cube(8, 1))
        r = 12 * frac
        assert multilinear_symbol(m, r, r, r / 2, r / 3) == 0.0
