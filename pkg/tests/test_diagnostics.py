import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from isnls.diagnostics import (LedgerAccumulator, SpaceTimeField, commutator_pairing,
                               growth_tracker, ito_energy_ledger, ito_expectation_report,
                               is_admissible, mass_ledger, pairing_integrands,
                               predicted_growth_exponent, strichartz_norm, taper_window,
                               xsb_norm)
from isnls.errors import LedgerNeedsPath
from isnls.integrator import SimConfig, run
from isnls.ioperator import build_multiplier
from isnls.noise import default_operator, hs_norm
from isnls.spectral import Field, Grid, plane_wave, random_field


@pytest.fixture
def noisy_run(rng):
    g = Grid.cube(8, 3)
    u0 = random_field(g, rng, decay=1.0, kmax=4, norm=2.0)
    cfg = SimConfig(g, N=2, s=0.9, dt=0.01, t_end=0.2, phi=default_operator(g, 0.3), seed=6)
    return cfg, u0


class TestLedger:
    def test_deterministic_identity_multiplier(self, rng):
        g = Grid.cube(16, 2)
        u0 = random_field(g, rng, decay=2.0, kmax=5, norm=3.0)
        cfg = SimConfig(g, N=100, dt=1e-3, t_end=0.1)
        tr = run(cfg, u0)
        led = ito_energy_ledger(tr, None, cfg.multiplier())
        assert abs(led.commutator_term) < 1e-12
        assert led.martingale_grad == 0 and led.hs_drift == 0 and led.quadratic_trace == 0
        e = tr.series["energy"]
        assert led.residual == pytest.approx(e[-1] - e[0], abs=1e-13)
        assert abs(led.residual) < 1e-5 * e[0]

    def test_streaming_equals_replay(self, noisy_run):
        cfg, u0 = noisy_run
        imult = cfg.multiplier()
        acc = LedgerAccumulator(cfg.grid, cfg.dt, imult, cfg.phi)
        tr = run(cfg, u0, observers=(acc,))
        a = acc.ledger().as_dict()
        b = ito_energy_ledger(tr, cfg.phi, imult).as_dict()
        for key in a:
            assert a[key] == pytest.approx(b[key], rel=1e-13, abs=1e-15), key

    def test_terminal_energy_matches_series(self, noisy_run):
        cfg, u0 = noisy_run
        tr = run(cfg, u0)
        led = ito_energy_ledger(tr, cfg.phi, cfg.multiplier())
        assert led.e_final == pytest.approx(tr.series["modified_energy"][-1], rel=1e-13)
        assert led.e0 == pytest.approx(tr.series["modified_energy"][0], rel=1e-13)
        assert led.tau == pytest.approx(cfg.t_end)

    def test_second_order_terms_nonnegative(self, noisy_run):
        cfg, u0 = noisy_run
        led = ito_energy_ledger(run(cfg, u0), cfg.phi, cfg.multiplier())
        assert led.quadratic_trace >= 0 and led.hs_drift >= 0
        assert led.quadratic_trace_realized >= 0 and led.hs_drift_realized >= 0

    def test_hs_drift_closed_form(self, noisy_run):
        cfg, u0 = noisy_run
        imult = cfg.multiplier()
        led = ito_energy_ledger(run(cfg, u0), cfg.phi, imult)
        g = cfg.grid
        rate = float(np.sum(g.xi2 * np.abs(imult.values * cfg.phi.coeffs) ** 2))
        assert led.hs_drift == pytest.approx(cfg.t_end * rate, rel=1e-12)

    def test_needs_path(self, noisy_run):
        cfg, u0 = noisy_run
        tr = run(cfg, u0)
        tr.path = None
        with pytest.raises(LedgerNeedsPath):
            ito_energy_ledger(tr, cfg.phi, cfg.multiplier())

    def test_needs_every_step(self, noisy_run):
        cfg, u0 = noisy_run
        tr = run(cfg.with_(save_stride=2), u0)
        with pytest.raises(ValueError):
            ito_energy_ledger(tr, cfg.phi, cfg.multiplier())

    def test_unfinished_accumulator(self):
        g = Grid.cube(8, 1)
        acc = LedgerAccumulator(g, 0.1, build_multiplier(2, 0.9, g))
        with pytest.raises(RuntimeError):
            acc.ledger()

    def test_report(self, noisy_run):
        cfg, u0 = noisy_run
        imult = cfg.multiplier()
        leds = [ito_energy_ledger(run(cfg.with_(seed=k), u0), cfg.phi, imult) for k in range(4)]
        with pytest.warns(UserWarning):
            rep = ito_expectation_report(leds, cfg.t_end, cfg.phi, imult)
        assert rep["paths"] == 4
        assert set(rep["budget_terms"]) == {"initial", "hs_drift", "quartic_noise", "commutator"}
        assert rep["budget"] >= rep["sup_energy"]["mean"] * (1 - 1e-12)


class TestMassLedger:
    def test_drift_rate(self):
        g = Grid.cube(8, 3)
        phi = default_operator(g, 0.4)
        u0 = Field.zeros(g)
        cfg = SimConfig(g, dt=0.01, t_end=0.2, phi=phi)
        trs = [run(cfg.with_(seed=k), u0) for k in range(200)]
        rep = mass_ledger(trs, phi)
        assert rep["rate"] == pytest.approx(2 * hs_norm(phi, 0.0, homogeneous=False) ** 2)
        fin = rep["final"]
        assert abs(fin["mean"] - rep["predicted_drift"][-1]) < 4 * fin["se"]

    def test_deterministic_mass_constant(self, rng):
        g = Grid.cube(8, 2)
        tr = run(SimConfig(g, dt=0.01, t_end=0.1), random_field(g, rng, norm=2.0))
        rep = mass_ledger(tr, None)
        assert rep["max_relative_variation"] < 1e-13
        assert np.all(rep["predicted_drift"] == 0)


class TestXsb:
    def test_b_zero_is_windowed_l2(self, rng):
        g = Grid.cube(8, 2)
        tr = run(SimConfig(g, dt=0.01, t_end=0.3), random_field(g, rng, decay=1.0))
        stf = SpaceTimeField.from_trajectory(tr)
        w = taper_window(stf.nt, 0.1)
        ref = math.sqrt(0.01 * sum(
            w[j] ** 2 * float(np.sum((1 + g.xi2) ** 0.5 * np.abs(f.coefficients()) ** 2))
            for j, f in enumerate(tr.snapshots)))
        assert xsb_norm(stf, 0.5, 0.0) == pytest.approx(ref, rel=1e-12)

    def test_monotone_in_s_and_b(self, rng):
        g = Grid.cube(8, 2)
        stf = SpaceTimeField.free_flow(random_field(g, rng), 0.01, 64)
        vals = [xsb_norm(stf, s, 0.3) for s in (0.0, 0.5, 1.0)]
        assert vals[0] < vals[1] < vals[2]
        assert xsb_norm(stf, 0.5, 0.1) < xsb_norm(stf, 0.5, 0.4)

    def test_free_mode_modulation_invariance(self):
        # with |xi|^2 on the tau lattice the free solution's spectrum is a
        # shifted copy of the constant's, so only the <xi>^s factor differs
        g = Grid.cube(8, 1)
        nt, pad = 200, 2
        dt = math.pi / 800  # M dt = pi / 2, so xi^2 = 4 is one lattice step
        const = SpaceTimeField.free_flow(plane_wave(g, (0,)), dt, nt)
        mode = SpaceTimeField.free_flow(plane_wave(g, (2,)), dt, nt)
        for b in (0.3, 0.49):
            ratio = xsb_norm(mode, 0.7, b, pad=pad) / xsb_norm(const, 0.7, b, pad=pad)
            assert ratio == pytest.approx(5 ** 0.35, rel=1e-8)

    def test_refinement_stable(self):
        g = Grid.cube(8, 1)
        f = plane_wave(g, (2,))
        coarse = xsb_norm(SpaceTimeField.free_flow(f, 0.01, 100), 0.5, 0.4)
        fine = xsb_norm(SpaceTimeField.free_flow(f, 0.005, 200), 0.5, 0.4)
        assert fine == pytest.approx(coarse, rel=0.02)

    def test_taper_window(self):
        w = taper_window(100, 0.1)
        assert w[50] == 1 and 0 < w[0] < 0.05
        np.testing.assert_allclose(w, w[::-1])


class TestStrichartz:
    def test_admissible(self):
        assert is_admissible(2, 6, 3) and is_admissible(math.inf, 2, 3)
        assert is_admissible(4, 4, 2) and not is_admissible(2, math.inf, 2)
        assert not is_admissible(3, 3, 3)

    def test_zero(self):
        g = Grid.cube(8, 3)
        stf = SpaceTimeField(g, 0.1, np.zeros((5,) + g.shape))
        assert strichartz_norm(stf, 2, 6) == 0.0

    def test_plane_wave_value(self):
        g = Grid.cube(8, 3, length=2.0)
        a = 0.7
        stf = SpaceTimeField.free_flow(plane_wave(g, (1, 0, 0), a), 0.01, 51)
        T = 0.5
        assert strichartz_norm(stf, 2, 6) == pytest.approx(a * g.volume ** (1 / 6) * T**0.5, rel=1e-12)
        assert strichartz_norm(stf, math.inf, 2) == pytest.approx(a * g.volume**0.5, rel=1e-12)

    def test_inadmissible_warns(self):
        g = Grid.cube(8, 1)
        stf = SpaceTimeField.free_flow(plane_wave(g, (1,)), 0.1, 4)
        with pytest.warns(UserWarning):
            strichartz_norm(stf, 3, 3)


class TestPairing:
    def test_translation_invariant(self, rng):
        g = Grid.cube(16, 2)
        imult = build_multiplier(3, 0.9, g)
        f = random_field(g, rng, decay=1.0)
        shifted = Field(g, np.roll(f.physical(), (3, 5), axis=(0, 1)), False)
        a, b = pairing_integrands(f, imult), pairing_integrands(shifted, imult)
        np.testing.assert_allclose(a, b, rtol=1e-10)
        # a non-lattice translation acts by a phase on each coefficient
        x0 = np.array([0.37, -1.1])
        phase = np.exp(-1j * sum(xi * x for xi, x in zip(g.wavevectors, x0)))
        moved = Field(g, f.coefficients() * phase, True)
        np.testing.assert_allclose(pairing_integrands(moved, imult), a, rtol=1e-10)

    def test_band_limited_zero(self, rng):
        g = Grid.cube(16, 3)
        imult = build_multiplier(6, 0.9, g)
        f = random_field(g, rng, kmax=2)
        p1, p2 = pairing_integrands(f, imult)
        assert abs(p1) < 1e-12 and abs(p2) < 1e-12

    def test_time_integral(self, rng):
        g = Grid.cube(16, 1)
        imult = build_multiplier(2, 0.8, g)
        tr = run(SimConfig(g, N=2, s=0.8, dt=0.01, t_end=0.1), random_field(g, rng, norm=2.0))
        vals = np.array([pairing_integrands(f, imult) for f in tr.snapshots])
        ref = abs(np.trapezoid(vals[:, 0], tr.snapshot_times))
        assert commutator_pairing(tr, imult)[0] == pytest.approx(ref, rel=1e-12)


class TestGrowth:
    def test_predicted_exponent(self):
        assert predicted_growth_exponent(0.9) == pytest.approx(0.5)
        assert predicted_growth_exponent(0.95, 0.01) == pytest.approx(0.06 / (0.35 - 0.02))
        with pytest.raises(ValueError):
            predicted_growth_exponent(0.8)

    def test_fit_recovers_power(self):
        g = Grid.cube(8, 1)
        t = np.linspace(0, 10, 101)
        trs = [SimpleNamespace(times=t, config=SimulationStub(g, 0.9), snapshot_times=t,
                               series={"hs_norm": np.sqrt(c * (1 + t) ** 0.5)})
               for c in (1.0, 2.0)]
        rep = growth_tracker(trs, t_min=5.0)
        assert rep["predicted_exponent"] == pytest.approx(0.5)
        # (1 + t)^0.5 over [5, 10] fitted against t has a slope just below 0.5
        assert 0.4 < rep["running_max_fit"]["slope"] < 0.5
        np.testing.assert_allclose(rep["mean_sq_norm"], 1.5 * (1 + t) ** 0.5, rtol=1e-14)


def SimulationStub(grid, s):
    return SimpleNamespace(grid=grid, s=s)


def test_no_stray_warnings(rng):
    g = Grid.cube(8, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        xsb_norm(SpaceTimeField.free_flow(random_field(g, rng), 0.01, 10), 0.0, 0.4)
