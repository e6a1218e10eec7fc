"""Post-processing diagnostics: Itô energy ledger, mass ledger, space-time norms,
commutator pairings and growth-exponent fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .errors import LedgerNeedsPath
from .ioperator import IMultiplier
from .noise import hs_norm, smooth_operator, trace_density
from .spectral import Field, Grid, cubic_product
from .stats import estimate, loglog_fit

__all__ = [
    "ItoLedger",
    "LedgerAccumulator",
    "ito_energy_ledger",
    "ito_expectation_report",
    "mass_ledger",
    "SpaceTimeField",
    "taper_window",
    "xsb_norm",
    "strichartz_norm",
    "is_admissible",
    "commutator_pairing",
    "pairing_integrands",
    "growth_tracker",
    "predicted_growth_exponent",
]


@dataclass
class ItoLedger:
    """Accumulated right-hand side of the Itô balance for E(I_N u).

    ``residual = e_final - (e0 - commutator_term - martingale_grad
    + martingale_cubic + quadratic_trace + hs_drift)``.
    """

    e0: float
    commutator_term: float
    martingale_grad: float
    martingale_cubic: float
    quadratic_trace: float
    hs_drift: float
    e_final: float
    tau: float
    e_sup: float
    commutator_sup: float
    quadratic_trace_realized: float = 0.0
    hs_drift_realized: float = 0.0

    @property
    def predicted(self) -> float:
        return (self.e0 - self.commutator_term - self.martingale_grad + self.martingale_cubic
                + self.quadratic_trace + self.hs_drift)

    @property
    def residual(self) -> float:
        return self.e_final - self.predicted

    @property
    def pathwise_residual(self) -> float:
        """Defect with both second-order terms integrated against the realized
        quadratic variation sum |dbeta|^2 of the path instead of its mean 2 dt.

        The closed-form terms differ from the realized ones by a mean-zero
        fluctuation of size O(dt^{1/2}), which dominates ``residual`` on a
        single path; this defect is free of it and is O(dt).
        """
        return self.e_final - (self.e0 - self.commutator_term - self.martingale_grad
                               + self.martingale_cubic + self.quadratic_trace_realized
                               + self.hs_drift_realized)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["residual"] = self.residual
        d["pathwise_residual"] = self.pathwise_residual
        return d


class LedgerAccumulator:
    """Streaming left-point (Itô) quadrature of every ledger term.

    Usable as an observer of :func:`isnls.integrator.run` (``step`` before
    every step, ``finish`` at the end), or fed from stored snapshots by
    :func:`ito_energy_ledger`.  Products are pointwise on the
    grid by default, matching the time stepper, so the residual measures the
    time discretization alone.
    """

    def __init__(self, grid: Grid, dt: float, imult: IMultiplier, phi=None, dealiased: bool = False):
        self.grid = grid
        self.dt = dt
        self.m = imult.values
        self.phi = phi
        self.dealiased = dealiased
        self.xi2 = grid.xi2
        self.cv = grid.cell_volume
        self._sq = math.sqrt(self.cv)
        if phi is not None:
            Iphi = smooth_operator(phi, self.m)
            self.rho = trace_density(Iphi)
            self.hs_rate = hs_norm(Iphi, 1.0) ** 2
        else:
            self.rho = None
            self.hs_rate = 0.0
        self.terms = dict(commutator_term=[], martingale_grad=[], martingale_cubic=[],
                          quadratic_trace=[], quadratic_trace_realized=[],
                          hs_drift_realized=[])
        self.e0 = None
        self.e_final = None
        self.e_sup = -math.inf
        self.tau = 0.0
        self._comm_running = 0.0
        self.commutator_sup = 0.0

    def _phys(self, c):
        return sfft.ifftn(c, norm="ortho") / self._sq

    def _spec(self, u):
        return sfft.fftn(u, norm="ortho") * self._sq

    def _cube(self, u: np.ndarray) -> np.ndarray:
        if self.dealiased:
            return cubic_product(Field(self.grid, u, False), True).values
        return (u.real**2 + u.imag**2) * u

    def _energy(self, Ic: np.ndarray, Iu: np.ndarray) -> float:
        return (0.5 * float(np.sum(self.xi2 * np.abs(Ic) ** 2))
                + 0.25 * self.cv * float(np.sum(np.abs(Iu) ** 4)))

    def step(self, n: int, t: float, c: np.ndarray, dbeta: Optional[np.ndarray]) -> None:
        """Accumulate the contribution of step n -> n+1 from the left endpoint."""
        m = self.m
        Ic = m * c
        Iu = self._phys(Ic)
        u = self._phys(c)
        e = self._energy(Ic, Iu)
        if self.e0 is None:
            self.e0 = e
        self.e_sup = max(self.e_sup, e)
        N_Iu = self._cube(Iu)
        IN_c = m * self._spec(self._cube(u))
        comm_c = IN_c - self._spec(N_Iu)
        lap_Ic = -self.xi2 * Ic
        # Parseval: int conj(f) g dx = sum conj(f_hat) g_hat
        comm = float(np.vdot(lap_Ic - IN_c, comm_c).imag) * self.dt
        self.terms["commutator_term"].append(comm)
        self._comm_running += comm
        self.commutator_sup = max(self.commutator_sup, abs(self._comm_running))
        if self.phi is not None and dbeta is not None:
            kick = m * self.phi.noise_increment(dbeta)
            self.terms["martingale_grad"].append(float(np.vdot(lap_Ic, kick).imag))
            self.terms["martingale_cubic"].append(float(np.vdot(self._spec(N_Iu), kick).imag))
            a2 = Iu.real**2 + Iu.imag**2
            q = 2.0 * self.dt * self.cv * float(np.sum(a2 * self.rho))
            self.terms["quadratic_trace"].append(q)
            # second-order Taylor terms of the energy along the actual kick
            k = self._phys(kick)
            proj = (Iu.conj() * k).real
            self.terms["quadratic_trace_realized"].append(
                self.cv * float(np.sum(0.5 * a2 * (k.real**2 + k.imag**2) + proj**2)))
            self.terms["hs_drift_realized"].append(
                0.5 * float(np.sum(self.xi2 * (kick.real**2 + kick.imag**2))))

    def finish(self, n: int, t: float, c: np.ndarray) -> None:
        Ic = self.m * c
        e = self._energy(Ic, self._phys(Ic))
        if self.e0 is None:
            self.e0 = e
        self.e_sup = max(self.e_sup, e)
        self.e_final = e
        self.tau = n * self.dt

    def ledger(self) -> ItoLedger:
        if self.e_final is None:
            raise RuntimeError("ledger has no terminal state; run finished early?")
        tot = {k: math.fsum(v) for k, v in self.terms.items()}
        return ItoLedger(
            e0=self.e0,
            commutator_term=tot["commutator_term"],
            martingale_grad=tot["martingale_grad"],
            martingale_cubic=tot["martingale_cubic"],
            quadratic_trace=tot["quadratic_trace"],
            hs_drift=self.tau * self.hs_rate,
            e_final=self.e_final,
            tau=self.tau,
            e_sup=self.e_sup,
            commutator_sup=self.commutator_sup,
            quadratic_trace_realized=tot["quadratic_trace_realized"],
            hs_drift_realized=tot["hs_drift_realized"],
        )


def _require_every_step(trajectory) -> None:
    st = np.asarray(trajectory.snapshot_times)
    dt = trajectory.config.dt
    expected = np.arange(len(st)) * dt
    if len(st) < 2 or not np.allclose(st, expected, rtol=0, atol=1e-9 * max(dt, 1.0)):
        raise ValueError("trajectory must keep a snapshot at every step (save_stride=1)")


def ito_energy_ledger(trajectory, phi, imult: IMultiplier, dealiased: bool = False) -> ItoLedger:
    """Replay stored snapshots through :class:`LedgerAccumulator`.

    The martingale terms use the increments of the path that drove the run.
    """
    if phi is not None and trajectory.path is None:
        raise LedgerNeedsPath("a stochastic ledger needs the driving Wiener path")
    _require_every_step(trajectory)
    cfg = trajectory.config
    acc = LedgerAccumulator(cfg.grid, cfg.dt, imult, phi, dealiased)
    snaps = trajectory.snapshots
    noise = iter(trajectory.path) if phi is not None else None
    for n in range(len(snaps) - 1):
        db = next(noise) if noise is not None else None
        acc.step(n, n * cfg.dt, snaps[n].coefficients(), db)
    last = len(snaps) - 1
    acc.finish(last, last * cfg.dt, snaps[-1].coefficients())
    return acc.ledger()


def ito_expectation_report(ledgers: Sequence[ItoLedger], T: float, phi, imult: IMultiplier) -> dict:
    """Ensemble means of the ledger against the sup-energy budget

    ``E sup E(I_N u) <= 2 E0 + C (T ||I phi||^2_{dot H^1} + T^2 ||I phi||^4_{dot H^{3/4}}
    + E sup |commutator integral|)``; ``C`` is the smallest constant that makes
    the measured mean satisfy it.
    """
    ledgers = list(ledgers)
    if len(ledgers) < 30:
        warnings.warn(f"only {len(ledgers)} paths; confidence intervals are unreliable")
    if phi is not None:
        Iphi = smooth_operator(phi, imult.values)
        h1 = hs_norm(Iphi, 1.0) ** 2
        h34 = hs_norm(Iphi, 0.75) ** 4
    else:
        h1 = h34 = 0.0
    e0 = estimate([l.e0 for l in ledgers])
    esup = estimate([l.e_sup for l in ledgers])
    comm_sup = estimate([l.commutator_sup for l in ledgers])
    terms = {
        "initial": 2.0 * e0.mean,
        "hs_drift": T * h1,
        "quartic_noise": T**2 * h34,
        "commutator": comm_sup.mean,
    }
    rest = terms["hs_drift"] + terms["quartic_noise"] + terms["commutator"]
    excess = esup.mean - terms["initial"]
    if excess <= 0:
        c_fit = 0.0
    elif rest > 0:
        c_fit = excess / rest
    else:
        c_fit = math.inf
    report = {
        "paths": len(ledgers),
        "T": T,
        "sup_energy": esup.as_dict(),
        "e0": e0.as_dict(),
        "budget_terms": terms,
        "fitted_C": c_fit,
        "budget": terms["initial"] + c_fit * rest if math.isfinite(c_fit) else math.inf,
        "hs_drift_closed_form": [l.tau * h1 for l in ledgers],
    }
    for key in ("martingale_grad", "martingale_cubic", "commutator_term", "quadratic_trace",
                "hs_drift", "residual", "pathwise_residual"):
        report[key] = estimate([getattr(l, key) for l in ledgers]).as_dict()
    return report


def mass_ledger(trajectories, phi) -> dict:
    """Mass drift against ``2 t ||phi||^2_{HS(L^2;L^2)}`` and the sup-mass statistic."""
    if not isinstance(trajectories, (list, tuple)):
        trajectories = [trajectories]
    rate = 0.0 if phi is None else 2.0 * hs_norm(phi, 0.0, homogeneous=False) ** 2
    n = min(len(tr.times) for tr in trajectories)
    times = np.asarray(trajectories[0].times[:n])
    masses = np.array([np.asarray(tr.series["mass"][:n]) for tr in trajectories])
    drift = masses - masses[:, :1]
    per_t = [estimate(drift[:, j]) for j in range(n)]
    sup = masses.max(axis=1)
    return {
        "paths": len(trajectories),
        "times": times,
        "mean_drift": np.array([e.mean for e in per_t]),
        "drift_se": np.array([e.se for e in per_t]),
        "predicted_drift": rate * times,
        "rate": rate,
        "final": per_t[-1].as_dict(),
        "sup_mass": sup,
        "sup_mass_mean": estimate(sup).as_dict(),
        "max_relative_variation": float(np.max(np.abs(drift)) / np.max(np.abs(masses[:, 0])))
        if np.max(np.abs(masses[:, 0])) > 0 else float(np.max(np.abs(drift))),
    }


@dataclass
class SpaceTimeField:
    """Physical samples ``values[j] = u(t0 + j dt)`` on a uniform time window."""

    grid: Grid
    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError("space-time samples do not match the grid")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def window_length(self) -> float:
        return self.nt * self.dt

    @classmethod
    def from_trajectory(cls, trajectory, interval: Optional[tuple] = None) -> "SpaceTimeField":
        times = np.asarray(trajectory.snapshot_times)
        idx = _interval_indices(times, interval)
        dts = np.diff(times[idx])
        if len(dts) and not np.allclose(dts, dts[0]):
            raise ValueError("snapshots are not uniformly spaced")
        dt = float(dts[0]) if len(dts) else trajectory.config.dt
        vals = np.stack([trajectory.snapshots[i].physical() for i in idx])
        return cls(trajectory.config.grid, dt, vals, float(times[idx[0]]))

    @classmethod
    def free_flow(cls, f: Field, dt: float, nt: int) -> "SpaceTimeField":
        c = f.coefficients()
        g = f.grid
        vals = np.stack([Field(g, np.exp(-1j * j * dt * g.xi2) * c, True).physical()
                         for j in range(nt)])
        return cls(g, dt, vals)

    def coefficients(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.dim + 1))
        return sfft.fftn(self.values, axes=axes, norm="ortho") * math.sqrt(self.grid.cell_volume)


def _interval_indices(times: np.ndarray, interval: Optional[tuple]) -> np.ndarray:
    if interval is None:
        return np.arange(len(times))
    a, b = interval
    tol = 1e-9 * max(1.0, abs(b))
    idx = np.flatnonzero((times >= a - tol) & (times <= b + tol))
    if idx.size == 0:
        raise ValueError(f"no samples in interval {interval}")
    return idx


def taper_window(nt: int, margin: float = 0.1) -> np.ndarray:
    """Flat window with raised-cosine ramps over the first and last ``margin`` of samples."""
    w = np.ones(nt)
    m = int(round(margin * nt))
    if m > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(m) + 0.5) / m))
        w[:m] = ramp
        w[nt - m:] = ramp[::-1]
    return w


def xsb_norm(stfield: SpaceTimeField, s: float, b: float, taper: float = 0.1,
             pad: int = 2) -> float:
    """Discrete ``||<xi>^s <tau + |xi|^2>^b u_hat(tau, xi)||_{L^2_tau L^2_xi}``.

    The samples are multiplied by :func:`taper_window` before the time
    transform; ``pad`` zero-pads the time axis.  Normalized so that ``b = 0``
    equals the tapered ``(dt sum_j ||u(t_j)||^2_{H^s})^{1/2}`` exactly.
    """
    c = stfield.coefficients()
    nt = stfield.nt
    w = taper_window(nt, taper).reshape((nt,) + (1,) * stfield.grid.dim)
    c = c * w
    xi2 = stfield.grid.xi2
    sw = (1.0 + xi2) ** s
    if b == 0:
        return math.sqrt(stfield.dt * float(np.sum(sw * (c.real**2 + c.imag**2))))
    M = nt * max(int(pad), 1)
    F = sfft.fft(c, n=M, axis=0) * stfield.dt
    tau = 2 * np.pi * np.fft.fftfreq(M, stfield.dt)
    tau = tau.reshape((M,) + (1,) * stfield.grid.dim)
    weight = sw * (1.0 + (tau + xi2) ** 2) ** b
    tot = float(np.sum(weight * (F.real**2 + F.imag**2)))
    return math.sqrt(tot / (M * stfield.dt))


def is_admissible(q: float, r: float, d: int, tol: float = 1e-12) -> bool:
    """Schrödinger admissibility 2/q + d/r = d/2 with 2 <= q <= inf, excluding (2, inf, 2)."""
    if q < 2 or r < 2:
        return False
    if d == 2 and q == 2 and math.isinf(r):
        return False
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    inv_r = 0.0 if math.isinf(r) else 1.0 / r
    return abs(2 * inv_q + d * inv_r - d / 2) <= tol


def strichartz_norm(data, q: float, r: float, interval: Optional[tuple] = None,
                    s: float = 0.0) -> float:
    """``||<D>^s u||_{L^q_t L^r_x}`` by trapezoidal time quadrature.

    ``data`` is a trajectory or a :class:`SpaceTimeField`.  Inadmissible pairs
    are computed anyway, with a warning.
    """
    if not isinstance(data, SpaceTimeField):
        data = SpaceTimeField.from_trajectory(data, interval)
    grid = data.grid
    if not is_admissible(q, r, grid.dim):
        warnings.warn(f"(q, r) = ({q}, {r}) is not admissible in d = {grid.dim}")
    vals = data.values
    if s != 0:
        axes = tuple(range(1, grid.dim + 1))
        vals = sfft.ifftn(sfft.fftn(vals, axes=axes) * (1.0 + grid.xi2) ** (s / 2), axes=axes)
    axes = tuple(range(1, grid.dim + 1))
    a = np.abs(vals)
    if math.isinf(r):
        lr = a.max(axis=axes)
    else:
        lr = (grid.cell_volume * np.sum(a**r, axis=axes)) ** (1.0 / r)
    if math.isinf(q):
        return float(lr.max())
    if data.nt == 1:
        return 0.0
    return float(trapezoid(lr**q, dx=data.dt) ** (1.0 / q))


def pairing_integrands(field: Field, imult: IMultiplier, dealiased: bool = True) -> tuple:
    """``(int conj(Delta I u) C dx, int conj(I N(u)) C dx)`` with ``C = [I, N](u)``."""
    g = field.grid
    m = imult.values
    c = field.coefficients()
    Ic = m * c
    Iu = Field(g, Ic, True)
    IN_c = m * cubic_product(field, dealiased).coefficients()
    comm_c = IN_c - cubic_product(Iu, dealiased).coefficients()
    lap = -g.xi2 * Ic
    return complex(np.vdot(lap, comm_c)), complex(np.vdot(IN_c, comm_c))


def commutator_pairing(trajectory, imult: IMultiplier, interval: Optional[tuple] = None,
                       dealiased: bool = True) -> tuple:
    """Magnitudes of the two time-integrated commutator pairings over ``interval``.

    Trapezoidal quadrature over the stored snapshots, which must be uniform.
    """
    times = np.asarray(trajectory.snapshot_times)
    idx = _interval_indices(times, interval)
    if len(idx) < 2:
        return 0.0, 0.0
    vals = np.array([pairing_integrands(trajectory.snapshots[i], imult, dealiased) for i in idx])
    t = times[idx]
    p1 = trapezoid(vals[:, 0], t)
    p2 = trapezoid(vals[:, 1], t)
    return float(abs(p1)), float(abs(p2))


def predicted_growth_exponent(s: float, theta: float = 0.0) -> float:
    """Exponent of T in the polynomial bound for ||u(T)||^2_{H^s}."""
    den = 3.0 * (s - 5.0 / 6.0) - 2.0 * theta
    if den <= 0:
        raise ValueError("exponent undefined for s <= 5/6 + 2 theta / 3")
    return (1.0 - s + theta) / den


def growth_tracker(trajectories, s: Optional[float] = None, t_min: Optional[float] = None,
                   theta: float = 0.0) -> dict:
    """Power-law fits of ``||u(t)||^2_{H^s}``: the running max of the ensemble
    mean, and the mean itself, over ``t >= t_min`` (default: a tenth of the horizon)."""
    if not isinstance(trajectories, (list, tuple)):
        trajectories = [trajectories]
    n = min(len(tr.times) for tr in trajectories)
    times = np.asarray(trajectories[0].times[:n])
    rows = []
    for tr in trajectories:
        if s is None or s == tr.config.s:
            rows.append(np.asarray(tr.series["hs_norm"][:n]) ** 2)
        else:
            st = np.asarray(tr.snapshot_times)
            if len(st) != len(tr.times):
                raise ValueError("recomputing at a new s needs a snapshot per sample")
            w = (1.0 + tr.config.grid.xi2) ** s
            rows.append(np.array([float(np.sum(w * np.abs(f.coefficients()) ** 2))
                                  for f in tr.snapshots[:n]]))
    s_used = trajectories[0].config.s if s is None else s
    data = np.array(rows)
    mean = np.array([math.fsum(sorted(col)) / len(col) for col in data.T])
    running = np.maximum.accumulate(mean)
    if t_min is None:
        t_min = times[-1] / 10.0
    sel = (times >= t_min) & (times > 0)
    report = {
        "s": s_used,
        "times": times,
        "mean_sq_norm": mean,
        "running_max": running,
        "running_max_fit": loglog_fit(times[sel], running[sel]).as_dict(),
        "mean_fit": loglog_fit(times[sel], mean[sel]).as_dict() if np.all(mean[sel] > 0) else None,
    }
    try:
        report["predicted_exponent"] = predicted_growth_exponent(s_used, theta)
    except ValueError:
        report["predicted_exponent"] = None
    return report
