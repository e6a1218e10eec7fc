"""Split-step time stepping for the defocusing stochastic cubic NLS.

The evolved variable is ``u``; ``I_N u`` and its energies are observables.
Each stochastic step first adds the noise kick ``-i phi dW`` in Fourier space
and then takes a deterministic step, so that with the nonlinearity switched
off a step reduces to ``S(dt)(u - i phi dW)``, the same recursion the
stochastic convolution uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .errors import BlowUpDetected, ConfigError
from .ioperator import IMultiplier, build_multiplier
from .noise import WienerPath, half_step_phase, sample_wiener
from .spectral import Field, Grid, free_phase

__all__ = [
    "SCHEMES",
    "SimConfig",
    "Trajectory",
    "Stepper",
    "step_deterministic",
    "step_stochastic",
    "run",
    "stopping_time",
]

SCHEMES = ("strang", "lie", "exp_euler_stochastic")


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    s: float = 0.9
    N: float = 4.0
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "strang"
    phi: object = None
    seed: int = 0
    lam: float = 1.0
    blowup_threshold: float = 1e6
    save_stride: int = 1
    eta0: float = 1.0
    eta1: float = 1.0
    nonlinear: bool = True
    profile: str = "smoothstep"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not self.blowup_threshold > 0:
            raise ConfigError("blowup_threshold must be positive")
        if not (self.eta0 > 0 and self.eta1 > 0):
            raise ConfigError("eta0 and eta1 must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.save_stride < 1:
            raise ConfigError("save_stride must be >= 1")
        if self.phi is not None and self.phi.grid != self.grid:
            raise ConfigError("noise operator does not map onto the simulation grid")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def multiplier(self) -> IMultiplier:
        return build_multiplier(self.N, self.s, self.grid, self.profile)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


SERIES = ("t", "mass", "energy", "modified_energy", "hs_norm", "grad_Iu")


@dataclass
class Trajectory:
    config: SimConfig
    u0: Field
    times: np.ndarray
    series: dict
    snapshot_times: np.ndarray
    snapshots: list
    path: Optional[WienerPath]
    status: str = "completed"
    blowup_time: Optional[float] = None

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def final(self) -> Field:
        return self.snapshots[-1]


class Stepper:
    """Precomputed phases for one grid and step size; works on coefficient arrays."""

    def __init__(self, grid: Grid, dt: float, scheme: str = "strang", nonlinear: bool = True):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {scheme!r}")
        self.grid = grid
        self.dt = dt
        self.scheme = scheme
        self.nonlinear = nonlinear
        self.half = half_step_phase(grid, dt)
        self.full = free_phase(grid, dt)
        self._to_c = math.sqrt(grid.cell_volume)

    def _phys(self, c):
        return sfft.ifftn(c, norm="ortho") / self._to_c

    def _spec(self, u):
        return sfft.fftn(u, norm="ortho") * self._to_c

    def _rotate(self, c):
        u = self._phys(c)
        u = u * np.exp(-1j * self.dt * (u.real**2 + u.imag**2))
        return self._spec(u)

    def deterministic(self, c: np.ndarray) -> np.ndarray:
        h = self.half
        if not self.nonlinear:
            return self.full * c
        if self.scheme == "strang":
            return h * self._rotate(h * c)
        if self.scheme == "lie":
            return self._rotate(self.full * c)
        u = self._phys(c)
        nl = self._spec((u.real**2 + u.imag**2) * u)
        return self.full * (c - 1j * self.dt * nl)

    def stochastic(self, c: np.ndarray, kick: Optional[np.ndarray]) -> np.ndarray:
        """One step; ``kick`` is phi dbeta in coefficients (None: no noise)."""
        if kick is None:
            return self.deterministic(c)
        h = self.half
        if not self.nonlinear:
            return self.full * (c - 1j * kick)
        if self.scheme == "strang":
            return h * self._rotate(h * (c - 1j * kick))
        if self.scheme == "lie":
            return self._rotate(self.full * (c - 1j * kick))
        u = self._phys(c)
        nl = self._spec((u.real**2 + u.imag**2) * u)
        return self.full * (c - 1j * self.dt * nl - 1j * kick)


def _check(c: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(c)):
        raise BlowUpDetected(t)


def step_deterministic(field: Field, dt: float, scheme: str = "strang") -> Field:
    st = Stepper(field.grid, dt, scheme)
    c = st.deterministic(field.coefficients())
    _check(c, dt)
    return Field(field.grid, c, True)


def step_stochastic(field: Field, dt: float, phi, dbeta: np.ndarray, scheme: str = "strang",
                    nonlinear: bool = True) -> Field:
    st = Stepper(field.grid, dt, scheme, nonlinear)
    kick = None if phi is None else phi.noise_increment(dbeta)
    c = st.stochastic(field.coefficients(), kick)
    _check(c, dt)
    return Field(field.grid, c, True)


class _Recorder:
    def __init__(self, grid: Grid, imult: IMultiplier, s: float):
        self.grid = grid
        self.m = imult.values
        self.xi2 = grid.xi2
        self.hs_w = (1.0 + grid.xi2) ** s
        self.cv = grid.cell_volume
        self.rows = {k: [] for k in SERIES}

    def record(self, t: float, c: np.ndarray) -> float:
        a2 = c.real**2 + c.imag**2
        Ic = self.m * c
        Ia2 = self.m**2 * a2
        Iu = sfft.ifftn(Ic, norm="ortho") / math.sqrt(self.cv)
        u = sfft.ifftn(c, norm="ortho") / math.sqrt(self.cv)
        grad_I2 = float(np.sum(self.xi2 * Ia2))
        r = self.rows
        r["t"].append(t)
        r["mass"].append(float(np.sum(a2)))
        r["energy"].append(0.5 * float(np.sum(self.xi2 * a2))
                           + 0.25 * self.cv * float(np.sum(np.abs(u) ** 4)))
        r["modified_energy"].append(0.5 * grad_I2 + 0.25 * self.cv * float(np.sum(np.abs(Iu) ** 4)))
        r["hs_norm"].append(math.sqrt(float(np.sum(self.hs_w * a2))))
        r["grad_Iu"].append(math.sqrt(grad_I2))
        return r["grad_Iu"][-1]

    def arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in self.rows.items()}


def run(config: SimConfig, u0: Field, path: WienerPath | None = None,
        observers: tuple = (), raise_on_blowup: bool = False) -> Trajectory:
    """Advance ``u0`` to ``config.t_end``.

    Observers get ``obs.step(n, t_n, u_n_coeffs, dbeta_n)`` before each step
    and ``obs.finish(steps, t_end, u_coeffs)`` after a completed run.  Snapshots
    are kept every ``save_stride`` steps and at the final time.  A step whose
    ``||I_N u||_{dot H^1}`` exceeds ``blowup_threshold`` (or is non-finite)
    ends the run with status ``"blowup"``.
    """
    grid = config.grid
    if u0.grid != grid:
        raise ConfigError("initial data grid differs from the configured grid")
    phi = config.phi
    steps = config.steps
    if phi is not None and path is None:
        path = sample_wiener(config.seed, config.dt, steps, phi.source_grid)
    if path is not None and path.steps < steps:
        raise ConfigError("Wiener path is shorter than the run")
    imult = config.multiplier()
    stepper = Stepper(grid, config.dt, config.scheme, config.nonlinear)
    rec = _Recorder(grid, imult, config.s)
    c = u0.coefficients().copy()
    snaps, snap_t = [Field(grid, c.copy(), True)], [0.0]
    rec.record(0.0, c)
    noise = iter(path) if (path is not None and phi is not None) else None
    status, t_blow = "completed", None
    dt = config.dt
    for n in range(steps):
        t = n * dt
        db = next(noise) if noise is not None else None
        for obs in observers:
            obs.step(n, t, c, db)
        kick = phi.noise_increment(db) if db is not None else None
        c = stepper.stochastic(c, kick)
        t_new = (n + 1) * dt
        if not np.all(np.isfinite(c)):
            status, t_blow = "blowup", t_new
            break
        g = rec.record(t_new, c)
        if not g <= config.blowup_threshold:
            status, t_blow = "blowup", t_new
            snaps.append(Field(grid, c.copy(), True))
            snap_t.append(t_new)
            break
        if (n + 1) % config.save_stride == 0:
            snaps.append(Field(grid, c.copy(), True))
            snap_t.append(t_new)
    else:
        if steps % config.save_stride:
            snaps.append(Field(grid, c.copy(), True))
            snap_t.append(steps * dt)
        for obs in observers:
            obs.finish(steps, steps * dt, c)
    if status == "blowup" and raise_on_blowup:
        raise BlowUpDetected(t_blow)
    series = rec.arrays()
    return Trajectory(config, u0, series["t"], series, np.asarray(snap_t), snaps, path,
                      status, t_blow)


def stopping_time(trajectory: Trajectory, eta0: float) -> Optional[float]:
    """First sample time at which the running sup of E(I_N u) reaches eta0."""
    e = np.asarray(trajectory.series["modified_energy"])
    hit = np.flatnonzero(e >= eta0)
    if hit.size == 0:
        return None
    return float(trajectory.times[hit[0]])
