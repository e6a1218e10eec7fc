"""Ensembles, the globalization pipeline, refinement studies and persistence."""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .diagnostics import LedgerAccumulator, SpaceTimeField, xsb_norm
from .integrator import SERIES, SimConfig, Trajectory, run, stopping_time
from .io import (config_hash, read_aclf, read_json, read_series_csv, to_jsonable, write_aclf,
                 write_json, write_series_csv)
from .errors import FormatError
from .noise import hs_norm, sample_wiener, smooth_operator
from .scaling import ScalingPlan, choose_parameters, scaled_run_setup
from .spectral import Field, free_phase
from .stats import Z95, estimate, observed_order

__all__ = [
    "VERSION",
    "config_fingerprint",
    "PathSummary",
    "EnsembleReport",
    "run_ensemble",
    "y12_budgets",
    "gwp_pipeline",
    "convergence_study",
    "write_trajectory",
    "load_trajectory",
    "write_report",
]

VERSION = "0.1.0"


def config_fingerprint(config: SimConfig) -> dict:
    """Plain description of a run configuration, used for hashing and manifests."""
    g = config.grid
    d = {
        "grid": {"n": list(g.n), "box": list(g.box)},
        "s": config.s, "N": config.N, "dt": config.dt, "t_end": config.t_end,
        "scheme": config.scheme, "lam": config.lam, "blowup_threshold": config.blowup_threshold,
        "save_stride": config.save_stride, "eta0": config.eta0, "eta1": config.eta1,
        "nonlinear": config.nonlinear, "profile": config.profile,
    }
    phi = config.phi
    if phi is None:
        d["phi"] = None
    else:
        k = np.ascontiguousarray(phi.coeffs if hasattr(phi, "coeffs") else phi.kernel_matrix(),
                                 dtype=np.complex128)
        d["phi"] = {
            "type": type(phi).__name__,
            "shape": list(k.shape),
            "source_grid": {"n": list(phi.source_grid.n), "box": list(phi.source_grid.box)},
            "digest": hashlib.sha256(k.tobytes()).hexdigest(),
        }
    return d


@dataclass
class PathSummary:
    seed: int
    status: str
    blowup_time: Optional[float]
    stopping_time: Optional[float]
    final: dict
    sup_modified_energy: float
    sup_mass: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EnsembleReport:
    config_hash: str
    seeds: list
    paths: list
    means: dict
    stopping_fraction: float
    blowup_fraction: float
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if len(self.paths) != len(self.seeds):
            raise ValueError("path count does not match the seed list")

    @property
    def n_paths(self) -> int:
        return len(self.seeds)

    @property
    def all_blown_up(self) -> bool:
        return all(p.status == "blowup" for p in self.paths)

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash, "version": VERSION, "seeds": list(self.seeds),
            "n_paths": self.n_paths,
            "paths": [p.as_dict() for p in self.paths], "means": self.means,
            "stopping_fraction": self.stopping_fraction,
            "blowup_fraction": self.blowup_fraction, **self.extra,
        }


def _summarize(traj: Trajectory, eta0: float) -> PathSummary:
    s = traj.series
    tau = stopping_time(traj, eta0)
    if traj.status == "blowup" and tau is None:
        tau = traj.blowup_time
    return PathSummary(
        seed=traj.config.seed, status=traj.status, blowup_time=traj.blowup_time,
        stopping_time=tau,
        final={k: float(s[k][-1]) for k in SERIES},
        sup_modified_energy=float(np.max(s["modified_energy"])),
        sup_mass=float(np.max(s["mass"])),
    )


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def run_ensemble(config: SimConfig, u0: Field, n_paths: int, seed_base: int = 0,
                 threads: int = 1, observer_factory: Optional[Callable] = None,
                 keep: bool = False, path_hook: Optional[Callable] = None) -> EnsembleReport:
    """Run ``n_paths`` independent paths with seeds ``seed_base + i``.

    ``observer_factory(config)`` supplies per-path observers; their results
    can be collected by ``path_hook(trajectory, observers)`` whose return
    values are stored under ``extra["per_path"]``.  Reductions sort their
    inputs and use exact summation, so the report does not depend on the
    order in which paths finish or on ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    seeds = [seed_base + i for i in range(n_paths)]

    def one(seed):
        cfg = config.with_(seed=seed)
        obs = tuple(observer_factory(cfg)) if observer_factory else ()
        traj = run(cfg, u0, observers=obs)
        hooked = path_hook(traj, obs) if path_hook else None
        return _summarize(traj, config.eta0), hooked, (traj if keep else None)

    results = _parallel_map(one, seeds, threads)
    summaries = [r[0] for r in results]
    means = {}
    for key in SERIES[1:]:
        means[f"final_{key}"] = estimate([p.final[key] for p in summaries]).as_dict()
    means["sup_modified_energy"] = estimate([p.sup_modified_energy for p in summaries]).as_dict()
    means["sup_mass"] = estimate([p.sup_mass for p in summaries]).as_dict()
    horizon = config.steps * config.dt
    stopped = [p.stopping_time is not None and p.stopping_time < horizon for p in summaries]
    extra = {}
    if path_hook:
        extra["per_path"] = [r[1] for r in results]
    if keep:
        extra["trajectories"] = [r[2] for r in results]
    return EnsembleReport(
        config_hash=config_hash(config_fingerprint(config)), seeds=seeds, paths=summaries,
        means=means, stopping_fraction=sum(stopped) / n_paths,
        blowup_fraction=sum(p.status == "blowup" for p in summaries) / n_paths, extra=extra,
    )


def _binomial_ci(k: int, n: int) -> list:
    """Wilson score interval for a proportion."""
    if n == 0:
        return [0.0, 1.0]
    p = k / n
    z = Z95
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return [lo, hi]


def y12_budgets(e0_scaled: float, phi_scaled, imult_values: np.ndarray, lam: float, T: float,
                N: float, eta0: float, C: float = 1.0) -> dict:
    """Closed-form budget of every term of the failure-probability accounting.

    ``initial = 2 E(I_N u0^lam) / eta0``; ``hs_drift = C lam^2 T ||I_N phi^lam||^2_{HS(L^2; dot H^1)} / eta0``;
    ``quartic_noise = C lam^4 T^2 ||I_N phi^lam||^4_{HS(L^2; dot H^{3/4})} / eta0``;
    ``commutator = C lam^2 T / (N eta0)``.
    """
    if phi_scaled is not None:
        Iphi = smooth_operator(phi_scaled, imult_values)
        h1 = hs_norm(Iphi, 1.0) ** 2
        h34 = hs_norm(Iphi, 0.75) ** 4
    else:
        h1 = h34 = 0.0
    return {
        "initial": 2.0 * e0_scaled / eta0,
        "hs_drift": C * lam**2 * T * h1 / eta0,
        "quartic_noise": C * lam**4 * T**2 * h34 / eta0,
        "commutator": C * lam**2 * T / (N * eta0),
    }


def _window_violations(path, phi, imult, horizon: float, eta1: float, b: float,
                       taper: float) -> tuple:
    """Count unit windows on which ``||grad I_N Psi||_{X^{0,b}}`` exceeds ``eta1``.

    The stochastic convolution is advanced with the same recursion as
    :func:`isnls.noise.stochastic_convolution`, one window in memory at a time.
    """
    dt = path.dt
    grid = phi.grid
    steps = int(round(horizon / dt))
    per = min(int(round(1.0 / dt)), steps)
    n_win = max(1, steps // per)
    full = free_phase(grid, dt)
    grad = imult.values * grid.xi_norm
    c = np.zeros(grid.shape, dtype=complex)
    frames = [Field(grid, grad * c, True).physical()]
    norms = []
    for j, db in enumerate(path):
        if j >= n_win * per:
            break
        c = full * (c - 1j * phi.noise_increment(db))
        frames.append(Field(grid, grad * c, True).physical())
        if len(frames) == per + 1:
            norms.append(xsb_norm(SpaceTimeField(grid, dt, np.stack(frames)), 0.0, b, taper))
            frames = [frames[-1]]
    return sum(v > eta1 for v in norms), len(norms), norms


def gwp_pipeline(T: float, eps: float, s: float, theta: float, base: SimConfig, u0: Field,
                 n_paths: int, seed_base: int = 0, c: float = 1.0, rounding: str = "pow2",
                 C: float = 1.0, b: float = 0.49, taper: float = 0.1, N: Optional[float] = None,
                 threads: int = 1) -> dict:
    """Choose ``(N, lam)``, dilate, run the ensemble to ``lam^2 T`` and tabulate.

    ``N`` overrides the selected frequency (desk-scale studies); ``lam`` is
    then recomputed from it with the same rounding.  Reports the fraction of
    paths stopped before the horizon, the fraction of unit windows on which
    the noise threshold ``eta1`` is exceeded, and the measured size of every
    term of the accounting next to its closed-form budget.
    """
    choice = choose_parameters(T, eps, s, theta, c, rounding,
                               phi_norm=hs_norm(base.phi, s, homogeneous=False)
                               if base.phi is not None else None)
    if N is not None:
        lam_raw = float(N) ** choice.lambda_exponent
        lam = 2.0 ** max(0, round(math.log2(lam_raw))) if rounding == "pow2" else max(1.0, lam_raw)
    else:
        N, lam = choice.N, choice.lam
    base = base.with_(t_end=T, N=N, s=s)
    plan = ScalingPlan(lam, base.grid, N=N, s=s, theta=theta)
    cfg, v0 = scaled_run_setup(base, u0, plan)
    imult = cfg.multiplier()
    horizon = cfg.t_end

    def observers(c_):
        return (LedgerAccumulator(c_.grid, c_.dt, imult, c_.phi),)

    def hook(traj, obs):
        acc = obs[0]
        out = {"completed": traj.completed}
        if acc.e_final is not None:
            led = acc.ledger()
            out.update(hs_drift=led.hs_drift, hs_drift_realized=led.hs_drift_realized,
                       quadratic_trace=led.quadratic_trace,
                       martingale_cubic=led.martingale_cubic,
                       commutator_sup=led.commutator_sup, e0=led.e0)
        else:
            out.update(e0=acc.e0, commutator_sup=acc.commutator_sup)
        if cfg.phi is not None:
            path = sample_wiener(traj.config.seed, cfg.dt, cfg.steps, cfg.phi.source_grid)
            k, n, norms = _window_violations(path, cfg.phi, imult, horizon, cfg.eta1, b, taper)
            out.update(window_violations=k, windows=n, window_norms=norms)
        else:
            out.update(window_violations=0, windows=0, window_norms=[])
        return out

    ens = run_ensemble(cfg, v0, n_paths, seed_base, threads, observers, path_hook=hook)
    per = ens.extra["per_path"]
    e0 = per[0]["e0"]
    budgets = y12_budgets(e0, cfg.phi, imult.values, lam, T, N, cfg.eta0, C)
    measured = {
        "initial": 2.0 * e0 / cfg.eta0,
        "hs_drift": C * estimate([p.get("hs_drift_realized", 0.0) for p in per]).mean / cfg.eta0,
        "quartic_noise": C * estimate([p.get("quadratic_trace", 0.0) for p in per]).mean / cfg.eta0,
        "commutator": C * estimate([p["commutator_sup"] for p in per]).mean / cfg.eta0,
    }
    hs_closed = [p["hs_drift"] for p in per if "hs_drift" in p]
    n_stop = int(round(ens.stopping_fraction * n_paths))
    win_k = sum(p["window_violations"] for p in per)
    win_n = sum(p["windows"] for p in per)
    window_fraction = win_k / win_n if win_n else 0.0
    violation = ens.stopping_fraction + window_fraction > eps
    return {
        "parameters": choice.as_dict(),
        "N": N, "lam": lam, "horizon": horizon, "seeds": ens.seeds,
        "config_hash": ens.config_hash, "version": VERSION,
        "stopping_fraction": ens.stopping_fraction,
        "stopping_ci95": _binomial_ci(n_stop, n_paths),
        "window_fraction": window_fraction,
        "window_ci95": _binomial_ci(win_k, win_n),
        "blowup_fraction": ens.blowup_fraction,
        "term_table": {k: {"measured": measured[k], "budget": budgets[k]} for k in budgets},
        "ledger_hs_drift": hs_closed,
        "smallness_products": choice.products,
        "budget_violation": bool(violation),
        "ensemble": ens,
    }


def _l2_diff(a: Field, b: Field) -> float:
    return math.sqrt(float(np.sum(np.abs(a.coefficients() - b.coefficients()) ** 2)))


def convergence_study(config: SimConfig, u0: Field, axis: str = "dt", levels: int = 3,
                      factor: int = 2, quantity: str = "state", grids: Sequence = ()) -> dict:
    """Refinement ladders with shared noise.

    ``axis="dt"``: steps ``dt, dt/f, ...``; the noise of every level is the
    coarsening of the finest path, and errors are measured against a
    reference two levels finer than the finest (``quantity="state"``) or are
    the per-level pathwise Itô-ledger defects (``quantity="ledger"``).
    ``axis="grid"``: runs on ``grids`` (coarse to fine) and compares final
    states on the common modes with the finest run.
    """
    if axis == "dt":
        dts = [config.dt / factor**k for k in range(levels)]
        finest = dts[-1] / (factor**2 if quantity == "state" else 1)
        n_fine = int(round(config.t_end / finest))
        path = None
        if config.phi is not None:
            path = sample_wiener(config.seed, finest, n_fine, config.phi.source_grid)

        def go(dt):
            cfg = config.with_(dt=dt, save_stride=10**9)
            p = None
            if path is not None:
                p = path.coarsen(int(round(dt / finest)))
            obs = ()
            if quantity == "ledger":
                obs = (LedgerAccumulator(cfg.grid, dt, cfg.multiplier(), cfg.phi),)
            return run(cfg, u0, path=p, observers=obs), obs

        errors = []
        ledgers = []
        if quantity == "state":
            ref, _ = go(finest)
            for dt in dts:
                tr, _ = go(dt)
                errors.append(_l2_diff(tr.final, ref.final))
        elif quantity == "ledger":
            for dt in dts:
                tr, obs = go(dt)
                led = obs[0].ledger()
                ledgers.append(led.as_dict())
                errors.append(abs(led.pathwise_residual))
        else:
            raise ValueError(f"unknown quantity {quantity!r}")
        fit = observed_order(dts, errors)
        return {"axis": "dt", "quantity": quantity, "steps": dts, "errors": errors,
                "order": fit.slope, "fit": fit.as_dict(), "ledgers": ledgers}
    if axis == "grid":
        if len(grids) < 2:
            raise ValueError("grid ladder needs at least two grids")
        from .scaling import _resample

        finals = []
        for g in grids:
            c = _resample(u0.coefficients(), g.shape) if g != u0.grid else u0.coefficients()
            cfg = config.with_(grid=g, phi=None, save_stride=10**9)
            finals.append(run(cfg, Field(g, c, True)).final)
        ref = finals[-1]
        errors = []
        for f in finals[:-1]:
            cr = _resample(ref.coefficients(), f.grid.shape)
            errors.append(math.sqrt(float(np.sum(np.abs(f.coefficients() - cr) ** 2))))
        return {"axis": "grid", "points": [list(g.n) for g in grids], "errors": errors}
    raise ValueError(f"unknown refinement axis {axis!r}")


def write_trajectory(traj: Trajectory, outdir, extra_manifest: Optional[dict] = None) -> dict:
    """Series CSV, ACLF snapshots and a manifest; returns the manifest."""
    out = Path(outdir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    series = {k: traj.series[k] for k in SERIES}
    write_series_csv(out / "series.csv", series, SERIES)
    names = []
    for i, f in enumerate(traj.snapshots):
        name = f"snapshots/snap_{i:06d}.aclf"
        write_aclf(out / name, f)
        names.append(name)
    cfg = config_fingerprint(traj.config)
    manifest = {
        "format": "isnls-trajectory", "version": VERSION,
        "config": cfg, "config_hash": config_hash(cfg),
        "seeds": [traj.config.seed], "status": traj.status, "blowup_time": traj.blowup_time,
        "snapshot_times": [float(t) for t in traj.snapshot_times], "snapshots": names,
        "series": "series.csv",
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    write_json(out / "manifest.json", manifest)
    return manifest


def load_trajectory(outdir) -> dict:
    """Inverse of :func:`write_trajectory`: manifest, series and snapshot fields."""
    out = Path(outdir)
    try:
        manifest = read_json(out / "manifest.json")
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read manifest in {out}: {exc}") from None
    if manifest.get("format") != "isnls-trajectory":
        raise FormatError(f"{out}: not a trajectory directory")
    series = read_series_csv(out / manifest["series"])
    snaps = [read_aclf(out / n) for n in manifest["snapshots"]]
    return {"manifest": manifest, "series": series, "snapshots": snaps}


def write_report(report: dict, outdir, name: str) -> dict:
    """``name.json`` with the whole report and ``name.csv`` with its equal-length
    numeric columns (if any)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    clean = to_jsonable({k: v for k, v in report.items() if k != "ensemble"})
    if "ensemble" in report:
        clean["ensemble"] = to_jsonable(report["ensemble"].as_dict())
        clean["ensemble"].pop("trajectories", None)
    write_json(out / f"{name}.json", clean)
    cols = {k: v for k, v in report.items()
            if isinstance(v, (list, np.ndarray)) and len(v) > 0
            and all(isinstance(x, (int, float, np.floating, np.integer)) for x in np.ravel(v))
            and np.ndim(v) == 1}
    if cols:
        n = max(len(v) for v in cols.values())
        cols = {k: v for k, v in cols.items() if len(v) == n}
        write_series_csv(out / f"{name}.csv", cols)
    return clean

