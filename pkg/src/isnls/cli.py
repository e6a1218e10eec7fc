"""Command-line entry point: ``isnls <subcommand> [--config PATH] [overrides]``.

Exit codes: 0 success, 2 budget violation (outputs still written),
3 blow-up in every path, 4 configuration error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import RunSpec, initial_data, load_config
from .errors import ConfigError, RegularityOutOfRange
from .harness import (VERSION, convergence_study, gwp_pipeline, run_ensemble, write_report,
                      write_trajectory)
from .integrator import run
from .io import read_series_csv, write_aclf, write_json
from .ioperator import build_multiplier
from .noise import hs_norm, sample_wiener, stochastic_convolution
from .scaling import choose_parameters
from .spectral import Grid, sobolev_norm
from .stats import estimate, loglog_fit

EXIT_OK, EXIT_BUDGET, EXIT_BLOWUP, EXIT_CONFIG = 0, 2, 3, 4

# flag name -> config key
OVERRIDES = {
    "n": ("grid.n", int), "dim": ("grid.dim", int), "length": ("grid.length", float),
    "dt": ("run.dt", float), "t_end": ("run.t_end", float), "N": ("run.N", float),
    "s": ("run.s", float), "scheme": ("run.scheme", str), "save_stride": ("run.save_stride", int),
    "amplitude": ("noise.amplitude", float), "sigma": ("noise.sigma", float),
    "norm": ("initial.norm", float), "decay": ("initial.decay", float),
    "T": ("gwp.T", float), "eps": ("gwp.eps", float), "theta": ("gwp.theta", float),
    "eta0": ("gwp.eta0", float), "eta1": ("gwp.eta1", float), "b": ("xsb.b", float),
    "levels": ("converge.levels", int), "axis": ("converge.axis", str),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isnls", description="Stochastic cubic NLS: I-method diagnostics")
    p.add_argument("--version", action="version", version=VERSION)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    cmds = {
        "simulate": "run trajectories and write series, snapshots and a manifest",
        "sample-noise": "sample the stochastic convolution and check its covariance",
        "ito-check": "Itô energy ledger per path and ensemble expectations",
        "commutator-decay": "commutator pairings against N with a log-log fit",
        "scaling-check": "print (N, lam) and the smallness products",
        "xsb-norm": "X^{s,b} norm of a trajectory and of the free flow of its data",
        "gwp-pipeline": "scaled ensemble with stopping-time and budget accounting",
        "converge": "dt or grid refinement ladder with shared noise",
        "plot": "two-column data files (and optional SVG) from a CSV",
    }
    for name, help_ in cmds.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key")
        for flag, (_, typ) in OVERRIDES.items():
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=f"ov_{flag}", type=typ)
        if name == "plot":
            sp.add_argument("--input", type=Path, required=True)
            sp.add_argument("--svg", action="store_true")
    return p


def _spec_from_args(args) -> RunSpec:
    spec = load_config(args.config) if args.config else RunSpec()
    if args.seed is not None:
        spec = spec.override("run.seed", args.seed)
    if args.paths is not None:
        spec = spec.override("run.paths", args.paths)
    for flag, (key, _) in OVERRIDES.items():
        v = getattr(args, f"ov_{flag}")
        if v is not None:
            spec = spec.override(key, v)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        spec = spec.override(k.strip(), v.strip())
    if spec["run"]["paths"] < 1:
        raise ConfigError("paths must be >= 1")
    return spec


def _manifest(spec: RunSpec, args, seeds) -> dict:
    return {"version": VERSION, "command": args.command, "config": spec.as_dict(),
            "config_hash": spec.hash, "seeds": list(seeds), "threads": args.threads}


def cmd_simulate(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid)
    u0 = initial_data(spec, grid)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    seed0 = spec["run"]["seed"]
    n = spec["run"]["paths"]
    ens = run_ensemble(cfg, u0, n, seed0, args.threads, keep=True)
    for i, traj in enumerate(ens.extra.pop("trajectories")):
        write_trajectory(traj, out / f"path_{i:04d}", {"config_hash": spec.hash})
    write_report({"ensemble": ens}, out, "report")
    write_json(out / "manifest.json", _manifest(spec, args, ens.seeds))
    print(f"simulate: {n} path(s), blow-ups {ens.blowup_fraction:.3g}, out {out}")
    return EXIT_BLOWUP if ens.all_blown_up else EXIT_OK


def cmd_sample_noise(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid)
    if cfg.phi is None:
        raise ConfigError("sample-noise needs a noise operator")
    s = spec["run"]["s"]
    hs2 = hs_norm(cfg.phi, s, homogeneous=False) ** 2
    seeds = [spec["run"]["seed"] + i for i in range(spec["run"]["paths"])]
    steps = cfg.steps
    stride = max(1, steps // 20)
    rows = None
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        path = sample_wiener(seed, cfg.dt, steps, grid)
        conv = stochastic_convolution(cfg.phi, path, save_stride=stride)
        vals = [sobolev_norm(f, s) ** 2 for f in conv.snapshots]
        rows = [[v] for v in vals] if rows is None else [r + [v] for r, v in zip(rows, vals)]
        if seed == seeds[0]:
            write_aclf(out / "psi_final.aclf", conv.snapshots[-1])
    times = conv.times
    est = [estimate(r) for r in rows]
    report = {"t": times, "mean_sq_norm": [e.mean for e in est], "se": [e.se for e in est],
              "predicted": [2 * t * hs2 for t in times], "s": s, "seeds": seeds,
              "hs_norm_sq": hs2}
    write_report(report, out, "sample_noise")
    write_json(out / "manifest.json", _manifest(spec, args, seeds))
    e = est[-1]
    print(f"sample-noise: E||Psi(T)||^2 = {e.mean:.6g} +- {e.se:.2g}, predicted {2 * times[-1] * hs2:.6g}")
    return EXIT_OK


def cmd_ito_check(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid)
    u0 = initial_data(spec, grid)
    imult = cfg.multiplier()
    seeds = [spec["run"]["seed"] + i for i in range(spec["run"]["paths"])]
    ledgers = []
    for seed in seeds:
        c = cfg.with_(seed=seed, save_stride=10**9)
        acc = dg.LedgerAccumulator(grid, cfg.dt, imult, cfg.phi)
        traj = run(c, u0, observers=(acc,))
        if traj.completed:
            ledgers.append(acc.ledger())
    if not ledgers:
        print("ito-check: every path blew up")
        return EXIT_BLOWUP
    rep = dg.ito_expectation_report(ledgers, cfg.t_end, cfg.phi, imult)
    rep["ledgers"] = [l.as_dict() for l in ledgers]
    rep["seeds"] = seeds
    write_report(rep, args.out, "ito_check")
    write_json(args.out / "manifest.json", _manifest(spec, args, seeds))
    for key in ("martingale_grad", "martingale_cubic", "pathwise_residual"):
        print(f"ito-check: {key} mean {rep[key]['mean']:.4g} +- {rep[key]['se']:.2g}")
    return EXIT_OK


def cmd_commutator_decay(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid).with_(save_stride=1)
    u0 = initial_data(spec, grid)
    Ns = list(spec["commutator"]["Ns"])
    deal = spec["commutator"]["dealiased"]
    seeds = [spec["run"]["seed"] + i for i in range(spec["run"]["paths"])]
    vals = []
    for seed in seeds:
        traj = run(cfg.with_(seed=seed), u0)
        vals.append([dg.commutator_pairing(traj, build_multiplier(N, cfg.s, grid), None, deal)[0]
                     for N in Ns])
    means = [estimate([v[j] for v in vals]).mean for j in range(len(Ns))]
    fit = loglog_fit(Ns, means)
    rep = {"N": Ns, "mean_pairing": means, "fit": fit.as_dict(), "seeds": seeds}
    write_report(rep, args.out, "commutator_decay")
    write_json(args.out / "manifest.json", _manifest(spec, args, seeds))
    print(f"commutator-decay: slope {fit.slope:.3f} (R^2 {fit.r2:.3f})")
    return EXIT_OK


def cmd_scaling_check(spec, args) -> int:
    g = spec["gwp"]
    s = spec["run"]["s"]
    rows = []
    for rounding in ("pow2", "none"):
        ch = choose_parameters(g["T"], g["eps"], s, g["theta"], g["c"], rounding)
        rows.append(ch.as_dict())
        prod = " ".join(f"{k}={v:.4g}" for k, v in ch.products.items())
        print(f"rounding={rounding:5s} N={ch.N:.6g} lam={ch.lam:.6g} "
              f"(lam-exp {ch.lambda_exponent:.4f}, N-exp {ch.n_exponent:.4f}) {prod}")
    write_report({"choices": rows}, args.out, "scaling_check")
    return EXIT_OK


def cmd_xsb_norm(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid).with_(save_stride=1)
    u0 = initial_data(spec, grid)
    x = spec["xsb"]
    traj = run(cfg, u0)
    st = dg.SpaceTimeField.from_trajectory(traj)
    free = dg.SpaceTimeField.free_flow(u0, cfg.dt, st.nt)
    val = dg.xsb_norm(st, x["s"], x["b"], x["taper"], x["pad"])
    ref = dg.xsb_norm(free, x["s"], x["b"], x["taper"], x["pad"])
    hs = sobolev_norm(u0, x["s"])
    rep = {"xsb": val, "free_xsb": ref, "data_hs": hs, "ratio_free": ref / hs if hs else math.nan,
           "s": x["s"], "b": x["b"], "taper": x["taper"], "pad": x["pad"]}
    write_report(rep, args.out, "xsb_norm")
    print(f"xsb-norm: trajectory {val:.6g}, free flow {ref:.6g}, ||u0||_H^s {hs:.6g}")
    return EXIT_OK


def cmd_gwp(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid)
    u0 = initial_data(spec, grid)
    g = spec["gwp"]
    rep = gwp_pipeline(g["T"], g["eps"], spec["run"]["s"], g["theta"], cfg, u0,
                       spec["run"]["paths"], spec["run"]["seed"], g["c"], g["rounding"],
                       g["budget_C"], g["b"], threads=args.threads)
    write_report(rep, args.out, "gwp_pipeline")
    write_json(args.out / "manifest.json", _manifest(spec, args, rep["seeds"]))
    print(f"gwp-pipeline: N={rep['N']:.6g} lam={rep['lam']:.6g} "
          f"stopping {rep['stopping_fraction']:.3g} windows {rep['window_fraction']:.3g}")
    for k, row in rep["term_table"].items():
        print(f"  {k:14s} measured {row['measured']:.4g} budget {row['budget']:.4g}")
    if rep["ensemble"].all_blown_up:
        return EXIT_BLOWUP
    return EXIT_BUDGET if rep["budget_violation"] else EXIT_OK


def cmd_converge(spec, args) -> int:
    grid = spec.grid()
    cfg = spec.sim_config(grid)
    u0 = initial_data(spec, grid)
    c = spec["converge"]
    if c["axis"] == "dt":
        quantity = "ledger" if cfg.phi is not None else "state"
        rep = convergence_study(cfg, u0, "dt", c["levels"], c["factor"], quantity)
        print(f"converge: observed order {rep['order']:.3f} ({quantity})")
    elif c["axis"] == "grid":
        grids = [Grid.cube(grid.n[0] * c["factor"] ** k, grid.dim, grid.box[0])
                 for k in range(c["levels"])]
        rep = convergence_study(cfg, u0, "grid", grids=grids)
        print("converge: errors " + " ".join(f"{e:.3g}" for e in rep["errors"]))
    else:
        raise ConfigError(f"unknown axis {c['axis']!r}")
    write_report(rep, args.out, "converge")
    return EXIT_OK


def cmd_plot(spec, args) -> int:
    data = read_series_csv(args.input)
    keys = list(data)
    if len(keys) < 2:
        raise ConfigError("plot input needs at least two columns")
    x = keys[0]
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.input.stem
    for k in keys[1:]:
        path = args.out / f"{stem}_{k}.dat"
        np.savetxt(path, np.column_stack([data[x], data[k]]), fmt="%.17g", header=f"{x} {k}")
        if args.svg:
            _svg(data[x], data[k], x, k, path.with_suffix(".svg"))
    print(f"plot: wrote {len(keys) - 1} data file(s) to {args.out}")
    return EXIT_OK


def _svg(x, y, xl, yl, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, lw=1.2)
    ax.set_xlabel(xl)
    ax.set_ylabel(yl)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


COMMANDS = {
    "simulate": cmd_simulate, "sample-noise": cmd_sample_noise, "ito-check": cmd_ito_check,
    "commutator-decay": cmd_commutator_decay, "scaling-check": cmd_scaling_check,
    "xsb-norm": cmd_xsb_norm, "gwp-pipeline": cmd_gwp, "converge": cmd_converge,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        spec = _spec_from_args(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](spec, args)
    except (ConfigError, RegularityOutOfRange) as exc:
        print(f"isnls: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
