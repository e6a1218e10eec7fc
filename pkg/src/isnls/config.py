"""Run configuration files: INI-style ``key = value`` lines grouped in sections.

Every key has a type and a default; unknown sections or keys and
unparsable values raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError
from .integrator import SimConfig
from .io import config_hash, read_aclf, read_aclf_array
from .noise import DenseKernel, default_operator
from .spectral import Field, Grid, plane_wave, random_field

__all__ = ["SCHEMA", "RunSpec", "load_config", "parse_config", "initial_data", "build_operator"]


def _bool(v: str) -> bool:
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v: str):
    v = v.strip()
    return None if v in ("", "none", "None") else float(v)


def _opt_int(v: str):
    v = v.strip()
    return None if v in ("", "none", "None") else int(v)


def _int_list(v: str) -> tuple:
    return tuple(int(x) for x in v.replace(",", " ").split())


SCHEMA = {
    "grid": {"n": (int, 32), "dim": (int, 3), "length": (float, 2 * math.pi)},
    "run": {
        "s": (float, 0.9), "N": (float, 4.0), "dt": (float, 1e-3), "t_end": (float, 1.0),
        "scheme": (str, "strang"), "seed": (int, 0), "paths": (int, 1),
        "save_stride": (int, 1), "blowup_threshold": (float, 1e6), "nonlinear": (_bool, True),
        "profile": (str, "smoothstep"),
    },
    "noise": {
        "variant": (str, "diagonal"), "amplitude": (float, 0.1), "sigma": (_opt_float, None),
        "kernel_file": (str, ""),
    },
    "initial": {
        "kind": (str, "random"), "decay": (float, 2.5), "kmax": (_opt_int, None),
        "norm": (float, 1.0), "seed": (int, 12345), "file": (str, ""),
        "mode": (_int_list, (1, 0, 0)),
    },
    "gwp": {
        "T": (float, 1.0), "eps": (float, 0.5), "theta": (float, 0.01), "c": (float, 1.0),
        "eta0": (float, 1.0), "eta1": (float, 1.0), "rounding": (str, "pow2"),
        "budget_C": (float, 1.0), "b": (float, 0.49),
    },
    "xsb": {"s": (float, 0.0), "b": (float, 0.49), "taper": (float, 0.1), "pad": (int, 2)},
    "converge": {"axis": (str, "dt"), "levels": (int, 3), "factor": (int, 2)},
    "commutator": {"Ns": (_int_list, (4, 8, 16, 32)), "dealiased": (_bool, True)},
}


@dataclass
class RunSpec:
    """Typed configuration values, ``values[section][key]``."""

    values: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        full = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
        for sec, kv in self.values.items():
            for k, v in kv.items():
                full[sec][k] = v
        self.values = full

    def __getitem__(self, key):
        return self.values[key]

    def get(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def override(self, dotted: str, raw) -> "RunSpec":
        """Return a copy with ``section.key`` replaced (parsed if a string)."""
        try:
            sec, key = dotted.split(".", 1)
            typ, _ = SCHEMA[sec][key]
        except (ValueError, KeyError):
            raise ConfigError(f"unknown setting {dotted!r}") from None
        try:
            val = typ(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{dotted}: {exc}") from None
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals[sec][key] = val
        return RunSpec(vals)

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}

    @property
    def hash(self) -> str:
        return config_hash(self.as_dict())

    def grid(self) -> Grid:
        g = self.values["grid"]
        try:
            return Grid.cube(g["n"], g["dim"], g["length"])
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def sim_config(self, grid: Grid | None = None, phi=None, with_noise: bool = True) -> SimConfig:
        grid = grid or self.grid()
        r = self.values["run"]
        if with_noise and phi is None:
            phi = build_operator(self, grid)
        return SimConfig(
            grid=grid, s=r["s"], N=r["N"], dt=r["dt"], t_end=r["t_end"], scheme=r["scheme"],
            phi=phi, seed=r["seed"], blowup_threshold=r["blowup_threshold"],
            save_stride=r["save_stride"], eta0=self.values["gwp"]["eta0"],
            eta1=self.values["gwp"]["eta1"], nonlinear=r["nonlinear"], profile=r["profile"],
        )


def parse_config(text: str) -> RunSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as N and T are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    vals = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        vals[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            typ, _ = SCHEMA[sec][key]
            try:
                vals[sec][key] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
    return RunSpec(vals)


def load_config(path) -> RunSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def build_operator(spec: RunSpec, grid: Grid):
    nz = spec["noise"]
    variant = nz["variant"]
    if variant == "none" or nz["amplitude"] == 0:
        return None
    if variant == "diagonal":
        return default_operator(grid, nz["amplitude"], nz["sigma"])
    if variant == "kernel":
        if not nz["kernel_file"]:
            raise ConfigError("noise variant 'kernel' needs kernel_file")
        mat, _, _ = read_aclf_array(nz["kernel_file"])
        if mat.shape[0] != grid.size:
            raise ConfigError("kernel rows do not match the grid size")
        return DenseKernel(mat * nz["amplitude"], grid)
    raise ConfigError(f"unknown noise variant {variant!r}")


def initial_data(spec: RunSpec, grid: Grid) -> Field:
    ini = spec["initial"]
    kind = ini["kind"]
    if kind == "random":
        rng = np.random.default_rng(ini["seed"])
        return random_field(grid, rng, decay=ini["decay"], kmax=ini["kmax"], norm=ini["norm"])
    if kind == "zero":
        return Field.zeros(grid)
    if kind == "plane":
        k = tuple(ini["mode"])[: grid.dim]
        k = k + (0,) * (grid.dim - len(k))
        f = plane_wave(grid, k)
        nrm = math.sqrt(float(np.sum(np.abs(f.coefficients()) ** 2)))
        return f * (ini["norm"] / nrm)
    if kind == "file":
        f = read_aclf(ini["file"])
        if f.grid != grid:
            raise ConfigError("initial data file grid differs from [grid]")
        return f
    raise ConfigError(f"unknown initial kind {kind!r}")

