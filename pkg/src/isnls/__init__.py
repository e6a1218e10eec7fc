"""Numerical companion for the I-method analysis of the defocusing stochastic
cubic Schrödinger equation with additive noise on a periodic box."""
from .errors import (BlowUpDetected, ConfigError, FormatError, GridMismatch, ISNLSError,
                     InvalidField, InvalidMultiplier, InvalidRegularity, LedgerNeedsPath,
                     NormDiverges, RegularityOutOfRange, ScalingGridError)
from .spectral import Field, Grid
from .ioperator import IMultiplier, build_multiplier, energy, mass, modified_energy
from .integrator import SimConfig, Trajectory, run
from .harness import VERSION as __version__

__all__ = [
    "BlowUpDetected", "ConfigError", "FormatError", "GridMismatch", "ISNLSError",
    "InvalidField", "InvalidMultiplier", "InvalidRegularity", "LedgerNeedsPath",
    "NormDiverges", "RegularityOutOfRange", "ScalingGridError",
    "Field", "Grid", "IMultiplier", "build_multiplier", "energy", "mass", "modified_energy",
    "SimConfig", "Trajectory", "run", "__version__",
]
