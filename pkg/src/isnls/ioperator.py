"""The smoothing multiplier m_N, the operator I_N, and the energies built on it."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from .errors import GridMismatch, InvalidRegularity
from .spectral import Field, Grid, apply_multiplier, cubic_product, lebesgue_norm

__all__ = [
    "PROFILES",
    "IMultiplier",
    "build_multiplier",
    "apply_I",
    "mass",
    "energy",
    "modified_energy",
    "commutator",
    "multilinear_symbol",
]


def _smoothstep(x):
    return 3 * x**2 - 2 * x**3


def _smootherstep(x):
    return x**3 * (10 - 15 * x + 6 * x**2)


# Each profile h on [0, 1] has h(0)=0, h(1)=1, h'(0)=h'(1)=0 and x*h(x) non-decreasing,
# so log m = -(1-s) ln2 * x h(x) is C^1 across both ends and m is non-increasing.
PROFILES = {
    "smoothstep": _smoothstep,
    "smootherstep": _smootherstep,
}


@dataclass(frozen=True)
class IMultiplier:
    """m_N on a grid, evaluated once per mode.

    ``m_N = 1`` for ``|xi| <= N`` and ``(N/|xi|)**(1-s)`` for ``|xi| >= 2N``; in
    between ``log m`` is interpolated in ``x = log2(|xi|/N)`` by ``profile``.
    """

    N: float
    s: float
    grid: Grid
    profile: str = "smoothstep"
    _values: np.ndarray = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (0 < self.s < 1):
            raise InvalidRegularity(f"s must lie in (0, 1), got {self.s}")
        if not self.N >= 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown transition profile {self.profile!r}")
        vals = self(self.grid.xi_norm)
        vals.setflags(write=False)
        object.__setattr__(self, "_values", vals)

    def __call__(self, r) -> np.ndarray:
        """Radial evaluation m_N(r) for an array of |xi| values."""
        r = np.asarray(r, dtype=float)
        out = np.ones_like(r)
        far = r >= 2 * self.N
        out[far] = (self.N / r[far]) ** (1 - self.s)
        mid = (r > self.N) & ~far
        x = np.log2(r[mid] / self.N)
        out[mid] = np.exp(-(1 - self.s) * np.log(2.0) * x * PROFILES[self.profile](x))
        return out

    @property
    def values(self) -> np.ndarray:
        return self._values

    @cached_property
    def is_identity(self) -> bool:
        return bool(np.all(self._values == 1.0))


def build_multiplier(N: float, s: float, grid: Grid, profile: str = "smoothstep") -> IMultiplier:
    return IMultiplier(float(N), float(s), grid, profile)


def apply_I(field: Field, imult: IMultiplier) -> Field:
    if field.grid != imult.grid:
        raise GridMismatch("field and multiplier live on different grids")
    return apply_multiplier(field, imult.values)


def mass(field: Field) -> float:
    return lebesgue_norm(field, 2) ** 2


def _gradient_energy(coeffs: np.ndarray, grid: Grid) -> float:
    return 0.5 * float(np.sum(grid.xi2 * np.abs(coeffs) ** 2))


def energy(field: Field) -> float:
    """1/2 ||grad u||^2 + 1/4 ||u||_4^4 (defocusing cubic)."""
    u = field.physical()
    quartic = 0.25 * field.grid.cell_volume * float(np.sum(np.abs(u) ** 4))
    return _gradient_energy(field.coefficients(), field.grid) + quartic


def modified_energy(field: Field, imult: IMultiplier) -> float:
    return energy(apply_I(field, imult))


def commutator(field: Field, imult: IMultiplier, dealiased: bool = True) -> Field:
    """[I_N, N](u) = I_N(|u|^2 u) - |I_N u|^2 I_N u, returned in physical space."""
    Iu = apply_I(field, imult).to_physical()
    outer = apply_I(cubic_product(field, dealiased), imult).to_physical()
    inner = cubic_product(Iu, dealiased)
    return Field(field.grid, outer.values - inner.values, False)


def multilinear_symbol(imult: IMultiplier, r1, r2, r3, r4) -> np.ndarray:
    """m(xi1) / (m(xi2) m(xi3) m(xi4)) - 1, as a function of the four |xi_j|."""
    m = imult
    return m(r1) / (m(r2) * m(r3) * m(r4)) - 1.0
