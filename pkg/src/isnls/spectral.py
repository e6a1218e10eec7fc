"""Periodic-box Fourier discretization.

The continuum domain is replaced by a periodic box of side ``L`` per axis.
Spectral coefficients are taken with respect to the orthonormal basis
``e_k(x) = V**-0.5 * exp(i xi_k . x)`` of L^2(box), so Plancherel holds with
no stray factors:  sum |u_hat|^2 == integral |u|^2 dx  (quadrature weight
``(L/n)**d`` per point).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, InvalidField, InvalidMultiplier

__all__ = [
    "Grid",
    "Field",
    "transform",
    "apply_multiplier",
    "sobolev_norm",
    "lebesgue_norm",
    "littlewood_paley",
    "lp_symbol",
    "dyadic_scales",
    "dealias",
    "dealias_mask",
    "cubic_product",
    "bessel_weight",
    "riesz_weight",
    "free_propagator",
    "free_phase",
    "compose",
    "plane_wave",
    "random_field",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid.

    ``n`` and ``box`` are per-axis tuples; ``dim`` is their common length.
    """

    n: tuple
    box: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        box = tuple(float(v) for v in np.atleast_1d(self.box))
        if len(box) == 1 and len(n) > 1:
            box = box * len(n)
        if not 1 <= len(n) <= 3:
            raise ValueError(f"dim must be 1, 2 or 3, got {len(n)}")
        if len(box) != len(n):
            raise ValueError("n and box must have the same length")
        for v in n:
            if v < 8 or v % 2:
                raise ValueError(f"points per axis must be even and >= 8, got {v}")
        for v in box:
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"box length must be positive, got {v}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "box", box)

    @classmethod
    def cube(cls, n: int, dim: int = 3, length: float = 2 * np.pi) -> "Grid":
        return cls((n,) * dim, (length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    @cached_property
    def index_vectors(self) -> tuple:
        """Signed integer mode indices per axis, broadcastable, FFT ordering."""
        out = []
        for ax, n in enumerate(self.n):
            k = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
            shape = [1] * self.dim
            shape[ax] = n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def wavevectors(self) -> tuple:
        return tuple(2 * np.pi * k / L for k, L in zip(self.index_vectors, self.box))

    @cached_property
    def xi2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for xi in self.wavevectors:
            out = out + xi**2
        out.setflags(write=False)
        return out

    @cached_property
    def xi_norm(self) -> np.ndarray:
        out = np.sqrt(self.xi2)
        out.setflags(write=False)
        return out

    @property
    def max_wavenumber(self) -> float:
        return float(self.xi_norm.max())

    def coordinates(self) -> tuple:
        axes = [np.arange(n) * (L / n) for n, L in zip(self.n, self.box)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def scaled(self, lam: float, refine: int = 1) -> "Grid":
        return Grid(tuple(n * refine for n in self.n), tuple(L * lam for L in self.box))


@dataclass
class Field:
    """Grid function in physical (``spectral=False``) or spectral representation."""

    grid: Grid
    values: np.ndarray
    spectral: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        self.values = vals

    def check_finite(self) -> "Field":
        if not np.all(np.isfinite(self.values)):
            raise InvalidField("field contains non-finite entries")
        return self

    def physical(self) -> np.ndarray:
        return self.values if not self.spectral else _inverse(self.values, self.grid)

    def coefficients(self) -> np.ndarray:
        return self.values if self.spectral else _forward(self.values, self.grid)

    def to_physical(self) -> "Field":
        return self if not self.spectral else Field(self.grid, self.physical(), False)

    def to_spectral(self) -> "Field":
        return self if self.spectral else Field(self.grid, self.coefficients(), True)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.spectral)

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self.grid, other.grid)
        if self.spectral:
            return Field(self.grid, self.values + other.coefficients(), True)
        return Field(self.grid, self.values + other.physical(), False)

    def __sub__(self, other: "Field") -> "Field":
        return self + (-1.0) * other

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.values * c, self.spectral)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid: Grid, spectral: bool = False) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128), spectral)


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch(f"grid mismatch: {a} vs {b}")


def _forward(u: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.fftn(u, norm="ortho") * np.sqrt(grid.cell_volume)


def _inverse(c: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.ifftn(c, norm="ortho") / np.sqrt(grid.cell_volume)


def transform(field: Field, direction: str = "forward") -> Field:
    """Unitary transform between physical values and orthonormal coefficients."""
    field.check_finite()
    if direction == "forward":
        return Field(field.grid, _forward(field.physical(), field.grid), True)
    if direction == "inverse":
        return Field(field.grid, _inverse(field.coefficients(), field.grid), False)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


MultiplierSpec = Union[Callable[[Grid], np.ndarray], np.ndarray, float, complex]


def _evaluate(spec: MultiplierSpec, grid: Grid) -> np.ndarray:
    if callable(spec):
        vals = spec(grid)
    else:
        vals = spec
    vals = np.broadcast_to(np.asarray(vals), grid.shape)
    if not np.all(np.isfinite(vals)):
        raise InvalidMultiplier("multiplier is not finite on every retained mode")
    return vals


def apply_multiplier(field: Field, spec: MultiplierSpec) -> Field:
    """Multiply the Fourier coefficients by ``spec(xi)``; result is spectral."""
    sym = _evaluate(spec, field.grid)
    return Field(field.grid, field.coefficients() * sym, True)


def bessel_weight(s: float) -> Callable[[Grid], np.ndarray]:
    """<xi>^s"""
    return lambda g: (1.0 + g.xi2) ** (s / 2)


def riesz_weight(s: float) -> Callable[[Grid], np.ndarray]:
    """|xi|^s with the zero mode set to 0."""

    def sym(g: Grid) -> np.ndarray:
        out = np.zeros(g.shape)
        nz = g.xi2 > 0
        out[nz] = g.xi_norm[nz] ** s
        return out

    return sym


def free_phase(grid: Grid, t: float) -> np.ndarray:
    """exp(-i t |xi|^2) on every mode."""
    return np.exp(-1j * t * grid.xi2)


def free_propagator(t: float) -> Callable[[Grid], np.ndarray]:
    """Symbol of the free Schrödinger group S(t)."""
    return lambda g: free_phase(g, t)


def compose(*specs: MultiplierSpec) -> Callable[[Grid], np.ndarray]:
    def sym(g: Grid) -> np.ndarray:
        out = np.ones(g.shape, dtype=np.complex128)
        for s in specs:
            out = out * _evaluate(s, g)
        return out

    return sym


def sobolev_norm(field: Field, s: float, homogeneous: bool = False) -> float:
    """l^2 norm of the weighted coefficients, weight |xi|^s or <xi>^s."""
    field.check_finite()
    c = field.coefficients()
    w = riesz_weight(s)(field.grid) if homogeneous else bessel_weight(s)(field.grid)
    return float(np.sqrt(np.sum(w**2 * np.abs(c) ** 2)))


def lebesgue_norm(field: Field, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    u = field.physical()
    return float((field.grid.cell_volume * np.sum(np.abs(u) ** p)) ** (1.0 / p))


# Littlewood-Paley pieces: chi = 1 on r <= 1, 0 on r >= sqrt(2), C^1 smoothstep in
# log2 r between; P_1 = chi(|xi|), P_M = chi(|xi|/M) - chi(2|xi|/M).
_LP_WIDTH = 0.5


def _chi(r: np.ndarray) -> np.ndarray:
    x = np.clip(np.log2(np.maximum(r, 1e-300)) / _LP_WIDTH, 0.0, 1.0)
    return 1.0 - (3 * x**2 - 2 * x**3)


def lp_symbol(M: int, grid: Grid) -> np.ndarray:
    if M < 1 or M & (M - 1):
        raise ValueError(f"M must be a power of two >= 1, got {M}")
    r = grid.xi_norm
    if M == 1:
        return _chi(r)
    return _chi(r / M) - _chi(2 * r / M)


def dyadic_scales(grid: Grid) -> list:
    """All dyadic M whose piece can be nonzero on the grid."""
    top = grid.max_wavenumber
    out = [1]
    while out[-1] < top:
        out.append(out[-1] * 2)
    return out


def littlewood_paley(field: Field, M: int) -> Field:
    return apply_multiplier(field, lp_symbol(M, field.grid))


def dealias_mask(grid: Grid) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for k, n in zip(grid.index_vectors, grid.n):
        mask &= np.abs(k) <= n / 3
    return mask


def dealias(field: Field) -> Field:
    """Two-thirds rule: zero every mode with some |k_j| > n_j/3."""
    return Field(field.grid, field.coefficients() * dealias_mask(field.grid), True)


def _pad(c: np.ndarray, factor: int = 2) -> np.ndarray:
    """Zero-pad FFT-ordered coefficients to ``factor`` times the size per axis."""
    out = c
    for ax in range(c.ndim):
        n = out.shape[ax]
        m = n * factor
        h = n // 2
        shape = list(out.shape)
        shape[ax] = m
        big = np.zeros(shape, dtype=np.complex128)
        lo_src = [slice(None)] * c.ndim
        hi_src = [slice(None)] * c.ndim
        hi_dst = [slice(None)] * c.ndim
        lo_src[ax] = slice(0, h)
        hi_src[ax] = slice(n - h, n)
        hi_dst[ax] = slice(m - h, m)
        big[tuple(lo_src)] = out[tuple(lo_src)]
        big[tuple(hi_dst)] = out[tuple(hi_src)]
        out = big
    return out


def _unpad(c: np.ndarray, shape: tuple) -> np.ndarray:
    out = c
    for ax, n in enumerate(shape):
        m = out.shape[ax]
        h = n // 2
        lo = [slice(None)] * c.ndim
        hi = [slice(None)] * c.ndim
        lo[ax] = slice(0, h)
        hi[ax] = slice(m - h, m)
        out = np.concatenate([out[tuple(lo)], out[tuple(hi)]], axis=ax)
    return out


def cubic_product(field: Field, dealiased: bool = True) -> Field:
    """|u|^2 u.

    ``dealiased=True`` evaluates the product on a twice-refined grid and
    truncates, which equals the exact convolution restricted to the grid's
    modes.  ``dealiased=False`` is the pointwise collocation product used by
    the time stepper.
    """
    if not dealiased:
        u = field.physical()
        return Field(field.grid, np.abs(u) ** 2 * u, False)
    grid = field.grid
    raw = sfft.fftn(field.physical())
    big_shape = tuple(2 * n for n in grid.n)
    ratio = np.prod(big_shape) / grid.size
    ufine = sfft.ifftn(_pad(raw) * ratio)
    prod = sfft.fftn(np.abs(ufine) ** 2 * ufine)
    coarse = _unpad(prod, grid.shape) / ratio
    return Field(grid, sfft.ifftn(coarse), False)


def plane_wave(grid: Grid, k: Sequence[int], amplitude: complex = 1.0) -> Field:
    """a * exp(i xi_k . x) for an integer mode index vector ``k``."""
    xs = grid.coordinates()
    phase = sum(2 * np.pi * kj / L * x for kj, L, x in zip(k, grid.box, xs))
    return Field(grid, amplitude * np.exp(1j * phase), False)


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    decay: float = 0.0,
    kmax: float | None = None,
    norm: float | None = None,
) -> Field:
    """Random-phase field with |u_hat| ~ <xi>^-decay, optionally band-limited.

    ``kmax`` restricts support to |xi| <= kmax; ``norm`` rescales to that L^2 norm.
    """
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c *= (1.0 + grid.xi2) ** (-decay / 2)
    if kmax is not None:
        c[grid.xi_norm > kmax] = 0
    f = Field(grid, c, True)
    if norm is not None:
        cur = np.sqrt(np.sum(np.abs(c) ** 2))
        f = f * (norm / cur) if cur > 0 else f
    return f.to_physical()
