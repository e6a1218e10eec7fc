"""Hilbert-Schmidt forcing operators, complex Wiener paths and the stochastic convolution.

Noise convention: one complex Brownian motion per Fourier mode of the source
grid, with independent real and imaginary parts of variance ``t`` each, so
``E|beta(t)|^2 = 2t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, NormDiverges, ScalingGridError
from .spectral import Field, Grid, bessel_weight, free_phase, riesz_weight

__all__ = [
    "FourierDiagonal",
    "SeparableKernel",
    "DenseKernel",
    "default_operator",
    "hs_norm",
    "smooth_operator",
    "trace_density",
    "WienerPath",
    "sample_wiener",
    "StochasticConvolution",
    "stochastic_convolution",
    "half_step_phase",
    "scale_operator",
    "scaled_white_noise_check",
]


def _weight(s: float, homogeneous: bool, grid: Grid) -> np.ndarray:
    return riesz_weight(s)(grid) if homogeneous else bessel_weight(s)(grid)


class _HSBase:
    grid: Grid
    source_grid: Grid

    def noise_increment(self, dbeta: np.ndarray) -> np.ndarray:
        """Coefficients on ``grid`` of phi applied to sum_k dbeta_k e_k."""
        return self.apply(Field(self.source_grid, dbeta, True)).coefficients()

    def kernel_matrix(self) -> np.ndarray:
        """k(x_i, y_j) sampled on target x source grid points."""
        src = self.source_grid
        cols = np.empty((self.grid.size, src.size), dtype=np.complex128)
        basis = np.zeros(src.size, dtype=np.complex128)
        # phi f(x) = sum_j k(x, y_j) f(y_j) dy, so column j is phi(delta_j)/dy
        for j in range(src.size):
            basis[:] = 0
            basis[j] = 1.0 / src.cell_volume
            cols[:, j] = self.apply(Field(src, basis.reshape(src.shape), False)).physical().ravel()
        return cols

    def to_dense(self) -> "DenseKernel":
        return DenseKernel(self.kernel_matrix(), self.grid, self.source_grid)


@dataclass(frozen=True, eq=False)
class FourierDiagonal(_HSBase):
    """phi e_k = coeffs[k] e'_k : source basis mode k to target basis mode k.

    With ``source_grid is None`` source and target coincide and phi is an
    ordinary Fourier multiplier.  A different source grid arises after kernel
    scaling, where only the output variable is dilated.
    """

    grid: Grid
    coeffs: np.ndarray
    source_grid: Optional[Grid] = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128).reshape(self.grid.shape)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.source_grid is None:
            object.__setattr__(self, "source_grid", self.grid)
        elif self.source_grid.n != self.grid.n:
            raise GridMismatch("diagonal operators need equal mode counts on both grids")

    def apply(self, f: Field) -> Field:
        if f.grid != self.source_grid:
            raise GridMismatch("operand is not on the operator's source grid")
        return Field(self.grid, self.coeffs * f.coefficients(), True)

    def noise_increment(self, dbeta: np.ndarray) -> np.ndarray:
        return self.coeffs * dbeta

    def scaled_coeffs(self, factor) -> "FourierDiagonal":
        return FourierDiagonal(self.grid, self.coeffs * factor, self.source_grid)


@dataclass(frozen=True, eq=False)
class SeparableKernel(_HSBase):
    """Rank-one kernel k(x, y) = g(x) conj(h(y)), i.e. phi f = <h, f> g."""

    g: Field
    h: Field

    @property
    def grid(self) -> Grid:
        return self.g.grid

    @property
    def source_grid(self) -> Grid:
        return self.h.grid

    def apply(self, f: Field) -> Field:
        if f.grid != self.source_grid:
            raise GridMismatch("operand is not on the operator's source grid")
        inner = np.vdot(self.h.coefficients(), f.coefficients())
        return Field(self.grid, inner * self.g.coefficients(), True)


@dataclass(frozen=True, eq=False)
class DenseKernel(_HSBase):
    """Kernel sampled on grid points; small grids only (size^2 storage)."""

    matrix: np.ndarray
    grid: Grid
    source_grid: Optional[Grid] = None

    def __post_init__(self):
        if self.source_grid is None:
            object.__setattr__(self, "source_grid", self.grid)
        k = np.asarray(self.matrix, dtype=np.complex128)
        if k.shape != (self.grid.size, self.source_grid.size):
            raise GridMismatch(f"kernel shape {k.shape} does not match the grids")
        object.__setattr__(self, "matrix", k)

    def apply(self, f: Field) -> Field:
        if f.grid != self.source_grid:
            raise GridMismatch("operand is not on the operator's source grid")
        vals = self.matrix @ f.physical().ravel() * self.source_grid.cell_volume
        return Field(self.grid, vals.reshape(self.grid.shape), False)

    def kernel_matrix(self) -> np.ndarray:
        return self.matrix


def default_operator(grid: Grid, amplitude: float = 1.0, sigma: float | None = None) -> FourierDiagonal:
    """phi_hat(xi) = amplitude * <xi>^-sigma, sigma defaulting to 1 + d/2."""
    if sigma is None:
        sigma = 1.0 + grid.dim / 2
    return FourierDiagonal(grid, amplitude * (1.0 + grid.xi2) ** (-sigma / 2))


def hs_norm(op, s: float = 0.0, homogeneous: bool = True) -> float:
    """||phi||_{HS(L^2; H^s)} (homogeneous: dot-H^s); basis independent."""
    w = _weight(s, homogeneous, op.grid)
    if isinstance(op, FourierDiagonal):
        val = np.sqrt(np.sum(w**2 * np.abs(op.coeffs) ** 2))
    elif isinstance(op, SeparableKernel):
        gn = np.sqrt(np.sum(w**2 * np.abs(op.g.coefficients()) ** 2))
        hn = np.sqrt(np.sum(np.abs(op.h.coefficients()) ** 2))
        val = gn * hn
    else:
        # mixed norm: integrate the x-norm of each column against dy
        k = op.kernel_matrix()
        grid = op.grid
        cols = k.T.reshape((op.source_grid.size,) + grid.shape)
        axes = tuple(range(1, grid.dim + 1))
        chat = sfft.fftn(cols, axes=axes, norm="ortho") * np.sqrt(grid.cell_volume)
        per_col = np.sum(w**2 * np.abs(chat) ** 2, axis=axes)
        val = np.sqrt(op.source_grid.cell_volume * np.sum(per_col))
    val = float(val)
    if not np.isfinite(val):
        raise NormDiverges(f"HS norm diverges at s={s}")
    return val


def smooth_operator(op, multiplier: np.ndarray):
    """The composition m(D) phi for a Fourier multiplier acting on the output side."""
    if isinstance(op, FourierDiagonal):
        return FourierDiagonal(op.grid, op.coeffs * multiplier, op.source_grid)
    if isinstance(op, SeparableKernel):
        return SeparableKernel(Field(op.grid, op.g.coefficients() * multiplier, True), op.h)
    k = op.kernel_matrix()
    grid = op.grid
    cols = k.T.reshape((op.source_grid.size,) + grid.shape)
    axes = tuple(range(1, grid.dim + 1))
    cols = sfft.ifftn(sfft.fftn(cols, axes=axes) * multiplier, axes=axes)
    return DenseKernel(cols.reshape(op.source_grid.size, grid.size).T, grid, op.source_grid)


def trace_density(op) -> np.ndarray:
    """x -> sum_n |phi e_n(x)|^2, the pointwise variance density of phi dW/dt."""
    grid = op.grid
    if isinstance(op, FourierDiagonal):
        return np.full(grid.shape, np.sum(np.abs(op.coeffs) ** 2) / grid.volume)
    if isinstance(op, SeparableKernel):
        hn2 = np.sum(np.abs(op.h.coefficients()) ** 2)
        return np.abs(op.g.physical()) ** 2 * hn2
    k = op.kernel_matrix()
    dens = np.sum(np.abs(k) ** 2, axis=1) * op.source_grid.cell_volume
    return dens.reshape(grid.shape)


@dataclass(frozen=True)
class WienerPath:
    """Seeded complex Brownian increments, one per source mode per step.

    Increments are produced lazily from a PCG64 stream in base steps of size
    ``base_dt``; a coarsened path sums ``coarsening`` consecutive base
    increments, so refinement ladders share one noise realization and coarse
    increments are bitwise sums of the fine ones.
    """

    seed: int
    base_dt: float
    steps: int
    grid: Grid
    coarsening: int = 1

    _BLOCK = 64

    @property
    def dt(self) -> float:
        return self.base_dt * self.coarsening

    @property
    def n_modes(self) -> int:
        return self.grid.size

    def _base_stream(self) -> Iterator[np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        scale = np.sqrt(self.base_dt)
        remaining = self.steps * self.coarsening
        shape = self.grid.shape
        while remaining > 0:
            b = min(self._BLOCK, remaining)
            z = rng.standard_normal((b, 2) + shape)
            for i in range(b):
                yield scale * z[i, 0] + 1j * (scale * z[i, 1])
            remaining -= b

    def __iter__(self) -> Iterator[np.ndarray]:
        base = self._base_stream()
        if self.coarsening == 1:
            yield from base
            return
        for _ in range(self.steps):
            acc = next(base).copy()
            for _ in range(self.coarsening - 1):
                acc += next(base)
            yield acc

    @property
    def increments(self) -> np.ndarray:
        """All increments, shape (steps,) + grid.shape.  Memory heavy."""
        if not self.steps:
            return np.zeros((0,) + self.grid.shape, dtype=np.complex128)
        return np.stack(list(self))

    def coarsen(self, factor: int) -> "WienerPath":
        if factor < 1 or self.steps % factor:
            raise ValueError("step count must be divisible by the coarsening factor")
        return WienerPath(self.seed, self.base_dt, self.steps // factor, self.grid,
                          self.coarsening * factor)


def sample_wiener(seed: int, dt: float, steps: int, grid: Grid) -> WienerPath:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return WienerPath(int(seed), float(dt), int(steps), grid)


def half_step_phase(grid: Grid, dt: float) -> np.ndarray:
    """exp(-i |xi|^2 dt/2): half a step of the free Schrödinger group."""
    return free_phase(grid, 0.5 * dt)


@dataclass
class StochasticConvolution:
    times: np.ndarray
    snapshots: list

    def __len__(self):
        return len(self.times)


def stochastic_convolution(op, path: WienerPath, save_times: Sequence[float] | None = None,
                           save_stride: int | None = None) -> StochasticConvolution:
    """Exact per-mode recursion Psi_hat <- S(dt)(Psi_hat - i phi dbeta), Psi(0) = 0.

    Snapshots are taken at step indices nearest ``save_times`` or every
    ``save_stride`` steps (default: every step).
    """
    if path.grid != op.source_grid:
        raise GridMismatch("Wiener path and operator source grid differ")
    grid = op.grid
    full = free_phase(grid, path.dt)
    if save_times is not None:
        want = sorted({int(round(t / path.dt)) for t in save_times})
    else:
        stride = save_stride or 1
        want = list(range(0, path.steps + 1, stride))
    want_set = set(want)
    c = np.zeros(grid.shape, dtype=np.complex128)
    times, snaps = [], []
    if 0 in want_set:
        times.append(0.0)
        snaps.append(Field(grid, c.copy(), True))
    for j, db in enumerate(path, start=1):
        c = full * (c - 1j * op.noise_increment(db))
        if j in want_set:
            times.append(j * path.dt)
            snaps.append(Field(grid, c.copy(), True))
    return StochasticConvolution(np.array(times), snaps)


def scale_operator(op, lam: float, target_grid: Grid | None = None):
    """Kernel dilation k^lam(x, y) = lam^-2 k(x/lam, y) onto the box enlarged by lam.

    The output variable lives on ``op.grid.scaled(lam)``: same point count,
    box lengths times ``lam``, so sample values of the dilated kernel are the
    original samples times ``lam**-2``.
    """
    if not lam >= 1:
        raise ScalingGridError(f"scaling factor must be >= 1, got {lam}")
    new_grid = op.grid.scaled(lam)
    if target_grid is not None and target_grid != new_grid:
        raise ScalingGridError(f"target grid {target_grid} is not the lam-dilation {new_grid}")
    if lam == 1:
        return op
    d = op.grid.dim
    if isinstance(op, FourierDiagonal):
        # column phi_k e_k(x/lam) = lam^(d/2) phi_k e'_k(x) on the dilated box
        return FourierDiagonal(new_grid, op.coeffs * lam ** (-2 + d / 2), op.source_grid)
    if isinstance(op, SeparableKernel):
        g = Field(new_grid, op.g.physical() * lam**-2.0, False)
        return SeparableKernel(g, op.h)
    if isinstance(op, DenseKernel):
        return DenseKernel(op.matrix * lam**-2.0, new_grid, op.source_grid)
    raise TypeError(f"unsupported operator type {type(op).__name__}")


def scaled_white_noise_check(lam: float, a1: float, a2: float, *, dim: int = 1,
                             cells: int = 8, samples: int = 4000, seed: int = 0,
                             dt: float = 1.0, dx: float = 1.0) -> dict:
    """Monte Carlo check that xi^lam = lam^-(a1+d a2)/2 xi(lam^-a1 t, lam^-a2 x) is white.

    White noise is represented by its integrals over base lattice cells
    (variance = cell measure).  Target cells of size dt x dx^d are built for
    the unscaled noise by summing base cells, and for the scaled noise by
    summing the base cells of the preimage and multiplying by
    lam^((a1 + d a2)/2).  ``lam**a1`` and ``lam**a2`` must be integers or
    reciprocals of integers so both cell families tile the base lattice.
    Also reports the quadratic-variation ratio of a deterministically
    rescaled complex path W^lam(t) = lam^(a1/2) W(lam^-a1 t).
    """
    def _ratio(p):
        f = lam**p
        r = f if f >= 1 else 1.0 / f
        if abs(r - round(r)) > 1e-9:
            raise ScalingGridError("lam**a must be an integer or its reciprocal")
        return f

    ft, fx = _ratio(a1), _ratio(a2)
    bt = dt * min(1.0, 1.0 / ft)
    bx = dx * min(1.0, 1.0 / fx)
    nt_u, nx_u = int(round(dt / bt)), int(round(dx / bx)) ** dim
    nt_s, nx_s = int(round(dt / ft / bt)), int(round(dx / fx / bx)) ** dim
    amp = lam ** ((a1 + dim * a2) / 2)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    nt, nx = max(nt_u, nt_s), max(nx_u, nx_s)
    z = rng.standard_normal((samples, cells, nt, nx)) * np.sqrt(bt * bx**dim)
    plain = z[:, :, :nt_u, :nx_u].sum(axis=(2, 3))
    scaled = amp * z[:, :, :nt_s, :nx_s].sum(axis=(2, 3))
    cell = dt * dx**dim
    var_plain = plain.var(axis=0, ddof=1).mean()
    var_scaled = scaled.var(axis=0, ddof=1).mean()
    se = np.sqrt(2.0 / (samples - 1) / cells)
    steps = 1000
    w = rng.standard_normal((steps, 2)) * np.sqrt(dt)
    dW = w[:, 0] + 1j * w[:, 1]
    qv = np.sum(np.abs(dW) ** 2) / (steps * dt)
    qv_scaled = np.sum(np.abs(lam ** (a1 / 2) * dW) ** 2) / (steps * dt * lam**a1)
    return {
        "lam": lam,
        "a1": a1,
        "a2": a2,
        "variance_ratio": float(var_scaled / var_plain),
        "variance_ratio_se": float(se * np.sqrt(2.0)),
        "scaled_variance_over_cell": float(var_scaled / cell),
        "neighbour_covariance": float(np.mean(scaled[:, :-1] * scaled[:, 1:]) / cell),
        "neighbour_covariance_se": float(1.0 / np.sqrt(samples * (cells - 1))),
        "qv_ratio": float(qv_scaled / qv),
    }
