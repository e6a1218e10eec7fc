"""Dilations u -> lam^-1 u(x/lam) and the choice of (N, lam) for a target time.

A dilated field lives on the box enlarged by ``lam`` with the same number of
points (or an integer multiple of it), so Fourier index ``k`` of the source
is index ``k`` of the target and the map is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import RegularityOutOfRange, ScalingGridError
from .integrator import SimConfig
from .ioperator import build_multiplier, energy, modified_energy
from .noise import hs_norm, scale_operator, smooth_operator
from .spectral import Field, Grid, sobolev_norm

__all__ = [
    "ScalingPlan",
    "scale_field",
    "ParameterChoice",
    "lambda_exponent",
    "n_exponent",
    "regularity_threshold",
    "choose_parameters",
    "scaled_energy_factor",
    "modified_energy_scaling_defect",
    "scaled_seed",
    "scaled_run_setup",
    "scaled_noise_products",
]


@dataclass(frozen=True)
class ScalingPlan:
    """``lam >= 1`` and the grids the dilation maps between.

    ``target`` defaults to ``source.scaled(lam)``.  A target with the dilated
    box and an integer multiple of the source points is exact; any other
    point count needs ``interpolate=True`` (spectral truncation/padding).
    """

    lam: float
    source: Grid
    target: Optional[Grid] = None
    N: float = 1.0
    s: float = 0.9
    theta: float = 0.01
    interpolate: bool = False

    def __post_init__(self):
        if not (self.lam >= 1 and math.isfinite(self.lam)):
            raise ScalingGridError(f"scaling factor must be >= 1, got {self.lam}")
        if self.target is None:
            object.__setattr__(self, "target", self.source.scaled(self.lam))
        expected = tuple(L * self.lam for L in self.source.box)
        if self.target.dim != self.source.dim or not np.allclose(
                self.target.box, expected, rtol=1e-13, atol=0):
            raise ScalingGridError(
                f"target box {self.target.box} is not the lam-dilation {expected}")

    @property
    def lattice_compatible(self) -> bool:
        return all(t % n == 0 for t, n in zip(self.target.n, self.source.n))

    def compose(self, other: "ScalingPlan") -> "ScalingPlan":
        """The plan of applying ``self`` and then ``other``."""
        return ScalingPlan(self.lam * other.lam, self.source, other.target, self.N, self.s,
                           self.theta, self.interpolate or other.interpolate)


def scale_field(field: Field, plan: ScalingPlan) -> Field:
    """``u^lam(x) = lam^-1 u(x / lam)`` on ``plan.target``."""
    if field.grid != plan.source:
        raise ScalingGridError("field does not live on the plan's source grid")
    if plan.lam == 1 and plan.target == plan.source:
        return field.copy()
    if plan.target.n == plan.source.n:
        # identical sample points up to the dilation of the coordinates
        return Field(plan.target, field.physical() / plan.lam, False)
    if not (plan.lattice_compatible or plan.interpolate):
        raise ScalingGridError(
            f"point counts {plan.source.n} -> {plan.target.n} need interpolation")
    c = field.coefficients()
    src, tgt = plan.source, plan.target
    # coefficient of index k scales by lam^(d/2 - 1); zero padding keeps every
    # index (the Nyquist one included) in place, so linear norms are preserved
    c = c * plan.lam ** (src.dim / 2 - 1)
    out = _resample(c, tgt.shape)
    return Field(tgt, out, True)


def _resample(c: np.ndarray, shape: tuple) -> np.ndarray:
    for ax, (n_old, n_new) in enumerate(zip(c.shape, shape)):
        if n_new == n_old:
            continue
        cur = list(c.shape)
        if n_new > n_old:
            new = list(cur)
            new[ax] = n_new
            out = np.zeros(new, dtype=complex)
            k = np.fft.fftfreq(n_old, 1.0 / n_old).astype(int)
            idx = [slice(None)] * c.ndim
            idx[ax] = np.mod(k, n_new)
            out[tuple(idx)] = c
            c = out
        else:
            k = np.fft.fftfreq(n_new, 1.0 / n_new).astype(int)
            idx = [slice(None)] * c.ndim
            idx[ax] = np.mod(k, n_old)
            c = c[tuple(idx)].copy()
    return c


def lambda_exponent(s: float, theta: float) -> float:
    return (2 - 2 * s + 2 * theta) / (2 * s - 1)


def n_exponent(s: float, theta: float) -> float:
    return (6 * s - 5 - 4 * theta) / (2 * s - 1)


def regularity_threshold(theta: float) -> float:
    """Smallest admissible regularity 5/6 + 2 theta / 3 (exclusive)."""
    return 5.0 / 6.0 + 2.0 * theta / 3.0


@dataclass(frozen=True)
class ParameterChoice:
    T: float
    eps: float
    s: float
    theta: float
    c: float
    N: float
    lam: float
    lam_raw: float
    lambda_exponent: float
    n_exponent: float
    gamma: float
    products: dict = dc_field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def choose_parameters(T: float, eps: float, s: float, theta: float = 0.01, c: float = 1.0,
                      rounding: str = "pow2", phi_norm: Optional[float] = None) -> ParameterChoice:
    """Smallest power-of-two ``N`` with ``T <= c eps N^a`` and ``lam = N^b``.

    ``a = (6s - 5 - 4 theta)/(2s - 1)``, ``b = (2 - 2s + 2 theta)/(2s - 1)``.
    ``rounding="pow2"`` rounds ``lam`` to the nearest power of two on a log
    scale (lattice-compatible box enlargement); ``"none"`` keeps it raw.
    ``phi_norm`` is ``||phi||_{HS(L^2;H^s)}`` for the noise smallness product.
    """
    if not (T > 0 and eps > 0 and c > 0):
        raise ValueError("T, eps and c must be positive")
    if theta <= 0:
        raise ValueError("theta must be positive")
    if s <= regularity_threshold(theta) or s >= 1:
        raise RegularityOutOfRange(
            f"need {regularity_threshold(theta):.6g} < s < 1, got s = {s}")
    a = n_exponent(s, theta)
    b = lambda_exponent(s, theta)
    need = math.log(T / (c * eps)) / a
    k = max(0, math.ceil(need / math.log(2)))
    # guard the ceiling against rounding in the logarithm
    while k > 0 and (k - 1) * math.log(2) * a >= math.log(T / (c * eps)):
        k -= 1
    while k * math.log(2) * a < math.log(T / (c * eps)):
        k += 1
    N = 2.0**k
    lam_raw = N**b
    if rounding == "pow2":
        lam = 2.0 ** max(0, round(math.log2(lam_raw)))
    elif rounding == "none":
        lam = max(1.0, lam_raw)
    else:
        raise ValueError(f"unknown rounding {rounding!r}")
    products = {
        "Y1": N ** (2 - 2 * s) * lam ** (1 - 2 * s),
        "Y6a": lam**-0.25 * math.sqrt(T),
        "Y13": lam**2 * T / N,
    }
    if phi_norm is not None:
        products["Y6"] = N ** (1 - s) * lam ** (0.5 - s) * math.sqrt(T) * phi_norm
        products["Y6a"] *= phi_norm
    gamma = (1 - s + theta) / (4 * s - 2)
    return ParameterChoice(T, eps, s, theta, c, N, lam, lam_raw, b, a, gamma, products)


def scaled_energy_factor(u0: Field, N: float, lam: float, s: float) -> float:
    """``N^{2-2s} lam^{1-2s} (1 + ||u0||_{H^s})^4``, the size bound of E(I_N u0^lam)."""
    return N ** (2 - 2 * s) * lam ** (1 - 2 * s) * (1 + sobolev_norm(u0, s)) ** 4


def modified_energy_scaling_defect(u: Field, plan: ScalingPlan, profile: str = "smoothstep") -> dict:
    """Compare ``E(I_N u^lam)`` with ``lam^-1 E(I_N u)``.

    The multiplier does not commute with the dilation, so this is a measured
    quantity; the same comparison without ``I_N`` is exact.
    """
    ul = scale_field(u, plan)
    m_src = build_multiplier(plan.N, plan.s, plan.source, profile)
    m_tgt = build_multiplier(plan.N, plan.s, plan.target, profile)
    e_scaled = modified_energy(ul, m_tgt)
    e_ref = modified_energy(u, m_src) / plan.lam
    return {
        "scaled": e_scaled,
        "reference": e_ref,
        "relative_defect": abs(e_scaled - e_ref) / abs(e_ref) if e_ref else abs(e_scaled),
        "plain_relative_defect": abs(energy(ul) - energy(u) / plan.lam) / abs(energy(u) / plan.lam)
        if energy(u) else abs(energy(ul)),
    }


def scaled_seed(seed: int, lam: float) -> int:
    """Deterministic fresh seed for the dilated noise; ``lam = 1`` keeps ``seed``."""
    if lam == 1:
        return int(seed)
    key = int(round(math.log2(lam) * 2**20)) & 0xFFFFFFFF
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5CA1ED, key])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def scaled_run_setup(config: SimConfig, u0: Field, plan: ScalingPlan) -> tuple:
    """Scaled data, dilated operator, horizon ``lam^2 T`` and a fresh seed.

    Returns ``(config, u0)`` for the dilated problem.  The multiplier uses
    ``plan.N`` and ``plan.s``.
    """
    if config.grid != plan.source:
        raise ScalingGridError("config grid differs from the plan's source grid")
    lam = plan.lam
    new_u0 = scale_field(u0, plan)
    phi = config.phi
    if phi is not None:
        if plan.target != plan.source.scaled(lam):
            raise ScalingGridError("scaled operators need the same point count")
        phi = scale_operator(phi, lam, plan.target)
    new = config.with_(grid=plan.target, phi=phi, t_end=config.t_end * lam**2, lam=lam,
                       N=plan.N, s=plan.s, seed=scaled_seed(config.seed, lam))
    return new, new_u0


def scaled_noise_products(phi, N: float, lam: float, T: float, s: float,
                          sigma: float = 0.75, profile: str = "smoothstep") -> dict:
    """``lam T^{1/2} ||I_N phi^lam||_{HS(L^2; dot H^sigma)}`` next to its bound
    ``lam^{1/2 - sigma} T^{1/2} ||phi||_{HS(L^2; dot H^sigma)}`` (``lam^{-1/4}`` at sigma = 3/4)."""
    phil = scale_operator(phi, lam)
    m = build_multiplier(N, s, phil.grid, profile)
    measured = lam * math.sqrt(T) * hs_norm(smooth_operator(phil, m.values), sigma)
    bound = lam ** (0.5 - sigma) * math.sqrt(T) * hs_norm(phi, sigma)
    return {"measured": measured, "bound": bound, "ratio": measured / bound if bound else math.nan}
