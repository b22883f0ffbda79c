"""Birth kernels, their survival-weighted forms and quadrature against them.

A kernel couples a fertility rate ``b(a)`` with a constant mortality ``m``.
Everything downstream works with the survival-weighted kernel
``chi(a) = b(a) exp(-m a)`` and with ``tau(a) = a chi(a)``, whose Stieltjes
measure ``mu_tau`` gives the frequency derivative of the delay operator.

All kernels are immutable (frozen dataclasses) and hashable, so quadrature
rules can be cached per kernel and shared between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import DomainError, NoSolutionError, NormalizationError

__all__ = [
    "QuadratureConfig",
    "DEFAULT_QUAD",
    "BirthKernel",
    "GammaKernel",
    "PiecewiseConstantKernel",
    "TauMeasure",
    "panel_rule",
    "chi_eval",
    "normalize",
    "laplace_chi",
    "laplace_chi_moment",
    "tau_measure",
    "measure_integral",
    "integrate_by_parts",
    "tau_transform",
    "total_variation",
]

NORMALIZATION_MODES = ("scale_b0", "solve_m", "assert")
_CHUNK = 512


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Gauss-Legendre settings.

    ``panels`` is the minimum number of panels on every smooth piece of the
    kernel; more are added for oscillatory integrands so that no panel holds
    more than ``max_phase`` radians of oscillation.
    """

    panels: int = 16
    nodes: int = 16
    quad_tol: float = 1e-12
    tail_tol: float = 1e-12
    max_phase: float = 8.0

    def __post_init__(self):
        if self.panels < 1 or self.nodes < 2:
            raise ValueError("panels must be >= 1 and nodes >= 2")
        if not (self.quad_tol > 0 and self.tail_tol > 0 and self.max_phase > 0):
            raise ValueError("quad_tol, tail_tol and max_phase must be positive")


DEFAULT_QUAD = QuadratureConfig()


@lru_cache(maxsize=None)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=256)
def _cached_rule(intervals, panels, nodes, counts):
    g, gw = _leggauss(nodes)
    xs, ws = [], []
    for (lo, hi), k in zip(intervals, counts):
        edges = np.linspace(lo, hi, k + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        xs.append((mid[:, None] + half[:, None] * g).ravel())
        ws.append((half[:, None] * gw).ravel())
    if not xs:
        return np.zeros(0), np.zeros(0)
    x, w = np.concatenate(xs), np.concatenate(ws)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def panel_rule(intervals, panels=16, nodes=16, max_freq=0.0, max_phase=8.0):
    """Nodes and weights of a composite Gauss-Legendre rule.

    Every ``(lo, hi)`` pair in ``intervals`` is split into its own panels, so
    a discontinuity placed at an interval end is never straddled.
    """
    intervals = tuple((float(lo), float(hi)) for lo, hi in intervals if hi > lo)
    counts = tuple(
        max(panels, math.ceil(max_freq * (hi - lo) / max_phase)) for lo, hi in intervals
    )
    return _cached_rule(intervals, panels, nodes, counts)


def _as_ages(a):
    arr = np.asarray(a, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("ages must be non-negative")
    return arr


def _upper_power_integral(j: int, z, lower: float):
    """int_lower^inf l**j exp(-z l) dl for integer j >= 0 and Re z > 0."""
    z = np.asarray(z, dtype=complex)
    total = np.zeros_like(z)
    term = np.ones_like(z) / z  # j!/i! * lower**i / z**(j-i+1) built from i=j downward
    for i in range(j, -1, -1):
        total = total + term * lower**i
        term = term * (i / z) if i > 0 else term
    return np.exp(-z * lower) * total


class BirthKernel:
    """Interface shared by the kernel families.

    Subclasses supply the fertility rate and its smooth pieces; the
    survival weighting, ``tau`` and the jump structure are derived here.
    """

    family: str
    mortality: float
    a_max: float

    def birth(self, a):
        raise NotImplementedError

    def birth_left(self, a):
        """Left limit ``b(a-)``; equals ``birth`` for continuous kernels."""
        return self.birth(a)

    @property
    def jump_ages(self) -> tuple:
        """Ages where b (hence chi and tau) may jump."""
        return ()

    @property
    def intervals(self) -> tuple:
        """Pieces of ``[0, a_max]`` on which chi is smooth and not identically zero."""
        raise NotImplementedError

    @property
    def tau_turning_points(self) -> tuple:
        """Points where the density of mu_tau may change sign."""
        return ()

    def tau_density(self, a):
        raise NotImplementedError

    def tail_moment(self, lam, k: int):
        """Analytic value of int_{a_max}^inf l**k chi(l) exp(-lam l) dl."""
        return np.zeros(np.shape(lam), dtype=complex)

    def scaled(self, factor: float) -> "BirthKernel":
        raise NotImplementedError

    def with_mortality(self, m: float) -> "BirthKernel":
        raise NotImplementedError

    def rescale_ages(self, factor: float) -> "BirthKernel":
        """Kernel with chi'(l) = chi(l / factor) / factor (ages stretched by factor)."""
        raise NotImplementedError

    def chi(self, a):
        a = _as_ages(a)
        return self.birth(a) * np.exp(-self.mortality * a)

    def chi_left(self, a):
        a = _as_ages(a)
        return self.birth_left(a) * np.exp(-self.mortality * a)

    def tau(self, a):
        a = _as_ages(a)
        return a * self.chi(a)

    @property
    def tau_jumps(self):
        """Jump locations and masses ``tau(a) - tau(a-)`` of mu_tau."""
        locs = np.asarray(self.jump_ages, dtype=float)
        if locs.size == 0:
            return locs, np.zeros(0)
        masses = locs * (self.chi(locs) - self.chi_left(locs))
        return locs, masses


@dataclass(frozen=True)
class GammaKernel(BirthKernel):
    """``b(a) = scale * a**(shape-1) * exp(-rate a)``, so chi is a gamma density shape.

    The truncation age defaults to the smallest ``a`` where the analytic tail
    of ``int (1 + l) chi(l) dl`` drops below ``tail_tol``.
    """

    shape: int
    rate: float
    scale: float
    mortality: float
    a_max: float | None = None
    tail_tol: float = 1e-12
    family: str = field(default="gamma", init=False)

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise DomainError("gamma kernel shape must be an integer >= 1")
        object.__setattr__(self, "shape", int(self.shape))
        if not self.rate > 0 or not self.scale > 0:
            raise DomainError("gamma kernel rate and scale must be positive")
        if self.mortality < 0:
            raise DomainError("mortality must be non-negative")
        if self.a_max is None:
            object.__setattr__(self, "a_max", self._default_a_max())
        elif not self.a_max > 0:
            raise DomainError("a_max must be positive")

    @property
    def decay(self) -> float:
        return self.mortality + self.rate

    def _tail(self, lower: float) -> float:
        n, c = self.shape, self.decay
        t = _upper_power_integral(n - 1, c, lower) + _upper_power_integral(n, c, lower)
        return float(self.scale * t.real)

    def _default_a_max(self) -> float:
        lo = (self.shape + 1) / self.decay
        if self._tail(lo) < self.tail_tol:
            return lo
        hi = 2 * lo
        while self._tail(hi) >= self.tail_tol:
            lo, hi = hi, 2 * hi
        return optimize.brentq(lambda a: self._tail(a) - self.tail_tol, lo, hi, xtol=1e-10)

    def birth(self, a):
        a = np.asarray(a, dtype=float)
        return self.scale * a ** (self.shape - 1) * np.exp(-self.rate * a)

    @property
    def intervals(self):
        return ((0.0, float(self.a_max)),)

    @property
    def tau_turning_points(self):
        return (self.shape / self.decay,)

    def tau_density(self, a):
        a = np.asarray(a, dtype=float)
        n, c = self.shape, self.decay
        return self.scale * (n * a ** (n - 1) - c * a**n) * np.exp(-c * a)

    def tail_moment(self, lam, k):
        z = self.decay + np.asarray(lam, dtype=complex)
        return self.scale * _upper_power_integral(self.shape - 1 + k, z, float(self.a_max))

    def scaled(self, factor):
        return replace(self, scale=self.scale * factor)

    def with_mortality(self, m):
        return replace(self, mortality=m, a_max=None)

    def rescale_ages(self, factor):
        return replace(
            self,
            rate=self.rate / factor,
            scale=self.scale * factor ** (-self.shape),
            mortality=self.mortality / factor,
            a_max=self.a_max * factor,
        )


@dataclass(frozen=True)
class PiecewiseConstantKernel(BirthKernel):
    """Fertility constant on ``[breakpoints[i], breakpoints[i+1])`` and zero elsewhere.

    Tables of sampled fertility use the same representation (``family="table"``):
    samples are held constant up to the next breakpoint, never interpolated,
    so every jump of ``tau`` is explicit.
    """

    breakpoints: tuple
    levels: tuple
    mortality: float
    family: str = "piecewise_constant"

    def __post_init__(self):
        bp = tuple(float(x) for x in self.breakpoints)
        lv = tuple(float(x) for x in self.levels)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", lv)
        if len(bp) < 2 or len(lv) != len(bp) - 1:
            raise DomainError("need k+1 breakpoints for k levels (k >= 1)")
        if bp[0] < 0 or any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise DomainError("breakpoints must be non-negative and strictly increasing")
        if any(v < 0 or not math.isfinite(v) for v in lv):
            raise DomainError("fertility levels must be finite and non-negative")
        if self.mortality < 0:
            raise DomainError("mortality must be non-negative")

    @classmethod
    def table(cls, breakpoints, values, mortality):
        return cls(tuple(breakpoints), tuple(values), mortality, family="table")

    @property
    def a_max(self):
        return self.breakpoints[-1]

    @property
    def jump_ages(self):
        return self.breakpoints

    def _lookup(self, a, side):
        a = np.asarray(a, dtype=float)
        idx = np.searchsorted(self.breakpoints, a, side=side) - 1
        inside = (idx >= 0) & (idx < len(self.levels))
        levels = np.asarray(self.levels)
        return np.where(inside, levels[np.clip(idx, 0, len(self.levels) - 1)], 0.0)

    def birth(self, a):
        return self._lookup(a, "right")

    def birth_left(self, a):
        return self._lookup(a, "left")

    @property
    def intervals(self):
        bp = self.breakpoints
        return tuple((bp[i], bp[i + 1]) for i, v in enumerate(self.levels) if v != 0.0)

    @property
    def tau_turning_points(self):
        return (1.0 / self.mortality,) if self.mortality > 0 else ()

    def tau_density(self, a):
        a = np.asarray(a, dtype=float)
        return self.birth(a) * (1.0 - self.mortality * a) * np.exp(-self.mortality * a)

    def scaled(self, factor):
        return replace(self, levels=tuple(v * factor for v in self.levels))

    def with_mortality(self, m):
        return replace(self, mortality=m)

    def rescale_ages(self, factor):
        return replace(
            self,
            breakpoints=tuple(b * factor for b in self.breakpoints),
            levels=tuple(v / factor for v in self.levels),
            mortality=self.mortality / factor,
        )


def chi_eval(kernel: BirthKernel, a):
    """Survival-weighted fertility ``b(a) exp(-m a)``; raises DomainError for a < 0."""
    out = kernel.chi(a)
    return float(out) if np.ndim(out) == 0 else out


def _check_domain(kernel, lam):
    # the closed half plane is accepted so that lam = 0 stays legal when m = 0
    if np.any(lam.real < -kernel.mortality) or np.any(np.isnan(lam)):
        raise DomainError(f"Re(lambda) must be at least -m = {-kernel.mortality:g}")


def laplace_chi_moment(kernel: BirthKernel, lam, k: int = 0, quad: QuadratureConfig = DEFAULT_QUAD):
    """``int_0^inf l**k chi(l) exp(-lam l) dl`` for scalar or array ``lam``.

    Equals ``(-1)**k`` times the k-th derivative of ``laplace_chi``.
    """
    if int(k) != k or not 0 <= k <= 3:
        raise ValueError("moment order k must be 0, 1, 2 or 3")
    lam_arr = np.asarray(lam, dtype=complex)
    _check_domain(kernel, lam_arr)
    return _moment(kernel, lam_arr, k, quad)


def _moment(kernel, lam_arr, k, quad):
    flat = lam_arr.ravel()
    max_freq = float(np.max(np.abs(flat.imag), initial=0.0))
    x, w = panel_rule(kernel.intervals, quad.panels, quad.nodes, max_freq, quad.max_phase)
    wc = w * kernel.chi(x) * x**k
    out = np.empty(flat.shape, dtype=complex)
    for start in range(0, flat.size, _CHUNK):
        block = flat[start : start + _CHUNK]
        out[start : start + _CHUNK] = np.exp(-np.multiply.outer(block, x)) @ wc
    out += kernel.tail_moment(flat, k)
    if lam_arr.ndim == 0:
        return complex(out[0])
    return out.reshape(lam_arr.shape)


def laplace_chi(kernel: BirthKernel, lam, quad: QuadratureConfig = DEFAULT_QUAD):
    """Laplace transform of chi on the half plane Re(lam) > -m."""
    return laplace_chi_moment(kernel, lam, 0, quad)


def normalize(kernel: BirthKernel, mode: str = "scale_b0", quad: QuadratureConfig = DEFAULT_QUAD):
    """Return a kernel with ``int chi = 1``.

    ``scale_b0`` rescales the fertility, ``solve_m`` adjusts the mortality by
    bracketing and bisection, and ``assert`` only checks the condition.
    """
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}; expected one of {NORMALIZATION_MODES}")
    mass = laplace_chi(kernel, 0.0, quad).real
    if mode == "assert":
        if abs(mass - 1.0) > quad.quad_tol:
            raise NormalizationError(f"int chi = {mass!r} differs from 1 by more than {quad.quad_tol:g}")
        return kernel
    if not mass > 0:
        raise DomainError("int chi must be positive to normalize")
    if mode == "scale_b0":
        if abs(mass - 1.0) <= quad.quad_tol:
            return kernel
        return kernel.scaled(1.0 / mass)

    def excess(m):
        # lam = 0 sits on the boundary of the domain when m = 0; the integral still converges
        return _moment(kernel.with_mortality(m), np.asarray(0j), 0, quad).real - 1.0

    if excess(0.0) < 0:
        raise NoSolutionError("int b(a) da < 1: no mortality m >= 0 normalizes the kernel")
    hi = max(kernel.mortality, 1.0)
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise NoSolutionError("could not bracket the mortality solving int chi = 1")
    m = optimize.bisect(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    return kernel.with_mortality(m)


@dataclass(frozen=True)
class TauMeasure:
    """Signed measure generated by the right-continuous BV function tau(a) = a chi(a).

    Stored as its atoms (jumps ``tau(a) - tau(a-)``) plus an absolutely
    continuous part with density ``tau'`` on each smooth piece.
    """

    kernel: BirthKernel
    jump_locations: tuple
    jump_masses: tuple
    pieces: tuple
    total_variation: float

    def density(self, a):
        return self.kernel.tau_density(a)

    def split_pieces(self, upper=None):
        """Smooth pieces clipped to ``(0, upper]`` and split at turning points."""
        cuts = sorted(self.kernel.tau_turning_points)
        out = []
        for lo, hi in self.pieces:
            if upper is not None:
                hi = min(hi, upper)
            if hi <= lo:
                continue
            edges = [lo] + [c for c in cuts if lo < c < hi] + [hi]
            out.extend(zip(edges[:-1], edges[1:]))
        return tuple(out)


def tau_measure(kernel: BirthKernel, quad: QuadratureConfig = DEFAULT_QUAD) -> TauMeasure:
    locs, masses = kernel.tau_jumps
    keep = masses != 0.0
    tm = TauMeasure(kernel, tuple(locs[keep]), tuple(masses[keep]), kernel.intervals, 0.0)
    x, w = panel_rule(tm.split_pieces(), quad.panels, quad.nodes)
    tv = float(np.sum(np.abs(masses)) + np.sum(w * np.abs(kernel.tau_density(x))))
    return replace(tm, total_variation=tv)


def measure_integral(
    tm: TauMeasure,
    g: Callable,
    quad: QuadratureConfig = DEFAULT_QUAD,
    upper: float | None = None,
    max_freq: float = 0.0,
):
    """``int_(0, upper] g d mu_tau`` = sum of g at the atoms plus int g tau' over the pieces.

    ``g`` must accept an array of ages. ``max_freq`` is a hint for refining
    panels when ``g`` oscillates.
    """
    locs = np.asarray(tm.jump_locations, dtype=float)
    masses = np.asarray(tm.jump_masses, dtype=float)
    if upper is not None:
        keep = locs <= upper
        locs, masses = locs[keep], masses[keep]
    total = np.sum(np.asarray(g(locs)) * masses) if locs.size else 0.0
    x, w = panel_rule(tm.split_pieces(upper), quad.panels, quad.nodes, max_freq, quad.max_phase)
    if x.size:
        total = total + np.sum(w * np.asarray(g(x)) * tm.density(x))
    if np.iscomplexobj(total):
        return complex(total)
    return float(total)


def integrate_by_parts(
    tm: TauMeasure,
    g: Callable,
    dg: Callable,
    upper: float | None = None,
    quad: QuadratureConfig = DEFAULT_QUAD,
    max_freq: float = 0.0,
):
    """Right-hand side of the integration-by-parts identity on ``(0, upper]``.

    ``g(upper) tau(upper) - g(0) tau(0) - int_0^upper g'(s) tau(s) ds`` with the
    right-continuous value of tau at ``upper``. Independent of the atom/density
    representation, so it serves as a cross-check for ``measure_integral``.
    """
    kernel = tm.kernel
    b = float(kernel.a_max if upper is None else upper)
    # integrate over all breakpoint-delimited cells in [0, b], including zero pieces
    edges = sorted({0.0, b, *[p for p in kernel.jump_ages if 0.0 < p < b]})
    cells = list(zip(edges[:-1], edges[1:]))
    x, w = panel_rule(cells, quad.panels, quad.nodes, max_freq, quad.max_phase)
    boundary = np.asarray(g(np.array([b])))[0] * kernel.tau(b) - np.asarray(g(np.array([0.0])))[0] * kernel.tau(0.0)
    total = boundary - np.sum(w * np.asarray(dg(x)) * kernel.tau(x))
    if np.iscomplexobj(total):
        return complex(total)
    return float(total)


def tau_transform(tm: TauMeasure, theta, quad: QuadratureConfig = DEFAULT_QUAD):
    """``int exp(-i theta a) mu_tau(da)`` for scalar or array ``theta``."""
    th = np.asarray(theta, dtype=float)
    flat = th.ravel()
    locs = np.asarray(tm.jump_locations, dtype=float)
    masses = np.asarray(tm.jump_masses, dtype=float)
    max_freq = float(np.max(np.abs(flat), initial=0.0))
    x, w = panel_rule(tm.split_pieces(), quad.panels, quad.nodes, max_freq, quad.max_phase)
    wd = w * tm.density(x)
    out = np.empty(flat.shape, dtype=complex)
    for start in range(0, flat.size, _CHUNK):
        block = flat[start : start + _CHUNK]
        out[start : start + _CHUNK] = np.exp(-1j * np.multiply.outer(block, x)) @ wd
        if locs.size:
            out[start : start + _CHUNK] += np.exp(-1j * np.multiply.outer(block, locs)) @ masses
    if th.ndim == 0:
        return complex(out[0])
    return out.reshape(th.shape)


def total_variation(tm: TauMeasure) -> float:
    """``|mu_tau|((0, inf))``: absolute jumps plus the integral of ``|tau'|``."""
    return tm.total_variation
