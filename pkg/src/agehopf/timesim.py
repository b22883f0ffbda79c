"""Time simulation through the renewal equation for the newborn flux.

Along characteristics ``u(t, a) = v(t - a) exp(-m a)`` for ``a < t`` and
``u(t, a) = psi(a - t) exp(-m t)`` for ``a >= t``, so the whole model reduces
to a scalar Volterra equation for ``v(t) = u(t, 0)``:

    v(t) = f(nu, int_0^t chi(a) v(t - a) da + tail(t)).

Writing the initial density as a virtual past ``v(-s) = psi(s) exp(m s)``
turns ``tail(t)`` into the same convolution, which is what the solver does.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, StepSizeError
from .kernels import DEFAULT_QUAD, BirthKernel, QuadratureConfig, laplace_chi

__all__ = [
    "InitialAgeDensity",
    "RenewalSolution",
    "SeriesDiagnostics",
    "history_weights",
    "simulate_renewal",
    "reconstruct_density",
    "analyze_series",
]

log = logging.getLogger(__name__)

V_CAP = 1e12


@dataclass(frozen=True, eq=False)
class InitialAgeDensity:
    """Non-negative initial age profile ``psi``."""

    func: Callable
    label: str = "custom"

    def __call__(self, a):
        return np.asarray(self.func(np.asarray(a, dtype=float)), dtype=float)

    @classmethod
    def equilibrium(cls, w: float, mortality: float, eps: float = 0.0, freq: float = 0.0):
        """``w exp(-m a) (1 + eps cos(freq a))``; eps = 0 gives the equilibrium profile."""
        if abs(eps) > 1:
            raise DomainError("|eps| must not exceed 1 to keep psi non-negative")

        def psi(a):
            return w * np.exp(-mortality * a) * (1.0 + eps * np.cos(freq * a))

        return cls(psi, f"equilibrium(w={w!r}, eps={eps!r}, freq={freq!r})")

    @classmethod
    def table(cls, ages, values):
        """Linear interpolation of samples, zero beyond the last age."""
        ages = np.asarray(ages, dtype=float)
        values = np.asarray(values, dtype=float)
        if ages.ndim != 1 or ages.shape != values.shape or ages.size < 2:
            raise DomainError("table density needs matching 1-d age and value arrays")
        if np.any(np.diff(ages) <= 0) or ages[0] < 0:
            raise DomainError("table ages must be non-negative and increasing")
        if np.any(values < 0):
            raise DomainError("initial density must be non-negative")

        def psi(a):
            return np.interp(a, ages, values, left=values[0], right=0.0)

        return cls(psi, "table")

    @classmethod
    def from_history(cls, history: Callable, mortality: float):
        """Profile generated by a past newborn flux: ``psi(a) = history(-a) exp(-m a)``."""

        def psi(a):
            return history(-a) * np.exp(-mortality * a)

        return cls(psi, "history")


@dataclass
class RenewalSolution:
    """Newborn flux ``v`` on the grid ``t_k = k dt``.

    ``tail[k]`` is the part of the birth integral carried by the initial
    cohorts still alive at ``t_k``.
    """

    t: np.ndarray
    v: np.ndarray
    tail: np.ndarray
    dt: float
    T: float
    nu: float
    kernel: BirthKernel
    psi: InitialAgeDensity
    status: str = "ok"
    meta: dict = field(default_factory=dict)


def _grid_multiple(x: float, dt: float) -> int:
    n = round(x / dt)
    return n if abs(n * dt - x) <= 1e-9 * max(1.0, x) else -1


def _weights(kernel: BirthKernel, dt: float, quad: QuadratureConfig):
    for bp in kernel.jump_ages:
        if _grid_multiple(bp, dt) < 0:
            raise DomainError(f"dt={dt!r} does not divide kernel breakpoint {bp!r}")
    J = math.ceil(kernel.a_max / dt - 1e-9)
    ages = dt * np.arange(J + 1)
    right = 0.5 * dt * kernel.chi(ages)
    left = 0.5 * dt * kernel.chi_left(ages)
    left[0] = 0.0
    right[-1] = 0.0
    total = (right + left).sum()
    corr = laplace_chi(kernel, 0.0, quad).real / total if total > 0 else 1.0
    return corr * (right + left), corr * right


def history_weights(kernel: BirthKernel, dt: float, quad: QuadratureConfig = DEFAULT_QUAD):
    """Trapezoid weights of chi on the age grid ``j dt``, ``j = 0..J``.

    Each node collects half a cell from either side using the one-sided
    value of chi, so jumps at grid nodes are handled exactly. The weights are
    then rescaled so that they sum to the exact mass of chi, which keeps the
    constant solution an exact fixed point of the discrete scheme.
    """
    return _weights(kernel, dt, quad)[0]


def simulate_renewal(
    kernel: BirthKernel,
    nl,
    nu: float,
    psi: InitialAgeDensity,
    T: float,
    dt: float,
    v_cap: float = V_CAP,
    inner_tol: float = 1e-12,
    inner_max: int = 5,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> RenewalSolution:
    """March the renewal equation from ``t = 0`` to ``T`` with step ``dt``.

    The history integral uses the composite trapezoid rule on the uniform
    age grid. The node at the seam ``a = t`` carries the cohort born at
    ``t = 0``, whose density is the computed boundary value ``v(0)`` rather
    than ``psi(0)``; when the two differ the scheme is first order.
    The lag-0 weight makes each step implicit and is resolved by a short
    fixed-point iteration started from the previous value.
    """
    if not (dt > 0 and T > 0):
        raise DomainError("dt and T must be positive")
    W, half_right = _weights(kernel, dt, quad)
    J = W.size - 1
    K = int(round(T / dt))
    m = kernel.mortality

    lags = dt * np.arange(1, J + 1)
    V = np.empty(J + K + 1)
    V[:J] = (psi(lags) * np.exp(m * lags))[::-1]
    w_rev = W[1:][::-1].copy()
    w0 = W[0]

    tail = np.zeros(K + 1)
    status = "ok"
    psi0 = float(psi(np.array([0.0]))[0])
    last = psi0
    k_end = K
    for k in range(K + 1):
        window = V[k : k + J]
        rest = float(w_rev @ window)
        if k <= J:
            # initial cohorts: ages beyond the seam plus the seam's upper half cell at psi(0)
            tail[k] = float(w_rev[: J - k] @ V[k:J]) + half_right[k] * psi0
        if w0 == 0.0:
            vk = float(nl.f(nu, rest))
        else:
            vk = last
            if abs(nl.df_dw(nu, rest + w0 * vk)) * w0 >= 1.0:
                raise StepSizeError(f"lag-0 update is not contractive at t={k * dt!r}; reduce dt")
            for _ in range(inner_max):
                new = float(nl.f(nu, rest + w0 * vk))
                done = abs(new - vk) <= inner_tol * (1.0 + abs(new))
                vk = new
                if done:
                    break
        if not math.isfinite(vk) or abs(vk) > v_cap:
            status = "blowup"
            k_end = k - 1
            log.warning("renewal solution exceeded v_cap=%g at t=%g", v_cap, k * dt)
            break
        V[J + k] = vk
        last = vk

    n = k_end + 1
    return RenewalSolution(
        t=dt * np.arange(n),
        v=V[J : J + n].copy(),
        tail=tail[:n],
        dt=dt,
        T=dt * (n - 1),
        nu=float(nu),
        kernel=kernel,
        psi=psi,
        status=status,
        meta={"J": J},
    )


def reconstruct_density(sol: RenewalSolution, t: float, ages) -> np.ndarray:
    """Age profile ``u(t, .)`` from the characteristic solution."""
    if t < 0 or t > sol.T + 1e-12:
        raise DomainError(f"t={t!r} outside the simulated horizon [0, {sol.T!r}]")
    a = np.asarray(ages, dtype=float)
    if np.any(a < 0):
        raise DomainError("ages must be non-negative")
    m = sol.kernel.mortality
    born = np.interp(np.clip(t - a, 0.0, None), sol.t, sol.v) * np.exp(-m * a)
    initial = sol.psi(np.clip(a - t, 0.0, None)) * np.exp(-m * t)
    return np.where(a < t, born, initial)


@dataclass(frozen=True)
class SeriesDiagnostics:
    sigma_fit: float
    omega_fit: float
    amplitude: float
    period: float
    oscillatory: bool
    n_extrema: int


def _extrema(t, v, floor):
    # sign of the increments with exact zeros (round-off plateaus) carried forward
    sgn = np.sign(np.diff(v))
    nz = np.flatnonzero(sgn)
    if nz.size < 2:
        return np.zeros(0), np.zeros(0)
    fill = np.maximum.accumulate(np.where(sgn != 0, np.arange(sgn.size), 0))
    sgn = sgn[fill]
    sgn[: nz[0]] = sgn[nz[0]]
    idx = np.flatnonzero(sgn[1:] != sgn[:-1]) + 1
    if idx.size == 0:
        return np.zeros(0), np.zeros(0)
    y0, y1, y2 = v[idx - 1], v[idx], v[idx + 1]
    curv = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(curv != 0, np.clip(0.5 * (y0 - y2) / curv, -1.0, 1.0), 0.0)
    h = t[1] - t[0]
    te = t[idx] + off * h
    ve = y1 - 0.25 * (y0 - y2) * off
    is_max = sgn[idx - 1] > 0

    # merge wiggles below the resolution floor; they are round-off, not oscillation
    kt, kv, km = [te[0]], [ve[0]], [is_max[0]]
    for ti, vi, mi in zip(te[1:], ve[1:], is_max[1:]):
        if mi == km[-1]:
            if (vi > kv[-1]) == mi:
                kt[-1], kv[-1] = ti, vi
        elif abs(vi - kv[-1]) > floor:
            kt.append(ti)
            kv.append(vi)
            km.append(mi)
    return np.array(kt), np.array(kv)


def analyze_series(sol, settle_fraction: float = 0.1, linear_fraction: float = 0.05) -> SeriesDiagnostics:
    """Growth rate, frequency, amplitude and period of a (near-)oscillatory series.

    ``sol`` is a RenewalSolution or a ``(t, v)`` pair. The first
    ``settle_fraction`` of the horizon is discarded. Half peak-to-peak
    distances between successive extrema form the envelope; its log is
    fitted by least squares over the small-amplitude samples (at most
    ``linear_fraction`` of the largest), so a growing signal that later
    saturates still reports its linear growth rate. The frequency comes
    from the spacing of the extrema (zero crossings of the increments),
    each refined by a parabola through three samples.
    """
    t, v = (sol.t, sol.v) if isinstance(sol, RenewalSolution) else map(np.asarray, sol)
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    start = np.searchsorted(t, t[0] + settle_fraction * (t[-1] - t[0]))
    t, v = t[start:], v[start:]
    scale = max(1.0, float(np.median(np.abs(v)))) if v.size else 1.0
    floor = 1e-13 * scale
    te, ve = _extrema(t, v, floor)
    last_quarter = t[-1] - 0.25 * (t[-1] - t[0])

    if te.size < 4:
        # increments of c + A exp(sigma t) decay at the same rate, whatever c is
        inc = np.abs(np.diff(v))
        amp = float(np.ptp(v[t >= last_quarter])) if v.size else 0.0
        good = inc > floor
        if np.count_nonzero(good) >= 2:
            sigma = float(np.polyfit(t[1:][good], np.log(inc[good]), 1)[0])
        else:
            sigma = 0.0
        return SeriesDiagnostics(sigma, math.nan, amp if amp > floor else 0.0, math.nan, False, int(te.size))

    half = 0.5 * np.abs(np.diff(ve))
    tm = 0.5 * (te[1:] + te[:-1])
    small = half <= linear_fraction * half.max()
    if np.count_nonzero(small) < 4:
        small = np.ones_like(half, dtype=bool)
    sigma = float(np.polyfit(tm[small], np.log(half[small]), 1)[0])

    omega = math.pi * (te.size - 1) / (te[-1] - te[0])
    late = te[1:] >= last_quarter
    if np.any(late):
        amp = float(np.mean(2.0 * half[late]))
    else:
        amp = float(2.0 * half[-1])
    return SeriesDiagnostics(sigma, omega, amp, 2.0 * math.pi / omega, True, int(te.size))
