"""Periodic orbits near a Hopf point by Fourier-Galerkin continuation.

A periodic newborn flux with angular frequency ``omega * omega_ref`` is
written in rescaled time as a 2*pi-periodic function ``x``; it solves

    F(omega, nu, x) = x - f(nu, G(omega, x)) = 0,
    G(omega, x)(t) = int_0^inf chi(l) x(t - omega * omega_ref * l) dl.

Near the Hopf point we substitute ``x = w(nu) + s (u1 + z)`` with
``u1 = cos(t + phase)`` and ``z`` free of the first harmonic, divide by ``s``
and solve for ``(omega, nu, z)`` at each amplitude ``s``. Fixing the first
harmonic to ``u1`` is the phase condition; no extra equation is needed.
``omega_ref`` is the Hopf frequency, so the branch starts at ``omega = 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegeneracyError, DomainError
from .kernels import DEFAULT_QUAD, BirthKernel, QuadratureConfig, laplace_chi, laplace_chi_moment, tau_measure, tau_transform
from .spectral import Nonlinearity, solve_equilibrium, _gain_slope

__all__ = [
    "FourierState",
    "X2State",
    "BranchPoint",
    "eval_G",
    "eval_dG_domega",
    "eval_F",
    "eval_dF_dx",
    "eval_dF_domega",
    "eval_dF_dnu",
    "h_residual",
    "h_jacobian",
    "solve_h_zero",
    "continue_periodic_branch",
    "fourier_symbol_margin",
    "hopf_block_determinant",
]

log = logging.getLogger(__name__)

BRANCH_TOL = 1e-10
S_MAX = 0.1
N_MAX = 256


@dataclass(frozen=True, eq=False)
class FourierState:
    """Real 2*pi-periodic signal ``mean + 2 Re sum_{n=1}^N c_n exp(i n t)``."""

    mean: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).ravel()
        if c.size < 1:
            raise DomainError("a Fourier state needs at least one harmonic")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "mean", float(self.mean))

    @property
    def N(self) -> int:
        return self.coeffs.size

    @property
    def grid_size(self) -> int:
        return 4 * self.N

    def grid(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.grid_size) / self.grid_size

    def values(self) -> np.ndarray:
        """Samples on the ``4N``-point grid."""
        M = self.grid_size
        spec = np.zeros(M // 2 + 1, dtype=complex)
        spec[0] = self.mean
        spec[1 : self.N + 1] = self.coeffs
        return np.fft.irfft(spec * M, n=M)

    @classmethod
    def from_values(cls, values, N: int | None = None) -> "FourierState":
        """Project grid samples onto modes ``0..N`` (default ``N = len/4``)."""
        v = np.asarray(values, dtype=float)
        M = v.size
        N = M // 4 if N is None else N
        if N < 1 or 2 * N >= M:
            raise DomainError(f"cannot resolve {N} harmonics from {M} samples")
        spec = np.fft.rfft(v) / M
        return cls(spec[0].real, spec[1 : N + 1])

    @classmethod
    def zeros(cls, N: int) -> "FourierState":
        return cls(0.0, np.zeros(N, dtype=complex))

    @classmethod
    def cosine(cls, N: int, phase: float = 0.0) -> "FourierState":
        """``cos(t + phase)``."""
        c = np.zeros(N, dtype=complex)
        c[0] = 0.5 * np.exp(1j * phase)
        return cls(0.0, c)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        n = np.arange(1, self.N + 1)
        return self.mean + 2.0 * np.real(np.exp(1j * np.multiply.outer(t, n)) @ self.coeffs)

    def __add__(self, other: "FourierState") -> "FourierState":
        a, b = _common(self, other)
        return FourierState(a.mean + b.mean, a.coeffs + b.coeffs)

    def __sub__(self, other: "FourierState") -> "FourierState":
        return self + other.scale(-1.0)

    def scale(self, factor: float) -> "FourierState":
        return FourierState(factor * self.mean, factor * self.coeffs)

    def shift(self, phase: float) -> "FourierState":
        """``t -> x(t + phase)``."""
        n = np.arange(1, self.N + 1)
        return type(self)(self.mean, self.coeffs * np.exp(1j * n * phase))

    def resize(self, N: int) -> "FourierState":
        c = np.zeros(N, dtype=complex)
        k = min(N, self.N)
        c[:k] = self.coeffs[:k]
        return type(self)(self.mean, c)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values())))

    def mode(self, n: int) -> complex:
        """Complex coefficient of ``exp(i n t)``; ``n = 0`` is the mean."""
        if n == 0:
            return complex(self.mean)
        if n < 0:
            return complex(np.conj(self.coeffs[-n - 1]))
        return complex(self.coeffs[n - 1])


def _common(a: FourierState, b: FourierState):
    N = max(a.N, b.N)
    return a.resize(N), b.resize(N)


class X2State(FourierState):
    """Fourier state with no first harmonic."""

    def __post_init__(self):
        super().__post_init__()
        if self.coeffs[0] != 0:
            raise DomainError("X2 states have a vanishing first harmonic")

    @classmethod
    def project(cls, x: FourierState) -> "X2State":
        c = x.coeffs.copy()
        c[0] = 0.0
        return cls(x.mean, c)

    @classmethod
    def zeros(cls, N: int) -> "X2State":
        return cls(0.0, np.zeros(N, dtype=complex))

    def resize(self, N: int) -> "X2State":
        return X2State.project(FourierState.resize(self, N))


def _wrap(x: FourierState, mean, coeffs) -> FourierState:
    # diagonal operators keep X2 inputs inside X2
    cls = X2State if isinstance(x, X2State) else FourierState
    return cls(mean, coeffs)


def _symbols(kernel, omega, omega_ref, N, quad):
    theta = omega * omega_ref * np.arange(N + 1)
    return laplace_chi(kernel, 1j * theta, quad), theta


def eval_G(kernel: BirthKernel, omega: float, x: FourierState, omega_ref: float = 1.0, quad: QuadratureConfig = DEFAULT_QUAD):
    """Apply ``G(omega, .)``: harmonic ``n`` is multiplied by ``chi_hat(i n omega omega_ref)``."""
    sym, _ = _symbols(kernel, omega, omega_ref, x.N, quad)
    return _wrap(x, sym[0].real * x.mean, sym[1:] * x.coeffs)


def eval_dG_domega(kernel: BirthKernel, omega: float, x: FourierState, omega_ref: float = 1.0, quad: QuadratureConfig = DEFAULT_QUAD):
    """Derivative of ``G(omega, x)`` in ``omega``.

    Differentiating under the integral and integrating by parts against
    ``tau(l) = l chi(l)`` gives ``-(1/omega) int x(t - omega omega_ref l) mu_tau(dl)``,
    so harmonic ``n`` is multiplied by ``-(1/omega) int exp(-i n omega omega_ref l) mu_tau(dl)``.
    The constant mode is annihilated because ``mu_tau`` has zero total mass.
    """
    if omega <= 0:
        raise DomainError("omega must be positive")
    tm = tau_measure(kernel, quad)
    theta = omega * omega_ref * np.arange(1, x.N + 1)
    factor = -tau_transform(tm, theta, quad) / omega
    return _wrap(x, 0.0, factor * x.coeffs)


def _G_grid(kernel, omega, x, omega_ref, quad):
    return eval_G(kernel, omega, x, omega_ref, quad).values()


def eval_F(kernel: BirthKernel, nl: Nonlinearity, omega: float, nu: float, x: FourierState, omega_ref: float = 1.0, quad=DEFAULT_QUAD):
    """``x - f(nu, G(omega, x))``, with ``f`` applied pointwise on the ``4N`` grid."""
    if omega <= 0:
        raise DomainError("omega must be positive")
    g = _G_grid(kernel, omega, x, omega_ref, quad)
    return FourierState.from_values(x.values() - nl.f(nu, g), x.N)


def eval_dF_dx(kernel, nl, omega, nu, x: FourierState, dx: FourierState, omega_ref=1.0, quad=DEFAULT_QUAD):
    """Directional derivative ``dx - f_w(nu, G x) G dx``."""
    x, dx = _common(x, dx)
    g = _G_grid(kernel, omega, x, omega_ref, quad)
    gd = eval_G(kernel, omega, dx, omega_ref, quad).values()
    return FourierState.from_values(dx.values() - nl.df_dw(nu, g) * gd, x.N)


def eval_dF_domega(kernel, nl, omega, nu, x: FourierState, omega_ref=1.0, quad=DEFAULT_QUAD):
    g = _G_grid(kernel, omega, x, omega_ref, quad)
    dg = eval_dG_domega(kernel, omega, x, omega_ref, quad).values()
    return FourierState.from_values(-nl.df_dw(nu, g) * dg, x.N)


def eval_dF_dnu(kernel, nl, omega, nu, x: FourierState, omega_ref=1.0, quad=DEFAULT_QUAD):
    g = _G_grid(kernel, omega, x, omega_ref, quad)
    return FourierState.from_values(-nl.df_dnu(nu, g), x.N)


# -- blown-up system ---------------------------------------------------------


def _pack(omega, nu_ratio, z: FourierState):
    return np.concatenate(([omega, nu_ratio, z.mean], z.coeffs[1:].real, z.coeffs[1:].imag))


def _unpack(u, N):
    omega, nu_ratio, mean = u[0], u[1], u[2]
    re = u[3 : 3 + N - 1]
    im = u[3 + N - 1 :]
    c = np.concatenate(([0.0], re + 1j * im))
    return omega, nu_ratio, X2State(mean, c)


def _h_grid(kernel, nl, s, omega, nu, z, phase, omega_ref, w_guess, quad):
    """Grid values of ``h`` and the equilibrium used."""
    eq = solve_equilibrium(nl, nu, w_guess)
    y = FourierState.cosine(z.N, phase) + z
    gy = eval_G(kernel, omega, y, omega_ref, quad).values()
    if s == 0.0:
        return y.values() - eq.gain * gy, eq
    # the constant part maps to itself (normalized kernel), so only the increment is needed
    inc = nl.increment(nu, eq.w, s * gy)
    return y.values() + (eq.w - nl.f(nu, eq.w)) / s - inc / s, eq


def _h_vector(hv, N):
    st = FourierState.from_values(hv, N)
    return np.concatenate(([st.mean], st.coeffs.real, st.coeffs.imag))


def h_residual(kernel, nl, s, omega, nu, z: X2State, phase=0.0, omega_ref=1.0, quad=DEFAULT_QUAD) -> FourierState:
    """``h(s, omega, nu, z)`` projected on modes ``0..N``."""
    hv, _ = _h_grid(kernel, nl, s, omega, nu, z, phase, omega_ref, None, quad)
    return FourierState.from_values(hv, z.N)


def h_jacobian(kernel, nl, s, omega, nu, z: X2State, phase=0.0, omega_ref=1.0, central=False, quad=DEFAULT_QUAD, w_guess=None):
    """Finite-difference Jacobian of the packed ``h`` in ``(omega, nu/nu_ref, z)``.

    Columns: omega, nu relative to its current value, mean of z, Re and Im of
    ``c_2..c_N``. Rows: mean of h, Re and Im of ``c_1..c_N``.
    """
    N = z.N
    u = _pack(omega, 1.0, z)

    def H(vec):
        om, ratio, zz = _unpack(vec, N)
        hv, _ = _h_grid(kernel, nl, s, om, nu * ratio, zz, phase, omega_ref, w_guess, quad)
        return _h_vector(hv, N)

    base = None if central else H(u)
    J = np.empty((u.size, u.size))
    for j in range(u.size):
        step = 1e-7 * max(1.0, abs(u[j]))
        e = np.zeros_like(u)
        e[j] = step
        if central:
            J[:, j] = (H(u + e) - H(u - e)) / (2.0 * step)
        else:
            J[:, j] = (H(u + e) - base) / step
    return J


@dataclass
class BranchPoint:
    """Converged solution of the blown-up system at amplitude ``s``.

    ``omega`` is relative to ``omega_ref`` (the Hopf frequency), so the
    orbit ``x(t) = w(nu) + s (cos(t + phase) + z(t))`` in rescaled time has
    physical angular frequency ``omega * omega_ref``.
    """

    s: float
    omega: float
    nu: float
    z: X2State
    residual: float
    omega_ref: float
    w: float
    phase: float = 0.0
    iterations: int = 0
    extrapolated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def omega_physical(self) -> float:
        return self.omega * self.omega_ref

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_physical

    @property
    def amplitude_mode1(self) -> float:
        """Amplitude of the first harmonic of the orbit (equals ``s``)."""
        return self.s

    def orbit(self) -> FourierState:
        y = FourierState.cosine(self.z.N, self.phase) + self.z
        return FourierState(self.w, np.zeros(self.z.N)) + y.scale(self.s)

    def flux(self, t):
        """Newborn flux along the orbit at physical times ``t``."""
        return self.orbit()(self.omega_physical * np.asarray(t, dtype=float))

    def peak_to_peak(self) -> float:
        x = self.orbit().resize(max(self.z.N, 64)).values()
        return float(np.ptp(x))

    def initial_density(self, kernel: BirthKernel):
        """Age profile generated by the orbit's own past, for resimulation."""
        from .timesim import InitialAgeDensity

        return InitialAgeDensity.from_history(self.flux, kernel.mortality)


def _newton(kernel, nl, s, omega, nu, z, phase, omega_ref, tol, max_iter, quad):
    N = z.N
    w_guess = None
    for it in range(1, max_iter + 1):
        hv, eq = _h_grid(kernel, nl, s, omega, nu, z, phase, omega_ref, w_guess, quad)
        w_guess = eq.w
        res = float(np.max(np.abs(hv)))
        if res < tol:
            return omega, nu, z, res, eq, it - 1
        J = h_jacobian(kernel, nl, s, omega, nu, z, phase, omega_ref, quad=quad, w_guess=w_guess)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegeneracyError(f"Jacobian of the blown-up system is singular (cond={cond:.3g}) at s={s!r}")
        du = np.linalg.solve(J, -_h_vector(hv, N))
        u = _pack(omega, 1.0, z) + du
        omega, ratio, z = _unpack(u, N)
        nu = nu * ratio
        if not (omega > 0 and nu > 0):
            break
    raise ConvergenceError(f"Newton on the blown-up system did not converge at s={s!r}")


def solve_h_zero(
    kernel: BirthKernel,
    nl: Nonlinearity,
    s: float,
    seed,
    omega_ref: float = 1.0,
    phase: float = 0.0,
    N: int = 32,
    tol: float = BRANCH_TOL,
    max_iter: int = 25,
    s_max: float = S_MAX,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> BranchPoint:
    """Newton solve of ``h(s, omega, nu, z) = 0`` from ``seed = (omega, nu, z)``.

    At ``s = 0`` the residual is the linearization ``dF/dx`` at the
    equilibrium applied to ``u1 + z``. The truncation is doubled (up to
    256 harmonics) while the last retained harmonic of the solution exceeds
    1e-10 of the largest.
    """
    omega, nu, z = seed
    z = X2State.zeros(N) if z is None else X2State.project(z).resize(max(N, z.N))
    while True:
        omega, nu, z, res, eq, its = _newton(kernel, nl, float(s), float(omega), float(nu), z, phase, omega_ref, tol, max_iter, quad)
        top = np.max(np.abs(np.concatenate(([0.5, abs(z.mean)], np.abs(z.coeffs)))))
        if abs(z.coeffs[-1]) <= 1e-10 * top or z.N >= N_MAX:
            break
        log.info("doubling truncation to %d harmonics at s=%g", 2 * z.N, s)
        z = z.resize(2 * z.N)
    return BranchPoint(
        s=float(s),
        omega=float(omega),
        nu=float(nu),
        z=z,
        residual=res,
        omega_ref=float(omega_ref),
        w=eq.w,
        phase=phase,
        iterations=its,
        extrapolated=abs(s) > s_max,
    )


def continue_periodic_branch(
    kernel: BirthKernel,
    nl: Nonlinearity,
    cert,
    s_grid,
    phase: float = 0.0,
    N: int = 32,
    tol: float = BRANCH_TOL,
    s_max: float = S_MAX,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> list:
    """Trace the orbit branch over increasing amplitudes ``s_grid``.

    Each point is seeded from the previous ones (secant extrapolation once
    two are available). The branch is truncated at the first failure.
    """
    if not cert.certified:
        raise DomainError("continuation needs a certified Hopf point")
    s_grid = [float(s) for s in s_grid]
    if any(b <= a for a, b in zip(s_grid, s_grid[1:])) or (s_grid and s_grid[0] < 0):
        raise DomainError("s_grid must be non-negative and increasing")
    omega_ref = cert.omega0
    out: list = []
    seed = (1.0, cert.nu0, None)
    for s in s_grid:
        if len(out) >= 2:
            a, b = out[-2], out[-1]
            r = (s - b.s) / (b.s - a.s)
            seed = (b.omega + r * (b.omega - a.omega), b.nu + r * (b.nu - a.nu), b.z)
        elif out:
            seed = (out[-1].omega, out[-1].nu, out[-1].z)
        try:
            bp = solve_h_zero(kernel, nl, s, seed, omega_ref, phase, N, tol, s_max=s_max, quad=quad)
        except (ConvergenceError, DegeneracyError) as exc:
            log.warning("branch truncated at s=%g: %s", s, exc)
            break
        out.append(bp)
        N = bp.z.N
    return out


def fourier_symbol_margin(kernel, nl, nu0: float, omega0: float, N: int = 20, guess=None, quad=DEFAULT_QUAD) -> float:
    """``min |1 - p chi_hat(i n omega0)|`` over ``0 <= n <= N``, ``n != 1``."""
    eq = solve_equilibrium(nl, nu0, guess)
    n = np.array([0] + list(range(2, N + 1)))
    return float(np.min(np.abs(1.0 - eq.gain * laplace_chi(kernel, 1j * omega0 * n, quad))))


def hopf_block_determinant(kernel, nl, nu0: float, omega0: float, guess=None, quad=DEFAULT_QUAD):
    """2x2 block of the ``s = 0`` Jacobian in the ``(omega, nu)`` columns.

    Rows are the cosine and sine components of ``h``; ``omega`` is the
    rescaled frequency and ``nu`` enters in absolute units. Returns
    ``(numeric, predicted)``: the determinant from central differences and
    ``-p q int chi~ cos * int l chi~ cos`` for the age-rescaled kernel
    ``chi~(l) = chi(l / omega0) / omega0``.
    """
    J = h_jacobian(kernel, nl, 0.0, 1.0, nu0, X2State.zeros(4), 0.0, omega0, central=True, quad=quad)
    N = 4
    # rows 1 and 1+N carry Re c1 and Im c1; cos = 2 Re c1, sin = -2 Im c1
    rows = np.array([2.0 * J[1, :2], -2.0 * J[1 + N, :2]])
    rows[:, 1] /= nu0  # column was per relative change of nu
    numeric = float(np.linalg.det(rows))
    eq = solve_equilibrium(nl, nu0, guess)
    q = _gain_slope(nl, eq)
    c0 = laplace_chi(kernel, 1j * omega0, quad).real
    c1 = omega0 * laplace_chi_moment(kernel, 1j * omega0, 1, quad).real
    return numeric, float(-eq.gain * q * c0 * c1)
