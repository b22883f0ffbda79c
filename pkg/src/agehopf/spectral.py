"""Equilibria, the characteristic function and Hopf certification.

The linearization of the model about its constant solution has eigenvalues
in ``Re(lam) > -m`` exactly at the zeros of

    Delta(nu, lam) = 1 - p(nu) * chi_hat(lam),

where ``p(nu) = f_w(nu, w_nu)`` is the feedback gain at the equilibrium and
``chi_hat`` the Laplace transform of the survival-weighted birth kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, DomainError, FoldPointError, NoEquilibriumError
from .kernels import DEFAULT_QUAD, BirthKernel, QuadratureConfig, laplace_chi, laplace_chi_moment

log = logging.getLogger(__name__)

__all__ = [
    "NONLINEARITY_FAMILIES",
    "Nonlinearity",
    "Equilibrium",
    "SpectralTolerances",
    "HopfCertificate",
    "EigenBranch",
    "solve_equilibrium",
    "delta",
    "delta_partials",
    "find_hopf",
    "certify_hopf",
    "continue_eigenbranch",
]

NONLINEARITY_FAMILIES = ("ricker", "beverton_holt", "user_poly")
OMEGA_MIN = 1e-3


@dataclass(frozen=True)
class Nonlinearity:
    """Birth-limitation function ``f(nu, w)`` with closed-form partials.

    ``user_poly`` takes ``coefficients[i][j]`` multiplying ``nu**i * w**j``.
    """

    family: str
    coefficients: tuple = ()

    def __post_init__(self):
        if self.family not in NONLINEARITY_FAMILIES:
            raise DomainError(
                f"unknown nonlinearity family {self.family!r}; supported: {', '.join(NONLINEARITY_FAMILIES)}"
            )
        if self.family == "user_poly":
            rows = tuple(tuple(float(c) for c in row) for row in self.coefficients)
            if not rows or len({len(r) for r in rows}) != 1 or not rows[0]:
                raise DomainError("user_poly coefficients must be a non-empty rectangular table")
            object.__setattr__(self, "coefficients", rows)

    @property
    def _poly(self):
        return np.array(self.coefficients, dtype=float)

    def _polyval(self, nu, w, d_nu=0, d_w=0):
        c = self._poly
        if d_nu:
            c = np.polynomial.polynomial.polyder(c, d_nu, axis=0)
        if d_w:
            c = np.polynomial.polynomial.polyder(c, d_w, axis=1)
        return np.polynomial.polynomial.polyval2d(nu, w, c)

    def f(self, nu, w):
        if self.family == "ricker":
            return nu * w * np.exp(-w)
        if self.family == "beverton_holt":
            return nu * w / (1.0 + w)
        return self._polyval(nu, w)

    def df_dw(self, nu, w):
        if self.family == "ricker":
            return nu * np.exp(-w) * (1.0 - w)
        if self.family == "beverton_holt":
            return nu / (1.0 + w) ** 2
        return self._polyval(nu, w, d_w=1)

    def d2f_dw2(self, nu, w):
        if self.family == "ricker":
            return nu * np.exp(-w) * (w - 2.0)
        if self.family == "beverton_holt":
            return -2.0 * nu / (1.0 + w) ** 3
        return self._polyval(nu, w, d_w=2)

    def d2f_dnu_dw(self, nu, w):
        if self.family == "ricker":
            return np.exp(-w) * (1.0 - w)
        if self.family == "beverton_holt":
            return 1.0 / (1.0 + w) ** 2
        return self._polyval(nu, w, d_nu=1, d_w=1)

    def df_dnu(self, nu, w):
        if self.family == "ricker":
            return w * np.exp(-w)
        if self.family == "beverton_holt":
            return w / (1.0 + w)
        return self._polyval(nu, w, d_nu=1)

    def increment(self, nu, w, dw):
        """``f(nu, w + dw) - f(nu, w)`` without cancellation for small ``dw``."""
        if self.family == "ricker":
            return nu * np.exp(-w) * (w * np.expm1(-dw) + dw * np.exp(-dw))
        if self.family == "beverton_holt":
            return nu * dw / ((1.0 + w) * (1.0 + w + dw))
        return self.f(nu, w + dw) - self.f(nu, w)

    def default_guess(self, nu: float) -> float:
        """Starting point for the positive equilibrium when the caller gives none."""
        if self.family == "ricker" and nu > 1:
            return math.log(nu)
        if self.family == "beverton_holt" and nu > 1:
            return nu - 1.0
        return 1.0


@dataclass(frozen=True)
class Equilibrium:
    nu: float
    w: float
    dw_dnu: float
    gain: float

    def density(self, a, mortality):
        """Equilibrium age profile ``w exp(-m a)``."""
        return self.w * np.exp(-mortality * np.asarray(a, dtype=float))


def solve_equilibrium(
    nl: Nonlinearity,
    nu: float,
    guess: float | None = None,
    eq_tol: float = 1e-12,
    max_iter: int = 200,
) -> Equilibrium:
    """Newton solve of ``w = f(nu, w)`` with backtracking on the residual."""
    w = nl.default_guess(nu) if guess is None else float(guess)

    def resid(x):
        return x - nl.f(nu, x)

    g = resid(w)
    for _ in range(max_iter):
        slope = 1.0 - nl.df_dw(nu, w)
        if slope == 0.0 and abs(g) <= eq_tol * max(1.0, abs(w)):
            break  # already on the fixed point; the fold check below decides
        if slope == 0.0 or not math.isfinite(slope):
            raise NoEquilibriumError(f"Newton slope vanished at w={w!r}, nu={nu!r}")
        step = -g / slope
        lam = 1.0
        for _ in range(40):
            trial = w + lam * step
            g_trial = resid(trial)
            if math.isfinite(g_trial) and abs(g_trial) <= abs(g) or abs(g) == 0.0:
                break
            lam *= 0.5
        else:
            raise NoEquilibriumError(f"line search failed at w={w!r}, nu={nu!r}")
        w, g = trial, g_trial
        scale = max(1.0, abs(w))
        if abs(g) <= eq_tol * scale and abs(lam * step) <= 1e-6 * scale:
            break
    else:
        raise NoEquilibriumError(f"no equilibrium within {max_iter} Newton steps at nu={nu!r}")

    slope = 1.0 - nl.df_dw(nu, w)
    if abs(slope) < 1e-12:
        raise FoldPointError(f"1 - f_w vanishes at the equilibrium (nu={nu!r}, w={w!r})")
    return Equilibrium(
        nu=float(nu),
        w=float(w),
        dw_dnu=float(nl.df_dnu(nu, w) / slope),
        gain=float(nl.df_dw(nu, w)),
    )


def _gain_slope(nl: Nonlinearity, eq: Equilibrium) -> float:
    """Total derivative of the feedback gain along the equilibrium branch."""
    return float(nl.d2f_dnu_dw(eq.nu, eq.w) + nl.d2f_dw2(eq.nu, eq.w) * eq.dw_dnu)


def delta(kernel, nl, nu, lam, guess=None, quad: QuadratureConfig = DEFAULT_QUAD):
    """Characteristic function ``1 - p(nu) chi_hat(lam)`` (``lam`` may be an array)."""
    eq = solve_equilibrium(nl, nu, guess)
    return 1.0 - eq.gain * laplace_chi(kernel, lam, quad)


def delta_partials(kernel, nl, nu, lam, guess=None, quad: QuadratureConfig = DEFAULT_QUAD):
    """``(d Delta / d lam, d Delta / d nu)`` at ``(nu, lam)``."""
    eq = solve_equilibrium(nl, nu, guess)
    d_lam = eq.gain * laplace_chi_moment(kernel, lam, 1, quad)
    d_nu = -_gain_slope(nl, eq) * laplace_chi(kernel, lam, quad)
    return d_lam, d_nu


@dataclass(frozen=True)
class SpectralTolerances:
    root_tol: float = 1e-10
    res_tol: float = 1e-6
    simp_tol: float = 1e-8
    trans_tol: float = 1e-12

    def __post_init__(self):
        for name in ("root_tol", "res_tol", "simp_tol", "trans_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


class HopfCandidate(NamedTuple):
    nu: float
    omega: float


def _equilibria_along(nl, nus, guess):
    """Equilibria continued along ``nus``; ``None`` where Newton fails."""
    out = []
    w = guess
    for nu in nus:
        try:
            eq = solve_equilibrium(nl, nu, w)
        except (NoEquilibriumError, FoldPointError):
            out.append(None)
            continue
        out.append(eq)
        w = eq.w
    return out


def _polish(kernel, nl, nu, omega, guess, quad, root_tol, max_iter=60):
    """2-d Newton on (Re Delta, Im Delta) = 0 over (nu, omega)."""
    w = guess
    for _ in range(max_iter):
        eq = solve_equilibrium(nl, nu, w)
        w = eq.w
        lam = 1j * omega
        chi = laplace_chi(kernel, lam, quad)
        d = 1.0 - eq.gain * chi
        d_lam = eq.gain * laplace_chi_moment(kernel, lam, 1, quad)
        d_nu = -_gain_slope(nl, eq) * chi
        d_om = 1j * d_lam
        jac = np.array([[d_nu.real, d_om.real], [d_nu.imag, d_om.imag]])
        try:
            step = np.linalg.solve(jac, [-d.real, -d.imag])
        except np.linalg.LinAlgError:
            return None
        nu, omega = nu + step[0], omega + step[1]
        if not (math.isfinite(nu) and math.isfinite(omega)):
            return None
        if abs(step[0]) <= 1e-14 * max(1.0, abs(nu)) and abs(step[1]) <= 1e-14 * max(1.0, abs(omega)):
            break
    try:
        final = delta(kernel, nl, nu, 1j * omega, w, quad)
    except (NoEquilibriumError, FoldPointError, DomainError):
        return None
    if abs(final) >= root_tol:
        return None
    return float(nu), float(omega)


def find_hopf(
    kernel: BirthKernel,
    nl: Nonlinearity,
    nu_range,
    omega_range,
    guess: float | None = None,
    n_nu: int = 64,
    n_omega: int = 64,
    omega_min: float = OMEGA_MIN,
    tolerances: SpectralTolerances = SpectralTolerances(),
    dedup_tol: float = 1e-6,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> list[HopfCandidate]:
    """Purely imaginary roots ``Delta(nu, i omega) = 0`` inside the given rectangle.

    The rectangle is scanned for cells where both the real and imaginary part
    of Delta change sign; each such cell seeds a Newton polish. Roots closer
    than ``dedup_tol`` (relative) are merged. Result is sorted by nu, then omega.
    """
    nu_lo, nu_hi = map(float, nu_range)
    om_lo, om_hi = max(float(omega_range[0]), omega_min), float(omega_range[1])
    if not (nu_hi > nu_lo and om_hi > om_lo):
        raise DomainError("nu_range and omega_range must be non-empty intervals")
    if nu_lo > 0 and nu_hi / nu_lo >= 10:
        nus = np.geomspace(nu_lo, nu_hi, n_nu)
    else:
        nus = np.linspace(nu_lo, nu_hi, n_nu)
    omegas = np.linspace(om_lo, om_hi, n_omega)

    eqs = _equilibria_along(nl, nus, guess)
    failed = [nu for nu, e in zip(nus, eqs) if e is None]
    if failed:
        log.warning(
            "equilibrium Newton failed at %d of %d grid points in nu_range (first %.6g, last %.6g)",
            len(failed), len(nus), failed[0], failed[-1],
        )
    gains = np.array([np.nan if e is None else e.gain for e in eqs])
    chi = laplace_chi(kernel, 1j * omegas, quad)
    d = 1.0 - np.outer(gains, chi)

    def changes(part):
        corners = np.stack([part[:-1, :-1], part[1:, :-1], part[:-1, 1:], part[1:, 1:]])
        return (corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0)

    with np.errstate(invalid="ignore"):
        cells = np.argwhere(changes(d.real) & changes(d.imag))

    roots: list[HopfCandidate] = []
    slack = 1e-9 * max(1.0, abs(nu_hi))
    for i, j in cells:
        eq0 = eqs[i] or eqs[i + 1]
        if eq0 is None:
            continue
        seed_nu = 0.5 * (nus[i] + nus[i + 1])
        seed_om = 0.5 * (omegas[j] + omegas[j + 1])
        try:
            root = _polish(kernel, nl, seed_nu, seed_om, eq0.w, quad, tolerances.root_tol)
        except (NoEquilibriumError, FoldPointError, DomainError):
            root = None
        if root is None:
            continue
        nu, om = root
        if not (nu_lo - slack <= nu <= nu_hi + slack and om_lo <= om <= om_hi):
            continue
        dup = any(
            abs(nu - r.nu) <= dedup_tol * max(1.0, abs(r.nu)) and abs(om - r.omega) <= dedup_tol * max(1.0, r.omega)
            for r in roots
        )
        if not dup:
            roots.append(HopfCandidate(nu, om))
    return sorted(roots)


@dataclass(frozen=True)
class HopfCertificate:
    """Numerical values of the four bifurcation conditions at a candidate."""

    nu0: float
    omega0: float
    residual: float
    nonresonance_margin: float
    margin_k: int
    dlambda: complex
    dnu: complex
    transversality: float
    re_dlambda_dnu: float
    equilibrium: Equilibrium
    verdicts: dict = field(default_factory=dict)

    @property
    def dlambda_abs(self) -> float:
        return abs(self.dlambda)

    @property
    def certified(self) -> bool:
        return bool(self.verdicts.get("certified"))

    def to_dict(self) -> dict:
        return {
            "nu0": self.nu0,
            "omega0": self.omega0,
            "residual": self.residual,
            "nonresonance_margin": self.nonresonance_margin,
            "dlambda_abs": self.dlambda_abs,
            "transversality": self.transversality,
            "re_dlambda_dnu": self.re_dlambda_dnu,
            "verdicts": dict(self.verdicts),
        }


def certify_hopf(
    kernel: BirthKernel,
    nl: Nonlinearity,
    candidate,
    K_max: int = 20,
    guess: float | None = None,
    tolerances: SpectralTolerances = SpectralTolerances(),
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> HopfCertificate:
    """Evaluate root residual, nonresonance, simplicity and transversality.

    Failed conditions are reported through ``verdicts``, never raised.
    """
    nu0, omega0 = float(candidate[0]), float(candidate[1])
    eq = solve_equilibrium(nl, nu0, guess)
    lam0 = 1j * omega0
    chi0 = laplace_chi(kernel, lam0, quad)
    residual = abs(1.0 - eq.gain * chi0)

    ks = np.array([0] + list(range(2, K_max + 1)))
    mods = np.abs(1.0 - eq.gain * laplace_chi(kernel, 1j * omega0 * ks, quad))
    idx = int(np.argmin(mods))

    d_lam = eq.gain * laplace_chi_moment(kernel, lam0, 1, quad)
    d_nu = -_gain_slope(nl, eq) * chi0
    trans = float((d_nu * np.conj(d_lam)).real)
    re_dl = float((-d_nu / d_lam).real) if d_lam != 0 else math.nan

    tol = tolerances
    verdicts = {
        "root": bool(residual < tol.root_tol),
        "nonresonance": bool(mods[idx] > tol.res_tol),
        "simple": bool(abs(d_lam) > tol.simp_tol),
        "transversal": bool(abs(trans) > tol.trans_tol),
    }
    verdicts["certified"] = all(verdicts.values())
    return HopfCertificate(
        nu0=nu0,
        omega0=omega0,
        residual=float(residual),
        nonresonance_margin=float(mods[idx]),
        margin_k=int(ks[idx]),
        dlambda=complex(d_lam),
        dnu=complex(d_nu),
        transversality=trans,
        re_dlambda_dnu=re_dl,
        equilibrium=eq,
        verdicts=verdicts,
    )


@dataclass
class EigenBranch:
    """Samples ``(nu, lambda(nu))`` of the continued critical eigenvalue, sorted by nu."""

    nu: np.ndarray
    lam: np.ndarray
    status: str = "ok"

    @property
    def alpha(self) -> np.ndarray:
        return self.lam.real

    @property
    def omega(self) -> np.ndarray:
        return self.lam.imag

    def at(self, nu: float) -> complex:
        """Eigenvalue at a sampled parameter value (exact match required)."""
        hits = np.flatnonzero(np.isclose(self.nu, nu, rtol=1e-13, atol=0.0))
        if hits.size == 0:
            raise KeyError(f"nu={nu!r} is not a branch sample")
        return complex(self.lam[hits[0]])


def _correct(kernel, nl, nu, lam, w, quad, root_tol, max_iter=30):
    eq = solve_equilibrium(nl, nu, w)
    for _ in range(max_iter):
        d = 1.0 - eq.gain * laplace_chi(kernel, lam, quad)
        if abs(d) < 1e-3 * root_tol:
            break
        d_lam = eq.gain * laplace_chi_moment(kernel, lam, 1, quad)
        lam = lam - d / d_lam
    d = 1.0 - eq.gain * laplace_chi(kernel, lam, quad)
    if abs(d) >= root_tol or lam.imag <= 0:
        raise ConvergenceError(f"corrector failed at nu={nu!r}")
    return lam, eq


def _march(kernel, nl, nu0, lam0, w0, target, step, quad, root_tol):
    samples = []
    nu, lam, w = nu0, lam0, w0
    direction = 1.0 if target > nu0 else -1.0
    h = abs(step)
    while direction * (target - nu) > 1e-12 * max(1.0, abs(target)):
        h_try = min(h, abs(target - nu))
        for _ in range(8):
            nu_new = target if h_try == abs(target - nu) else nu + direction * h_try
            eq = solve_equilibrium(nl, nu, w)
            d_lam = eq.gain * laplace_chi_moment(kernel, lam, 1, quad)
            d_nu = -_gain_slope(nl, eq) * laplace_chi(kernel, lam, quad)
            pred = lam + (nu_new - nu) * (-d_nu / d_lam)
            try:
                lam_new, eq_new = _correct(kernel, nl, nu_new, pred, eq.w, quad, root_tol)
                break
            except (ConvergenceError, NoEquilibriumError, FoldPointError, DomainError):
                h_try *= 0.5
        else:
            return samples, "corrector_failed"
        nu, lam, w = nu_new, lam_new, eq_new.w
        samples.append((nu, lam))
    return samples, "ok"


def continue_eigenbranch(
    kernel: BirthKernel,
    nl: Nonlinearity,
    nu0: float,
    omega0: float,
    nu_span,
    step: float,
    guess: float | None = None,
    root_tol: float = 1e-10,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> EigenBranch:
    """Predictor-corrector continuation of ``Delta(nu, lambda(nu)) = 0`` from ``i omega0``.

    Marches from ``nu0`` to both ends of ``nu_span`` (the ends are hit exactly)
    using ``d lambda / d nu`` as predictor and complex Newton as corrector.
    """
    lo, hi = map(float, nu_span)
    if not lo <= nu0 <= hi:
        raise DomainError("nu0 must lie inside nu_span")
    if not step > 0:
        raise DomainError("step must be positive")
    lam0, eq0 = _correct(kernel, nl, nu0, 1j * omega0, guess, quad, root_tol)
    up, st_up = _march(kernel, nl, nu0, lam0, eq0.w, hi, step, quad, root_tol)
    down, st_down = _march(kernel, nl, nu0, lam0, eq0.w, lo, step, quad, root_tol)
    pts = down[::-1] + [(float(nu0), lam0)] + up
    status = "ok" if st_up == st_down == "ok" else "truncated"
    return EigenBranch(
        nu=np.array([p[0] for p in pts], dtype=float),
        lam=np.array([p[1] for p in pts], dtype=complex),
        status=status,
    )
