import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agehopf.errors import DomainError
from agehopf.kernels import laplace_chi, panel_rule, tau_measure, total_variation
from agehopf.periodic import (
    FourierState,
    X2State,
    continue_periodic_branch,
    eval_dF_domega,
    eval_dF_dnu,
    eval_dF_dx,
    eval_dG_domega,
    eval_F,
    eval_G,
    fourier_symbol_margin,
    h_residual,
    hopf_block_determinant,
    solve_h_zero,
)
from agehopf.spectral import delta, solve_equilibrium
from agehopf.timesim import analyze_series, simulate_renewal

from conftest import E9, SQRT3


def random_state(rng, N=16, decay=2.0, cls=FourierState):
    n = np.arange(1, N + 1)
    c = (rng.normal(size=N) + 1j * rng.normal(size=N)) / n**decay
    if cls is X2State:
        c[0] = 0.0
    return cls(rng.normal(), c)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 40))
def test_fourier_round_trip(seed, N):
    x = random_state(np.random.default_rng(seed), N)
    y = FourierState.from_values(x.values(), N)
    assert abs(y.mean - x.mean) < 1e-12
    assert np.max(np.abs(y.coeffs - x.coeffs)) < 1e-12


def test_fourier_evaluation_matches_grid():
    x = random_state(np.random.default_rng(1), 8)
    assert np.allclose(x(x.grid()), x.values(), atol=1e-13)
    assert FourierState.cosine(4)(np.array([0.0, math.pi / 2])) == pytest.approx([1.0, 0.0], abs=1e-15)


def test_x2_rejects_first_harmonic():
    with pytest.raises(DomainError):
        X2State(0.0, [0.1, 0.0])
    z = X2State.project(FourierState.cosine(3))
    assert z.coeffs[0] == 0


def test_G_constant(gamma3):
    y = eval_G(gamma3, 1.3, FourierState(2.5, np.zeros(4)))
    assert y.mean == pytest.approx(2.5, abs=1e-13)
    assert np.all(y.coeffs == 0)


def test_G_cosine_symbol(gamma3):
    # gamma-3 kernel with c = 1: chi_hat(i) = 1 / (1 + i)^3 = int chi(l) exp(-i l) dl,
    # so int chi(l) cos(t - l) dl = Re(chi_hat) cos t - Im(chi_hat) sin t
    y = eval_G(gamma3, 1.0, FourierState.cosine(4))
    s = 1.0 / (1.0 + 1j) ** 3
    t = np.linspace(0, 2 * np.pi, 9)
    assert np.allclose(y(t), s.real * np.cos(t) - s.imag * np.sin(t), atol=1e-13)


@pytest.mark.parametrize("which", ["gamma", "step"])
def test_G_direct_quadrature(which, gamma3, step_kernel):
    k = gamma3 if which == "gamma" else step_kernel
    rng = np.random.default_rng(7)
    x = random_state(rng, 8)
    omega, r = 0.9, SQRT3
    y = eval_G(k, omega, x, r)
    ls, ws = panel_rule(k.intervals, 64, 16)
    for t in (0.0, 1.1, 4.0):
        direct = np.sum(ws * k.chi(ls) * x(t - omega * r * ls)) + x.mean * (1 - np.sum(ws * k.chi(ls)))
        assert y(np.array([t]))[0] == pytest.approx(direct, abs=1e-8)


def test_dG_constant_is_zero(gamma3, step_kernel):
    for k in (gamma3, step_kernel):
        y = eval_dG_domega(k, 1.0, FourierState(3.0, np.zeros(5)))
        assert y.mean == 0 and np.all(y.coeffs == 0)


def test_dG_cos_gamma3_closed_form(gamma3):
    # d/domega chi_hat(i omega) = -i * 3 * 0.5 * 2 / (1 + i omega)^4 at omega = 1
    y = eval_dG_domega(gamma3, 1.0, FourierState.cosine(3))
    expected = -1j * 3.0 / (1.0 + 1j) ** 4
    assert abs(2 * y.coeffs[0] - expected) < 1e-11


@pytest.mark.parametrize("which", ["gamma", "step"])
def test_dG_operator_norm_bounded_by_variation(which, gamma3, step_kernel):
    k = gamma3 if which == "gamma" else step_kernel
    tv = total_variation(tau_measure(k))
    rng = np.random.default_rng(3)
    omega = 1.0
    for _ in range(20):
        x = random_state(rng, 12)
        x = x.scale(1.0 / x.sup_norm())
        # omega * dG/domega = -int x(t - omega l) mu_tau(dl)
        assert omega * eval_dG_domega(k, omega, x).sup_norm() <= tv * (1 + 1e-9)


def test_X2_closure(gamma3, ricker):
    z = random_state(np.random.default_rng(5), 10, cls=X2State)
    for op in (eval_G(gamma3, 1.1, z), eval_dG_domega(gamma3, 1.1, z)):
        assert isinstance(op, X2State) and op.coeffs[0] == 0
    eq = solve_equilibrium(ricker, E9)
    lin = eval_dF_dx(gamma3, ricker, 1.0, E9, FourierState(eq.w, np.zeros(10)), z, SQRT3)
    assert abs(lin.coeffs[0]) < 1e-15


def test_F_vanishes_at_equilibrium(gamma3, ricker):
    eq = solve_equilibrium(ricker, 0.95 * E9)
    r = eval_F(gamma3, ricker, 1.2, 0.95 * E9, FourierState(eq.w, np.zeros(8)))
    assert r.sup_norm() < 1e-12


def test_mode_one_symbol_vanishes_at_hopf(gamma3, ricker):
    eq = solve_equilibrium(ricker, E9)
    lin = eval_dF_dx(gamma3, ricker, 1.0, E9, FourierState(eq.w, np.zeros(4)), FourierState.cosine(4), SQRT3)
    assert lin.sup_norm() < 1e-13


def test_linearization_symbol_equals_delta(gamma3, ricker):
    eq_nu = 1.02 * E9
    eq = solve_equilibrium(ricker, eq_nu)
    N = 12
    base = FourierState(eq.w, np.zeros(N))
    for n in range(N + 1):
        dx = FourierState(1.0, np.zeros(N)) if n == 0 else FourierState(0.0, np.eye(N)[n - 1])
        out = eval_dF_dx(gamma3, ricker, 1.0, eq_nu, base, dx, SQRT3)
        assert abs(out.mode(n) - delta(gamma3, ricker, eq_nu, 1j * n * SQRT3)) < 1e-12


@pytest.mark.parametrize("which", ["gamma", "step"])
def test_F_derivatives_by_finite_differences(which, gamma3, step_kernel, ricker):
    k = gamma3 if which == "gamma" else step_kernel
    nu = 0.97 * E9 if which == "gamma" else 9.0
    rng = np.random.default_rng(11)
    eq = solve_equilibrium(ricker, nu)
    x = FourierState(eq.w, np.zeros(10)) + random_state(rng, 10).scale(0.2)
    dx = random_state(rng, 10)
    omega, r = 1.05, 1.3
    h = 1e-6
    fd_x = (eval_F(k, ricker, omega, nu, x + dx.scale(h), r) - eval_F(k, ricker, omega, nu, x - dx.scale(h), r)).scale(0.5 / h)
    assert (fd_x - eval_dF_dx(k, ricker, omega, nu, x, dx, r)).sup_norm() < 1e-6
    hw = 1e-6
    fd_w = (eval_F(k, ricker, omega + hw, nu, x, r) - eval_F(k, ricker, omega - hw, nu, x, r)).scale(0.5 / hw)
    assert (fd_w - eval_dF_domega(k, ricker, omega, nu, x, r)).sup_norm() < 1e-6 * max(1.0, fd_w.sup_norm())
    hn = 1e-4 * nu
    fd_n = (eval_F(k, ricker, omega, nu + hn, x, r) - eval_F(k, ricker, omega, nu - hn, x, r)).scale(0.5 / hn)
    assert (fd_n - eval_dF_dnu(k, ricker, omega, nu, x, r)).sup_norm() < 1e-6 * max(1.0, fd_n.sup_norm())


def test_orthogonality_anchor(gamma3, ricker):
    # 1 = p int chi cos and 0 = p int chi sin at the Hopf point
    p = solve_equilibrium(ricker, E9).gain
    chi = laplace_chi(gamma3, 1j * SQRT3)
    assert p * chi.real == pytest.approx(1.0, abs=1e-12)
    assert abs(p * chi.imag) < 1e-12


def test_symbol_margin(gamma3, ricker, cert):
    m = fourier_symbol_margin(gamma3, ricker, E9, SQRT3, 20)
    assert m == pytest.approx(0.87991, abs=1e-4)
    assert m == pytest.approx(cert.nonresonance_margin, rel=1e-12)
    # the n = 0 term is |1 - p| = 9
    assert abs(1 - solve_equilibrium(ricker, E9).gain) == pytest.approx(9.0)


def test_block_determinant(gamma3, ricker):
    numeric, predicted = hopf_block_determinant(gamma3, ricker, E9, SQRT3)
    assert predicted == pytest.approx(-3 * SQRT3 * math.exp(-9) / 32, rel=1e-10)
    assert numeric == pytest.approx(predicted, rel=1e-6)


def test_s_zero_anchor(gamma3, ricker, cert):
    bp = solve_h_zero(gamma3, ricker, 0.0, (1.02, 1.01 * E9, None), SQRT3)
    assert bp.omega == pytest.approx(1.0, abs=1e-11)
    assert bp.nu == pytest.approx(E9, rel=1e-11)
    assert bp.z.sup_norm() < 1e-11
    assert bp.residual < 1e-10


@pytest.fixture(scope="module")
def branch(gamma3, ricker, cert):
    return continue_periodic_branch(gamma3, ricker, cert, [0.001 * i for i in range(11)])


def test_branch_converges(branch):
    assert len(branch) == 11
    assert all(bp.residual < 1e-10 for bp in branch)
    assert branch[0].z.sup_norm() == 0.0
    assert not any(bp.extrapolated for bp in branch)


def test_branch_residual_recomputed(gamma3, ricker, branch):
    bp = branch[-1]
    h = h_residual(gamma3, ricker, bp.s, bp.omega, bp.nu, bp.z, 0.0, bp.omega_ref)
    assert h.sup_norm() < 1e-10
    # and the orbit itself solves F = 0 up to the amplitude scaling
    assert eval_F(gamma3, ricker, bp.omega, bp.nu, bp.orbit(), bp.omega_ref).sup_norm() < 1e-10 * bp.s + 1e-13


def test_branch_approaches_hopf_point(branch):
    gaps = [abs(bp.nu - E9) for bp in branch[1:]]
    assert all(b > a for a, b in zip(gaps, gaps[1:]))
    assert branch[1].period == pytest.approx(2 * math.pi / SQRT3, abs=1e-6)


def test_branch_phase_symmetry(gamma3, ricker, cert, branch):
    phase = 0.9
    shifted = continue_periodic_branch(gamma3, ricker, cert, [0.0, 0.005, 0.01], phase=phase)
    ref = {round(bp.s, 6): bp for bp in branch}
    for bp in shifted:
        r = ref[round(bp.s, 6)]
        assert bp.nu == pytest.approx(r.nu, rel=1e-12)
        assert bp.omega == pytest.approx(r.omega, rel=1e-10)
        assert np.max(np.abs(bp.z.coeffs - r.z.shift(phase).coeffs)) < 1e-9


def test_branch_needs_certificate(gamma3, ricker, cert):
    from dataclasses import replace

    bad = replace(cert, verdicts={**cert.verdicts, "certified": False})
    with pytest.raises(DomainError):
        continue_periodic_branch(gamma3, ricker, bad, [0.0])


def test_large_amplitude_is_flagged(gamma3, ricker, branch):
    last = branch[-1]
    bp = solve_h_zero(gamma3, ricker, 0.15, (last.omega, last.nu, last.z), SQRT3, s_max=0.1)
    assert bp.extrapolated


def test_orbit_resimulation(gamma3, ricker, branch):
    bp = branch[-1]
    sol = simulate_renewal(gamma3, ricker, bp.nu, bp.initial_density(gamma3), 300.0, 0.01)
    d = analyze_series(sol, settle_fraction=0.3)
    assert d.amplitude == pytest.approx(bp.peak_to_peak(), rel=0.1)
    assert d.omega_fit == pytest.approx(bp.omega_physical, rel=0.01)
