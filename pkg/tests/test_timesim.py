import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from agehopf.errors import DomainError, StepSizeError
from agehopf.kernels import GammaKernel, PiecewiseConstantKernel
from agehopf.spectral import Nonlinearity, continue_eigenbranch, solve_equilibrium
from agehopf.timesim import (
    InitialAgeDensity,
    analyze_series,
    history_weights,
    reconstruct_density,
    simulate_renewal,
)

from conftest import E9, SQRT3


def perturbed(nl, nu, m, eps=1e-3, freq=SQRT3):
    eq = solve_equilibrium(nl, nu)
    return eq, InitialAgeDensity.equilibrium(eq.w, m, eps, freq)


def test_weights_carry_exact_mass(gamma3, step_kernel):
    for k in (gamma3, step_kernel):
        assert history_weights(k, 0.01).sum() == pytest.approx(1.0, abs=1e-13)


def test_weights_average_jumps(step_kernel):
    w = history_weights(step_kernel, 0.5)
    # nodes 0, 0.5, 1 (jump up), 1.5, 2 (jump down)
    assert w[0] == 0.0 and w[1] == 0.0
    assert w[2] == pytest.approx(0.5 * w[3] * math.exp(0.5 * step_kernel.mortality), rel=0.02)


def test_breakpoints_must_be_on_grid(step_kernel, ricker):
    psi = InitialAgeDensity.equilibrium(1.0, step_kernel.mortality)
    with pytest.raises(DomainError):
        simulate_renewal(step_kernel, ricker, 10.0, psi, 10.0, 0.3)


@pytest.mark.parametrize("which", ["gamma", "step"])
def test_equilibrium_is_a_fixed_point(which, gamma3, step_kernel, ricker):
    k = gamma3 if which == "gamma" else step_kernel
    nu = 0.9 * E9 if which == "gamma" else 9.0
    eq, psi = perturbed(ricker, nu, k.mortality, eps=0.0)
    sol = simulate_renewal(k, ricker, nu, psi, 100.0, 0.01)
    assert np.max(np.abs(sol.v - eq.w)) < 1e-12 * eq.w
    ages = np.linspace(0, k.a_max, 7)
    for t in (0.0, 3.3, 100.0):
        assert np.allclose(reconstruct_density(sol, t, ages), eq.density(ages, k.mortality), rtol=1e-12)


def test_density_at_time_zero_is_psi(gamma3, ricker):
    _, psi = perturbed(ricker, E9, gamma3.mortality, eps=0.3)
    sol = simulate_renewal(gamma3, ricker, E9, psi, 5.0, 0.01)
    ages = np.linspace(0, 30, 301)
    assert np.array_equal(reconstruct_density(sol, 0.0, ages), psi(ages))


def test_density_out_of_range(gamma3, ricker):
    _, psi = perturbed(ricker, E9, gamma3.mortality)
    sol = simulate_renewal(gamma3, ricker, E9, psi, 5.0, 0.01)
    with pytest.raises(DomainError):
        reconstruct_density(sol, 6.0, [0.0, 1.0])


def test_boundary_consistency_on_grid(gamma3, ricker):
    nu = 0.9 * E9
    _, psi = perturbed(ricker, nu, gamma3.mortality, eps=0.2)
    dt = 0.01
    sol = simulate_renewal(gamma3, ricker, nu, psi, 80.0, dt)
    W = history_weights(gamma3, dt)
    ages = dt * np.arange(W.size)
    for t in (50.0, 80.0):
        u = reconstruct_density(sol, t, ages)
        births = np.sum(W * u * np.exp(gamma3.mortality * ages))
        k = int(round(t / dt))
        assert ricker.f(nu, births) == pytest.approx(sol.v[k], abs=1e-12 * sol.v[k])


def test_boundary_consistency_continuous(gamma3, ricker):
    # exact quadrature of the reconstructed profile differs from the trapezoid sum by O(dt^2)
    nu = 0.9 * E9
    _, psi = perturbed(ricker, nu, gamma3.mortality, eps=0.2)
    sol = simulate_renewal(gamma3, ricker, nu, psi, 30.0, 0.01)
    t = 12.345
    a = np.linspace(0.0, gamma3.a_max, 400001)
    val = integrate.trapezoid(gamma3.birth(a) * reconstruct_density(sol, t, a), a)
    v_t = np.interp(t, sol.t, sol.v)
    assert ricker.f(nu, val) == pytest.approx(v_t, abs=1e-3)


def test_tail_record_matches_direct_integral(gamma3, ricker):
    _, psi = perturbed(ricker, E9, gamma3.mortality, eps=0.5)
    sol = simulate_renewal(gamma3, ricker, E9, psi, 20.0, 0.01)
    t = 5.0
    val, _ = integrate.quad(lambda a: gamma3.birth(a) * psi(a - t) * math.exp(-gamma3.mortality * t), t, gamma3.a_max, limit=200)
    assert sol.tail[500] == pytest.approx(val, rel=1e-4)
    assert sol.tail[-1] == 0.0 or sol.T < gamma3.a_max


def test_step_size_error():
    k = GammaKernel(1, 49.5, 50.0, 0.5)  # chi(0) = 50, unit mass
    nl = Nonlinearity("ricker")
    eq, psi = perturbed(nl, E9, k.mortality, eps=0.1)
    with pytest.raises(StepSizeError):
        simulate_renewal(k, nl, E9, psi, 5.0, 0.1)


def test_blowup_is_reported(gamma3):
    nl = Nonlinearity("user_poly", ((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)))  # f = nu w^2
    psi = InitialAgeDensity.equilibrium(2.0, gamma3.mortality)
    sol = simulate_renewal(gamma3, nl, 2.0, psi, 200.0, 0.01)
    assert sol.status == "blowup"
    assert sol.T < 200.0
    assert np.all(np.isfinite(sol.v))


@settings(max_examples=15, deadline=None)
@given(eps=st.floats(-1.0, 1.0), nu_scale=st.floats(0.5, 1.5), freq=st.floats(0.0, 5.0))
def test_positivity(eps, nu_scale, freq):
    k, nl = GammaKernel(3, 0.5, 0.5, 0.5), Nonlinearity("ricker")
    nu = nu_scale * E9
    _, psi = perturbed(nl, nu, k.mortality, eps=eps, freq=freq)
    sol = simulate_renewal(k, nl, nu, psi, 20.0, 0.02)
    assert np.all(sol.v >= 0)


@pytest.mark.parametrize("factor", [2.0, 1.7])
def test_time_rescaling(gamma3, ricker, factor):
    nu = 1.05 * E9
    _, psi = perturbed(ricker, nu, gamma3.mortality, eps=0.1)
    dt = 0.02
    base = simulate_renewal(gamma3, ricker, nu, psi, 60.0, dt)
    k2 = gamma3.rescale_ages(factor)
    psi2 = InitialAgeDensity(lambda a: psi(a / factor))
    scaled = simulate_renewal(k2, ricker, nu, psi2, 60.0 * factor, dt * factor)
    assert scaled.v.size == base.v.size
    assert np.max(np.abs(scaled.v - base.v)) < 1e-10


def test_step_halving_first_order(gamma3, ricker):
    nu = 0.9 * E9
    _, psi = perturbed(ricker, nu, gamma3.mortality)
    sols = [simulate_renewal(gamma3, ricker, nu, psi, 50.0, 0.04 / 2**i) for i in range(3)]
    d1 = np.max(np.abs(sols[0].v - sols[1].v[::2]))
    d2 = np.max(np.abs(sols[1].v - sols[2].v[::2]))
    assert 1.5 <= d1 / d2 <= 3.0


def test_table_density_validation():
    with pytest.raises(DomainError):
        InitialAgeDensity.table([0.0, 1.0], [1.0, -0.5])
    psi = InitialAgeDensity.table([0.0, 1.0, 2.0], [1.0, 0.5, 0.25])
    assert psi(np.array([0.5, 3.0])) == pytest.approx([0.75, 0.0])


def test_analyze_synthetic_decay():
    t = np.arange(0, 2000.0, 0.01)
    v = 5.0 + 1e-3 * np.exp(-0.01 * t) * np.cos(1.7 * t)
    d = analyze_series((t, v))
    assert d.oscillatory
    assert d.sigma_fit == pytest.approx(-0.01, rel=0.01)
    assert d.omega_fit == pytest.approx(1.7, rel=0.01)
    assert d.period * d.omega_fit == pytest.approx(2 * math.pi, rel=1e-12)


def test_analyze_synthetic_growth_and_amplitude():
    t = np.arange(0, 600.0, 0.01)
    v = 2.0 + 1e-4 * np.exp(0.004 * t) * np.sin(0.9 * t + 0.3)
    d = analyze_series((t, v))
    assert d.sigma_fit == pytest.approx(0.004, rel=0.01)
    assert d.omega_fit == pytest.approx(0.9, rel=0.01)
    late = t >= 600.0 - 0.25 * 540.0
    assert d.amplitude == pytest.approx(np.mean(2e-4 * np.exp(0.004 * t[late])), rel=0.05)


def test_analyze_constant_series():
    t = np.arange(0, 100.0, 0.01)
    d = analyze_series((t, np.full_like(t, 3.0)))
    assert not d.oscillatory
    assert d.amplitude == 0.0


def test_analyze_monotone_decay():
    t = np.arange(0, 100.0, 0.01)
    d = analyze_series((t, 1.0 + np.exp(-0.05 * t)))
    assert not d.oscillatory
    assert d.sigma_fit == pytest.approx(-0.05, rel=0.05)


def test_frequency_matches_eigenbranch_mid_range(gamma3, ricker):
    nu = 1.05 * E9
    _, psi = perturbed(ricker, nu, gamma3.mortality)
    sol = simulate_renewal(gamma3, ricker, nu, psi, 4000.0, 0.01)
    lam = continue_eigenbranch(gamma3, ricker, E9, SQRT3, (E9, nu), 50.0).at(nu)
    d = analyze_series(sol)
    assert d.omega_fit == pytest.approx(lam.imag, rel=0.02)
    assert d.sigma_fit == pytest.approx(lam.real, rel=0.1)
