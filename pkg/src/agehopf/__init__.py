"""Hopf bifurcation detection, simulation and periodic-orbit continuation for
age-structured populations with a nonlinear birth law."""

from .errors import (
    AgeHopfError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    FoldPointError,
    NoEquilibriumError,
    NormalizationError,
    NoSolutionError,
    ScenarioError,
    StepSizeError,
)
from .kernels import (
    GammaKernel,
    PiecewiseConstantKernel,
    QuadratureConfig,
    chi_eval,
    integrate_by_parts,
    laplace_chi,
    laplace_chi_moment,
    measure_integral,
    normalize,
    tau_measure,
    tau_transform,
    total_variation,
)
from .periodic import (
    BranchPoint,
    FourierState,
    X2State,
    continue_periodic_branch,
    eval_dF_dx,
    eval_dG_domega,
    eval_F,
    eval_G,
    fourier_symbol_margin,
    solve_h_zero,
)
from .scenario import Scenario, load_scenario, parse_scenario
from .spectral import (
    Nonlinearity,
    certify_hopf,
    continue_eigenbranch,
    delta,
    find_hopf,
    solve_equilibrium,
)
from .timesim import InitialAgeDensity, RenewalSolution, analyze_series, reconstruct_density, simulate_renewal

__version__ = "0.1.0"
