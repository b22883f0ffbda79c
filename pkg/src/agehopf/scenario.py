"""Scenario files: one TOML document describing kernel, nonlinearity and analysis."""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import AgeHopfError, ScenarioError
from .kernels import NORMALIZATION_MODES, GammaKernel, PiecewiseConstantKernel, QuadratureConfig, normalize
from .spectral import NONLINEARITY_FAMILIES, Nonlinearity, SpectralTolerances

__all__ = ["KERNEL_FAMILIES", "Scenario", "AnalysisConfig", "OutputConfig", "load_scenario", "parse_scenario"]

KERNEL_FAMILIES = ("gamma", "piecewise_constant", "table")
OUTPUT_FORMATS = ("csv", "json")

_REQUIRED = object()


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _positive(x):
    return _num(x) and x > 0 and math.isfinite(x)


def _nonneg(x):
    return _num(x) and x >= 0 and math.isfinite(x)


def _pos_int(x):
    return isinstance(x, int) and not isinstance(x, bool) and x > 0


def _interval(x):
    return isinstance(x, list) and len(x) == 2 and all(_num(v) for v in x) and x[0] < x[1]


def _num_list(x):
    return isinstance(x, list) and all(_num(v) for v in x)


def _opt(check):
    return lambda x: x is None or check(x)


# key -> (default, validator, description of a valid value)
_KERNEL_COMMON = {
    "family": (_REQUIRED, lambda x: x in KERNEL_FAMILIES, f"one of {', '.join(KERNEL_FAMILIES)}"),
    "mortality": (_REQUIRED, _nonneg, "a non-negative number"),
    "normalization": ("assert", lambda x: x in NORMALIZATION_MODES, f"one of {', '.join(NORMALIZATION_MODES)}"),
}
_KERNEL_GAMMA = {
    "shape": (_REQUIRED, _pos_int, "a positive integer"),
    "rate": (_REQUIRED, _positive, "a positive number"),
    "scale": (_REQUIRED, _positive, "a positive number"),
    "a_max": (None, _opt(_positive), "a positive number"),
    "tail_tol": (1e-12, _positive, "a positive number"),
}
_KERNEL_STEP = {
    "breakpoints": (_REQUIRED, _num_list, "a list of increasing ages"),
    "levels": (_REQUIRED, _num_list, "a list of non-negative fertility levels"),
}
_NONLINEARITY = {
    "family": (_REQUIRED, lambda x: x in NONLINEARITY_FAMILIES, f"one of {', '.join(NONLINEARITY_FAMILIES)}"),
    "coefficients": ([], lambda x: isinstance(x, list) and all(_num_list(r) for r in x), "a table of numbers"),
}
_ANALYSIS = {
    "nu_range": ([1.0, 1.0e4], _interval, "an increasing pair [lo, hi]"),
    "omega_range": ([1e-3, 10.0], _interval, "an increasing pair [lo, hi]"),
    "n_nu": (64, _pos_int, "a positive integer"),
    "n_omega": (64, _pos_int, "a positive integer"),
    "equilibrium_guess": (None, _opt(_num), "a number"),
    "root_tol": (1e-10, _positive, "a positive number"),
    "res_tol": (1e-6, _positive, "a positive number"),
    "simp_tol": (1e-8, _positive, "a positive number"),
    "trans_tol": (1e-12, _positive, "a positive number"),
    "dedup_tol": (1e-6, _positive, "a positive number"),
    "omega_min": (1e-3, _positive, "a positive number"),
    "K_max": (20, lambda x: _pos_int(x) and x >= 2, "an integer >= 2"),
    "N": (32, lambda x: _pos_int(x) and x >= 2, "an integer >= 2"),
    "quad_panels": (16, _pos_int, "a positive integer"),
    "quad_nodes": (16, lambda x: _pos_int(x) and x >= 2, "an integer >= 2"),
    "quad_tol": (1e-12, _positive, "a positive number"),
    "max_phase": (8.0, _positive, "a positive number"),
    "dt": (0.01, _positive, "a positive number"),
    "T": (4000.0, _positive, "a positive number"),
    "nu": (None, _opt(_positive), "a positive number"),
    "eps": (1e-3, lambda x: _num(x) and abs(x) <= 1, "a number with |eps| <= 1"),
    "perturbation_frequency": (None, _opt(_nonneg), "a non-negative number"),
    "settle_fraction": (0.1, lambda x: _num(x) and 0 <= x < 1, "a number in [0, 1)"),
    "output_stride": (1, _pos_int, "a positive integer"),
    "density_times": ([], lambda x: _num_list(x) and all(v >= 0 for v in x), "a list of non-negative times"),
    "s_grid": (
        [round(0.001 * i, 3) for i in range(11)],
        lambda x: _num_list(x) and len(x) > 0 and x[0] >= 0 and all(b > a for a, b in zip(x, x[1:])),
        "a non-empty increasing list of amplitudes >= 0",
    ),
    "s_max": (0.1, _positive, "a positive number"),
    "branch_tol": (1e-10, _positive, "a positive number"),
    "orbit_dump": (False, lambda x: isinstance(x, bool), "true or false"),
    "diagram_range": (None, _opt(_interval), "an increasing pair [lo, hi]"),
    "diagram_points": (21, lambda x: _pos_int(x) and x >= 2, "an integer >= 2"),
    "sweep_range": (None, _opt(_interval), "an increasing pair [lo, hi]"),
    "sweep_points": (21, lambda x: _pos_int(x) and x >= 2, "an integer >= 2"),
    "eig_step": (None, _opt(_positive), "a positive number"),
}
_OUTPUT = {
    "directory": ("out", lambda x: isinstance(x, str) and x != "", "a non-empty path"),
    "formats": (
        ["csv", "json"],
        lambda x: isinstance(x, list) and x and all(v in OUTPUT_FORMATS for v in x),
        f"a non-empty list drawn from {', '.join(OUTPUT_FORMATS)}",
    ),
}


def _validate(block: dict, schema: dict, prefix: str) -> dict:
    if not isinstance(block, dict):
        raise ScenarioError(f"{prefix} must be a table", key=prefix)
    unknown = sorted(set(block) - set(schema))
    if unknown:
        raise ScenarioError(f"unknown key {prefix}.{unknown[0]}", key=f"{prefix}.{unknown[0]}")
    out = {}
    for key, (default, check, what) in schema.items():
        name = f"{prefix}.{key}"
        if key not in block:
            if default is _REQUIRED:
                raise ScenarioError(f"missing required key {name}", key=name)
            out[key] = list(default) if isinstance(default, list) else default
            continue
        value = block[key]
        if isinstance(value, int) and not isinstance(value, bool) and isinstance(default, float):
            value = float(value)
        if not check(value):
            raise ScenarioError(f"invalid value for {name}: expected {what}, got {value!r}", key=name)
        out[key] = value
    return out


@dataclass(frozen=True)
class AnalysisConfig:
    nu_range: tuple
    omega_range: tuple
    n_nu: int
    n_omega: int
    equilibrium_guess: float | None
    root_tol: float
    res_tol: float
    simp_tol: float
    trans_tol: float
    dedup_tol: float
    omega_min: float
    K_max: int
    N: int
    quad_panels: int
    quad_nodes: int
    quad_tol: float
    max_phase: float
    dt: float
    T: float
    nu: float | None
    eps: float
    perturbation_frequency: float | None
    settle_fraction: float
    output_stride: int
    density_times: tuple
    s_grid: tuple
    s_max: float
    branch_tol: float
    orbit_dump: bool
    diagram_range: tuple | None
    diagram_points: int
    sweep_range: tuple | None
    sweep_points: int
    eig_step: float | None

    @property
    def tolerances(self) -> SpectralTolerances:
        return SpectralTolerances(self.root_tol, self.res_tol, self.simp_tol, self.trans_tol)

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(self.quad_panels, self.quad_nodes, self.quad_tol, self.quad_tol, self.max_phase)


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    formats: tuple


@dataclass(frozen=True)
class Scenario:
    kernel: object
    nonlinearity: Nonlinearity
    analysis: AnalysisConfig
    output: OutputConfig
    sha256: str
    kernel_id: str
    source: str = "<string>"
    raw: dict = field(default_factory=dict, compare=False)


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _build_kernel(block: dict, quad: QuadratureConfig):
    fam = block.get("family") if isinstance(block, dict) else None
    if fam is not None and fam not in KERNEL_FAMILIES:
        raise ScenarioError(
            f"unknown kernel family {fam!r}; supported families: {', '.join(KERNEL_FAMILIES)}", key="kernel.family"
        )
    extra = _KERNEL_GAMMA if fam == "gamma" else _KERNEL_STEP
    k = _validate(block, {**_KERNEL_COMMON, **extra}, "kernel")
    if fam == "gamma":
        kernel = GammaKernel(k["shape"], k["rate"], k["scale"], k["mortality"], k["a_max"], k["tail_tol"])
        ident = f"gamma(shape={k['shape']},rate={k['rate']!r},scale={k['scale']!r},mortality={k['mortality']!r})"
    else:
        cls = PiecewiseConstantKernel.table if fam == "table" else PiecewiseConstantKernel
        kernel = cls(tuple(k["breakpoints"]), tuple(k["levels"]), k["mortality"])
        ident = f"{fam}(breakpoints={k['breakpoints']!r},levels={k['levels']!r},mortality={k['mortality']!r})"
    kernel = normalize(kernel, k["normalization"], quad)
    return kernel, f"{ident},normalization={k['normalization']}"


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario TOML text."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(
            f"{source}: {exc}", line=getattr(exc, "lineno", None), column=getattr(exc, "colno", None)
        ) from None
    unknown = sorted(set(doc) - {"kernel", "nonlinearity", "analysis", "output"})
    if unknown:
        raise ScenarioError(f"unknown table [{unknown[0]}]", key=unknown[0])
    for required in ("kernel", "nonlinearity"):
        if required not in doc:
            raise ScenarioError(f"missing required table [{required}]", key=required)

    analysis = AnalysisConfig(**_tuples(_validate(doc.get("analysis", {}), _ANALYSIS, "analysis")))
    output = OutputConfig(**_tuples(_validate(doc.get("output", {}), _OUTPUT, "output")))
    nl_block = doc["nonlinearity"]
    if isinstance(nl_block, dict) and nl_block.get("family") not in (None, *NONLINEARITY_FAMILIES):
        raise ScenarioError(
            f"unknown nonlinearity family {nl_block['family']!r}; supported families: {', '.join(NONLINEARITY_FAMILIES)}",
            key="nonlinearity.family",
        )
    nl_cfg = _validate(nl_block, _NONLINEARITY, "nonlinearity")
    try:
        nl = Nonlinearity(nl_cfg["family"], tuple(tuple(r) for r in nl_cfg["coefficients"]))
    except AgeHopfError as exc:
        raise ScenarioError(str(exc), key="nonlinearity.coefficients") from exc
    try:
        kernel, ident = _build_kernel(doc["kernel"], analysis.quadrature)
    except ScenarioError:
        raise
    except AgeHopfError as exc:
        raise ScenarioError(f"kernel: {exc}", key="kernel") from exc
    return Scenario(
        kernel=kernel,
        nonlinearity=nl,
        analysis=analysis,
        output=output,
        sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        kernel_id=ident,
        source=source,
        raw=doc,
    )


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_bytes().decode("utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {str(p)!r}: {exc.strerror}") from None
    return parse_scenario(text, str(p))
