"""Command line front end: ``agehopf {certify|simulate|branch|diagram|sweep} --scenario FILE``.

Exit codes: 0 on success, 2 when no certified Hopf point exists in the
scenario's search rectangle, 1 on any error (a JSON object describing the
error is written to stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import AgeHopfError, ScenarioError
from .periodic import continue_periodic_branch
from .scenario import Scenario, load_scenario
from .spectral import certify_hopf, continue_eigenbranch, find_hopf, solve_equilibrium
from .timesim import InitialAgeDensity, analyze_series, reconstruct_density, simulate_renewal

__all__ = ["COMMANDS", "THREADS_ENV", "run", "main", "format_number"]

COMMANDS = ("certify", "simulate", "branch", "diagram", "sweep")
THREADS_ENV = "AGEHOPF_THREADS"
EXIT_OK, EXIT_ERROR, EXIT_NO_HOPF = 0, 1, 2

log = logging.getLogger("agehopf")


def format_number(x) -> str:
    """17 significant digits, enough for an exact float round trip."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _header(scn: Scenario, command: str, extra: dict | None = None) -> list[str]:
    a = scn.analysis
    lines = [
        f"agehopf {command}",
        f"scenario_sha256 = {scn.sha256}",
        f"kernel = {scn.kernel_id}",
        f"nonlinearity = {scn.nonlinearity.family}",
        "tolerances: "
        + ", ".join(
            f"{k}={format_number(getattr(a, k))}"
            for k in ("root_tol", "res_tol", "simp_tol", "trans_tol", "quad_tol", "branch_tol")
        ),
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v if isinstance(v, str) else format_number(v)}")
    return lines


def _write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_number(v) for v in row) + "\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _table(scn, out: Path, stem: str, header, columns, rows, meta=None):
    rows = [list(r) for r in rows]
    if "csv" in scn.output.formats:
        _write_csv(out / f"{stem}.csv", header, columns, rows)
    if "json" in scn.output.formats:
        body = {"header": header, "columns": columns, "rows": rows}
        if meta:
            body.update(meta)
        _write_json(out / f"{stem}.json", body)


def _certificates(scn: Scenario):
    a = scn.analysis
    quad = a.quadrature
    cands = find_hopf(
        scn.kernel,
        scn.nonlinearity,
        a.nu_range,
        a.omega_range,
        a.equilibrium_guess,
        a.n_nu,
        a.n_omega,
        a.omega_min,
        a.tolerances,
        a.dedup_tol,
        quad,
    )
    certs = [certify_hopf(scn.kernel, scn.nonlinearity, c, a.K_max, a.equilibrium_guess, a.tolerances, quad) for c in cands]
    return cands, certs


def _first_certified(scn):
    _, certs = _certificates(scn)
    for c in certs:
        if c.certified:
            return c
    return None


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=max(1, threads))


def _perturbed(scn, nu, freq):
    eq = solve_equilibrium(scn.nonlinearity, nu, scn.analysis.equilibrium_guess)
    return eq, InitialAgeDensity.equilibrium(eq.w, scn.kernel.mortality, scn.analysis.eps, freq)


def cmd_certify(scn: Scenario, out: Path, threads: int) -> int:
    cands, certs = _certificates(scn)
    certified = [c for c in certs if c.certified]
    doc = {
        "scenario_sha256": scn.sha256,
        "kernel": scn.kernel_id,
        "nonlinearity": scn.nonlinearity.family,
        "tolerances": {
            k: getattr(scn.analysis, k) for k in ("root_tol", "res_tol", "simp_tol", "trans_tol", "quad_tol")
        },
        "candidates": [{"nu": c.nu, "omega": c.omega} for c in cands],
        "certificates": [dict(c.to_dict(), margin_k=c.margin_k) for c in certs],
        "certified_count": len(certified),
    }
    if certified:
        doc.update(certified[0].to_dict())
    if "json" in scn.output.formats:
        _write_json(out / "certificate.json", doc)
    if "csv" in scn.output.formats:
        cols = ["nu0", "omega0", "residual", "nonresonance_margin", "dlambda_abs", "transversality", "re_dlambda_dnu", "certified"]
        rows = [[c.to_dict()[k] if k != "certified" else c.certified for k in cols] for c in certs]
        _write_csv(out / "certificate.csv", _header(scn, "certify"), cols, rows)
    return EXIT_OK if certified else EXIT_NO_HOPF


def cmd_simulate(scn: Scenario, out: Path, threads: int) -> int:
    a = scn.analysis
    cert = None
    nu = a.nu
    freq = a.perturbation_frequency
    if nu is None or freq is None:
        cert = _first_certified(scn)
    if nu is None:
        if cert is None:
            raise ScenarioError("analysis.nu is required when no certified Hopf point is available", key="analysis.nu")
        nu = cert.nu0
    if freq is None:
        freq = cert.omega0 if cert is not None else 0.0
    _, psi = _perturbed(scn, nu, freq)
    sol = simulate_renewal(scn.kernel, scn.nonlinearity, nu, psi, a.T, a.dt, quad=a.quadrature)
    diag = analyze_series(sol, a.settle_fraction)
    extra = {"nu": nu, "dt": a.dt, "T": sol.T, "eps": a.eps, "perturbation_frequency": freq, "status": sol.status}
    idx = slice(None, None, a.output_stride)
    _table(
        scn,
        out,
        "timeseries",
        _header(scn, "simulate", extra),
        ["t", "v"],
        zip(sol.t[idx], sol.v[idx]),
        {"diagnostics": diag.__dict__, "status": sol.status},
    )
    ages = np.linspace(0.0, scn.kernel.a_max, 401)
    for t in a.density_times:
        u = reconstruct_density(sol, t, ages)
        _table(scn, out, f"density_t{format_number(t)}", _header(scn, "simulate", dict(extra, t=t)), ["a", "u"], zip(ages, u))
    return EXIT_OK


def cmd_branch(scn: Scenario, out: Path, threads: int) -> int:
    a = scn.analysis
    cert = _first_certified(scn)
    if cert is None:
        return EXIT_NO_HOPF
    pts = continue_periodic_branch(
        scn.kernel, scn.nonlinearity, cert, a.s_grid, N=a.N, tol=a.branch_tol, s_max=a.s_max, quad=a.quadrature
    )
    extra = {"nu0": cert.nu0, "omega0": cert.omega0, "points": f"{len(pts)}/{len(a.s_grid)}"}
    flagged = [format_number(p.s) for p in pts if p.extrapolated]
    if flagged:
        extra["extrapolated_s"] = " ".join(flagged)
    # empirical direction only: +1 means the orbits exist for nu > nu0
    extra["direction"] = _direction(pts, cert.nu0)
    rows = [(p.s, p.nu, p.omega_physical, p.period, p.amplitude_mode1, p.residual) for p in pts]
    _table(
        scn, out, "branch", _header(scn, "branch", extra),
        ["s", "nu", "omega_physical", "period", "amplitude_mode1", "residual"], rows, {"direction": extra["direction"]},
    )
    if a.orbit_dump:
        for i, p in enumerate(pts):
            orb = p.orbit()
            tau = orb.grid()
            t = tau / p.omega_physical
            _table(scn, out, f"orbit_{i:03d}", _header(scn, "branch", {"s": p.s, "nu": p.nu, "period": p.period}), ["t", "x"], zip(t, orb.values()))
    if len(pts) < len(a.s_grid):
        log.warning("branch truncated after %d of %d points", len(pts), len(a.s_grid))
        return EXIT_ERROR
    return EXIT_OK


def _direction(pts, nu0):
    gaps = [p.nu - nu0 for p in pts if p.s > 0]
    if not gaps or gaps[-1] == 0:
        return 0
    return 1 if gaps[-1] > 0 else -1


def _default_range(explicit, cert, fallback):
    if explicit is not None:
        return tuple(explicit)
    if cert is not None:
        return (0.9 * cert.nu0, 1.1 * cert.nu0)
    return tuple(fallback)


def _onset(nus, sigma):
    """Linear interpolation of the first sign change of sigma from - to +."""
    for i in range(len(nus) - 1):
        s0, s1 = sigma[i], sigma[i + 1]
        if math.isfinite(s0) and math.isfinite(s1) and s0 < 0 <= s1:
            return nus[i] + (nus[i + 1] - nus[i]) * (-s0) / (s1 - s0)
    return math.nan


def cmd_diagram(scn: Scenario, out: Path, threads: int) -> int:
    """Asymptotic amplitude over a nu grid from direct simulation.

    A decaying envelope (negative fitted growth rate) means the orbit
    converges to the equilibrium, so its asymptotic amplitude is reported
    as 0; the raw late-time amplitude is kept in its own column.
    """
    a = scn.analysis
    cert = _first_certified(scn)
    lo, hi = _default_range(a.diagram_range, cert, a.nu_range)
    nus = np.linspace(lo, hi, a.diagram_points)
    freq = a.perturbation_frequency if a.perturbation_frequency is not None else (cert.omega0 if cert else 0.0)

    def one(nu):
        _, psi = _perturbed(scn, nu, freq)
        sol = simulate_renewal(scn.kernel, scn.nonlinearity, nu, psi, a.T, a.dt, quad=a.quadrature)
        d = analyze_series(sol, a.settle_fraction)
        asym = 0.0 if (d.sigma_fit < 0 or not d.oscillatory) else d.amplitude
        return (nu, asym, d.amplitude, d.sigma_fit, d.omega_fit, d.period, sol.status == "ok")

    with _pool(threads) as ex:
        rows = list(ex.map(one, nus))
    onset = _onset([r[0] for r in rows], [r[3] for r in rows])
    extra = {"dt": a.dt, "T": a.T, "eps": a.eps, "onset_nu": onset}
    if cert is not None:
        extra["nu0"] = cert.nu0
    _table(
        scn,
        out,
        "diagram",
        _header(scn, "diagram", extra),
        ["nu", "amplitude", "amplitude_final", "sigma_fit", "omega_fit", "period", "ok"],
        rows,
        {"onset_nu": onset},
    )
    return EXIT_OK


def cmd_sweep(scn: Scenario, out: Path, threads: int) -> int:
    """Rightmost eigenvalue ``alpha + i omega`` continued from the Hopf root."""
    a = scn.analysis
    cert = _first_certified(scn)
    if cert is None:
        return EXIT_NO_HOPF
    lo, hi = _default_range(a.sweep_range, cert, a.nu_range)
    nus = np.linspace(lo, hi, a.sweep_points)
    step = a.eig_step or (hi - lo) / 200.0

    def one(nu):
        span = (min(nu, cert.nu0), max(nu, cert.nu0))
        br = continue_eigenbranch(
            scn.kernel, scn.nonlinearity, cert.nu0, cert.omega0, span, step, cert.equilibrium.w, a.root_tol, a.quadrature
        )
        lam = br.at(nu)
        return (nu, lam.real, lam.imag, br.status == "ok")

    with _pool(threads) as ex:
        rows = list(ex.map(one, nus))
    _table(scn, out, "sweep", _header(scn, "sweep", {"nu0": cert.nu0, "omega0": cert.omega0, "step": step}), ["nu", "alpha", "omega", "ok"], rows)
    return EXIT_OK


_DISPATCH = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "branch": cmd_branch,
    "diagram": cmd_diagram,
    "sweep": cmd_sweep,
}


def run(command: str, scenario: Scenario, out_dir=None, threads: int = 1) -> int:
    """Execute one subcommand and write its artifacts; returns the exit code."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    out = Path(out_dir if out_dir is not None else scenario.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return _DISPATCH[command](scenario, out, threads)


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ScenarioError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ScenarioError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return 1


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agehopf", description="Hopf bifurcation toolkit for age-structured population models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario TOML file")
    p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    p.add_argument(
        "--threads", type=_positive_int, default=None, help=f"worker threads for diagram/sweep (default: ${THREADS_ENV} or 1)"
    )
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        scn = load_scenario(args.scenario)
        code = run(args.command, scn, args.out, _threads(args.threads))
    except (AgeHopfError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("key", "line", "column"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR
    if code == EXIT_NO_HOPF:
        sys.stderr.write(json.dumps({"error": "NoCertifiedHopfPoint", "message": "no certified Hopf point in the search rectangle"}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
