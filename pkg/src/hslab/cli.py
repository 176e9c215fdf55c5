"""Scenario runner: ``hslab run|validate|certify-oracles``.

A config file is INI text with one section per scenario and an optional
``[run]`` section (``seed``, ``out``, ``plots``).  Keys are checked against
each scenario's parameter table; misspelled keys are errors.  Every scenario
writes ``manifest.json`` (resolved parameters, seed, versions) plus its CSV
and JSON outputs into ``<out>/<scenario>/``.

Exit codes: 0 success, 2 invariant violation, 3 parameter or config error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .errors import HslabError, InvariantViolation, OracleFailure, ParameterError
from .grid import AxisymmetricDomain, BoundaryGraph, GridFunction, build_grid
from .model import (
    MovingSphereProbe,
    ProblemSpec,
    critical_exponent,
    kelvin_transform,
    moving_sphere_weight_derivative,
    offset_factor,
    sphere_weight_lhs,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_PARAMETER = 3

__all__ = ["main", "SCENARIOS", "Scenario", "load_config", "classify_regime", "run_scenario"]


class ConfigError(ParameterError):
    """The config file is malformed or names unknown scenarios or keys."""


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_num(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def csv_schema() -> dict:
    """Column documentation shipped with the package."""
    return json.loads(resources.files("hslab").joinpath("schema.json").read_text())


# ---------------------------------------------------------------------------
# Regime classification
# ---------------------------------------------------------------------------


def classify_regime(params: dict) -> list[str]:
    """Regimes the parameters fall in (report only, never raises).

    Recognised keys: ``N, s1, s2, lam`` for the two-pole problem and
    ``N, s, p`` for the perturbed problem.
    """
    out = []
    N = params.get("N")
    if N is None or int(N) != N or N < 3:
        return ["rejected: N must be an integer >= 3"]
    if "p" in params:
        s, p = params.get("s", 1.0), params["p"]
        lo, hi = critical_exponent(N, s) - 1.0, (N + 2.0) / (N - 2.0)
        if N >= 4 and 0.0 <= s < 2.0 and lo < p < hi:
            out.append(f"regime thm51-perturbed (bubble level below the Sobolev threshold): N >= 4 and {lo:g} < p < {hi:g}")
        else:
            out.append(f"rejected: perturbed problem needs N >= 4 and {lo:g} < p < {hi:g} (got N={N:g}, p={p:g})")
        return out
    s1, s2, lam = params.get("s1"), params.get("s2"), params.get("lam")
    if s1 is None or s2 is None or lam is None:
        return ["rejected: need N, s1, s2, lam (or N, s, p)"]
    if 0.0 < s2 < s1 < 2.0:
        out.append("regime thm11-curved-existence / thm12-halfspace (existence): N >= 3, any lambda, 0 < s2 < s1 < 2")
    if s2 == 0.0 and 0.0 < s1 <= 2.0 and lam <= 0.0:
        out.append("regime thm13-nonexistence-probe (nonexistence): s2 = 0, 0 < s1 <= 2, lambda <= 0")
    if s2 == 0.0 and lam > 0.0 and 0.0 < s1 < 2.0:
        out.append("unclassified: s2 = 0 with lambda > 0")
    if not out:
        out.append("rejected: outside every covered regime (need 0 <= s2 < s1 < 2)")
    return out


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    defaults: dict
    runner: Callable[[dict, int, Path, bool], dict]
    description: str


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _plot(path: Path, series: list[tuple[str, list, list]], xlabel: str, ylabel: str,
          logx: bool = False, hline: float | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "hslab"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, x, y in series:
        ax.plot(x, y, "o-", label=label, ms=3)
    if hline is not None:
        ax.axhline(hline, color="k", lw=0.8, ls="--")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _run_oracle(p: dict, seed: int, out: Path, plots: bool) -> dict:
    from .oracle import certify_all

    results = []
    for N in _floats(p["dims"]):
        c = certify_all(int(N), tuple(_floats(p["s_values"])))
        results.append(c.to_dict())
    write_json(out / "oracle_summary.json", results)
    return {"status": "certified", "dimensions": [r["N"] for r in results]}


def _run_identities(p: dict, seed: int, out: Path, plots: bool) -> dict:
    rng = np.random.default_rng(seed)
    # blow-up scale: definition versus closed form
    worst = 0.0
    for _ in range(int(p["draws"])):
        N = int(rng.integers(3, 9))
        s1 = float(rng.uniform(0.05, 1.95))
        s2 = float(rng.uniform(0.0, s1 * 0.99))
        p2 = critical_exponent(N, s2) - 1.0
        eps = float(rng.uniform(0.0, 0.5 * (p2 - 1.0) / offset_factor(s2, s1)))
        m = float(10.0 ** rng.uniform(0.0, 6.0))
        p2e = p2 - offset_factor(s2, s1) * eps
        k_def = m ** (-(p2e - 1.0) / (2.0 - s2))
        k_closed = m ** (-2.0 / (N - 2.0) + eps / (2.0 - s1))
        worst = max(worst, abs(k_def - k_closed) / abs(k_closed))
    # Kelvin involution on smooth axisymmetric fields
    N = 3
    grid = build_grid(AxisymmetricDomain.half_space(N, 4.0), 160, 96, gamma=1.0)
    rho, z = grid.physical_coordinates()
    r = np.hypot(rho, z)
    band = (r >= 0.5) & (r <= 2.0)
    kel_worst, interp_worst = 0.0, 0.0
    for _ in range(int(p["fields"])):
        c = rng.uniform(0.3, 1.5, 3)
        w = rng.uniform(0.2, 0.6, 3)
        a = rng.uniform(0.5, 1.5, 3)
        f = lambda R_, Z_: sum(ai * np.exp(-(R_**2 + (Z_ - ci) ** 2) / wi**2) for ai, ci, wi in zip(a, c, w))
        u = GridFunction(grid, f(rho, z))
        back = kelvin_transform(kelvin_transform(u, 0.0, 1.0, outside="zero"), 0.0, 1.0, outside="zero")
        scale = np.max(np.abs(u.values[band]))
        kel_worst = max(kel_worst, float(np.max(np.abs(back.values[band] - u.values[band])) / scale))
        # interpolation error of the same field at cell centres of the band
        rm = 0.5 * (grid.r[1:] + grid.r[:-1])
        tm = 0.5 * (grid.theta[1:] + grid.theta[:-1])
        Rm, Tm = np.meshgrid(rm[(rm > 0.5) & (rm < 2.0)], tm, indexing="ij")
        pr, pz = Rm * np.cos(Tm), Rm * np.sin(Tm)
        interp_worst = max(interp_worst, float(np.max(np.abs(u.evaluate(pr, pz) - f(pr, pz))) / scale))
    kel_tol = 10.0 * max(interp_worst, 1e-12)
    # moving-sphere monotonicity and the sphere-weight inequality
    n = int(p["samples"])
    mono_viol = 0
    weight_viol = 0
    for _ in range(n):
        R = float(rng.uniform(0.1, 2.0))
        lam = float(R * rng.uniform(1.05, 4.0))
        Nd = int(rng.integers(3, 7))
        th = rng.normal(size=Nd)
        th[-1] = abs(th[-1]) + 1e-3
        th /= np.linalg.norm(th)
        probe = MovingSphereProbe(R, lam, tuple(th))
        if probe.mu1 >= probe.mu_max:
            # shallow ray: the monotonicity interval is empty
            continue
        mu = float(rng.uniform(probe.mu1 * (1 + 1e-9), probe.mu_max))
        if moving_sphere_weight_derivative(probe, mu) > 0.0:
            mono_viol += 1
        # a point of B_lam(x_R) above the plane
        while True:
            y = rng.uniform(-lam, lam, Nd)
            y[-1] = abs(y[-1])
            xR = np.zeros(Nd)
            xR[-1] = -R
            if np.linalg.norm(y - xR) < lam and y[-1] > 0:
                break
        s = float(rng.uniform(0.0, 2.0))
        if sphere_weight_lhs(y, R, lam, s) > np.linalg.norm(y) ** (-s) * (1 + 1e-12):
            weight_viol += 1
    summary = {
        "scale_law_max_rel": worst,
        "scale_law_pass": worst <= 1e-12,
        "kelvin_involution_max_rel": kel_worst,
        "kelvin_tolerance": kel_tol,
        "kelvin_pass": kel_worst <= kel_tol,
        "monotonicity_violations": mono_viol,
        "weight_violations": weight_viol,
        "draws": int(p["draws"]),
        "fields": int(p["fields"]),
        "samples": n,
    }
    write_json(out / "identities.json", summary)
    if not (summary["scale_law_pass"] and summary["kelvin_pass"] and mono_viol == 0 and weight_viol == 0):
        raise InvariantViolation(f"identity suite failed: {summary}")
    return summary


def _run_nonexistence(p: dict, seed: int, out: Path, plots: bool) -> dict:
    from .functional import pohozaev_from_terms
    from .oracle import sobolev_threshold
    from .solver import FocusRegrid, SolverOptions, continuation

    N = int(p["N"])
    dom = AxisymmetricDomain.half_ball(N, p["radius"])
    spec = ProblemSpec.two_pole(N, p["s1"], p["s2"], p["lam"], p["eps0"], dom)
    grid = build_grid(dom, int(p["n_r"]), int(p["n_theta"]))
    sched = [p["eps0"] * 2.0 ** (-k / 2.0) for k in range(int(p["steps"]))]
    rg = FocusRegrid(int(p["focus_r"]), int(p["focus_theta"]), width_factor=p["width_factor"], ratio=p["ratio"])
    tr = continuation(spec, sched, SolverOptions(max_iter=int(p["max_iter"]), regrid=rg), grid=grid)
    thr = sobolev_threshold(N)
    rows = tr.rows()
    for row, rep in zip(rows, tr.reports):
        row["level_over_threshold"] = rep.c_level / thr
        row["boundaryTerm"] = rep.energyBreakdown.boundaryTerm
    cols = list(tr.CSV_COLUMNS) + ["level_over_threshold", "boundaryTerm"]
    write_csv(out / "trace.csv", cols, rows)
    last = tr.reports[-1]
    # with critical exponents the volume part is (N-2)/2 times the Nehari residual
    eb = last.energyBreakdown
    crit = [critical_exponent(N, pole.s) - 1.0 for pole in spec.poles]
    poho_crit = pohozaev_from_terms(spec, eb.A, eb.B, eb.boundaryTerm, exponents=crit)
    half_bt = 0.5 * eb.boundaryTerm
    summary = {"verdict": tr.verdict, "threshold": thr, "final_level": last.c_level,
               "final_ratio": last.c_level / thr, "final_m": last.m, "steps": len(tr.reports),
               "max_nehari_rel": _max_nehari(tr.reports),
               "pohozaev_critical": poho_crit, "half_boundary_term": half_bt,
               "pohozaev_boundary_rel": abs(poho_crit - half_bt) / abs(half_bt)}
    write_json(out / "summary.json", summary)
    if plots:
        _plot(out / "energy_vs_eps.svg", [("level", tr.schedule, [r.c_level for r in tr.reports])],
              "eps", "level", logx=True, hline=thr)
    return summary


def _max_nehari(reports) -> float:
    vals = [r.nehariRel for r in reports if r.converged]
    return max(vals) if vals else float("nan")


def _per_lambda(runner):
    """Run ``runner`` once per value of the ``lam`` list, each in ``lam_<value>/``."""

    def run(p: dict, seed: int, out: Path, plots: bool) -> dict:
        result = {}
        for lam in _floats(p["lam"]):
            sub = out / f"lam_{lam!r}"
            sub.mkdir(parents=True, exist_ok=True)
            result[repr(lam)] = runner({**p, "lam": lam}, seed, sub, plots)
        return result

    return run


def _run_halfspace(p: dict, seed: int, out: Path, plots: bool) -> dict:
    from .halfspace import (decay_fit, export_entire, least_energy_check, norm_floor, solve_entire,
                            tail_bound, truncated_level)

    spec = ProblemSpec.two_pole(int(p["N"]), p["s1"], p["s2"], p["lam"])
    sol = solve_entire(spec, n_r=int(p["n_r"]), n_theta=int(p["n_theta"]), Rmax=p["Rmax"])
    export_entire(sol, out)
    fit = decay_fit(sol)
    R = p["Rmax"]
    c_R, c_2R = truncated_level(sol, R), truncated_level(sol, 2 * R)
    starts = least_energy_check(spec, n_r=int(p["n_r"]) // 2, n_theta=int(p["n_theta"]) // 2)
    write_csv(out / "starts.csv", ["scale", "shape", "c1", "converged", "m"], starts)
    summary = {
        **sol.summary(),
        "decay_C": fit.C,
        "decay_accepted": fit.accepted,
        "c1_truncated_Rmax": c_R,
        "c1_truncated_2Rmax": c_2R,
        "doubling_change": abs(c_R - c_2R),
        "tail_bound": tail_bound(fit.C, R, sol.N),
        "dirichlet": sol.dirichlet,
        "norm_floor": norm_floor(spec),
    }
    write_json(out / "summary.json", summary)
    if plots:
        prof = sol.profile
        _plot(out / "profile_axis.svg", [("v on the axis", list(prof.grid.r), list(prof.values[:, -1]))],
              "|y|", "v")
    return summary


def _run_curved(p: dict, seed: int, out: Path, plots: bool) -> dict:
    from .halfspace import solve_entire
    from .solver import SolverOptions, continuation, limiting_level
    from .testfn import lemma41_gap

    N = int(p["N"])
    spec = ProblemSpec.two_pole(N, p["s1"], p["s2"], p["lam"])
    sol = solve_entire(spec, n_r=int(p["entire_n_r"]), n_theta=int(p["entire_n_theta"]), Rmax=p["Rmax"],
                       verify=False)
    graph = BoundaryGraph(p["alpha"], p["radius"])
    gap = lemma41_gap(sol, graph, r0=p["radius"])
    write_csv(out / "gap.csv", ["epsilon", "maxPhi", "tAtMax", "gap", "counterexample"], gap.records)
    write_json(out / "gap_fit.json", gap.to_record())
    dom = AxisymmetricDomain.curved_cap(N, p["alpha"], p["radius"])
    grid = build_grid(dom, int(p["n_r"]), int(p["n_theta"]), gamma=2.0)
    sched = [p["eps0"] * 2.0 ** (-k / 2.0) for k in range(int(p["steps"]))]
    tr = continuation(spec.with_domain(dom), sched, SolverOptions(max_iter=int(p["max_iter"])), grid=grid)
    write_csv(out / "trace.csv", list(tr.CSV_COLUMNS), tr.rows())
    limit = limiting_level(tr.reports)
    fitted_gap = gap.slope * max(gap.epsilons)
    summary = {
        "verdict": tr.verdict,
        "c1": sol.c1,
        "K1": sol.K1,
        "limiting_level": limit,
        "margin": sol.c1 - limit,
        "fitted_gap": fitted_gap,
        "gap_slope": gap.slope,
        "gap_offset": gap.offset,
        "all_gaps_positive": not gap.counterexamples,
        "max_nehari_rel": _max_nehari(tr.reports),
    }
    write_json(out / "summary.json", summary)
    if plots:
        _plot(out / "energy_vs_eps.svg", [("level", tr.schedule, [r.c_level for r in tr.reports])],
              "eps", "level", logx=True, hline=sol.c1)
        _plot(out / "gap_vs_eps.svg", [("c1 - max Phi", gap.epsilons, gap.gaps)], "eps", "gap")
    return summary


def _run_perturbed(p: dict, seed: int, out: Path, plots: bool) -> dict:
    from .testfn import bookkeeping_check, bubble_threshold_check

    spec = ProblemSpec.perturbed(int(p["N"]), p["s"], p["p"])
    recs = bubble_threshold_check(spec, _floats(p["mu_list"]), radius=p["radius"])
    rows = [r.to_record() for r in recs]
    write_csv(out / "bubbles.csv", ["mu", "supPhi", "tAtMax", "threshold", "margin", "below", "inconclusive"], rows)
    bk = bookkeeping_check(spec, p["bookkeeping_mu"], p["bookkeeping_radius"])
    summary = {
        "below_for_two_largest": all(r.below for r in recs[-2:]),
        "margin_increasing": recs[-1].margin > recs[-2].margin,
        "bookkeeping": {"mu": bk.mu, "A": bk.A, "B": bk.B, "C": bk.C, "P": bk.P, "defect": bk.defect,
                        "level": bk.level, "level_formula": bk.level_formula(spec.N, p["s"])},
    }
    write_json(out / "summary.json", summary)
    if plots:
        _plot(out / "sup_vs_mu.svg", [("sup Phi", [r.mu for r in recs], [r.supPhi for r in recs])],
              "mu", "sup", logx=True, hline=recs[0].threshold)
    return summary


SCENARIOS: dict[str, Scenario] = {
    "oracle-certify": Scenario("oracle-certify", {"dims": "3,4", "s_values": "0.5,1.0,1.5"}, _run_oracle,
                               "recompute and cross-check the reference constants"),
    "identities-suite": Scenario("identities-suite", {"draws": 1000, "fields": 100, "samples": 10000},
                                 _run_identities, "closed-form identities on random draws"),
    "thm13-nonexistence-probe": Scenario(
        "thm13-nonexistence-probe",
        {"N": 4, "s1": 1.0, "s2": 0.0, "lam": -1.0, "radius": 1.0, "eps0": 0.2, "steps": 20, "n_r": 96,
         "n_theta": 64, "focus_r": 240, "focus_theta": 180, "width_factor": 3.0, "ratio": 400.0, "max_iter": 1000},
        _run_nonexistence, "eps-continuation on the half ball toward the critical problem"),
    "thm12-halfspace": Scenario(
        "thm12-halfspace",
        {"N": 3, "s1": 1.5, "s2": 0.5, "lam": "-1,0.5", "n_r": 160, "n_theta": 96, "Rmax": 50.0},
        _per_lambda(_run_halfspace), "least-energy entire solution and its constants"),
    "thm11-curved-existence": Scenario(
        "thm11-curved-existence",
        {"N": 3, "s1": 1.5, "s2": 0.5, "lam": "-1,0.5", "alpha": -0.5, "radius": 0.9, "eps0": 0.2, "steps": 18,
         "n_r": 240, "n_theta": 144, "entire_n_r": 160, "entire_n_theta": 96, "Rmax": 6.0, "max_iter": 3000},
        _per_lambda(_run_curved), "curved-cap continuation and the curvature gap"),
    "thm51-perturbed": Scenario(
        "thm51-perturbed",
        {"N": 4, "s": 1.0, "p": 2.5, "mu_list": "4,8,16,32", "radius": 2.0, "bookkeeping_mu": 16384.0,
         "bookkeeping_radius": 0.015625},
        _run_perturbed, "bubble levels of the perturbed problem"),
}


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

RUN_KEYS = {"seed": 0, "out": "hslab-out", "plots": False}


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc


def load_config(path) -> tuple[dict, list[tuple[str, dict]]]:
    """Parse ``path`` into ``(run_options, [(scenario, params), ...])``.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections or unknown keys.
    """
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        text = Path(path).read_text()
        cp.read_string(text, source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    run = dict(RUN_KEYS)
    scenarios = []
    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "run":
            table = RUN_KEYS
        elif section in SCENARIOS:
            table = SCENARIOS[section].defaults
        else:
            raise ConfigError(f"unknown scenario [{section}]; known: {', '.join(sorted(SCENARIOS))}")
        unknown = sorted(set(items) - set(table))
        if unknown:
            raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
        params = dict(table)
        for k, v in items.items():
            params[k] = _coerce(v, table[k], f"[{section}] {k}")
        if section == "run":
            run = params
        else:
            scenarios.append((section, params))
    if not scenarios:
        raise ConfigError("config names no scenario")
    return run, scenarios


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _versions() -> dict:
    return {"hslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_scenario(name: str, params: dict, seed: int, out_root: Path, plots: bool = False) -> dict:
    """Run one scenario into ``out_root/name`` and return its summary."""
    sc = SCENARIOS[name]
    out = Path(out_root) / name
    out.mkdir(parents=True, exist_ok=True)
    summary = sc.runner(params, seed, out, plots)
    files = sorted(f.relative_to(out).as_posix() for f in out.rglob("*") if f.is_file() and f.name != "manifest.json")
    write_json(out / "manifest.json", {"scenario": name, "parameters": params, "seed": seed,
                                       "versions": _versions(), "outputs": files})
    return summary


def _cmd_run(args) -> int:
    run, scenarios = load_config(args.config)
    seed = args.seed if args.seed is not None else int(run["seed"])
    out = Path(args.out if args.out is not None else run["out"])
    plots = bool(args.plots or run["plots"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "schema.json", csv_schema())
    for name, params in scenarios:
        summary = run_scenario(name, params, seed, out, plots)
        print(f"{name}: {json.dumps(_clean(summary), sort_keys=True)}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        _, scenarios = load_config(args.config)
    except ConfigError as exc:
        print(f"config: {exc}")
        return EXIT_OK
    for name, params in scenarios:
        if name in ("oracle-certify", "identities-suite"):
            print(f"{name}: no regime preconditions")
            continue
        lams = _floats(params["lam"]) if "lam" in params else [None]
        for lam in lams:
            case = params if lam is None else {**params, "lam": lam}
            tag = name if lam is None else f"{name} (lam={lam:g})"
            for line in classify_regime(case):
                print(f"{tag}: {line}")
    return EXIT_OK


def _cmd_certify(args) -> int:
    out = Path(args.out if args.out is not None else "hslab-out")
    summary = run_scenario("oracle-certify", dict(SCENARIOS["oracle-certify"].defaults),
                           args.seed or 0, out, False)
    print(f"oracle-certify: {json.dumps(_clean(summary), sort_keys=True)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hslab", description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="random seed")
    ap.add_argument("--plots", action="store_true", help="write SVG plots (needs matplotlib)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every scenario in a config file")
    r.add_argument("config")
    v = sub.add_parser("validate", help="report the parameter regime of each scenario")
    v.add_argument("config")
    sub.add_parser("certify-oracles", help="recompute and cross-check the reference constants")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "validate": _cmd_validate, "certify-oracles": _cmd_certify}
    try:
        return handlers[args.command](args)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except (InvariantViolation, OracleFailure, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except HslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
