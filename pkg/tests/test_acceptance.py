"""End-to-end acceptance runs; each test prints one PASS/FAIL line.

Scenario outputs are produced through the CLI once per session and reused,
and the determinism check reruns every scenario into a second tree.
"""
import csv
import json

import numpy as np
import pytest

from hslab import cli
from hslab.functional import energy, gradient
from hslab.grid import AxisymmetricDomain, BoundaryGraph, GridFunction, build_grid
from hslab.halfspace import solve_entire
from hslab.model import ProblemSpec, critical_exponent
from hslab.oracle import certify_all, sobolev_constant_closed_form
from hslab.testfn import lemma41_gap

SEED = 1
SCENARIO_NAMES = list(cli.SCENARIOS)


class Runs:
    """Run each scenario through the CLI at most once per output root."""

    def __init__(self, root):
        self.root = root
        self.codes: dict[tuple[str, str], int] = {}

    def get(self, name: str, tree: str = "first"):
        key = (name, tree)
        if key not in self.codes:
            cfg = self.root / f"{name}.ini"
            cfg.write_text(f"[run]\nseed = {SEED}\n[{name}]\n")
            self.codes[key] = cli.main(["--out", str(self.root / tree), "run", str(cfg)])
        return self.codes[key], self.root / tree / name


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")

    return emit


def load(path):
    return json.loads(path.read_text())


def test_criterion_1_oracles(report):
    details, ok = [], True
    for N in (3, 4):
        oc = certify_all(N, s_values=(0.5, 1.0, 1.5))
        S_rel = abs(oc.S_N - sobolev_constant_closed_form(N)) / sobolev_constant_closed_form(N)
        lowest = min(oc.certificationOrders.values())
        ok &= S_rel <= 5e-3 and lowest >= 1.5
        details.append(f"N={N} S_N rel {S_rel:.2e} min order {lowest:.2f}")
    report(1, ok, "; ".join(details))
    assert ok


def test_criterion_2_identities(runs, report):
    code, out = runs.get("identities-suite")
    res = load(out / "identities.json") if (out / "identities.json").exists() else {}
    ok = (
        code == 0
        and res.get("scale_law_max_rel", 1.0) <= 1e-12
        and res.get("kelvin_pass", False)
        and res.get("monotonicity_violations", -1) == 0
        and res.get("weight_violations", -1) == 0
        and res.get("draws") == 1000
        and res.get("samples") == 10000
    )
    report(2, ok, f"exit {code}, {res}")
    assert ok


@pytest.mark.slow
def test_criterion_3_gradient_and_nehari(runs, report):
    grid = build_grid(AxisymmetricDomain.half_ball(3, 1.0), 32, 24)
    spec = ProblemSpec.two_pole(3, 1.5, 0.5, -1.0, 0.1)
    rho, z = grid.physical_coordinates()
    rng = np.random.default_rng(SEED)
    worst_order = np.inf
    for _ in range(100):
        c = rng.uniform(0.2, 0.8, 2)
        w = rng.uniform(0.2, 0.5)
        u = GridFunction(grid, rng.uniform(0.5, 2.0) * np.exp(-((rho - 0.3 * c[0]) ** 2 + (z - c[1]) ** 2) / w**2))
        u = u.masked()
        # relative directions keep u + d h positive, away from the kink of u^+
        h = GridFunction(grid, u.values * rng.normal(size=grid.shape)).masked()
        g = float(np.sum(gradient(u, spec).values * h.values))
        errs = []
        for d in (2e-3, 1e-3):
            fp = energy(GridFunction(grid, u.values + d * h.values), spec).phi
            fm = energy(GridFunction(grid, u.values - d * h.values), spec).phi
            errs.append(abs((fp - fm) / (2 * d) - g))
        if errs[0] > 1e-9 * max(1.0, abs(g)):
            # halving delta must cut the error by about four
            worst_order = min(worst_order, np.log2(errs[0] / errs[1]))
    fd_ok = worst_order >= 1.8
    nehari = {}
    for name in ("thm13-nonexistence-probe", "thm11-curved-existence"):
        code, out = runs.get(name)
        if code != 0:
            nehari[name] = float("nan")
        elif name == "thm11-curved-existence":
            for lam_dir in sorted(out.glob("lam_*")):
                nehari[f"{name}/{lam_dir.name}"] = load(lam_dir / "summary.json")["max_nehari_rel"]
        else:
            nehari[name] = load(out / "summary.json")["max_nehari_rel"]
    neh_ok = all(v <= 1e-6 for v in nehari.values())
    ok = fd_ok and neh_ok
    report(3, ok, f"worst FD order {worst_order:.2f}; max Nehari residuals {nehari}")
    assert ok


@pytest.mark.slow
def test_criterion_4_nonexistence(runs, report):
    code, out = runs.get("thm13-nonexistence-probe")
    assert code == 0
    s = load(out / "summary.json")
    ok = s["verdict"] == "BlowUp" and abs(s["final_ratio"] - 1.0) <= 0.03 and s["pohozaev_boundary_rel"] <= 0.05
    report(4, ok, f"verdict {s['verdict']}, level/threshold {s['final_ratio']:.5f}, "
                  f"Pohozaev vs half boundary term rel {s['pohozaev_boundary_rel']:.2e}")
    assert ok


@pytest.mark.slow
def test_criterion_5_existence(runs, report):
    code_h, out_h = runs.get("thm12-halfspace")
    code_c, out_c = runs.get("thm11-curved-existence")
    assert code_h == 0 and code_c == 0
    details, ok = [], True
    for lam in ("-1.0", "0.5"):
        h = load(out_h / f"lam_{lam}" / "summary.json")
        c = load(out_c / f"lam_{lam}" / "summary.json")
        ok_h = h["c1"] > 0 and h["doubling_change"] <= h["tail_bound"]
        ok_c = c["verdict"] == "Compact" and c["margin"] >= c["fitted_gap"] > 0
        ok &= ok_h and ok_c
        details.append(f"lam={lam}: c1 {h['c1']:.5f} doubling {h['doubling_change']:.1e} <= tail {h['tail_bound']:.1e}, "
                       f"cap {c['verdict']} margin {c['margin']:.4f} vs gap {c['fitted_gap']:.4f}")
    report(5, ok, "; ".join(details))
    assert ok


@pytest.mark.slow
def test_criterion_6_curvature_slope(runs, report):
    code, out = runs.get("thm11-curved-existence")
    assert code == 0
    defaults = cli.SCENARIOS["thm11-curved-existence"].defaults
    details, ok = [], True
    for lam in (-1.0, 0.5):
        fit = load(out / f"lam_{lam!r}" / "gap_fit.json")
        rel = abs(fit["slope"] - fit["expected"]) / abs(fit["expected"])
        positive = all(not p["counterexample"] and p["gap"] > 0 for p in fit["points"])
        sol = solve_entire(
            ProblemSpec.two_pole(3, defaults["s1"], defaults["s2"], lam),
            n_r=defaults["entire_n_r"], n_theta=defaults["entire_n_theta"], Rmax=defaults["Rmax"], verify=False,
        )
        flat = lemma41_gap(sol, BoundaryGraph(0.0, defaults["radius"]), r0=defaults["radius"])
        flat_ok = abs(flat.slope) <= 0.05 * abs(fit["expected"])
        ok &= rel <= 0.2 and positive and flat_ok
        details.append(f"lam={lam}: slope {fit['slope']:.4f} vs -H K1 {fit['expected']:.4f} (rel {rel:.2f}), "
                       f"gaps positive {positive}, flat slope {flat.slope:.2e}")
    report(6, ok, "; ".join(details))
    assert ok


@pytest.mark.slow
def test_criterion_7_perturbed_threshold(runs, report):
    code, out = runs.get("thm51-perturbed")
    assert code == 0
    s = load(out / "summary.json")
    with open(out / "bubbles.csv") as fh:
        rows = list(csv.DictReader(fh))
    mus = [float(r["mu"]) for r in rows]
    midway = cli.SCENARIOS["thm51-perturbed"].defaults["p"]
    ok = (
        mus == [4.0, 8.0, 16.0, 32.0]
        and midway == 0.5 * (critical_exponent(4, 1.0) - 1.0 + 3.0)
        and s["below_for_two_largest"]
        and s["margin_increasing"]
        and s["bookkeeping"]["defect"] <= 0.02
    )
    sups = ", ".join(f"{float(r['supPhi']):.3f}" for r in rows)
    report(7, ok, f"sup levels {sups} vs threshold {float(rows[0]['threshold']):.3f}; "
                  f"bookkeeping defect {s['bookkeeping']['defect']:.2%}")
    assert ok


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_8_determinism(runs, report):
    differing = []
    for name in SCENARIO_NAMES:
        code_a, a = runs.get(name, "first")
        code_b, b = runs.get(name, "second")
        if code_a != code_b or tree(a) != tree(b):
            differing.append(name)
    ok = not differing
    report(8, ok, f"{len(SCENARIO_NAMES)} scenarios rerun, differing: {differing or 'none'}")
    assert ok
