import csv
import json

import pytest

from hslab import cli
from hslab.errors import InvariantViolation


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_unknown_key_is_parameter_error(tmp_path, capsys):
    cfg = write(tmp_path, "[thm12-halfspace]\nlamda = 1\n")
    assert cli.main(["run", cfg]) == 3
    assert "lamda" in capsys.readouterr().err


def test_unknown_section_and_bad_value(tmp_path):
    assert cli.main(["run", write(tmp_path, "[thm99]\n")]) == 3
    assert cli.main(["run", write(tmp_path, "[identities-suite]\ndraws = many\n")]) == 3
    assert cli.main(["run", write(tmp_path, "not an ini file\n")]) == 3
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 3


def test_out_of_regime_parameters_exit_3(tmp_path):
    cfg = write(tmp_path, "[thm51-perturbed]\nN = 3\np = 6\n")
    assert cli.main(["--out", str(tmp_path / "o"), "run", cfg]) == 3


def test_load_config_resolves_defaults(tmp_path):
    run, scen = cli.load_config(write(tmp_path, "[run]\nseed = 5\n[thm12-halfspace]\nlam = 0.5\n"))
    assert run["seed"] == 5
    name, params = scen[0]
    assert name == "thm12-halfspace" and params["lam"] == "0.5" and params["Rmax"] == 50.0


@pytest.mark.parametrize(
    "params,key",
    [
        ({"N": 3, "s1": 1.0, "s2": 0.5, "lam": -2.0}, "thm11-curved-existence"),
        ({"N": 4, "s1": 1.0, "s2": 0.0, "lam": -1.0}, "thm13-nonexistence-probe"),
        ({"N": 4, "s": 1.0, "p": 2.5}, "thm51-perturbed"),
        ({"N": 3, "s": 1.0, "p": 6.0}, "rejected"),
        ({"N": 3, "s1": 2.5, "s2": 0.5, "lam": 1.0}, "rejected"),
    ],
)
def test_classify_regime(params, key):
    assert any(key in line for line in cli.classify_regime(params))


def test_validate_reports_without_failing(tmp_path, capsys):
    cfg = write(tmp_path, "[thm13-nonexistence-probe]\n[thm51-perturbed]\nN = 3\np = 6\n")
    assert cli.main(["validate", cfg]) == 0
    out = capsys.readouterr().out
    assert "nonexistence" in out and "rejected" in out
    assert cli.main(["validate", write(tmp_path, "[bogus]\n", "b.ini")]) == 0


def test_certify_oracles(tmp_path):
    assert cli.main(["--out", str(tmp_path), "certify-oracles"]) == 0
    data = json.loads((tmp_path / "oracle-certify" / "oracle_summary.json").read_text())
    assert [d["N"] for d in data] == [3, 4]


def test_identities_run_is_deterministic(tmp_path):
    cfg = write(tmp_path, "[run]\nseed = 3\n[identities-suite]\ndraws = 200\nfields = 5\nsamples = 500\n")
    assert cli.main(["--out", str(tmp_path / "a"), "run", cfg]) == 0
    assert cli.main(["--out", str(tmp_path / "b"), "run", cfg]) == 0
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")
    man = json.loads((tmp_path / "a" / "identities-suite" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["parameters"]["draws"] == 200
    assert set(man["versions"]) == {"hslab", "numpy", "scipy", "python"}
    assert man["outputs"] == ["identities.json"]


def test_seed_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, "[run]\nseed = 3\n[identities-suite]\ndraws = 10\nfields = 1\nsamples = 10\n")
    assert cli.main(["--out", str(tmp_path / "a"), "--seed", "9", "run", cfg]) == 0
    man = json.loads((tmp_path / "a" / "identities-suite" / "manifest.json").read_text())
    assert man["seed"] == 9


def test_invariant_violation_exit_2(tmp_path, monkeypatch):
    def boom(p, seed, out, plots):
        raise InvariantViolation("forced")

    sc = cli.SCENARIOS["identities-suite"]
    monkeypatch.setitem(cli.SCENARIOS, "identities-suite", cli.Scenario(sc.name, sc.defaults, boom, sc.description))
    assert cli.main(["--out", str(tmp_path), "run", write(tmp_path, "[identities-suite]\n")]) == 2


def test_perturbed_outputs_match_schema_and_plots_are_stable(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = write(tmp_path, "[thm51-perturbed]\nmu_list = 16,32\n")
    for d in ("a", "b"):
        assert cli.main(["--out", str(tmp_path / d), "--plots", "run", cfg]) == 0
    assert read_tree(tmp_path / "a") == read_tree(tmp_path / "b")
    out = tmp_path / "a" / "thm51-perturbed"
    assert (out / "sup_vs_mu.svg").exists()
    schema = cli.csv_schema()
    with open(out / "bubbles.csv") as fh:
        header = next(csv.reader(fh))
    assert set(header) <= set(schema["bubbles.csv"])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["below_for_two_largest"] and summary["margin_increasing"]
