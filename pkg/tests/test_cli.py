import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from stabsim import cli

GOLDEN = Path(__file__).parent / "golden"

COUPLING_UNIFORM = """
experiment = "coupling"
seed = 7
kappa = { family = "uniform" }
[grid]
lambda = [100, 400]
[replicates]
reps = 50
[options]
pivot = [0.5, 0.5]
K = 2
"""

GERM_LLN = """
experiment = "lln"
seed = 11
xi = { family = "germ-volume" }
kappa = { family = "linear-tilt" }
marks = { family = "fixed", radius = 0.5 }
[[test_functions]]
kind = "indicator-box"
lo = [0.25, 0.25]
hi = [0.75, 0.75]
[grid]
lambda = [200]
[replicates]
reps = 40
"""

VORONOI_LLN = """
experiment = "lln"
seed = 3
xi = { family = "star-of(voronoi-volume)" }
kappa = { family = "uniform" }
marks = { family = "none" }
[[test_functions]]
kind = "indicator-box"
lo = [0.25, 0.25]
hi = [0.75, 0.75]
[grid]
lambda = [2000]
[replicates]
reps = 30
"""


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(argv):
    return cli.main([str(a) for a in argv])


def read_rows(out):
    with open(out / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# schema


def test_csv_header_matches_golden():
    assert (GOLDEN / "header.csv").read_text() == ",".join(cli.CSV_COLUMNS) + "\n"


def test_germ_lln_matches_golden(tmp_path):
    cfg = write(tmp_path, GERM_LLN)
    run(["run", cfg, "--out-dir", tmp_path / "o", "--jobs", 1])
    assert (tmp_path / "o" / "results.csv").read_text() == (GOLDEN / "germ_lln.csv").read_text()


def test_json_report_contents(tmp_path):
    cfg = write(tmp_path, COUPLING_UNIFORM)
    run(["run", cfg, "--out-dir", tmp_path / "o", "--jobs", 1])
    rep = json.loads((tmp_path / "o" / "results.json").read_text())
    assert rep["experiment"] == "coupling" and rep["seed"] == 7
    assert [r["param_point"] for r in rep["rows"]] == ["lambda=100;K=2", "lambda=400;K=2"]
    assert all(r["runtime_ms"] is None for r in rep["rows"])
    assert rep["replicate_seeds"]


def test_record_runtime_fills_column(tmp_path):
    cfg = write(tmp_path, COUPLING_UNIFORM)
    run(["run", cfg, "--out-dir", tmp_path / "o", "--jobs", 1, "--record-runtime"])
    for r in read_rows(tmp_path / "o"):
        assert float(r["runtime_ms"]) > 0


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_byte_identical(tmp_path):
    cfg = write(tmp_path, GERM_LLN)
    run(["run", cfg, "--out-dir", tmp_path / "a", "--jobs", 1])
    run(["run", cfg, "--out-dir", tmp_path / "b", "--jobs", 1])
    run(["run", cfg, "--out-dir", tmp_path / "c", "--jobs", 2])
    for name in ("results.csv", "results.json"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        assert a == (tmp_path / "c" / name).read_bytes()


def test_seed_flag_and_environment(tmp_path, monkeypatch):
    cfg = write(tmp_path, GERM_LLN)
    run(["run", cfg, "--out-dir", tmp_path / "base", "--jobs", 1])
    run(["run", cfg, "--out-dir", tmp_path / "flag", "--jobs", 1, "--seed", 99])
    monkeypatch.setenv("STABSIM_SEED", "99")
    run(["run", cfg, "--out-dir", tmp_path / "env", "--jobs", 1])
    base = (tmp_path / "base" / "results.csv").read_text()
    flag = (tmp_path / "flag" / "results.csv").read_text()
    assert flag != base
    assert (tmp_path / "env" / "results.csv").read_text() == flag
    assert json.loads((tmp_path / "env" / "results.json").read_text())["seed"] == 99


# ---------------------------------------------------------------------------
# errors


@pytest.mark.parametrize(
    "text",
    [
        "experiment = \"lln\"\nseed = [",  # malformed TOML
        "experiment = \"nope\"\nseed = 1",
        "experiment = \"lln\"\nseed = 1\nxi = { family = \"germ-volume\" }\nmarks = { family = \"none\" }\n"
        "[[test_functions]]\nkind = \"constant\"\nvalue = 1.0\n[grid]\nlambda = [10]",
        "experiment = \"coupling\"\nseed = 1\n[grid]\nlambda = [-5]",
        "experiment = \"coupling\"\nseed = -1\n[grid]\nlambda = [5]",
        "experiment = \"coupling\"\nseed = 1\n[grid]\nlambda = [5]\n[mc]\nbogus = 3",
    ],
)
def test_bad_config_exits_2_without_files(tmp_path, text):
    cfg = write(tmp_path, text)
    out = tmp_path / "o"
    assert run(["run", cfg, "--out-dir", out]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_missing_seed_exits_2(tmp_path, monkeypatch):
    monkeypatch.delenv("STABSIM_SEED", raising=False)
    cfg = write(tmp_path, COUPLING_UNIFORM.replace("seed = 7", ""))
    out = tmp_path / "o"
    assert run(["run", cfg, "--out-dir", out]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_missing_file_exits_2(tmp_path):
    assert run(["run", tmp_path / "absent.toml", "--out-dir", tmp_path / "o"]) == cli.EXIT_CONFIG


def test_diagnostic_failure_exits_3(tmp_path):
    text = GERM_LLN.replace("[replicates]", "[options]\ntarget = \"mc\"\n[mc]\nwindow_half_size = 0.5\nwindow_growth = \"fixed\"\n[replicates]")
    cfg = write(tmp_path, text)
    assert run(["run", cfg, "--out-dir", tmp_path / "o", "--jobs", 1]) == cli.EXIT_DIAGNOSTIC


def test_failed_verdict_exits_1(tmp_path):
    # the symmetric difference cannot shrink below 1e-9 at these intensities
    text = """
experiment = "voronoi-coverage"
seed = 5
[[test_functions]]
kind = "indicator-box"
lo = [0.25, 0.25]
hi = [0.75, 0.75]
[grid]
lambda = [100, 400]
[replicates]
reps = 5
[options]
final_max = 1e-9
"""
    assert run(["run", write(tmp_path, text), "--out-dir", tmp_path / "o", "--jobs", 1]) == cli.EXIT_VERDICT
    rows = read_rows(tmp_path / "o")
    assert [r["verdict"] for r in rows] == ["pass", "fail"]


# ---------------------------------------------------------------------------
# list


def test_list_names_experiments_and_anchors(capsys):
    assert run(["list"]) == 0
    lines = capsys.readouterr().out.splitlines()
    by_name = {ln.split()[0]: ln for ln in lines[1:]}
    assert set(by_name) == set(cli.EXPERIMENT_NAMES)
    assert "Theorem 2.4" in by_name["clt-binomial"]
    assert "Lemma 3.1" in by_name["coupling"]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "stabsim.cli", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "voronoi-coverage" in r.stdout


# ---------------------------------------------------------------------------
# a real experiment


def test_voronoi_lln_row(tmp_path):
    cfg = write(tmp_path, VORONOI_LLN)
    code = run(["run", cfg, "--out-dir", tmp_path / "o", "--jobs", 1])
    (row,) = read_rows(tmp_path / "o")
    assert row["experiment"] == "lln" and row["param_point"].startswith("lambda=2000")
    assert float(row["target"]) == 0.25
    assert abs(float(row["z_score"])) <= 3
    assert row["verdict"] == "pass" and code == cli.EXIT_OK


def test_uniform_coupling_agrees_always(tmp_path):
    run(["run", write(tmp_path, COUPLING_UNIFORM), "--out-dir", tmp_path / "o", "--jobs", 1])
    for r in read_rows(tmp_path / "o"):
        assert float(r["estimate"]) == 1.0 and float(r["target"]) == 1.0
        assert r["verdict"] == "pass"


def test_variance_estimate_error():
    import numpy as np

    x = np.random.default_rng(0).standard_normal(20_000)
    e = cli.variance_estimate(x)
    assert abs(e.value - 1.0) <= 3 * e.std_error
    assert e.std_error == pytest.approx(math.sqrt(2 / 20_000), rel=0.05)
