import csv
import io
import json

import pytest
from click.testing import CliRunner

from scconnect import __version__
from scconnect.cli import main, parse_spec
from scconnect.protograph import build_loop, build_loop48, build_mixed_loop


@pytest.fixture
def runner():
    return CliRunner()


def test_parse_spec_grammar():
    assert parse_spec("loop:3,6,15,h=5") == build_loop(3, 6, 15, 5)
    assert parse_spec("loop48:B,12") == build_loop48("B", 12)
    assert parse_spec("mixed:L1,15") == build_mixed_loop("L1", 15)
    assert parse_spec("uncoupled:3,6").num_vars == 2
    assert parse_spec("square:3,6,16").num_vars == 96


def test_build_then_threshold(runner, tmp_path):
    f = tmp_path / "loop.json"
    r = runner.invoke(main, ["build", "loop:3,6,12", "--out", str(f)])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "loop.json.manifest.json").exists()
    r = runner.invoke(main, ["threshold-bec", str(f)])
    assert r.exit_code == 0, r.output
    res = json.loads(r.output)
    assert res["epsilon_star"] == pytest.approx(0.5237, abs=0.005)
    assert res["tol"] == 1e-4


def test_rate_of_square(runner):
    r = runner.invoke(main, ["rate", "square:3,6,24"])
    assert r.exit_code == 0
    out = json.loads(r.output)
    assert out["rate"] == 0.4444
    assert (out["numerator"], out["denominator"]) == (4, 9)


def test_malformed_inputs_exit_nonzero(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    r = runner.invoke(main, ["threshold-bec", str(bad)])
    assert r.exit_code != 0
    assert "error" in r.stderr
    r = runner.invoke(main, ["rate", "chain:3,7,12"])
    assert r.exit_code != 0
    r = runner.invoke(main, ["rate", "pretzel:1,2"])
    assert r.exit_code != 0
    r = runner.invoke(main, ["rate", "square:4,8,16"])
    assert r.exit_code != 0
    r = runner.invoke(main, ["threshold-bec", "chain:3,6,12", "--tol", "-1"])
    assert r.exit_code != 0


def test_failed_run_leaves_no_outputs(runner, tmp_path):
    out = tmp_path / "t.json"
    r = runner.invoke(main, ["threshold-awgn", "uncoupled:3,6", "--lo", "-1", "--hi", "0.5",
                             "--out", str(out)])
    assert r.exit_code == 2
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_manifest_contents(runner, tmp_path):
    out = tmp_path / "h.txt"
    r = runner.invoke(main, ["lift", "chain:3,6,8", "-M", "16", "--seed", "4", "--out", str(out)])
    assert r.exit_code == 0
    man = json.loads((tmp_path / "h.txt.manifest.json").read_text())
    assert man["subcommand"] == "lift"
    assert man["seed"] == 4
    assert man["tool_version"] == __version__
    assert man["outputs"] == [str(out)]
    assert man["parameters"]["girth6"] is True and man["parameters"]["mode"] == "circulant"
    assert man["wall_time_s"] >= 0
    # regenerating from the manifest parameters gives the same file
    again = tmp_path / "again.txt"
    runner.invoke(main, ["lift", "chain:3,6,8", "-M", "16", "--seed", "4", "--out", str(again)])
    assert again.read_text() == out.read_text()


def test_defaults_echoed(runner, tmp_path):
    out = tmp_path / "a.json"
    r = runner.invoke(main, ["threshold-awgn", "uncoupled:3,6", "--lo", "0.5", "--hi", "2",
                             "--tol", "0.1", "--out", str(out)])
    assert r.exit_code == 0, r.output
    man = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert man["parameters"]["grid"] == "0.05,30.0"
    res = json.loads(out.read_text())
    assert res["manifest"] == "a.json.manifest.json"
    assert res["grid"] == {"dq": 0.05, "range": 30.0}


def test_lift_and_simulate(runner, tmp_path):
    h = tmp_path / "h.txt"
    r = runner.invoke(main, ["lift", "chain:3,6,6", "-M", "16", "--out", str(h)])
    assert r.exit_code == 0
    assert "4-cycles=0" in r.stderr
    args = ["simulate", str(h), "--channel", "bec", "--points", "0.0,0.5", "--min-errors", "5",
            "--max-frames", "64"]
    r1 = runner.invoke(main, args)
    r2 = runner.invoke(main, args + ["--workers", "2"])
    assert r1.exit_code == 0 and r1.output == r2.output
    rows = list(csv.DictReader(io.StringIO(r1.output)))
    assert rows[0]["ber"] == "0.0"
    assert int(rows[1]["frame_errors"]) >= 5


def test_de_trace_and_complexity(runner):
    r = runner.invoke(main, ["de-trace", "chain:3,6,15", "--eps", "0.488", "--iterations", "1,6"])
    assert r.exit_code == 0
    assert r.output.splitlines()[0] == "iteration,chain,position,mean_pb,log10_mean_pb"
    assert len(r.output.splitlines()) == 1 + 2 * 15
    r = runner.invoke(main, ["complexity", "chain:3,6,12", "--eps", "0.45,0.5"])
    assert r.exit_code == 0
    assert r.output.splitlines()[0] == "epsilon,i_eff,converged,sweeps"
    assert "largest converged epsilon 0.45" in r.stderr


def test_growth_rate_command(runner, tmp_path):
    out = tmp_path / "g.csv"
    r = runner.invoke(main, ["growth-rate", "uncoupled:3,6", "--grid", "0.001,0.3,30",
                             "--out", str(out)])
    assert r.exit_code == 0, r.output
    summary = json.loads((tmp_path / "g.json").read_text())
    assert summary["delta_min"] == pytest.approx(0.0227, abs=5e-4)
    assert out.read_text().startswith("delta,r_delta_bits,converged")


def test_reproduce_mixed(runner):
    r = runner.invoke(main, ["reproduce", "mixed"])
    assert r.exit_code == 0
    rows = list(csv.DictReader(io.StringIO(r.output)))
    eps = {row["spec"]: float(row["epsilon_star"]) for row in rows}
    assert eps["mixed:L2,15"] > eps["mixed:L1,15"]


def test_version(runner):
    r = runner.invoke(main, ["--version"])
    assert __version__ in r.output
