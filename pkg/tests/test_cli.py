import json

import numpy as np
import pytest

from minmax_bounds.cli import run
from minmax_bounds.model import load
from tests.conftest import demo_instance


@pytest.fixture()
def instance_file(tmp_path):
    from minmax_bounds.model import save

    path = tmp_path / "demo.json"
    save(demo_instance(), path)
    return str(path)


def run_json(capsys, argv):
    code = run(argv)
    out = capsys.readouterr()
    doc = json.loads(out.out) if out.out.strip() else None
    return code, doc, out.err


class TestValidateCommand:
    def test_demo_passes(self, capsys, instance_file):
        code, doc, _ = run_json(capsys, ["validate", instance_file, "--format", "json"])
        assert code == 0
        assert doc["passed"] is True
        assert all(f["status"] == "pass" for f in doc["findings"])

    def test_nan_file_exits_one(self, capsys, tmp_path, instance_file):
        bad = tmp_path / "bad.json"
        bad.write_text(open(instance_file).read().replace("0.434", "NaN", 1))
        code = run(["validate", str(bad), "--format", "json"])
        err = capsys.readouterr().err
        assert code == 1
        assert json.loads(err)["error"]["exit_code"] == 1

    def test_text_format(self, capsys, instance_file):
        code = run(["validate", instance_file])
        out = capsys.readouterr().out
        assert code == 0
        assert "passed: True" in out


class TestGenRandom:
    def test_deterministic(self, capsys, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert run(["gen-random", "--n", "3", "--m", "1", "--l", "2", "--p", "4",
                    "--seed", "7", "--output", str(a)]) == 0
        capsys.readouterr()
        assert run(["gen-random", "--n", "3", "--m", "1", "--l", "2", "--p", "4",
                    "--seed", "7", "--output", str(b)]) == 0
        capsys.readouterr()
        assert a.read_text() == b.read_text()

    def test_output_loads(self, capsys, tmp_path):
        path = tmp_path / "inst.json"
        run(["gen-random", "--n", "4", "--m", "2", "--l", "4", "--p", "6",
             "--seed", "1", "--output", str(path)])
        capsys.readouterr()
        p = load(path)
        assert p.n == 4 and p.m == 2


class TestBoundCommands:
    def test_bound_reports_value(self, capsys, instance_file):
        code, doc, _ = run_json(capsys, ["bound", instance_file, "--format", "json"])
        assert code == 0
        assert doc["certificate"]["value"] == pytest.approx(3.531, abs=2e-3)
        assert doc["certificate"]["s"] == 0.0

    def test_hinf_gamma(self, capsys, instance_file):
        code, doc, _ = run_json(capsys, ["hinf-gamma", instance_file, "--format", "json"])
        assert code == 0
        assert doc["gamma_star"] == pytest.approx(4.1946, rel=2e-3)

    def test_certificate_export(self, capsys, instance_file, tmp_path):
        out = tmp_path / "cert.json"
        code, doc, _ = run_json(capsys, ["bound", instance_file, "--format", "json",
                                         "--output", str(out)])
        assert code == 0
        cert = json.loads(out.read_text())
        assert cert["schema_version"] == 1
        assert cert["provenance"] == "basic"


class TestVerifySimulate:
    def test_verify_small_state(self, capsys, instance_file):
        code, doc, _ = run_json(capsys, [
            "verify", instance_file, "--x0", "0.01,0.0,0.01,0.0", "--format", "json"
        ])
        assert code == 0
        assert doc["verified"] is True

    def test_verify_large_state_rejected(self, capsys, instance_file):
        code, doc, _ = run_json(capsys, [
            "verify", instance_file, "--x0", "100,100,100,100", "--format", "json"
        ])
        assert code == 2
        assert doc["verified"] is False
        assert "prefix violation" in doc["reason"]

    def test_simulate_reports_and_csv(self, capsys, instance_file, tmp_path):
        trace = tmp_path / "trace.csv"
        code, doc, _ = run_json(capsys, [
            "simulate", instance_file, "--x0", "0.1,0.0,0.1,0.0",
            "--adversary", "greedy", "zero", "--horizon", "50",
            "--trace-csv", str(trace), "--format", "json",
        ])
        assert code == 0
        assert len(doc["runs"]) == 2
        assert doc["lower_bound"] <= max(r["discounted_cost"] for r in doc["runs"]) + 1e-6
        lines = trace.read_text().strip().split("\n")
        assert lines[0].startswith("t,x0")
        assert len(lines) == 51


class TestPaperExample:
    def test_reports_expected_fields(self, capsys):
        code, doc, _ = run_json(capsys, ["paper-example", "--rounds", "1", "--format", "json"])
        assert code == 0
        assert doc["basic_value"] == pytest.approx(3.526, rel=0.02)
        assert doc["optimized_value"] >= doc["basic_value"] - 1e-9
        assert doc["u_max"] == 1.0
        assert "gamma_star" in doc and "rounds" in doc

    def test_u_max_flag_recorded(self, capsys):
        code, doc, _ = run_json(capsys, [
            "paper-example", "--rounds", "0", "--u-max", "0.5", "--format", "json"
        ])
        assert code == 0
        assert doc["u_max"] == 0.5


class TestErrors:
    def test_unknown_flag(self, capsys):
        assert run(["validate", "file", "--nope"]) == 1

    def test_json_error_object(self, capsys):
        code = run(["validate", "/does/not/exist", "--format", "json"])
        err = capsys.readouterr().err
        assert code == 1
        obj = json.loads(err)
        assert obj["error"]["exit_code"] == 1

    def test_bad_x0(self, capsys, instance_file):
        assert run(["verify", instance_file, "--x0", "a,b,c,d"]) == 1
