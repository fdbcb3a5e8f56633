"""End-to-end tests for the dptool command line."""

import json

import pytest

from dptool.behavioral import COLUMNS
from dptool.cli import main
from dptool.problem import fixture_path

NR, R = "not_recidivate", "recidivate"
S0, S1 = "predicted_not_recidivate", "predicted_recidivate"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def report_of(captured):
    return json.loads(captured.out)["report"]


@pytest.fixture
def recidivism_path():
    return fixture_path("recidivism")


@pytest.fixture
def rational_csv(tmp_path):
    rows = [f"p1,{2 * i},a,{S0},release,{NR}\np1,{2 * i + 1},a,{S1},not_release,{R}" for i in range(10)]
    path = tmp_path / "rational.csv"
    path.write_text(",".join(COLUMNS) + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestValidate:
    """Problem validation from the command line."""

    def test_fixture_is_valid(self, capsys, recidivism_path):
        code, out = run(capsys, "validate", recidivism_path)
        assert code == 0
        assert "valid" in out.out

    def test_unnormalized_joint(self, capsys, tmp_path, recidivism_path):
        data = json.loads(recidivism_path.read_text(encoding="utf-8"))
        data["joint"] = [[0.5, 0.0], [0.0, 0.4]]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        code, out = run(capsys, "validate", path)
        assert code == 1
        assert "JOINT_NOT_NORMALIZED" in out.out

    def test_json_format(self, capsys, recidivism_path):
        code, out = run(capsys, "validate", recidivism_path, "--format", "json")
        body = json.loads(out.out)
        assert body["report"]["valid"] is True
        assert body["manifest"]["problem_hash"].startswith("sha256:")

    def test_missing_file(self, capsys, tmp_path):
        code, out = run(capsys, "validate", tmp_path / "nope.json")
        assert code == 64
        assert "PROBLEM_FILE_ERROR" in out.err


class TestAnalyze:
    """Benchmarks, cutpoints and properness for a problem."""

    def test_recidivism(self, capsys, recidivism_path):
        code, out = run(capsys, "analyze", recidivism_path)
        report = report_of(out)
        assert code == 0
        assert report["R"] == pytest.approx(0.35)
        assert report["R_baseline"] == pytest.approx(0.0)
        assert report["cutpoints"][0]["fraction"] == "12/19"
        assert report["certainty_optimal_actions"] == {NR: "release", R: "not_release"}

    def test_voting_is_degenerate(self, capsys):
        code, out = run(capsys, "analyze", fixture_path("voting"))
        report = report_of(out)
        assert code == 0
        assert report["Delta"] == pytest.approx(0.0, abs=1e-12)
        assert [w["code"] for w in report["warnings"]] == ["DEGENERATE"]

    def test_writes_report_file(self, capsys, tmp_path, recidivism_path):
        out_path = tmp_path / "analysis.json"
        code, _ = run(capsys, "analyze", recidivism_path, "--out", out_path)
        assert code == 0
        assert json.loads(out_path.read_text(encoding="utf-8"))["report"]["Delta"] == pytest.approx(0.35)


class TestAudit:
    """Audit verdicts and their exit codes."""

    @pytest.mark.parametrize("name, expected", [
        ("recidivism", 0),
        ("recidivism_prediction", 0),
        ("recidivism_features", 2),
        ("voting_original", 2),
    ])
    def test_exit_codes(self, capsys, name, expected):
        code, _ = run(capsys, "audit", fixture_path(name))
        assert code == expected

    def test_json_includes_multiplicity(self, capsys):
        code, out = run(capsys, "audit", fixture_path("recidivism_accuracy"), "--format", "json")
        body = report_of(out)
        assert code == 2
        assert body["audit"]["verdict"] == "ill_defined"
        assert body["multiplicity"]["action_flips"]["predicted_recidivate"] is True
        assert body["rule_table"][0]["code"] == "DEGENERATE"


class TestSimulate:
    """Exact and sampled simulation of agents."""

    def test_exact_rational(self, capsys, recidivism_path):
        code, out = run(capsys, "simulate", recidivism_path, "--exact")
        report = report_of(out)
        assert code == 0
        assert report["B"] == pytest.approx(report["R"])

    def test_seeded_output_is_byte_identical(self, capsys, tmp_path, recidivism_path):
        agent = tmp_path / "agent.json"
        agent.write_text(json.dumps({"lapse_rate": 0.3, "softmax_temperature": 0.1}), encoding="utf-8")
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (first, second):
            code, _ = run(capsys, "simulate", recidivism_path, "--agent", agent, "--trials", 200,
                          "--seed", 42, "--out", path)
            assert code == 0
        assert first.read_bytes() == second.read_bytes()
        assert first.read_text(encoding="utf-8").splitlines()[0] == ",".join(COLUMNS)

    def test_invalid_agent(self, capsys, tmp_path, recidivism_path):
        agent = tmp_path / "agent.json"
        agent.write_text(json.dumps({"lapse_rate": 1.5}), encoding="utf-8")
        code, out = run(capsys, "simulate", recidivism_path, "--agent", agent, "--exact")
        assert code == 1
        assert "INVALID_AGENT_SPEC" in out.err


class TestScore:
    """Scoring behavioral CSV files."""

    def test_rational_data_has_zero_loss(self, capsys, recidivism_path, rational_csv):
        code, out = run(capsys, "score", recidivism_path, rational_csv, "--decompose")
        report = report_of(out)
        assert code == 0
        assert report["B"] == pytest.approx(0.35)
        assert report["decomposition"]["total_loss"] == pytest.approx(0.0, abs=1e-12)

    def test_schema_violation(self, capsys, tmp_path, recidivism_path):
        path = tmp_path / "bad.csv"
        path.write_text(",".join(COLUMNS) + f"\np1,0,a,{S0},detain,{NR}\n", encoding="utf-8")
        code, out = run(capsys, "score", recidivism_path, path)
        assert code == 65
        assert "row 2" in out.err

    def test_invalid_utf8_is_a_schema_violation(self, capsys, tmp_path, recidivism_path):
        path = tmp_path / "bad.csv"
        path.write_bytes(",".join(COLUMNS).encode() + b"\np\xff1,0,a," + f"{S0},release,{NR}\n".encode())
        code, out = run(capsys, "score", recidivism_path, path)
        assert code == 65
        assert "invalid UTF-8" in out.err

    def test_zero_value_of_information(self, capsys, tmp_path):
        path = tmp_path / "voting.csv"
        path.write_text(",".join(COLUMNS) + "\np1,0,a,forecast_ahead,do_not_vote,win\n", encoding="utf-8")
        code, out = run(capsys, "score", fixture_path("voting"), path, "--decompose")
        report = report_of(out)
        assert code == 3
        assert report["B"] == pytest.approx(0.5)
        assert report["decomposition"] is None

    def test_by_condition_and_bootstrap(self, capsys, recidivism_path, rational_csv):
        code, out = run(capsys, "score", recidivism_path, rational_csv, "--by-condition",
                        "--bootstrap", 50, "--seed", 3, "--parallel", 2)
        report = report_of(out)
        assert code == 0
        assert list(report["conditions"]) == ["a"]
        assert report["bootstrap"]["n_resamples"] == 50


class TestSweepAndLearn:
    """Design sweeps and learning curves."""

    def test_sweep_writes_csv(self, capsys, tmp_path, recidivism_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"axes": {"lapse_rate": [0.0, 0.5, 1.0]}}), encoding="utf-8")
        out_path = tmp_path / "sweep.csv"
        code, _ = run(capsys, "sweep", recidivism_path, "--grid", grid, "--out", out_path)
        lines = out_path.read_text(encoding="utf-8").splitlines()
        assert code == 0
        assert len(lines) == 4
        assert lines[0].endswith("B,C,total_loss,gap_rc,gap_cb")

    def test_sweep_json(self, capsys, tmp_path, recidivism_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps([{"updating_exponent": 0.0}, {}]), encoding="utf-8")
        code, out = run(capsys, "sweep", recidivism_path, "--grid", grid)
        rows = report_of(out)["rows"]
        assert code == 0
        assert [r["B"] for r in rows] == [pytest.approx(0.0), pytest.approx(0.35)]

    def test_learn(self, capsys, recidivism_path):
        code, out = run(capsys, "learn", recidivism_path, "--trials", 40, "--seeds", 5)
        report = report_of(out)
        assert code == 0
        assert len(report["curve"]) == 40
        assert report["R"] == pytest.approx(0.35)

    def test_learn_without_feedback(self, capsys):
        code, out = run(capsys, "learn", fixture_path("recidivism_accuracy"), "--trials", 5, "--seeds", 1)
        assert code == 1
        assert "PRECONDITION_VIOLATED" in out.err
