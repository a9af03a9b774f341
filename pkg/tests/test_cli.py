"""Command-line reports: exit codes, determinism and parse errors."""

import json
import subprocess
import sys
from importlib.resources import files

import pytest

from dcircuits.cli import main, run
from dcircuits.cli.report import Report, fmt

FIXTURES = files("dcircuits") / "fixtures"


def fixture(name):
    return str(FIXTURES / f"{name}.json")


def invoke(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, doc, name="doc.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


class TestFormat:
    def test_fmt(self):
        assert fmt(1 / 3) == "0.3333333333"
        assert fmt(-0.0) == "0"
        assert fmt(float("inf")) == "inf"
        assert fmt(None) == "-"
        assert fmt(True) == "true"
        assert fmt(7) == "7"

    def test_failing_names_listed(self):
        rep = Report("x", "d", 0)
        rep.check("a", 1.0, 0.5, True)
        rep.check("b", 1.0, 2.0, False)
        assert rep.render().splitlines()[-1] == "result: FAIL b"


class TestFixtures:
    @pytest.mark.parametrize(
        "command, name, code",
        [
            ("solve", "two_state", 0),
            ("solve", "zero_reward", 0),
            ("certify", "bare_hole", 0),
            ("certify", "series_context", 0),
            ("certify", "unguarded_trace", 1),
            ("contract", "contract_cost1", 0),
            ("abstraction", "abstraction", 0),
            ("abstraction", "abstraction_rough", 0),
            ("belief", "belief", 0),
            ("ope", "ope", 0),
            ("track", "track", 0),
        ],
    )
    def test_exit_codes(self, capsys, command, name, code):
        got, out, _ = invoke(capsys, command, fixture(name))
        assert got == code
        assert out.startswith(f"command: {command}\ninput-sha256: ")
        assert out.rstrip().splitlines()[-1].startswith("result: PASS" if code == 0 else "result: FAIL")

    def test_two_state_values(self, capsys):
        _, out, _ = invoke(capsys, "solve", fixture("two_state"), "--method", "linear,vi")
        assert "  s0  1.333333333" in out and "  s1  0" in out
        assert "check agree_vi_linear" in out

    def test_unguarded_names_node(self, capsys):
        _, out, _ = invoke(capsys, "certify", fixture("unguarded_trace"))
        assert "UnguardedTrace" in out and "at node root" in out
        assert out.rstrip().endswith("result: FAIL certificate")

    def test_bare_hole_gain(self, capsys):
        _, out, _ = invoke(capsys, "certify", fixture("bare_hole"))
        assert "bound=0.64" in out

    def test_contract_checks(self, capsys):
        _, out, _ = invoke(capsys, "contract", fixture("contract_cost1"))
        for name in ("lfp_cost1", "prefixed_C2", "not_prefixed_C1", "series_lift", "parallel_lift", "feedback_lift"):
            assert f"check {name}" in out

    @pytest.mark.parametrize("name", ["two_module_robustness", "parallel_factorization"])
    def test_examples(self, capsys, name):
        code, out, _ = invoke(capsys, "example", name)
        assert code == 0 and "result: PASS" in out

    def test_robustness_example_bound(self, capsys):
        _, out, _ = invoke(capsys, "example", "two_module_robustness")
        assert "check fixed_point_gap  bound=0.06666666667" in out


class TestDeterminism:
    def test_byte_identical_runs(self, capsys):
        argv = ("solve", fixture("chain_mc"), "--method", "linear,mc", "--n-traj", "4000", "--seed", "3")
        a = invoke(capsys, *argv)[1]
        b = invoke(capsys, *argv)[1]
        assert a == b

    def test_jobs_do_not_change_output(self, capsys):
        argv = ("solve", fixture("chain_mc"), "--method", "mc,linear", "--n-traj", "4000")
        one = invoke(capsys, *argv, "--jobs", "1")[1]
        many = invoke(capsys, *argv, "--jobs", "4")[1]
        assert one == many

    def test_seed_changes_mc(self, capsys):
        argv = ("solve", fixture("chain_mc"), "--method", "mc", "--n-traj", "2000")
        assert invoke(capsys, *argv, "--seed", "1")[1] != invoke(capsys, *argv, "--seed", "2")[1]

    def test_seed_env(self, capsys, monkeypatch):
        monkeypatch.setenv("DCIRCUITS_SEED", "41")
        _, out, _ = invoke(capsys, "solve", fixture("two_state"))
        assert "\nseed: 41\n" in out
        _, out, _ = invoke(capsys, "solve", fixture("two_state"), "--seed", "5")
        assert "\nseed: 5\n" in out

    def test_digest_is_input_hash(self, capsys, tmp_path):
        import hashlib

        path = write(tmp_path, open(fixture("two_state")).read())
        _, out, _ = invoke(capsys, "solve", path)
        assert f"input-sha256: {hashlib.sha256(open(path, 'rb').read()).hexdigest()}" in out

    def test_json_out(self, capsys, tmp_path):
        target = tmp_path / "r.json"
        code, _, _ = invoke(capsys, "solve", fixture("two_state"), "--method", "vi,linear", "--out", str(target))
        doc = json.loads(target.read_text())
        assert code == 0 and doc["pass"] is True
        assert doc["command"] == "solve" and doc["seed"] == 0
        assert {c["name"] for c in doc["checks"]} >= {"vi_residual", "linear_residual", "agree_vi_linear"}
        assert set(doc["checks"][0]) == {"name", "certified_bound", "measured", "pass", "note"}
        assert list(doc) == sorted(doc)
        target2 = tmp_path / "r2.json"
        invoke(capsys, "solve", fixture("two_state"), "--method", "vi,linear", "--out", str(target2))
        assert target.read_bytes() == target2.read_bytes()

    def test_run_returns_report(self):
        rep, args = run(["solve", fixture("two_state")])
        assert rep.ok and args.methods == ["linear"]


class TestErrors:
    def test_invalid_json(self, capsys, tmp_path):
        code, _, err = invoke(capsys, "solve", write(tmp_path, "{not json"))
        assert code == 2 and "invalid JSON" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = invoke(capsys, "solve", str(tmp_path / "nope.json"))
        assert code == 2 and "error" in err

    def test_unknown_name_has_path(self, capsys, tmp_path):
        doc = {"spaces": {"S": 2}, "transformers": {}, "circuit": {"leaf": "T"}}
        code, _, err = invoke(capsys, "solve", write(tmp_path, doc))
        assert code == 2 and "$.transformers" in err

    def test_bad_number(self, capsys, tmp_path):
        doc = {"spaces": {"S": 1}, "transformers": {"T": {"in": "S", "out": "S", "reward": ["x"], "gamma": 0.5,
                                                          "trans": [[1.0]]}}, "circuit": {"leaf": "T"}}
        code, _, err = invoke(capsys, "solve", write(tmp_path, doc))
        assert code == 2 and "$.transformers.T.reward" in err

    def test_non_stochastic_kernel(self, capsys, tmp_path):
        doc = {"spaces": {"S": 2}, "transformers": {"T": {"in": "S", "out": "S", "reward": [0, 0], "gamma": 0.5,
                                                          "trans": [[0.5, 0.2], [0, 1]]}}, "circuit": {"leaf": "T"}}
        code, _, err = invoke(capsys, "solve", write(tmp_path, doc))
        assert code == 2 and "$.transformers.T" in err

    def test_unknown_node_kind(self, capsys, tmp_path):
        doc = {"spaces": {"S": 1}, "circuit": {"loop": "T"}}
        code, _, err = invoke(capsys, "solve", write(tmp_path, doc))
        assert code == 2 and "unknown node kind" in err

    def test_solve_rejects_holes(self, capsys):
        code, _, err = invoke(capsys, "solve", fixture("bare_hole"))
        assert code == 2 and "closed circuit" in err

    def test_bad_method(self):
        with pytest.raises(SystemExit) as info:
            main(["solve", fixture("two_state"), "--method", "magic"])
        assert info.value.code == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "dcircuits", "solve", fixture("two_state")],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and "result: PASS" in proc.stdout

    def test_module_failure_code(self):
        proc = subprocess.run([sys.executable, "-m", "dcircuits", "certify", fixture("unguarded_trace")],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 1
