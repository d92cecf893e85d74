"""Command-line surface: subcommands, flags, exit codes, artifacts."""

import csv
import json
import stat

import pytest

from bisimlearn.cli import build_parser, main
from bisimlearn.oracle import Partition
from bisimlearn.quotient import Quotient

from .conftest import FIXTURES

FIG5A = str(FIXTURES / "fig5a.bsys")
FIG5A_PROP = str(FIXTURES / "fig5a.ctl")
FIG2 = str(FIXTURES / "fig2.ets")


@pytest.fixture(autouse=True)
def _solver(solver_command):
    """All CLI tests assume the session solver is resolvable via env."""
    return solver_command


# ---------------------------------------------------------------------------
# Parser shape
# ---------------------------------------------------------------------------


def test_parser_has_all_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for sub in ("learn", "quotient", "check", "oracle", "bench"):
        assert sub in text


def test_common_flags_accepted():
    parser = build_parser()
    args = parser.parse_args(
        [
            "learn",
            FIG5A,
            "--solver-cmd",
            "z3 -in",
            "--timeout-ms",
            "1000",
            "--jobs",
            "2",
            "--seed",
            "3",
            "--max-cegis-iters",
            "5",
            "--max-depth",
            "2",
            "--seed-samples",
            "4",
            "--global-rank",
            "-v",
        ]
    )
    assert args.command == "learn"
    assert args.solver_cmd == "z3 -in"
    assert args.timeout_ms == 1000
    assert args.jobs == 2
    assert args.seed == 3
    assert not args.piecewise


def test_piecewise_is_default():
    args = build_parser().parse_args(["learn", FIG5A])
    assert args.piecewise


# ---------------------------------------------------------------------------
# learn / quotient / check
# ---------------------------------------------------------------------------


def test_learn_saves_classifier(tmp_path, capsys):
    clf = tmp_path / "clf.json"
    code = main(["learn", FIG5A, "--save-classifier", str(clf)])
    out = capsys.readouterr().out
    assert code == 0
    assert "classes" in out and "solver version" in out
    data = json.loads(clf.read_text())
    assert data.get("assignment") or data.get("params") or "root" in data


def test_quotient_json_and_dot(tmp_path, capsys):
    clf = tmp_path / "clf.json"
    assert main(["learn", FIG5A, "--save-classifier", str(clf)]) == 0
    capsys.readouterr()

    out_json = tmp_path / "q.json"
    code = main(
        ["quotient", FIG5A, "--load-classifier", str(clf), "-o", str(out_json)]
    )
    assert code == 0
    q = Quotient.from_json(out_json.read_text())
    assert len(q.classes) == 3

    out_dot = tmp_path / "q.dot"
    code = main(
        [
            "quotient",
            FIG5A,
            "--load-classifier",
            str(clf),
            "--emit",
            "dot",
            "-o",
            str(out_dot),
        ]
    )
    assert code == 0
    assert out_dot.read_text().startswith("digraph")


def test_quotient_learns_on_the_fly_without_classifier(tmp_path):
    out_json = tmp_path / "q.json"
    code = main(["quotient", FIG5A, "-o", str(out_json)])
    assert code == 0
    assert len(Quotient.from_json(out_json.read_text()).classes) == 3


def test_check_exit_codes(tmp_path, capsys):
    clf = tmp_path / "clf.json"
    main(["learn", FIG5A, "--save-classifier", str(clf)])
    capsys.readouterr()

    fails = main(["check", FIG5A, "--prop", FIG5A_PROP, "--load-classifier", str(clf)])
    out = capsys.readouterr().out
    assert fails == 1
    assert "satisfying" in out
    assert "x" in out  # the condition predicate is printed

    holding = tmp_path / "holds.ctl"
    holding.write_text("E F xle0 || E G xgt0\n")
    holds = main(
        ["check", FIG5A, "--prop", str(holding), "--load-classifier", str(clf)]
    )
    assert holds == 0


def test_check_rejects_next_operator(tmp_path, capsys):
    prop = tmp_path / "bad.ctl"
    prop.write_text("E X xle0\n")
    code = main(["check", FIG5A, "--prop", str(prop)])
    err = capsys.readouterr().err
    assert code == 2
    assert "next" in err.lower()


def test_missing_system_file_is_user_error(capsys):
    code = main(["learn", "no-such-file.bsys"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_solver_cmd_flag_overrides(tmp_path, capsys):
    broken = tmp_path / "broken-solver"
    broken.write_text("#!/bin/sh\nexit 3\n")
    broken.chmod(broken.stat().st_mode | stat.S_IEXEC)
    code = main(["learn", FIG5A, "--solver-cmd", str(broken)])
    assert code == 2


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def test_oracle_coarsest_and_check(tmp_path, capsys):
    part = tmp_path / "part.json"
    assert main(["oracle", "coarsest", FIG2, "-o", str(part)]) == 0
    blocks = {frozenset(b) for b in Partition.from_json(part.read_text()).blocks()}
    assert blocks == {frozenset({0, 1}), frozenset({2, 3}), frozenset({4})}

    assert main(["oracle", "check", FIG2, "--partition", str(part)]) == 0
    assert "valid" in capsys.readouterr().out

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"blocks": [[0, 4], [1], [2, 3]]}))
    assert main(["oracle", "check", FIG2, "--partition", str(bad)]) == 1
    assert "label" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_runs_manifest(tmp_path, capsys):
    manifest = tmp_path / "suite.json"
    manifest.write_text(
        json.dumps(
            {
                "cases": [
                    {
                        "name": "fig5a",
                        "system": FIG5A,
                        "property": FIG5A_PROP,
                        "budget_s": 120,
                    }
                ]
            }
        )
    )
    out_csv = tmp_path / "bench.csv"
    code = main(["bench", str(manifest), "--reps", "2", "-o", str(out_csv)])
    table = capsys.readouterr().out
    assert code == 0
    assert "fig5a" in table and "mean_s" in table

    with out_csv.open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows and set(rows[0]) == {
        "case",
        "rep",
        "phase",
        "seconds",
        "iters",
        "classes",
        "result",
    }
    phases = {r["phase"] for r in rows}
    assert {"learn", "verify", "extract", "check"} <= phases
    assert {r["rep"] for r in rows} == {"0", "1"}
    assert all(float(r["seconds"]) >= 0 for r in rows)
    assert all(r["classes"] == "3" for r in rows)


def test_bench_empty_manifest_is_ok(tmp_path, capsys):
    manifest = tmp_path / "empty.json"
    manifest.write_text(json.dumps({"cases": []}))
    assert main(["bench", str(manifest)]) == 0


def test_bench_budget_violation_fails(tmp_path, capsys):
    manifest = tmp_path / "suite.json"
    manifest.write_text(
        json.dumps(
            {
                "cases": [
                    {
                        "name": "impossible",
                        "system": FIG5A,
                        "property": FIG5A_PROP,
                        "budget_s": 0,
                    }
                ]
            }
        )
    )
    assert main(["bench", str(manifest), "--reps", "1"]) == 1
