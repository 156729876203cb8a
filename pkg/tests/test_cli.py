import json
import os
from pathlib import Path

import pytest

from viewdet.chase import single_bag_decomposition
from viewdet.cli import main
from viewdet.core import Atom, Instance, Term
from viewdet.datalog import unfold_approximations
from viewdet.dsl import parse, parse_file
from viewdet.treecode import approx_automaton, approximation_code, encode


def _get_path(file):
    return str(Path(os.path.abspath(__file__)).parent / "data" / file)


def _get_json(capsys):
    return json.loads(capsys.readouterr().out)


def _get_two_cycle_files(tmp_path):
    program = parse("program P { Goal :- R(X,Y), R(Y,X). goal Goal. }").programs["P"]
    automaton = approx_automaton(program)
    (approximation,) = list(unfold_approximations(program, max_depth=1))
    edge = Instance(facts=[Atom("R", (Term.constant("a"), Term.constant("b")))])
    files = {
        "automaton": automaton,
        "accepted": approximation_code(approximation, automaton),
        "rejected": encode(edge, single_bag_decomposition(edge), width=2),
    }
    paths = {}
    for name, document in files.items():
        path = tmp_path / f"{name}.json"
        path.write_text(document.dumps())
        paths[name] = str(path)
    return paths


def test_usage_error():
    with pytest.raises(SystemExit) as error:
        main(["decide"])
    assert error.value.code == 3


def test_missing_file(capsys):
    assert main(["print", "no-such-file.mdp"]) == 3
    assert "viewdet:" in capsys.readouterr().err


def test_parse_error(tmp_path, capsys):
    path = tmp_path / "bad.mdp"
    path.write_text("tgd R(X) S(X).\n")
    assert main(["print", str(path)]) == 3
    assert "PARSE_ERROR" in capsys.readouterr().err


def test_print(capsys):
    assert main(["print", _get_path("ex_fc.mdp")]) == 0
    out = capsys.readouterr().out
    assert "view V := R(X,Y)." in out
    assert "program Cycle {" in out
    assert len(parse(out).rules) == 1


def test_classify(capsys):
    assert main(["classify", _get_path("ex_fc.mdp"), "--json"]) == 0
    document = _get_json(capsys)
    assert document["views"] == {"V": "cq"}
    assert document["query"]["kind"] == "datalog"
    assert document["query"]["classes"]["mdl"] is False
    assert document["rules"]["linear"] is True


def test_chase_saturates(capsys):
    assert main(["chase", _get_path("ex_constraints.mdp")]) == 0
    assert "fact R(a,a)." in capsys.readouterr().out


def test_chase_budget(capsys):
    assert main(["chase", _get_path("ex_fc.mdp"), "--chase-steps", "3"]) == 2
    assert capsys.readouterr().out.startswith("# BUDGET_EXHAUSTED")


def test_eval(capsys):
    assert main(["eval", _get_path("reach.mdp"), "--json"]) == 0
    document = _get_json(capsys)
    assert document["answers"] == [["a", "b"], ["a", "c"], ["b", "c"]]
    assert document["complete"]


def test_eval_with_rules(capsys):
    assert main(["eval", _get_path("ex_constraints.mdp"), "--rules"]) == 0
    assert capsys.readouterr().out.strip() == "()"


def test_rewrite_views_checked(capsys):
    path = _get_path("ex_constraints.mdp")
    assert main(["rewrite", path, "--mode", "views", "--check", "--json"]) == 0
    document = _get_json(capsys)
    assert document["mismatches"] == []
    assert document["checked"] >= 2


def test_rewrite_inverse(capsys):
    assert main(["rewrite", _get_path("reach.mdp"), "--mode", "inverse"]) == 0
    assert "program Closure_inverse {" in capsys.readouterr().out


def test_rewrite_backward_needs_ucq(capsys):
    assert main(["rewrite", _get_path("reach.mdp"), "--mode", "backward"]) == 4
    assert "UNSUPPORTED_CLASS" in capsys.readouterr().err


def test_decide(capsys):
    assert main(["decide", _get_path("ex_constraints.mdp")]) == 0
    assert capsys.readouterr().out.startswith("DETERMINED (decideFull)")


def test_decide_unsupported():
    assert main(["decide", _get_path("reach.mdp")]) == 4


def test_search_candidate(capsys):
    args = ["--unfold-depth", "2", "--chase-steps", "30", "--max-nulls", "30"]
    assert main(["search", _get_path("ex_fc.mdp")] + args) == 1
    out = capsys.readouterr().out
    assert out.startswith("NOT_DETERMINED (searchCounterexample)")
    assert "certification: CANDIDATE" in out


def test_search_json(capsys):
    assert main(["search", _get_path("boolean_view.mdp"), "--json"]) == 1
    document = _get_json(capsys)
    assert document["kind"] == "NOT_DETERMINED"
    assert document["counterexample"]["certification"] == "CERTIFIED"


def test_search_budgets_file(capsys):
    path = _get_path("ex_constraints.mdp")
    assert main(["search", path, "--budgets", _get_path("budgets.json")]) == 0


def test_brute(capsys):
    assert main(["brute", _get_path("boolean_view.mdp")]) == 1
    assert main(["brute", _get_path("ex_constraints.mdp")]) == 2
    assert "NO_SMALL_COUNTEREXAMPLE" in capsys.readouterr().out


def test_brute_too_large(capsys):
    path = _get_path("boolean_view.mdp")
    assert main(["brute", path, "--max-domain", "3", "--max-facts", "8"]) == 3
    assert "SCHEMA_TOO_LARGE" in capsys.readouterr().err


def test_gen_tm_then_search(tmp_path, capsys):
    out = str(tmp_path / "halt3.mdp")
    assert main(["gen", "tm", _get_path("halt3.tm"), "-o", out]) == 0
    assert parse_file(out).problem().name == "halt3"
    assert main(["search", out, "--unfold-depth", "3"]) == 1
    assert "certification: CERTIFIED" in capsys.readouterr().out


def test_gen_tiling_ucq(tmp_path):
    out = str(tmp_path / "checkerboard.mdp")
    assert main(["gen", "tiling", _get_path("checkerboard.tiling"), "--mode", "ucq", "-o", out]) == 0
    problem = parse_file(out).problem()
    assert problem.name == "checkerboard_ucq"
    assert "V_OT" in problem.views


def test_gen_wrong_kind(capsys):
    assert main(["gen", "ca", _get_path("halt3.tm")]) == 3


def test_simulate(capsys):
    assert main(["simulate", _get_path("counter.ca")]) == 0
    assert capsys.readouterr().out.strip() == "target T2 reachable (reached)"
    assert main(["simulate", _get_path("halt3.tm"), "--bound", "4"]) == 0
    assert capsys.readouterr().out.strip() == "halts on tape length 3"
    assert main(["simulate", _get_path("lonely.tiling"), "--bound", "3"]) == 0
    assert capsys.readouterr().out.strip() == "valid tilings up to size 1 of 3"


def test_treecode_encode_decode(tmp_path, capsys):
    code = str(tmp_path / "code.json")
    assert main(["treecode", "encode", _get_path("reach.mdp"), "-o", code]) == 0
    assert json.loads(Path(code).read_text())["width"] == 3
    assert main(["treecode", "decode", code]) == 0
    out = capsys.readouterr().out
    assert "fact R(e0_1,e0_2)." in out
    assert "fact R(e0_2,e0_3)." in out


def test_treecode_automaton(tmp_path, capsys):
    path = tmp_path / "two_cycle.mdp"
    path.write_text("pred R/2.\nquery Q := R(X,Y), R(Y,X).\n")
    assert main(["treecode", "automaton", str(path)]) == 0
    document = _get_json(capsys)
    assert document["width"] == 2
    assert document["branching"] == 2
    assert document["accepting"]


def test_treecode_run(tmp_path, capsys):
    paths = _get_two_cycle_files(tmp_path)
    assert main(["treecode", "run", paths["automaton"], paths["accepted"]]) == 0
    assert capsys.readouterr().out.strip() == "accepted"
    assert main(["treecode", "run", paths["automaton"], paths["rejected"]]) == 1
    assert capsys.readouterr().out.strip() == "rejected"


def test_treecode_run_needs_code(tmp_path):
    paths = _get_two_cycle_files(tmp_path)
    with pytest.raises(SystemExit) as error:
        main(["treecode", "run", paths["automaton"]])
    assert error.value.code == 3


def test_treecode_backmap(tmp_path, capsys):
    paths = _get_two_cycle_files(tmp_path)
    assert main(["treecode", "backmap", paths["automaton"]]) == 0
    out = capsys.readouterr().out
    assert out.startswith("program ")
    assert "goal " in out


def test_rewrite_disjunct_cap(capsys):
    path = _get_path("ex_constraints.mdp")
    assert main(["rewrite", path, "--mode", "backward", "--disjunct-cap", "1"]) == 2
    assert "SATURATION_BUDGET" in capsys.readouterr().err


def test_decide_fanout_cap(capsys):
    assert main(["decide", _get_path("ex_constraints.mdp"), "--fanout-cap", "1"]) == 2
    assert "FANOUT_LIMIT" in capsys.readouterr().err
