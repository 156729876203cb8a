import os
from pathlib import Path

import pytest

from viewdet.chase import TGD, ChaseConfig, EntailmentStatus
from viewdet.core import Atom, Instance, Term, isomorphic
from viewdet.datalog import (
    DatalogProgram,
    DatalogRule,
    classify_datalog,
    datalog_to_tgds,
    derives_goal,
    entails_goal,
    eval_datalog,
    goal_answers,
    to_hu_form,
    unfold_approximations,
)
from viewdet.dsl import parse, parse_file
from viewdet.errors import ErrorCode, ViewdetError

a, b, c = (Term.constant(n) for n in "abc")
X, Y, Z = (Term.variable(n) for n in "XYZ")


def _get_problem_file(file):
    return parse_file(str(Path(os.path.abspath(__file__)).parent / "data" / file))


def _get_program(text, name="P"):
    return parse(text).programs[name]


def _get_cycle_program():
    return _get_problem_file("ex_fc.mdp").programs["Cycle"]


def _get_edges(*pairs):
    return Instance(facts=[Atom("R", (Term.constant(x), Term.constant(y))) for x, y in pairs])


def test_program_predicates():
    program = _get_cycle_program()
    assert program.idb_predicates() == ["Reach", "Goal"]
    assert program.edb_predicates() == ["R"]
    assert program.goal_arity == 0
    assert program.is_recursive()
    assert not _get_program("program P { Goal :- R(X,Y). goal Goal. }").is_recursive()


def test_program_goal_without_rules():
    program = DatalogProgram(rules=[], goal="Goal")
    assert program.idb_predicates() == ["Goal"]
    assert not derives_goal(program, _get_edges(("a", "b")))


def test_program_unsafe_rule():
    with pytest.raises(ViewdetError) as error:
        DatalogProgram(rules=[DatalogRule(head=Atom("P", (X, Y)), body=[Atom("R", (X, X))])])
    assert error.value.code is ErrorCode.UNSAFE_RULE


def test_program_arity_mismatch():
    with pytest.raises(ViewdetError) as error:
        DatalogProgram(
            rules=[
                DatalogRule(head=Atom("P", (X,)), body=[Atom("R", (X, Y))]),
                DatalogRule(head=Atom("Goal", ()), body=[Atom("R", (X,))]),
            ]
        )
    assert error.value.code is ErrorCode.ARITY_MISMATCH


def test_program_load():
    program = DatalogProgram.Schema().load(
        {
            "rules": [
                {"head": ["Goal"], "body": [["R", "?X", "?X"]]},
            ],
            "goal": "Goal",
        }
    )
    assert derives_goal(program, _get_edges(("a", "a")))


def test_eval_cycle():
    program = _get_cycle_program()
    assert not derives_goal(program, _get_edges(("a", "b"), ("b", "c")))
    assert derives_goal(program, _get_edges(("a", "b"), ("b", "a")))
    result = eval_datalog(program, _get_edges(("a", "b"), ("b", "a")))
    assert Atom("Reach", (a, a)) in result
    assert Atom("Goal", ()) in result


def test_goal_answers_closure():
    program = _get_problem_file("reach.mdp").programs["Closure"]
    answers = goal_answers(program, _get_edges(("a", "b"), ("b", "c")))
    assert answers == {(a, b), (b, c), (a, c)}
    assert derives_goal(program, _get_edges(("a", "b"), ("b", "c")), (a, c))


def test_classify_cycle():
    classification = classify_datalog(_get_cycle_program())
    assert not classification.mdl
    assert not classification.fgdl
    assert not classification.ec
    assert classification.first_violation["fgdl"] == 1


def test_classify_monadic():
    program = _get_program(
        """
        program P {
          U(X) :- A(X).
          U(X) :- R(X,Y), U(Y).
          Goal :- U(X), B(X).
          goal Goal.
        }
        """
    )
    assert classify_datalog(program).labels() == ["mdl", "fgdl", "ec"]


def test_classify_guarded_binary():
    program = _get_program(
        """
        program P {
          T(X,Y) :- R(X,Y).
          T(X,Y) :- R(X,Y), T(Y,X).
          Goal :- T(X,Y).
          goal Goal.
        }
        """
    )
    classification = classify_datalog(program)
    assert classification.fgdl
    assert not classification.mdl
    assert classification.ec


def test_hu_form_specializes_heads():
    program = _get_program(
        """
        program P {
          P(X,X) :- U(X).
          Goal :- P(X,Y), R(X,Y).
          goal Goal.
        }
        """
    )
    hu = to_hu_form(program)
    heads = {r.head.predicate for r in hu.rules}
    assert "P__0_0" in heads
    assert hu.arity("P__0_0") == 1
    instance = Instance(facts=[Atom("U", (a,)), Atom("R", (a, a))])
    assert derives_goal(hu, instance)
    assert derives_goal(program, instance)
    assert not derives_goal(hu, Instance(facts=[Atom("U", (a,)), Atom("R", (a, b))]))


def test_hu_form_splits_goal():
    program = _get_program(
        """
        program P {
          Goal(X) :- R(X,Y).
          Goal(X) :- R(X,Y), Goal(Y).
          goal Goal.
        }
        """
    )
    hu = to_hu_form(program)
    assert "Goal_inner" in hu.idb_predicates()
    instance = _get_edges(("a", "b"), ("b", "c"))
    assert goal_answers(hu, instance) == goal_answers(program, instance)


def test_unfold_cycle():
    approximations = list(unfold_approximations(_get_cycle_program(), max_depth=2))
    assert [x.depth for x in approximations] == [1, 2]
    first, second = (x.query for x in approximations)
    assert len(first.body) == 1
    assert first.body[0].args[0] == first.body[0].args[1]
    frozen = Instance(facts=[Atom("R", (a, b)), Atom("R", (b, a))])
    pattern = Instance(
        facts=[
            atom.substitute({t: Term.constant(t.name) for t in atom.args})
            for atom in second.body
        ]
    )
    assert isomorphic(pattern, frozen)


def test_unfold_depth_zero():
    program = _get_program("program P { Goal :- R(X,Y), R(Y,X). goal Goal. }")
    approximations = list(unfold_approximations(program, max_depth=0))
    assert len(approximations) == 1
    assert approximations[0].depth == 0
    assert len(approximations[0].query.body) == 2


def test_unfold_max_leaves():
    approximations = list(
        unfold_approximations(_get_cycle_program(), max_depth=3, max_leaves=1)
    )
    assert [x.depth for x in approximations] == [1]


def test_unfold_decomposition():
    approximation = list(unfold_approximations(_get_cycle_program(), max_depth=2))[1]
    decomposition = approximation.decomposition
    assert len(decomposition) == 3
    assert decomposition.width == 2
    assert decomposition.parents == [None, 0, 1]
    assert approximation.tree.leaves() == approximation.query.body


def test_datalog_to_tgds():
    rules, query = datalog_to_tgds(_get_cycle_program())
    assert len(rules) == 3
    assert all(isinstance(r, TGD) and r.is_full for r in rules)
    assert query.is_boolean
    assert query.body == [Atom("Goal", ())]


def test_entails_goal():
    program = _get_cycle_program()
    answer, _ = entails_goal(_get_edges(("a", "b"), ("b", "a")), [], program)
    assert answer.status is EntailmentStatus.ENTAILED
    answer, _ = entails_goal(_get_edges(("a", "b")), [], program)
    assert answer.status is EntailmentStatus.NOT_ENTAILED_CERTIFIED


def test_entails_goal_budget():
    problem_file = _get_problem_file("ex_fc.mdp")
    answer, result = entails_goal(
        problem_file.instance(),
        problem_file.rules,
        problem_file.programs["Cycle"],
        ChaseConfig(max_steps=20),
    )
    assert answer.status is EntailmentStatus.UNKNOWN
    assert not result.saturated


def test_entails_goal_needs_answer():
    program = _get_problem_file("reach.mdp").programs["Closure"]
    with pytest.raises(ViewdetError) as error:
        entails_goal(_get_edges(("a", "b")), [], program)
    assert error.value.code is ErrorCode.NON_BOOLEAN_QUERY
    answer, _ = entails_goal(_get_edges(("a", "b")), [], program, answer=[a, b])
    assert answer.entailed
