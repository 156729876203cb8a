import json
import os
from pathlib import Path

import pytest
from marshmallow.exceptions import ValidationError

from viewdet import mondet
from viewdet.chase import TGD, ChaseConfig
from viewdet.core import Atom, Instance, Term
from viewdet.dsl import parse, parse_file
from viewdet.errors import ErrorCode, ViewdetError
from viewdet.mondet import (
    BudgetReport,
    Certification,
    MonDetProblem,
    SearchBudgets,
    Verdict,
    VerdictKind,
    back_v,
    brute_force_mondet,
    check_counterexample,
    count_back_v,
    decide_full,
    decide_linear_cq,
    satisfies,
    search_counterexample,
)

a, b = (Term.constant(n) for n in "ab")
X, Y, Z = (Term.variable(n) for n in "XYZ")


def _get_path(file):
    return Path(os.path.abspath(__file__)).parent / "data" / file


def _get_problem(file):
    return parse_file(str(_get_path(file))).problem()


def _get_budgets():
    with open(_get_path("budgets.json")) as f:
        return SearchBudgets.Schema().load(json.load(f))


def test_problem_signature():
    problem = _get_problem("ex_constraints.mdp")
    assert problem.base_predicates() == ["R", "S"]
    assert problem.signature.arity("V") == 2
    assert problem.arity == 0


def test_problem_datalog_signature():
    problem = _get_problem("reach.mdp")
    assert problem.arity == 2
    assert problem.base_predicates() == ["R"]
    instance = Instance(facts=[Atom("R", (a, b)), Atom("R", (b, a))])
    assert (a, a) in problem.answers(instance)


def test_problem_needs_one_query():
    views = _get_problem("ex_fc.mdp").views
    with pytest.raises(ValidationError):
        MonDetProblem(views=views)


def test_problem_view_name_clash():
    problem_file = parse("view R(X,Y) := R(X,Y).\nquery Q := R(X,X).")
    with pytest.raises(ValidationError):
        problem_file.problem()


def test_budgets_load():
    budgets = _get_budgets()
    assert budgets.unfold_depth == 2
    assert budgets.chase.max_steps == 40
    assert budgets.rewrite.max_disjuncts == 100
    assert SearchBudgets().chase.max_steps == 300


def test_budgets_invalid():
    with pytest.raises(ValidationError):
        SearchBudgets.Schema().load({"unfold_depth": -1})


def test_verdict_needs_counterexample():
    with pytest.raises(ValidationError):
        Verdict(kind=VerdictKind.NOT_DETERMINED, method="searchCounterexample")


def test_back_v_choices():
    views = _get_problem("ex_constraints.mdp").views
    image = Instance(facts=[Atom("V", (a, b))])
    assert count_back_v(image, views) == 2
    produced = list(back_v(image, views))
    assert [choice for _, choice in produced] == [(0,), (1,)]
    assert produced[0][0].facts == [Atom("R", (a, b))]
    assert produced[1][0].facts == [Atom("S", (a, b))]
    assert len(list(back_v(image, views, limit=1))) == 1


def test_back_v_existentials():
    views = _get_problem("boolean_view.mdp").views
    image = Instance(facts=[Atom("V", ())])
    ((instance, choice),) = list(back_v(image, views, null_start=4))
    assert instance.facts == [Atom("R", (Term.null(4), Term.null(5)))]
    assert choice == (0,)


def test_back_v_datalog_view():
    views = _get_problem("norewrite.mdp").views
    image = Instance(facts=[Atom("Reach_U", (a,))])
    with pytest.raises(ViewdetError) as error:
        list(back_v(image, views))
    assert error.value.code is ErrorCode.DATALOG_VIEW_HERE


def test_satisfies():
    rule = TGD(body=[Atom("R", (X, Y))], head=[Atom("R", (Y, Z))])
    assert not satisfies(Instance(facts=[Atom("R", (a, b))]), [rule])
    assert satisfies(Instance(facts=[Atom("R", (a, b)), Atom("R", (b, b))]), [rule])
    seed = TGD(body=[], head=[Atom("U", (X,))])
    assert not satisfies(Instance(), [seed])


def test_decide_full_determined():
    verdict = decide_full(_get_problem("ex_constraints.mdp"))
    assert verdict.kind is VerdictKind.DETERMINED
    assert verdict.method == "decideFull"
    assert verdict.report.approximations == 1


def test_decide_full_without_rule():
    problem = _get_problem("ex_constraints.mdp")
    problem = MonDetProblem(views=problem.views, query=problem.query, name=problem.name)
    verdict = decide_full(problem)
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    assert verdict.certified
    counterexample = verdict.counterexample
    assert counterexample.choice == [1]
    assert check_counterexample(problem, counterexample) == []


def test_decide_full_unsupported():
    with pytest.raises(ViewdetError) as error:
        decide_full(_get_problem("ex_fc.mdp"))
    assert error.value.code is ErrorCode.UNSUPPORTED_CLASS
    with pytest.raises(ViewdetError) as error:
        decide_full(_get_problem("reach.mdp"))
    assert error.value.code is ErrorCode.UNSUPPORTED_CLASS


def test_decide_linear_cq_determined():
    problem = parse(
        """
        tgd R(X,Y) -> R(Y,Z).
        view V := R(X,Y).
        query Q := R(X,Y).
        """
    ).problem()
    verdict = decide_linear_cq(problem)
    assert verdict.kind is VerdictKind.DETERMINED
    assert verdict.method == "decideLinearCQ"


def test_decide_linear_cq_copy_views():
    problem = parse(
        """
        view V_R(X,Y) := R(X,Y).
        query Q(X) := R(X,Y), R(Y,Z).
        """
    ).problem()
    assert decide_linear_cq(problem).kind is VerdictKind.DETERMINED


def test_decide_linear_cq_not_determined():
    problem = _get_problem("boolean_view.mdp")
    verdict = decide_linear_cq(problem)
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    assert verdict.certified
    assert check_counterexample(problem, verdict.counterexample) == []


def test_decide_linear_cq_refuted_without_witness(monkeypatch):
    def no_failure(*args, **kwargs):
        return None, None, BudgetReport()

    monkeypatch.setattr(mondet, "_run_pipeline", no_failure)
    verdict = decide_linear_cq(_get_problem("boolean_view.mdp"))
    assert verdict.kind is VerdictKind.UNKNOWN
    assert verdict.method == "decideLinearCQ/refuted"
    assert verdict.notes


def test_decide_linear_cq_ucq_views():
    verdict = decide_linear_cq(_get_problem("ex_constraints.mdp"))
    assert verdict.kind is VerdictKind.DETERMINED
    assert verdict.method == "decideLinearCQ/pipeline"


def test_decide_linear_cq_unsupported():
    problem = parse(
        """
        tgd R(X,Y), R(Y,Z) -> R(X,Z).
        view V_R(X,Y) := R(X,Y).
        query Q := R(X,X).
        """
    ).problem()
    with pytest.raises(ViewdetError) as error:
        decide_linear_cq(problem)
    assert error.value.code is ErrorCode.UNSUPPORTED_CLASS


def test_search_determined():
    verdict = search_counterexample(_get_problem("ex_constraints.mdp"))
    assert verdict.kind is VerdictKind.DETERMINED
    assert verdict.method == "searchCounterexample"


def test_search_certified():
    problem = _get_problem("boolean_view.mdp")
    verdict = search_counterexample(problem)
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    counterexample = verdict.counterexample
    assert counterexample.certification is Certification.CERTIFIED
    assert counterexample.first.facts == [Atom("R", (Term.constant("c_X"),) * 2)]
    assert check_counterexample(problem, counterexample) == []


def test_search_candidate():
    problem = _get_problem("ex_fc.mdp")
    budgets = SearchBudgets(
        unfold_depth=2, chase=ChaseConfig(max_steps=30, max_new_nulls=30)
    )
    verdict = search_counterexample(problem, budgets)
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    assert not verdict.certified
    counterexample = verdict.counterexample
    assert counterexample.certification is Certification.CANDIDATE
    assert check_counterexample(problem, counterexample) == []


def test_search_datalog_unknown():
    verdict = search_counterexample(_get_problem("reach.mdp"))
    assert verdict.kind is VerdictKind.UNKNOWN
    assert verdict.report.depth_bounded
    assert verdict.report.approximations == 4


def test_search_fanout_budget():
    verdict = search_counterexample(_get_problem("ex_constraints.mdp"), _get_budgets())
    assert verdict.kind is VerdictKind.DETERMINED
    assert not verdict.report.backv_truncated


def test_check_counterexample_detects_swap():
    problem = _get_problem("boolean_view.mdp")
    counterexample = search_counterexample(problem).counterexample
    counterexample.first, counterexample.second = (
        counterexample.second,
        counterexample.first,
    )
    assert "query_on_first" in check_counterexample(problem, counterexample)


def test_brute_force_not_determined():
    verdict = brute_force_mondet(_get_problem("boolean_view.mdp"))
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    assert verdict.method == "bruteForceMondet"
    assert verdict.certified


def test_brute_force_nothing_small():
    verdict = brute_force_mondet(_get_problem("ex_constraints.mdp"))
    assert verdict.kind is VerdictKind.NO_SMALL_COUNTEREXAMPLE


def test_brute_force_too_large():
    with pytest.raises(ViewdetError) as error:
        brute_force_mondet(_get_problem("boolean_view.mdp"), max_domain=3, max_facts=8)
    assert error.value.code is ErrorCode.SCHEMA_TOO_LARGE
