import os
from pathlib import Path

import pytest
from marshmallow.exceptions import ValidationError

from viewdet.chase import ChaseConfig, chase, classify_rules
from viewdet.core import Term, find_homomorphisms, freeze
from viewdet.corpus import (
    CASpec,
    CATransition,
    ForbiddenPair,
    Move,
    Orientation,
    RunStatus,
    TilingMode,
    TilingSpec,
    TMSpec,
    TMTransition,
    cell_table,
    chase_cell_table,
    gen_cellular,
    gen_tiling,
    gen_tm,
    run_tm,
    simulate,
    simulate_cellular,
    simulate_tiling,
    simulate_tm,
    solve_tiling,
)
from viewdet.datalog import classify_datalog
from viewdet.dsl import parse_file
from viewdet.errors import ErrorCode, ViewdetError
from viewdet.mondet import SearchBudgets, VerdictKind, search_counterexample


def _get_machine(file):
    path = Path(os.path.abspath(__file__)).parent / "data" / file
    return parse_file(str(path)).machine()


def _get_tiling_specs():
    return [
        _get_machine("checkerboard.tiling"),
        _get_machine("lonely.tiling"),
        TilingSpec(tiles=["t"], name="free"),
        TilingSpec(
            tiles=["a", "b"],
            forbidden=[ForbiddenPair(first="a", second="b", orientation=Orientation.VERTICAL)],
            name="stripes",
        ),
        TilingSpec(
            tiles=["a", "b", "c"],
            forbidden=[
                ForbiddenPair(first="a", second="b", orientation=Orientation.HORIZONTAL),
                ForbiddenPair(first="c", second="c", orientation=Orientation.VERTICAL),
            ],
            name="three",
        ),
    ]


def _get_axis_chain(instance, predicate, start):
    successor = {f.args[0]: f.args[1] for f in instance if f.predicate == predicate}
    chain = [start]
    while chain[-1] in successor:
        chain.append(successor[chain[-1]])
    return chain


def _get_tm(**changes):
    fields = dict(
        alphabet=["Left", "Right", "Blank"],
        states=["start", "end"],
        transitions=[],
    )
    fields.update(changes)
    return TMSpec(**fields)


###############################################################################
# Specs


def test_ca_spec_states():
    with pytest.raises(ValidationError):
        CASpec(states=2, target=2)


def test_ca_spec_nondeterministic():
    with pytest.raises(ViewdetError) as error:
        CASpec(
            states=2,
            target=1,
            transitions=[
                CATransition(neighbourhood=[0, 0], result=0),
                CATransition(neighbourhood=[0, 0], result=1),
            ],
        )
    assert error.value.code is ErrorCode.NONDETERMINISTIC_SPEC


def test_ca_spec_next_state():
    spec = _get_machine("counter.ca")
    assert spec.name == "counter"
    assert spec.next_state(0, 0) == 1
    assert spec.next_state(1, 0, 0) is None
    assert spec.next_state(None, 0, 0) is None
    assert CASpec.state(2) == "T2"


def test_tiling_spec_empty():
    with pytest.raises(ViewdetError) as error:
        TilingSpec(tiles=[])
    assert error.value.code is ErrorCode.EMPTY_TILESET


def test_tiling_spec_unknown_tile():
    with pytest.raises(ValidationError):
        TilingSpec(
            tiles=["a"],
            forbidden=[ForbiddenPair(first="a", second="b", orientation=Orientation.VERTICAL)],
        )
    with pytest.raises(ValidationError):
        TilingSpec(tiles=["a"], initial="b")


def test_tiling_spec_allowed():
    spec = _get_machine("checkerboard.tiling")
    assert spec.tiles == ["a", "b"]
    assert not spec.allowed("a", "a", Orientation.HORIZONTAL)
    assert spec.allowed("a", "b", Orientation.VERTICAL)
    assert TilingSpec.tile("a") == "T_a"


def test_tm_spec_needs_marks():
    with pytest.raises(ValidationError):
        _get_tm(alphabet=["Left", "Right"])


def test_tm_spec_unknown_state():
    with pytest.raises(ValidationError):
        _get_tm(states=["start"])


def test_tm_spec_keeps_marks():
    overwrite = TMTransition(state="start", read="Left", next="end", write="Blank", move=Move.RIGHT)
    with pytest.raises(ValidationError):
        _get_tm(transitions=[overwrite])
    leave = TMTransition(state="start", read="Left", next="end", write="Left", move=Move.LEFT)
    with pytest.raises(ValidationError):
        _get_tm(transitions=[leave])


def test_tm_spec_nondeterministic():
    transitions = [
        TMTransition(state="start", read="Left", next="start", write="Left", move=Move.RIGHT),
        TMTransition(state="start", read="Left", next="end", write="Left", move=Move.STAY),
    ]
    with pytest.raises(ViewdetError) as error:
        _get_tm(transitions=transitions)
    assert error.value.code is ErrorCode.NONDETERMINISTIC_SPEC


def test_tm_spec_transition():
    spec = _get_machine("halt3.tm")
    assert spec.transition("start", "Left").move is Move.RIGHT
    assert spec.transition("start", "Right") is None
    assert spec.transition("end", "Blank") is None
    assert spec.cell("Blank") == "Blank"
    assert spec.cell("Blank", "end") == "H_end_Blank"


###############################################################################
# Simulators


def test_simulate_cellular_reached():
    report = simulate_cellular(_get_machine("counter.ca"))
    assert report.reachable
    assert report.generation == 2
    assert report.proof == "reached"


def test_simulate_cellular_cycle():
    report = simulate_cellular(_get_machine("blank.ca"))
    assert report.reachable is False
    assert report.proof == "cycle"


def test_simulate_cellular_bound():
    report = simulate_cellular(_get_machine("counter.ca"), max_generations=1)
    assert report.reachable is None
    assert report.proof == "bound"


def test_run_tm_halt3():
    spec = _get_machine("halt3.tm")
    run = run_tm(spec, 3)
    assert run.status is RunStatus.HALTED
    assert run.steps == 2
    assert run.stops_in_time
    assert run.cells[0] == ["H_start_Left", "Blank", "Right"]
    assert run.cells[-1] == ["Left", "H_end_Blank", "Right"]

    short = run_tm(spec, 2)
    assert short.status is RunStatus.STUCK
    assert short.steps == 1
    assert not short.stops_in_time


def test_run_tm_short_tape():
    with pytest.raises(ValidationError):
        run_tm(_get_machine("halt3.tm"), 1)


def test_simulate_tm_halts():
    report = simulate_tm(_get_machine("halt3.tm"), max_length=4)
    assert report.halts
    assert report.witness_length == 3
    assert [r.length for r in report.runs] == [2, 3, 4]


def test_simulate_tm_loops():
    report = simulate_tm(_get_machine("loop.tm"), max_length=6)
    assert not report.halts
    assert report.witness_length is None
    assert all(r.status is RunStatus.RUNNING for r in report.runs)


def test_chase_cell_table_matches_run():
    spec = _get_machine("halt3.tm")
    cells = cell_table(spec, 3)
    table = chase_cell_table(spec, 3)
    assert len(cells) == 3
    for t, row in enumerate(cells):
        for s, cell in enumerate(row):
            assert table[t][s] == {cell}


def test_simulate_tiling_checkerboard():
    report = simulate_tiling(_get_machine("checkerboard.tiling"), max_size=3)
    assert all(run.valid for run in report.runs)
    assert report.valid_up_to == 3
    assert report.runs[1].witness == [["a", "b"], ["b", "a"]]


def test_simulate_tiling_lonely():
    spec = _get_machine("lonely.tiling")
    report = simulate_tiling(spec, max_size=3)
    assert report.valid_up_to == 1
    assert solve_tiling(spec, 1) == [["t"]]
    assert solve_tiling(spec, 2) is None


def test_solve_tiling_initial():
    spec = _get_machine("checkerboard.tiling")
    assert solve_tiling(spec, 1)[0][0] == "a"
    only_b = TilingSpec(tiles=["a", "b"], initial="b")
    assert solve_tiling(only_b, 1) == [["b"]]
    assert solve_tiling(only_b, 1, use_initial=False) == [["a"]]


def test_simulate_dispatch():
    assert simulate(_get_machine("counter.ca"), 5).reachable
    assert simulate(_get_machine("halt3.tm"), 4).halts
    assert simulate(_get_machine("lonely.tiling"), 2).valid_up_to == 1
    with pytest.raises(ValidationError):
        simulate("not a machine", 3)


###############################################################################
# Generators


def test_gen_cellular():
    problem = gen_cellular(_get_machine("counter.ca"))
    assert problem.name == "counter"
    assert problem.views.names() == ["S", "V_Xzero", "V_Yzero", "V_XSucc", "V_YSucc"]
    labels = [r.label for r in problem.rules]
    assert labels[:4] == ["grid:0", "grid:1", "grid:2", "grid:3"]
    assert labels[-1] == "accept"
    assert "run:T1T0" in labels
    assert classify_rules(problem.rules[:4]).linear
    run = [r for r in problem.rules if r.label.startswith("run:")]
    classification = classify_rules(run)
    assert classification.full
    assert classification.frontier_one
    assert problem.query.is_boolean


def test_gen_cellular_mdl():
    problem = gen_cellular(_get_machine("counter.ca"), mdl=True)
    assert problem.name == "counter_mdl"
    assert problem.query is None
    assert problem.program.goal == "Goal"
    assert classify_datalog(problem.program).mdl
    assert all(r.label.startswith("grid:") for r in problem.rules)


def test_gen_tiling_cq():
    problem = gen_tiling(_get_machine("checkerboard.tiling"))
    assert problem.name == "checkerboard_cq"
    assert problem.views.names() == ["V"]
    assert len(problem.views.get("V").query) == 3
    assert [r.label for r in problem.rules] == ["axis:x", "axis:y"]
    assert classify_rules(problem.rules).uid


def test_gen_tiling_ucq():
    problem = gen_tiling(_get_machine("checkerboard.tiling"), TilingMode.UCQ)
    assert problem.name == "checkerboard_ucq"
    assert len(problem.query) == 6
    assert "V_OT" in problem.views
    assert {"S", "V_HA", "V_VA", "V_T_a", "V_T_b"} <= set(problem.views.names())

    lonely = gen_tiling(_get_machine("lonely.tiling"), TilingMode.UCQ)
    assert "V_OT" not in lonely.views
    assert len(lonely.query) == 3


def test_gen_tm():
    problem = gen_tm(_get_machine("halt3.tm"))
    assert problem.name == "halt3"
    assert problem.views.names() == ["V_First", "V_Last"]
    assert problem.program.name == "reached"
    assert classify_rules(problem.rules).full
    assert "bad" in {r.label for r in problem.rules}


def test_gen_tm_halting_is_not_determined():
    problem = gen_tm(_get_machine("halt3.tm"))
    verdict = search_counterexample(problem, SearchBudgets(unfold_depth=3))
    assert verdict.kind is VerdictKind.NOT_DETERMINED
    assert verdict.certified


def test_gen_tm_looping_stays_unknown():
    problem = gen_tm(_get_machine("loop.tm"))
    verdict = search_counterexample(problem, SearchBudgets(unfold_depth=3))
    assert verdict.kind is VerdictKind.UNKNOWN


@pytest.mark.parametrize("depth", range(1, 6))
@pytest.mark.parametrize("index", range(5))
def test_gen_tiling_free_images_follow_axes(index, depth):
    problem = gen_tiling(_get_tiling_specs()[index])
    assert classify_rules(problem.rules).uid
    free = problem.views.get("V").query.disjuncts[0]
    instance, mapping = freeze(problem.query.disjuncts[0])
    # FIFO order alternates the two axis rules
    prefix = chase(instance, problem.rules, ChaseConfig(max_steps=2 * depth)).instance
    xs = _get_axis_chain(prefix, "AxisX", mapping[Term.variable("X0")])
    ys = _get_axis_chain(prefix, "AxisY", mapping[Term.variable("Y0")])
    assert len(xs) == len(ys) == depth + 2

    images = {
        tuple(h[v] for v in free.head[:4]) for h in find_homomorphisms(free.body, prefix)
    }
    assert images == {
        (xs[n], xs[n + 1], ys[m], ys[m + 1])
        for n in range(len(xs) - 1)
        for m in range(len(ys) - 1)
    }
