"""Randomized agreement checks between independent procedures

Seeds are fixed so every run sees the same instances.
"""
import os
import random
from pathlib import Path

import pytest

from viewdet.chase import (
    TGD,
    ChaseConfig,
    EntailmentStatus,
    TreeDecomposition,
    certain_answer,
    chase,
)
from viewdet.core import (
    Atom,
    ConjunctiveQuery,
    Instance,
    Term,
    holds,
    instance_homomorphism,
    isomorphic,
)
from viewdet.corpus import Move, TMSpec, TMTransition, cell_table, chase_cell_table
from viewdet.datalog import datalog_to_tgds, derives_goal, eval_datalog
from viewdet.dsl import parse, parse_file
from viewdet.mondet import (
    VerdictKind,
    check_counterexample,
    decide_full,
    search_counterexample,
)
from viewdet.rewrite import backward_rewrite_ucq
from viewdet.treecode import (
    Letter,
    LocalFact,
    Transition,
    TreeAutomaton,
    accepted_codes,
    approx_automaton,
    backward_map,
    decode,
    encode,
    partial_injections,
    quotient,
    reflexive,
)

X, Y, Z = (Term.variable(n) for n in "XYZ")

DATA = Path(os.path.abspath(__file__)).parent / "data"


def _get_elements(n):
    return [Term.constant(f"a{i}") for i in range(n)]


def _get_random_instance(rng, elements, predicates, size):
    facts = []
    for _ in range(size):
        predicate, arity = rng.choice(predicates)
        facts.append(Atom(predicate, tuple(rng.choice(elements) for _ in range(arity))))
    return Instance(facts=facts)


def _get_random_tm(rng):
    marks = {"Left": [Move.RIGHT, Move.STAY], "Right": [Move.LEFT, Move.STAY]}
    inner = ["Blank", "A"]
    transitions = []
    for state in ("start", "q"):
        for symbol in ["Left", "Right"] + inner:
            if rng.random() < 0.3:
                continue
            following = rng.choice(["start", "q", "end"])
            if symbol in marks:
                write, move = symbol, rng.choice(marks[symbol])
            else:
                write, move = rng.choice(inner), rng.choice(list(Move))
            transitions.append(
                TMTransition(state=state, read=symbol, next=following, write=write, move=move)
            )
    return TMSpec(
        alphabet=["Left", "Right"] + inner,
        states=["start", "q", "end"],
        transitions=transitions,
    )


def _get_random_atom(rng, predicates, variables):
    predicate, arity = rng.choice(predicates)
    return Atom(predicate, tuple(rng.choice(variables) for _ in range(arity)))


def _get_random_decomposition(rng):
    fresh = iter(_get_elements(24))
    bags, parents = [[next(fresh) for _ in range(rng.randint(1, 3))]], [None]
    for vertex in range(1, rng.randint(1, 7)):
        parent = rng.randrange(vertex)
        kept = rng.sample(bags[parent], rng.randint(0, len(bags[parent])))
        size = rng.randint(max(len(kept), 1), 3)
        bags.append(kept + [next(fresh) for _ in range(size - len(kept))])
        parents.append(parent)
    return TreeDecomposition(bags=bags, parents=parents)


def _get_random_letter(rng):
    names = (1, 2)
    if rng.random() < 0.3:
        equalities = [(a, b) for a in names for b in names]
        facts = []
        if rng.random() < 0.5:
            facts += [LocalFact("R", (a, b)) for a in names for b in names]
        if rng.random() < 0.5:
            facts += [LocalFact("U", (a,)) for a in names]
    else:
        equalities = reflexive(2)
        candidates = [LocalFact("R", (a, b)) for a in names for b in names]
        candidates += [LocalFact("U", (a,)) for a in names]
        facts = [f for f in candidates if rng.random() < 0.25]
    return Letter(
        mapping=rng.choice(partial_injections(2)), equalities=equalities, facts=facts
    )


def _get_random_automaton(rng):
    """Internal transitions of q_i only read children in states below i"""
    states = [f"q{i}" for i in range(rng.randint(1, 3))]
    transitions = []
    for i, state in enumerate(states):
        count = 1 + (rng.random() < 0.3) if i else rng.randint(1, 2)
        for _ in range(count):
            children = []
            if i and rng.random() < 0.7:
                children = [rng.choice(states[:i]) for _ in range(2)]
            transitions.append(
                Transition(letter=_get_random_letter(rng), target=state, children=children)
            )
    return TreeAutomaton(
        width=2,
        branching=2,
        predicates={"R": 2, "U": 1},
        states=states,
        accepting=[states[-1]],
        transitions=transitions,
    )


def _get_problem_files():
    full = sorted(os.listdir(DATA / "full"))
    return ["ex_constraints.mdp", "boolean_view.mdp"] + [f"full/{name}" for name in full]


@pytest.mark.parametrize("seed", range(50))
def test_full_chase_matches_datalog(seed):
    rng = random.Random(seed)
    program = parse_file(str(DATA / "ex_fc.mdp")).programs["Cycle"]
    rules, _ = datalog_to_tgds(program)
    instance = _get_random_instance(rng, _get_elements(5), [("R", 2)], rng.randint(1, 8))
    result = chase(instance, rules, ChaseConfig(max_steps=10000))
    assert result.saturated
    assert result.instance == eval_datalog(program, instance)


@pytest.mark.parametrize("seed", range(100))
def test_tree_code_round_trip(seed):
    rng = random.Random(seed)
    decomposition = _get_random_decomposition(rng)
    assert decomposition.width <= 3
    facts = []
    for bag in decomposition.bags:
        for _ in range(rng.randint(1, 2)):
            if rng.random() < 0.7:
                facts.append(Atom("R", (rng.choice(bag), rng.choice(bag))))
            else:
                facts.append(Atom("U", (rng.choice(bag),)))
    if rng.random() < 0.3:
        facts.append(Atom("Flag", ()))
    instance = Instance(facts=facts)
    code = encode(instance, decomposition, branching=rng.choice([2, 3]))
    assert code.width == decomposition.width
    assert isomorphic(decode(code), instance)


@pytest.mark.parametrize("seed", range(100))
def test_backward_rewriting_matches_chase(seed):
    rng = random.Random(seed)
    predicates = [("R", 2), ("S", 2), ("U", 1)]
    rules = []
    for _ in range(rng.randint(1, 3)):
        body = _get_random_atom(rng, predicates, [X, Y])
        head = _get_random_atom(rng, predicates, body.variables() + [Z])
        rules.append(TGD(body=[body], head=[head]))
    query = ConjunctiveQuery(
        body=[_get_random_atom(rng, predicates, [X, Y, Z]) for _ in range(rng.randint(1, 3))]
    )
    instance = _get_random_instance(rng, _get_elements(3), predicates, rng.randint(1, 5))
    answer = certain_answer(instance, rules, query, ChaseConfig(max_steps=500))
    # a chase cut off without a match gives no reference answer
    if answer.status is not EntailmentStatus.UNKNOWN:
        assert holds(backward_rewrite_ucq(query, rules), instance) == answer.entailed


@pytest.mark.parametrize("seed", range(10))
def test_chase_follows_machine(seed):
    spec = _get_random_tm(random.Random(seed))
    for length in range(2, 5):
        cells = cell_table(spec, length)
        table = chase_cell_table(spec, length)
        for t, row in enumerate(cells):
            assert [table[t][s] for s in range(length)] == [{cell} for cell in row]


@pytest.mark.parametrize("seed", range(10))
def test_backward_map_matches_program(seed):
    rng = random.Random(seed)
    program = parse("program P { Goal :- R(X,Y), R(Y,X). goal Goal. }").programs["P"]
    backward = backward_map(approx_automaton(program))
    instance = _get_random_instance(rng, _get_elements(3), [("R", 2)], rng.randint(1, 4))
    assert derives_goal(backward, instance) == derives_goal(program, instance)


@pytest.mark.parametrize("seed", range(100))
def test_backward_map_matches_accepted_codes(seed):
    rng = random.Random(seed)
    automaton = _get_random_automaton(rng)
    backward = backward_map(automaton)
    # heights stay below the number of states, so this lists every accepted code
    codes = accepted_codes(automaton, max_height=len(automaton.states), coherent_only=False)
    images = {}
    for code in codes:
        image = quotient(code)
        images.setdefault(frozenset(image.facts), image)
    for _ in range(20):
        elements = _get_elements(rng.randint(1, 4))
        instance = _get_random_instance(
            rng, elements, [("R", 2), ("U", 1)], rng.randint(1, 5)
        )
        expected = any(
            instance_homomorphism(image, instance) is not None for image in images.values()
        )
        assert derives_goal(backward, instance) == expected


@pytest.mark.parametrize("file", _get_problem_files())
def test_decide_and_search_agree(file):
    problem = parse_file(str(DATA / file)).problem()
    decided = decide_full(problem)
    searched = search_counterexample(problem)
    assert decided.kind is not VerdictKind.UNKNOWN
    assert decided.kind is searched.kind
    for verdict in (decided, searched):
        if verdict.kind is VerdictKind.NOT_DETERMINED and verdict.certified:
            assert check_counterexample(problem, verdict.counterexample) == []
