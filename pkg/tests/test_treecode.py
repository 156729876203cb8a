import os
from pathlib import Path

import pytest
from marshmallow.exceptions import ValidationError

from viewdet.chase import TreeDecomposition, single_bag_decomposition
from viewdet.core import Atom, Instance, Term, isomorphic
from viewdet.datalog import derives_goal, unfold_approximations
from viewdet.dsl import parse, parse_file
from viewdet.errors import ErrorCode, ViewdetError
from viewdet.treecode import (
    Letter,
    LocalFact,
    Transition,
    TreeAutomaton,
    TreeCode,
    accepted_codes,
    approx_automaton,
    approximation_code,
    backward_map,
    check_coherence,
    decode,
    encode,
    partial_injections,
    quotient,
    reflexive,
    run_automaton,
)

a, b, c, d = (Term.constant(n) for n in "abcd")


def _get_cycle_program():
    path = Path(os.path.abspath(__file__)).parent / "data" / "ex_fc.mdp"
    return parse_file(str(path)).programs["Cycle"]


def _get_two_cycle_program():
    return parse("program P { Goal :- R(X,Y), R(Y,X). goal Goal. }").programs["P"]


def _get_path():
    instance = Instance(facts=[Atom("R", (a, b)), Atom("R", (b, c))])
    decomposition = TreeDecomposition(bags=[[a, b], [b, c]], parents=[None, 0])
    return instance, decomposition


def _get_code(letters, parents, width=2):
    return TreeCode(width=width, branching=2, letters=letters, parents=parents)


def test_encode_path():
    instance, decomposition = _get_path()
    code = encode(instance, decomposition)
    assert code.width == 2
    assert code.parents == [None, 0, 0]
    assert code.letters[0].facts == (LocalFact("R", (1, 2)),)
    assert code.letters[1].mapping == ((2, 1),)
    assert code.letters[2].facts == ()


def test_decode_path():
    instance, decomposition = _get_path()
    decoded = decode(encode(instance, decomposition))
    assert isomorphic(decoded, instance)
    assert Term.constant("e0_1") in decoded.adom()


def test_encode_splits_wide_vertices():
    instance = Instance(facts=[Atom("R", (a, b)), Atom("R", (a, c)), Atom("R", (a, d))])
    decomposition = TreeDecomposition(
        bags=[[a], [a, b], [a, c], [a, d]], parents=[None, 0, 0, 0]
    )
    code = encode(instance, decomposition)
    check_coherence(code)
    assert all(len(code.children(n)) in (0, 2) for n in range(len(code)))
    assert isomorphic(decode(code), instance)


def test_encode_nullary_everywhere():
    instance = Instance(facts=[Atom("R", (a, b)), Atom("Goal", ())])
    code = encode(instance, single_bag_decomposition(instance))
    assert all(letter.nullary() == frozenset(["Goal"]) for letter in code.letters)
    assert decode(code) == Instance(
        facts=[Atom("R", (Term.constant("e0_1"), Term.constant("e0_2"))), Atom("Goal", ())]
    )


def test_encode_branching():
    instance, decomposition = _get_path()
    with pytest.raises(ValidationError):
        encode(instance, decomposition, branching=1)


def test_encode_width_exceeded():
    instance = Instance(facts=[Atom("T", (a, b, c))])
    with pytest.raises(ViewdetError) as error:
        encode(instance, single_bag_decomposition(instance), width=2)
    assert error.value.code is ErrorCode.WIDTH_EXCEEDED


def test_encode_invalid_decomposition():
    instance, _ = _get_path()
    decomposition = TreeDecomposition(bags=[[a, b], [c]], parents=[None, 0])
    with pytest.raises(ViewdetError) as error:
        encode(instance, decomposition)
    assert error.value.code is ErrorCode.INVALID_DECOMPOSITION


def test_tree_code_shape():
    letter = Letter(equalities=reflexive(2))
    with pytest.raises(ValidationError):
        _get_code([letter, letter], [None, 0])


def test_tree_code_load():
    code = TreeCode.Schema().load(
        {
            "width": 1,
            "branching": 2,
            "letters": [{"mapping": [], "equalities": [[1, 1]], "facts": [["U", 1]]}],
            "parents": [None],
        }
    )
    assert decode(code) == Instance(facts=[Atom("U", (Term.constant("e0_1"),))])


def test_coherence_reflexive():
    code = _get_code([Letter(equalities=[(1, 1)])], [None])
    with pytest.raises(ViewdetError) as error:
        check_coherence(code)
    assert error.value.code is ErrorCode.INCOHERENT
    assert error.value.details["condition"] == 1


def test_coherence_closed_facts():
    letter = Letter(
        equalities=reflexive(2) + [(1, 2), (2, 1)], facts=[LocalFact("U", (1,))]
    )
    with pytest.raises(ViewdetError) as error:
        check_coherence(_get_code([letter], [None]))
    assert error.value.details["condition"] == 2


def test_coherence_equalities_below():
    root = Letter(equalities=reflexive(2) + [(1, 2), (2, 1)])
    child = Letter(mapping=[(1, 1)], equalities=reflexive(2))
    pad = Letter(equalities=reflexive(2))
    with pytest.raises(ViewdetError) as error:
        check_coherence(_get_code([root, child, pad], [None, 0, 0]))
    assert error.value.details["condition"] == 3


def test_coherence_nullary():
    root = Letter(equalities=reflexive(2), facts=[LocalFact("Goal", ())])
    pad = Letter(equalities=reflexive(2))
    with pytest.raises(ViewdetError) as error:
        check_coherence(_get_code([root, pad, pad], [None, 0, 0]))
    assert error.value.details["condition"] == 4


def test_coherence_injection():
    root = Letter(equalities=reflexive(2))
    child = Letter(mapping=[(1, 1), (2, 1)], equalities=reflexive(2))
    with pytest.raises(ViewdetError) as error:
        check_coherence(_get_code([root, child, root], [None, 0, 0]))
    assert error.value.details["condition"] == 5


def test_coherence_local_names():
    letter = Letter(equalities=reflexive(2), facts=[LocalFact("U", (3,))])
    with pytest.raises(ViewdetError) as error:
        check_coherence(_get_code([letter], [None]))
    assert error.value.code is ErrorCode.ALPHABET_MISMATCH


def test_partial_injections():
    assert len(partial_injections(1)) == 2
    assert len(partial_injections(2)) == 7
    assert () in partial_injections(2)


def test_automaton_unknown_state():
    with pytest.raises(ValidationError):
        TreeAutomaton(
            width=1,
            branching=2,
            states=["q"],
            accepting=["r"],
        )


def test_automaton_letter_outside_alphabet():
    letter = Letter(equalities=reflexive(1), facts=[LocalFact("U", (1,))])
    with pytest.raises(ViewdetError) as error:
        TreeAutomaton(
            width=1,
            branching=2,
            predicates={"R": 2},
            states=["q"],
            accepting=["q"],
            transitions=[Transition(letter=letter, target="q")],
        )
    assert error.value.code is ErrorCode.ALPHABET_MISMATCH


def test_approx_automaton_two_cycle():
    program = _get_two_cycle_program()
    automaton = approx_automaton(program)
    assert automaton.width == 2
    assert automaton.branching == 2
    (approximation,) = list(unfold_approximations(program, max_depth=1))
    code = approximation_code(approximation, automaton)
    assert run_automaton(automaton, code).accepted

    edge = Instance(facts=[Atom("R", (a, b))])
    rejected = encode(edge, single_bag_decomposition(edge), width=2)
    assert not run_automaton(automaton, rejected).accepted


def test_accepted_codes_two_cycle():
    automaton = approx_automaton(_get_two_cycle_program())
    codes = list(accepted_codes(automaton, max_height=1))
    assert len(codes) == 1
    two_cycle = Instance(facts=[Atom("R", (a, b)), Atom("R", (b, a))])
    assert isomorphic(decode(codes[0]), two_cycle)


def test_approx_automaton_cycle():
    program = _get_cycle_program()
    automaton = approx_automaton(program)
    assert automaton.width == 3
    approximations = list(unfold_approximations(program, max_depth=3))
    assert len(approximations) == 3
    for approximation in approximations:
        run = run_automaton(automaton, approximation_code(approximation, automaton))
        assert run.accepted
        assert run.states[0] in automaton.accepting


def test_run_alphabet_mismatch():
    automaton = approx_automaton(_get_cycle_program())
    instance, decomposition = _get_path()
    with pytest.raises(ViewdetError) as error:
        run_automaton(automaton, encode(instance, decomposition, width=2))
    assert error.value.code is ErrorCode.ALPHABET_MISMATCH


def test_backward_map_two_cycle():
    program = backward_map(approx_automaton(_get_two_cycle_program()))
    assert derives_goal(program, Instance(facts=[Atom("R", (a, b)), Atom("R", (b, a))]))
    assert derives_goal(program, Instance(facts=[Atom("R", (a, a))]))
    assert not derives_goal(program, Instance(facts=[Atom("R", (a, b)), Atom("R", (b, c))]))


def _get_full_equality():
    return [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_backward_map_collapses_equal_names():
    loops = [LocalFact("R", (i, j)) for i in (1, 2) for j in (1, 2)]
    letter = Letter(equalities=_get_full_equality(), facts=loops)
    automaton = TreeAutomaton(
        width=2,
        branching=2,
        predicates={"R": 2},
        states=["q"],
        accepting=["q"],
        transitions=[Transition(letter=letter, target="q")],
    )
    program = backward_map(automaton)
    assert derives_goal(program, Instance(facts=[Atom("R", (a, a))]))
    assert not derives_goal(program, Instance(facts=[Atom("R", (a, b))]))


def test_quotient_of_incoherent_code():
    root = Letter(equalities=_get_full_equality())
    child = Letter(
        mapping=[(1, 1), (2, 2)], equalities=reflexive(2), facts=[LocalFact("R", (1, 2))]
    )
    pad = Letter(equalities=reflexive(2))
    code = _get_code([root, child, pad], [None, 0, 0])
    with pytest.raises(ViewdetError) as error:
        decode(code)
    assert error.value.details["condition"] == 3
    (fact,) = quotient(code).facts
    assert fact.args[0] == fact.args[1]


def test_backward_map_equalities_above_children():
    root = Letter(equalities=_get_full_equality())
    child = Letter(
        mapping=[(1, 1), (2, 2)], equalities=reflexive(2), facts=[LocalFact("R", (1, 2))]
    )
    pad = Letter(equalities=reflexive(2))
    automaton = TreeAutomaton(
        width=2,
        branching=2,
        predicates={"R": 2},
        states=["q", "p", "f"],
        accepting=["f"],
        transitions=[
            Transition(letter=child, target="q"),
            Transition(letter=pad, target="p"),
            Transition(letter=root, target="f", children=["q", "p"]),
        ],
    )
    program = backward_map(automaton)
    assert derives_goal(program, Instance(facts=[Atom("R", (a, a))]))
    assert not derives_goal(program, Instance(facts=[Atom("R", (a, b)), Atom("R", (b, c))]))
