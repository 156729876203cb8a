"""Reduction generators and their ground-truth simulators

Cellular automata, tilings of the quarter plane and Turing machines are
compiled into monotonic determinacy problems. The simulators work on the
machines directly and never look at the generated rules.
"""
from __future__ import annotations

import dataclasses
import enum
import itertools
import logging
import typing

import marshmallow_dataclass
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import TGD, ChaseConfig, chase
from .core import Atom, ConjunctiveQuery, Instance, Term, UnionQuery
from .datalog import DatalogProgram, DatalogRule
from .errors import ErrorCode, ViewdetError
from .mondet import MonDetProblem
from .views import ViewDefinition, ViewSet, copy_views

logger = logging.getLogger(__name__)

NAME = validate.Regexp(r"^[A-Za-z0-9_]+$", error="Names are letters, digits and _")


def _atom(predicate: str, *names: str) -> Atom:
    return Atom(predicate, tuple(Term.variable(n) for n in names))


def _cq(head: typing.Sequence[str], body: typing.List[Atom], name=None) -> ConjunctiveQuery:
    return ConjunctiveQuery(head=[Term.variable(n) for n in head], body=body, name=name)


def _view(name: str, head: typing.Sequence[str], *bodies: typing.List[Atom]) -> ViewDefinition:
    return ViewDefinition(
        name=name,
        query=UnionQuery(disjuncts=[_cq(head, b, name) for b in bodies], name=name),
    )


###############################################################################
# Cellular automata


@marshmallow_dataclass.dataclass
class CATransition(SchemaBase):
    # two states for the leftmost cell, three elsewhere
    neighbourhood: typing.List[int] = dataclasses.field(
        metadata={"validate": validate.Length(min=2, max=3)}
    )
    result: int = dataclasses.field(metadata={"validate": validate.Range(min=0)})


@marshmallow_dataclass.dataclass
class CASpec(SchemaBase):
    """One-dimensional cellular automaton over states T0..T(states-1), T0 blank"""

    states: int = dataclasses.field(metadata={"validate": validate.Range(min=1)})
    target: int = dataclasses.field(metadata={"validate": validate.Range(min=0)})
    transitions: typing.List[CATransition] = dataclasses.field(default_factory=list)
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.transitions = list(self.transitions)
        used = [self.target] + [
            s for t in self.transitions for s in t.neighbourhood + [t.result]
        ]
        if any(not 0 <= s < self.states for s in used):
            raise ValidationError(f"States are numbered 0..{self.states - 1}")
        table = {}
        for transition in self.transitions:
            key = tuple(transition.neighbourhood)
            if table.setdefault(key, transition.result) != transition.result:
                raise ViewdetError(
                    ErrorCode.NONDETERMINISTIC_SPEC,
                    f"Two results for {' '.join(self.state(s) for s in key)}",
                )
        self._table = table

    @staticmethod
    def state(index: int) -> str:
        return f"T{index}"

    def next_state(self, *neighbourhood: typing.Optional[int]) -> typing.Optional[int]:
        if any(s is None for s in neighbourhood):
            return None
        return self._table.get(tuple(neighbourhood))


def _right_of(left: str, right: str, tag: str) -> typing.List[Atom]:
    """left and right share a y projection, right's x follows left's"""
    return [
        _atom("YProj", f"Y{tag}", left),
        _atom("YProj", f"Y{tag}", right),
        _atom("XProj", f"X{tag}", left),
        _atom("XProj", f"X{tag}a", right),
        _atom("XSucc", f"X{tag}", f"X{tag}a"),
    ]


def _down_to(upper: str, lower: str, tag: str) -> typing.List[Atom]:
    """lower sits right below upper"""
    return [
        _atom("XProj", f"X{tag}", upper),
        _atom("XProj", f"X{tag}", lower),
        _atom("YProj", f"Y{tag}", upper),
        _atom("YProj", f"Y{tag}a", lower),
        _atom("YSucc", f"Y{tag}a", f"Y{tag}"),
    ]


def _bottom_edge(z: str) -> typing.List[Atom]:
    return [_atom("YProj", "Yb", z), _atom("Yzero", "Yb")]


def _axis_y(z: str) -> typing.List[Atom]:
    return [_atom("XProj", "Xa", z), _atom("Xzero", "Xa")]


def _ca_start() -> typing.List[Atom]:
    return [
        _atom("G", "Z0", "X0", "X1"),
        _atom("Xzero", "X0"),
        _atom("Gp", "Z0", "Y0", "Y1"),
        _atom("Yzero", "Y0"),
    ]


def _ca_grid_rules() -> typing.List[TGD]:
    return [
        TGD(body=[_atom("G", "Z", "X", "X1")], head=[_atom("G", "Z", "X1", "X2")], label="grid:0"),
        TGD(
            body=[_atom("G", "Z", "X", "X1")],
            head=[_atom("XProj", "X", "Z"), _atom("XSucc", "X", "X1")],
            label="grid:1",
        ),
        TGD(body=[_atom("Gp", "Z", "Y", "Y1")], head=[_atom("Gp", "Z", "Y1", "Y2")], label="grid:2"),
        TGD(
            body=[_atom("Gp", "Z", "Y", "Y1")],
            head=[_atom("YProj", "Y", "Z"), _atom("YSucc", "Y", "Y1")],
            label="grid:3",
        ),
    ]


def _ca_run_rules(spec: CASpec) -> typing.List[TGD]:
    t = spec.state
    rules = [
        TGD(body=_bottom_edge("Z") + _axis_y("Z"), head=[_atom("A", "Z")], label="run:origin"),
        TGD(body=[_atom("A", "Z")], head=[_atom(t(0), "Z")], label="run:blank"),
        TGD(body=_bottom_edge("Z"), head=[_atom(t(0), "Z")], label="run:bottom"),
    ]
    for transition in spec.transitions:
        states = transition.neighbourhood
        label = f"run:{''.join(t(s) for s in states)}"
        if len(states) == 2:
            j, k = states
            body = (
                _axis_y("Y")
                + [_atom(t(j), "Y")]
                + _right_of("Y", "Z", "r")
                + [_atom(t(k), "Z")]
                + _down_to("U", "Y", "d")
            )
        else:
            i, j, k = states
            body = (
                [_atom(t(i), "X")]
                + _right_of("X", "Y", "l")
                + [_atom(t(j), "Y")]
                + _right_of("Y", "Z", "r")
                + [_atom(t(k), "Z")]
                + _down_to("U", "Y", "d")
            )
        rules.append(TGD(body=body, head=[_atom(t(transition.result), "U")], label=label))
    return rules


def _ca_views() -> ViewSet:
    atomic = copy_views({"Xzero": 1, "Yzero": 1, "XSucc": 2, "YSucc": 2})
    grid = _view("S", ["X", "Y"], [_atom("XProj", "X", "Z"), _atom("YProj", "Y", "Z")])
    return ViewSet(views=[grid] + atomic.views)


def gen_cellular(spec: CASpec, mdl: bool = False) -> MonDetProblem:
    """Problem that is monotonically determined iff the target is reachable

    The rules build a grid (linear), run the automaton over it (full,
    frontier-one) and restart the query once the target shows up (linear).
    With `mdl` the last two groups become a monadic Datalog query joined to
    the query by a second goal rule.
    """
    name = spec.name or "cellular"
    grid = _ca_grid_rules()
    run = _ca_run_rules(spec)
    target = _atom(spec.state(spec.target), "V")
    if not mdl:
        accept = TGD(body=[target], head=_ca_start(), label="accept")
        problem = MonDetProblem(
            views=_ca_views(),
            rules=grid + run + [accept],
            query=UnionQuery(disjuncts=[_cq([], _ca_start(), "Q")], name="Q"),
            name=name,
        )
    else:
        rules = [DatalogRule(head=r.head[0], body=r.body) for r in run]
        rules.append(DatalogRule(head=Atom("Goal", ()), body=_ca_start()))
        rules.append(DatalogRule(head=Atom("Goal", ()), body=[target]))
        problem = MonDetProblem(
            views=_ca_views(),
            rules=grid,
            program=DatalogProgram(rules=rules, goal="Goal", name=f"{name}_mdl"),
            name=f"{name}_mdl",
        )
    logger.info("generated %s: %d rules", problem.name, len(problem.rules))
    return problem


###############################################################################
# Tilings


class Orientation(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


class TilingMode(enum.Enum):
    CQ = "cq"
    UCQ = "ucq"


@marshmallow_dataclass.dataclass
class ForbiddenPair(SchemaBase):
    """`second` may not sit right of (horizontal) or above (vertical) `first`"""

    first: str
    second: str
    orientation: Orientation = dataclasses.field(metadata={"by_value": True})


@marshmallow_dataclass.dataclass
class TilingSpec(SchemaBase):
    tiles: typing.List[str] = dataclasses.field(default_factory=list)
    forbidden: typing.List[ForbiddenPair] = dataclasses.field(default_factory=list)
    initial: typing.Optional[str] = None
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.tiles = list(dict.fromkeys(self.tiles))
        self.forbidden = list(self.forbidden)
        if not self.tiles:
            raise ViewdetError(ErrorCode.EMPTY_TILESET, "A tiling needs at least one tile")
        for tile in self.tiles:
            NAME(tile)
        known = set(self.tiles)
        mentioned = [t for p in self.forbidden for t in (p.first, p.second)]
        if self.initial is not None:
            mentioned.append(self.initial)
        unknown = sorted(set(mentioned) - known)
        if unknown:
            raise ValidationError(f"Unknown tiles {unknown}")

    @staticmethod
    def tile(name: str) -> str:
        return f"T_{name}"

    def allowed(self, first: str, second: str, orientation: Orientation) -> bool:
        return not any(
            p.first == first and p.second == second and p.orientation is orientation
            for p in self.forbidden
        )


def _bad_pair(pair: ForbiddenPair, index: int) -> typing.List[Atom]:
    v, w = f"V{index}", f"W{index}"
    x, x1, x2 = f"Xb{index}", f"Xb{index}a", f"Xb{index}b"
    y, y1, y2 = f"Yb{index}", f"Yb{index}a", f"Yb{index}b"
    body = [_atom(TilingSpec.tile(pair.first), v), _atom(TilingSpec.tile(pair.second), w)]
    if pair.orientation is Orientation.VERTICAL:
        body += [
            _atom("GridX", v, x, x1),
            _atom("GridX", w, x, x1),
            _atom("GridY", v, y, y1),
            _atom("GridY", w, y1, y2),
        ]
    else:
        body += [
            _atom("GridX", v, x, x1),
            _atom("GridX", w, x1, x2),
            _atom("GridY", v, y, y1),
            _atom("GridY", w, y, y1),
        ]
    return body


def _slot(spec: TilingSpec, v: str) -> typing.List[Atom]:
    """Every atom over one variable except Net(v, v)"""
    return (
        [_atom("GridSource", v)]
        + [_atom(spec.tile(t), v) for t in spec.tiles]
        + [
            _atom("AxisX", v, v),
            _atom("AxisY", v, v),
            _atom("GridX", v, v, v),
            _atom("GridY", v, v, v),
        ]
    )


def _tiling_cq(spec: TilingSpec, name: str) -> MonDetProblem:
    slots = [f"V{n}" for n in range(1, len(spec.forbidden) + 1)]
    start = [_atom("AxisX", "X0", "X1"), _atom("AxisY", "Y0", "Y1"), _atom("GridSource", "V0")]
    members = ["V0"] + slots
    net = [_atom("Net", a, b) for a in members for b in members if a != b]
    bad = [atom for n, p in enumerate(spec.forbidden, start=1) for atom in _bad_pair(p, n)]
    free = start + net + bad
    slot_atoms = [atom for v in slots for atom in _slot(spec, v)]
    unfaithful = [
        [
            _atom(spec.tile(t), "V0"),
            _atom("GridX", "V0", "X0", "X1"),
            _atom("GridY", "V0", "Y0", "Y1"),
        ]
        + net
        + slot_atoms
        for t in spec.tiles
    ]
    view = _view("V", ["X0", "X1", "Y0", "Y1"] + slots, free, *unfaithful)
    rules = [
        TGD(body=[_atom("AxisX", "X", "X1")], head=[_atom("AxisX", "X1", "X2")], label="axis:x"),
        TGD(body=[_atom("AxisY", "Y", "Y1")], head=[_atom("AxisY", "Y1", "Y2")], label="axis:y"),
    ]
    return MonDetProblem(
        views=ViewSet(views=[view]),
        rules=rules,
        query=UnionQuery(disjuncts=[_cq([], free, "Q")], name="Q"),
        name=name,
    )


def _horizontal(z: str, z1: str) -> typing.List[Atom]:
    return [
        _atom("XProj", "X", z),
        _atom("YProj", "Y", z),
        _atom("XProj", "X1", z1),
        _atom("YProj", "Y", z1),
        _atom("XSucc", "X", "X1"),
    ]


def _vertical(z: str, z1: str) -> typing.List[Atom]:
    return [
        _atom("XProj", "X", z),
        _atom("YProj", "Y", z),
        _atom("XProj", "X", z1),
        _atom("YProj", "Y1", z1),
        _atom("YSucc", "Y", "Y1"),
    ]


def _origin_tile(o: str, z: str) -> typing.List[Atom]:
    return [_atom("Origin", o), _atom("XProj", o, z), _atom("YProj", o, z)]


def _tiling_ucq(spec: TilingSpec, name: str) -> MonDetProblem:
    rules = [
        TGD(body=[_atom("Init", "X")], head=[_atom("A1", "X"), _atom("A2", "X")], label="start:0"),
        TGD(
            body=[_atom("A1", "X")],
            head=[_atom("XSucc", "X", "Y"), _atom("A1", "Y")],
            label="start:1",
        ),
        TGD(
            body=[_atom("A2", "X")],
            head=[_atom("YSucc", "X", "Y"), _atom("A2", "Y")],
            label="start:2",
        ),
        TGD(body=[_atom("A1", "X")], head=[_atom("Init", "Y"), _atom("Origin", "Y")], label="start:3"),
        TGD(body=[_atom("A2", "X")], head=[_atom("Init", "Y"), _atom("Origin", "Y")], label="start:4"),
    ]
    disjuncts = [_cq([], [_atom("Init", "X"), _atom("Origin", "X")], "Q")]
    for pair in spec.forbidden:
        layout = _horizontal if pair.orientation is Orientation.HORIZONTAL else _vertical
        body = layout("Z", "Z1") + [
            _atom(spec.tile(pair.first), "Z"),
            _atom(spec.tile(pair.second), "Z1"),
        ]
        disjuncts.append(_cq([], body, "Q"))
    if spec.initial is not None:
        for tile in spec.tiles:
            if tile != spec.initial:
                body = _origin_tile("O", "Z") + [_atom(spec.tile(tile), "Z")]
                disjuncts.append(_cq([], body, "Q"))

    grid = _view(
        "S",
        ["X", "Y"],
        [_atom("A1", "X"), _atom("A2", "Y")],
        *[
            [_atom("XProj", "X", "Z"), _atom(spec.tile(t), "Z"), _atom("YProj", "Y", "Z")]
            for t in spec.tiles
        ],
    )
    atomic = copy_views(
        dict({"XSucc": 2, "YSucc": 2, "Origin": 1}, **{spec.tile(t): 1 for t in spec.tiles})
    )
    special = [
        _view("V_HA", ["Z", "Z1", "Y", "X", "X1"], _horizontal("Z", "Z1")),
        _view("V_VA", ["Z", "Z1", "Y", "Y1", "X"], _vertical("Z", "Z1")),
    ]
    if spec.initial is not None:
        special.append(_view("V_OT", ["O", "Z"], _origin_tile("O", "Z")))
    return MonDetProblem(
        views=ViewSet(views=[grid] + atomic.views + special),
        rules=rules,
        query=UnionQuery(disjuncts=disjuncts, name="Q"),
        name=name,
    )


def gen_tiling(spec: TilingSpec, mode: TilingMode = TilingMode.CQ) -> MonDetProblem:
    """Problem that fails to be monotonically determined iff a valid tiling exists

    CQ mode uses two unary inclusion dependencies, a CQ and one UCQ view and
    ignores the initial tile. UCQ mode uses a UCQ query, the grid-generating
    view and atomic and adjacency views.
    """
    name = spec.name or "tiling"
    if mode is TilingMode.CQ:
        problem = _tiling_cq(spec, f"{name}_cq")
    else:
        problem = _tiling_ucq(spec, f"{name}_ucq")
    logger.info(
        "generated %s: %d rules, %d views", problem.name, len(problem.rules), len(problem.views)
    )
    return problem


###############################################################################
# Turing machines


class Move(enum.Enum):
    LEFT = "L"
    RIGHT = "R"
    STAY = "S"


@marshmallow_dataclass.dataclass
class TMTransition(SchemaBase):
    state: str
    read: str
    next: str
    write: str
    move: Move = dataclasses.field(metadata={"by_value": True})


@marshmallow_dataclass.dataclass
class TMSpec(SchemaBase):
    """Deterministic machine on a tape bounded by the Left and Right marks

    The head starts on the Left mark. A head in the end state, or in a state
    without a transition for the symbol under it, stops the run.
    """

    alphabet: typing.List[str] = dataclasses.field(default_factory=list)
    states: typing.List[str] = dataclasses.field(default_factory=list)
    start: str = "start"
    end: str = "end"
    transitions: typing.List[TMTransition] = dataclasses.field(default_factory=list)
    blank: str = "Blank"
    left: str = "Left"
    right: str = "Right"
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.alphabet = list(dict.fromkeys(self.alphabet))
        self.states = list(dict.fromkeys(self.states))
        self.transitions = list(self.transitions)
        for name in self.alphabet + self.states:
            NAME(name)
        for mark in (self.blank, self.left, self.right):
            if mark not in self.alphabet:
                raise ValidationError(f"The alphabet needs the symbol {mark}")
        for state in (self.start, self.end):
            if state not in self.states:
                raise ValidationError(f"Unknown state {state}")
        delta = {}
        for t in self.transitions:
            if t.state not in self.states or t.next not in self.states:
                raise ValidationError(f"Unknown state in {t.state} {t.read}")
            if t.read not in self.alphabet or t.write not in self.alphabet:
                raise ValidationError(f"Unknown symbol in {t.state} {t.read}")
            if t.read in (self.left, self.right) and t.write != t.read:
                raise ValidationError(f"{t.state} {t.read} overwrites a tape mark")
            if t.read == self.left and t.move is Move.LEFT:
                raise ValidationError(f"{t.state} {t.read} leaves the tape")
            if t.read == self.right and t.move is Move.RIGHT:
                raise ValidationError(f"{t.state} {t.read} leaves the tape")
            if t.read not in (self.left, self.right) and t.write in (self.left, self.right):
                raise ValidationError(f"{t.state} {t.read} writes a tape mark")
            if delta.setdefault((t.state, t.read), t) is not t:
                raise ViewdetError(
                    ErrorCode.NONDETERMINISTIC_SPEC,
                    f"Two transitions for state {t.state} reading {t.read}",
                )
        self._delta = delta

    def transition(self, state: str, symbol: str) -> typing.Optional[TMTransition]:
        if state == self.end:
            return None
        return self._delta.get((state, symbol))

    @staticmethod
    def cell(symbol: str, state: typing.Optional[str] = None) -> str:
        """Predicate of a cell holding symbol, with the head in state if given"""
        if state is None:
            return symbol
        return f"H_{state}_{symbol}"


Cell = typing.Tuple[str, typing.Optional[str]]
_EDGE = ("", None)


def _next_cell(
    spec: TMSpec, left: typing.Optional[Cell], middle: Cell, right: typing.Optional[Cell]
) -> typing.Optional[Cell]:
    """Content of a cell one step later, None where the run has stopped"""
    symbol, state = middle
    if state is not None:
        t = spec.transition(state, symbol)
        if t is None:
            return None
        return (t.write, t.next if t.move is Move.STAY else None)
    for neighbour, move in ((left, Move.RIGHT), (right, Move.LEFT)):
        if neighbour is _EDGE or neighbour[1] is None:
            continue
        t = spec.transition(neighbour[1], neighbour[0])
        if t is not None and t.move is move:
            return (symbol, t.next)
    return (symbol, None)


def _cells(spec: TMSpec, symbols: typing.Iterable[str]) -> typing.List[Cell]:
    return [(a, None) for a in symbols] + [(a, q) for q in spec.states for a in symbols]


def _heads(cells: typing.Sequence[Cell]) -> int:
    return sum(c[1] is not None for c in cells)


def _tm_delta_rules(spec: TMSpec) -> typing.List[TGD]:
    marks = {spec.left, spec.right}
    inner = [a for a in spec.alphabet if a not in marks]
    time = [_atom("Succ", "T", "T1")]
    rules = []

    left_cells = _cells(spec, [spec.left])
    for a, b in itertools.product(left_cells, _cells(spec, inner + [spec.right])):
        out = _next_cell(spec, _EDGE, a, b)
        if out is None or _heads([a, b]) > 1:
            continue
        body = [
            _atom("First", "S"),
            _atom("Succ", "S", "S1"),
            _atom(spec.cell(*a), "S", "T"),
            _atom(spec.cell(*b), "S1", "T"),
        ] + time
        rules.append(TGD(body=body, head=[_atom(spec.cell(*out), "S", "T1")], label="delta:left"))

    triples = itertools.product(
        _cells(spec, [spec.left] + inner), _cells(spec, inner), _cells(spec, inner + [spec.right])
    )
    for a, b, c in triples:
        out = _next_cell(spec, a, b, c)
        if out is None or _heads([a, b, c]) > 1:
            continue
        body = [
            _atom("Succ", "S", "S1"),
            _atom("Succ", "S1", "S2"),
            _atom(spec.cell(*a), "S", "T"),
            _atom(spec.cell(*b), "S1", "T"),
            _atom(spec.cell(*c), "S2", "T"),
        ] + time
        rules.append(TGD(body=body, head=[_atom(spec.cell(*out), "S1", "T1")], label="delta:mid"))

    for a, b in itertools.product(_cells(spec, [spec.left] + inner), _cells(spec, [spec.right])):
        out = _next_cell(spec, a, b, _EDGE)
        if out is None or _heads([a, b]) > 1:
            continue
        body = [
            _atom("Succ", "S", "S1"),
            _atom("Last", "S1"),
            _atom(spec.cell(*a), "S", "T"),
            _atom(spec.cell(*b), "S1", "T"),
        ] + time
        rules.append(TGD(body=body, head=[_atom(spec.cell(*out), "S1", "T1")], label="delta:right"))
    return rules


def _tm_rules(spec: TMSpec) -> typing.List[TGD]:
    rules = [
        TGD(body=[_atom("Succ", "X", "Y")], head=[_atom("SuccPlus", "X", "Y")], label="succ+"),
        TGD(
            body=[_atom("SuccPlus", "X", "Y"), _atom("Succ", "Y", "Z")],
            head=[_atom("SuccPlus", "X", "Z")],
            label="succ+",
        ),
        TGD(
            body=[_atom("First", "S"), _atom("First", "T"), _atom("Succ", "T", "T1")],
            head=[_atom(spec.cell(spec.left, spec.start), "S", "T")],
            label="setup",
        ),
        TGD(
            body=[_atom("Last", "S"), _atom("First", "T"), _atom("Succ", "T", "T1")],
            head=[_atom(spec.cell(spec.right), "S", "T")],
            label="setup",
        ),
        TGD(
            body=[
                _atom("First", "S"),
                _atom("SuccPlus", "S", "S1"),
                _atom("SuccPlus", "S1", "S2"),
                _atom("Last", "S2"),
                _atom("First", "T"),
            ],
            head=[_atom(spec.cell(spec.blank), "S1", "T")],
            label="setup",
        ),
    ]
    rules += _tm_delta_rules(spec)
    for state in spec.states:
        if state == spec.end:
            continue
        for symbol in spec.alphabet:
            rules.append(
                TGD(
                    body=[_atom(spec.cell(symbol, state), "C", "T"), _atom("Last", "T")],
                    head=[_atom("First", "T")],
                    label="bad",
                )
            )
    return rules


def tm_query() -> DatalogProgram:
    """Goal holds when a Succ path leads from a First element to a Last one"""
    return DatalogProgram(
        rules=[
            DatalogRule(head=Atom("Goal", ()), body=[_atom("Reached", "X"), _atom("Last", "X")]),
            DatalogRule(head=_atom("Reached", "X"), body=[_atom("First", "X")]),
            DatalogRule(
                head=_atom("Reached", "Y"),
                body=[_atom("Reached", "X"), _atom("Succ", "X", "Y")],
            ),
        ],
        goal="Goal",
        name="reached",
    )


def gen_tm(spec: TMSpec) -> MonDetProblem:
    """Problem that fails to be monotonically determined iff the machine halts

    The query walks a First..Last chain, which doubles as the tape and the
    clock. The full rules lay out the initial tape, run the machine one row
    per time step and mark the last time as First while the head is still
    running.
    """
    problem = MonDetProblem(
        views=copy_views({"First": 1, "Last": 1}),
        rules=_tm_rules(spec),
        program=tm_query(),
        name=spec.name or "machine",
    )
    logger.info("generated %s: %d rules", problem.name, len(problem.rules))
    return problem


###############################################################################
# Simulators


@marshmallow_dataclass.dataclass
class CAReport(SchemaBase):
    # None when neither reached nor excluded within the bound
    reachable: typing.Optional[bool]
    generations: int
    generation: typing.Optional[int] = None
    # "reached", "cycle" or "bound"
    proof: str = "bound"


def simulate_cellular(spec: CASpec, max_generations: int = 100) -> CAReport:
    """Evolve the all-blank tape; a repeated configuration excludes the target

    Configurations are a finite prefix followed by an infinite tail of one
    state. Cells without an applicable transition become undefined.
    """
    prefix: typing.Tuple[typing.Optional[int], ...] = ()
    tail: typing.Optional[int] = 0
    seen = set()
    for generation in range(max_generations + 1):
        if spec.target in prefix or tail == spec.target:
            return CAReport(
                reachable=True, generations=generation, generation=generation, proof="reached"
            )
        if (prefix, tail) in seen:
            return CAReport(reachable=False, generations=generation, proof="cycle")
        seen.add((prefix, tail))
        padded = list(prefix) + [tail, tail]
        cells = [spec.next_state(padded[0], padded[1])]
        cells += [
            spec.next_state(padded[i - 1], padded[i], padded[i + 1])
            for i in range(1, len(prefix) + 1)
        ]
        tail = spec.next_state(tail, tail, tail)
        while cells and cells[-1] == tail:
            cells.pop()
        prefix = tuple(cells)
    return CAReport(reachable=None, generations=max_generations)


class RunStatus(enum.Enum):
    HALTED = "halted"
    STUCK = "stuck"
    RUNNING = "running"


@marshmallow_dataclass.dataclass
class TMRun(SchemaBase):
    length: int
    status: RunStatus = dataclasses.field(metadata={"by_value": True})
    steps: int
    # cell predicates per time step, first row is the initial tape
    cells: typing.List[typing.List[str]] = dataclasses.field(default_factory=list)

    @property
    def stops_in_time(self) -> bool:
        """The head is gone or halted by the time the clock reaches length"""
        if self.status is RunStatus.HALTED:
            return self.steps <= self.length - 1
        if self.status is RunStatus.STUCK:
            return self.steps <= self.length - 2
        return False


@marshmallow_dataclass.dataclass
class TMReport(SchemaBase):
    halts: bool
    runs: typing.List[TMRun] = dataclasses.field(default_factory=list)
    witness_length: typing.Optional[int] = None


def run_tm(spec: TMSpec, length: int, max_steps: typing.Optional[int] = None) -> TMRun:
    """Run on the initial tape of the given length, at most max_steps steps"""
    if length < 2:
        raise ValidationError("Tapes hold at least the two marks")
    max_steps = length - 1 if max_steps is None else max_steps
    tape = [spec.left] + [spec.blank] * (length - 2) + [spec.right]
    position, state, steps = 0, spec.start, 0
    rows = []
    while True:
        rows.append(
            [spec.cell(a, state if i == position else None) for i, a in enumerate(tape)]
        )
        if state == spec.end:
            status = RunStatus.HALTED
            break
        t = spec.transition(state, tape[position])
        if t is None:
            status = RunStatus.STUCK
            break
        if steps >= max_steps:
            status = RunStatus.RUNNING
            break
        tape[position] = t.write
        position += {Move.LEFT: -1, Move.RIGHT: 1, Move.STAY: 0}[t.move]
        state = t.next
        steps += 1
    return TMRun(length=length, status=status, steps=steps, cells=rows)


def simulate_tm(spec: TMSpec, max_length: int = 8) -> TMReport:
    runs = [run_tm(spec, length) for length in range(2, max_length + 1)]
    witness = next((r.length for r in runs if r.stops_in_time), None)
    return TMReport(halts=witness is not None, runs=runs, witness_length=witness)


def cell_table(spec: TMSpec, length: int) -> typing.List[typing.List[str]]:
    """Cell contents by time (rows) and position, while the run goes on"""
    return run_tm(spec, length).cells


def chase_cell_table(
    spec: TMSpec, length: int, config: typing.Optional[ChaseConfig] = None
) -> typing.List[typing.List[typing.Set[str]]]:
    """Cell predicates the machine rules derive on a chain of the given length

    The chain is the query approximation First(c1), Succ(c1, c2), ...,
    Last(cn). Rules marking the last time step are left out.
    """
    chain = [Term.constant(f"c{i}") for i in range(1, length + 1)]
    facts = [Atom("First", (chain[0],)), Atom("Last", (chain[-1],))]
    facts += [Atom("Succ", (a, b)) for a, b in zip(chain, chain[1:])]
    rules = [r for r in _tm_rules(spec) if r.label != "bad"]
    result = chase(Instance(facts=facts), rules, config or ChaseConfig(max_steps=100000))
    position = {c: i for i, c in enumerate(chain)}
    table = [[set() for _ in chain] for _ in chain]
    cells = {spec.cell(*c) for c in _cells(spec, spec.alphabet)}
    for fact in result.instance:
        if fact.predicate in cells:
            s, t = fact.args
            table[position[t]][position[s]].add(fact.predicate)
    return table


@marshmallow_dataclass.dataclass
class TilingRun(SchemaBase):
    size: int
    valid: bool
    # rows from the bottom, tiles from the left
    witness: typing.Optional[typing.List[typing.List[str]]] = None


@marshmallow_dataclass.dataclass
class TilingReport(SchemaBase):
    runs: typing.List[TilingRun] = dataclasses.field(default_factory=list)

    @property
    def valid_up_to(self) -> int:
        size = 0
        for run in self.runs:
            if not run.valid:
                break
            size = run.size
        return size


def solve_tiling(
    spec: TilingSpec, size: int, use_initial: bool = True
) -> typing.Optional[typing.List[typing.List[str]]]:
    """Backtracking search for a valid size x size tiling"""
    grid: typing.Dict[typing.Tuple[int, int], str] = {}
    cells = [(x, y) for y in range(size) for x in range(size)]

    def fits(x, y, tile) -> bool:
        if (x, y) == (0, 0) and use_initial and spec.initial is not None:
            if tile != spec.initial:
                return False
        if x > 0 and not spec.allowed(grid[(x - 1, y)], tile, Orientation.HORIZONTAL):
            return False
        if y > 0 and not spec.allowed(grid[(x, y - 1)], tile, Orientation.VERTICAL):
            return False
        return True

    def place(index: int) -> bool:
        if index == len(cells):
            return True
        x, y = cells[index]
        for tile in spec.tiles:
            if fits(x, y, tile):
                grid[(x, y)] = tile
                if place(index + 1):
                    return True
                del grid[(x, y)]
        return False

    if not place(0):
        return None
    return [[grid[(x, y)] for x in range(size)] for y in range(size)]


def simulate_tiling(spec: TilingSpec, max_size: int = 4, use_initial: bool = True) -> TilingReport:
    runs = []
    for size in range(1, max_size + 1):
        witness = solve_tiling(spec, size, use_initial)
        runs.append(TilingRun(size=size, valid=witness is not None, witness=witness))
    return TilingReport(runs=runs)


def simulate(spec, bound: int):
    """Ground truth for any machine spec up to bound

    The bound counts generations, tape lengths or grid sizes.
    """
    if isinstance(spec, CASpec):
        return simulate_cellular(spec, bound)
    if isinstance(spec, TMSpec):
        return simulate_tm(spec, bound)
    if isinstance(spec, TilingSpec):
        return simulate_tiling(spec, bound)
    raise ValidationError(f"No simulator for {type(spec).__name__}")
