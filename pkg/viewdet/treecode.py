from __future__ import annotations

import dataclasses
import itertools
import logging
import typing

import marshmallow_dataclass
import networkx as nx
from marshmallow import fields, validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import TreeDecomposition, validate_decomposition
from .core import Atom, Instance, Term, freeze
from .datalog import (
    Approximation,
    DatalogProgram,
    DatalogRule,
    approximation_bag,
    to_hu_form,
)
from .errors import ErrorCode, ViewdetError

logger = logging.getLogger(__name__)

###############################################################################
# Letters and tree codes


@marshmallow_dataclass.dataclass(frozen=True)
class LocalFact(SchemaBase):
    """T^R_n: the fact R over local names n of a node"""

    predicate: str = dataclasses.field(metadata={"validate": validate.Length(min=1)})
    names: typing.List[int] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.names, tuple):
            object.__setattr__(self, "names", tuple(self.names))

    def __str__(self):
        return f"T^{self.predicate}_{','.join(str(n) for n in self.names)}"


class LocalFactField(fields.Field):
    """Local facts as arrays: predicate name followed by local names"""

    def _serialize(self, value: LocalFact, attr, obj, **kwargs):
        if value is None:
            return None
        return [value.predicate] + list(value.names)

    def _deserialize(self, value, attr, data, **kwargs):
        if (
            not isinstance(value, (list, tuple))
            or not value
            or not isinstance(value[0], str)
            or not all(isinstance(n, int) for n in value[1:])
        ):
            raise ValidationError("A local fact is encoded as [predicate, l1, ...]")
        return LocalFact(value[0], tuple(value[1:]))


CompactLocalFact = marshmallow_dataclass.NewType(
    "CompactLocalFact", LocalFact, field=LocalFactField
)


def _pairs(items) -> typing.Tuple[typing.Tuple[int, int], ...]:
    return tuple(sorted({(int(a), int(b)) for a, b in items}))


@marshmallow_dataclass.dataclass(frozen=True)
class Letter(SchemaBase):
    """The label {T_g} plus a bag of equality and fact predicates

    `mapping` lists the pairs (l, g(l)) of T_g, linking local names of the
    parent to local names of this node.
    """

    mapping: typing.List[typing.List[int]] = dataclasses.field(default_factory=list)
    equalities: typing.List[typing.List[int]] = dataclasses.field(default_factory=list)
    facts: typing.List[CompactLocalFact] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "mapping", _pairs(self.mapping))
        object.__setattr__(self, "equalities", _pairs(self.equalities))
        object.__setattr__(
            self,
            "facts",
            tuple(sorted(set(self.facts), key=lambda f: (f.predicate, f.names))),
        )

    def __str__(self):
        return "{" + ", ".join(self.predicates()) + "}"

    @property
    def g(self) -> typing.Dict[int, int]:
        return dict(self.mapping)

    def bag(self) -> "Letter":
        return Letter(mapping=(), equalities=self.equalities, facts=self.facts)

    def with_mapping(self, mapping) -> "Letter":
        return Letter(mapping=mapping, equalities=self.equalities, facts=self.facts)

    def predicates(self) -> typing.List[str]:
        g = ",".join(f"{a}>{b}" for a, b in self.mapping)
        names = [f"T_{{{g}}}"]
        names.extend(f"T=_{a},{b}" for a, b in self.equalities)
        names.extend(str(f) for f in self.facts)
        return sorted(names)

    def local_names(self) -> typing.Set[int]:
        names = {n for pair in self.mapping + self.equalities for n in pair}
        names.update(n for f in self.facts for n in f.names)
        return names

    def nullary(self) -> typing.FrozenSet[str]:
        return frozenset(f.predicate for f in self.facts if not f.names)


def reflexive(width: int) -> typing.List[typing.Tuple[int, int]]:
    return [(l, l) for l in range(1, width + 1)]


@marshmallow_dataclass.dataclass
class TreeCode(SchemaBase):
    """Labelled tree over local names 1..width, nodes in preorder

    Every node other than a leaf has exactly `branching` ordered children.
    """

    width: int = dataclasses.field(metadata={"validate": validate.Range(min=1)})
    branching: int = dataclasses.field(metadata={"validate": validate.Range(min=1)})
    letters: typing.List[Letter] = dataclasses.field(default_factory=list)
    parents: typing.List[typing.Optional[int]] = dataclasses.field(
        default_factory=list
    )

    def __post_init__(self):
        self.letters = list(self.letters)
        self.parents = list(self.parents)
        if not self.letters or len(self.letters) != len(self.parents):
            raise ValidationError("A tree code needs one parent entry per node")
        for node, parent in enumerate(self.parents):
            if node == 0 and parent is not None:
                raise ValidationError("Node 0 is the root and has no parent")
            if node > 0 and (parent is None or not 0 <= parent < node):
                raise ValidationError(f"Node {node} needs a parent with a smaller index")
        for node in range(len(self.letters)):
            count = len(self.children(node))
            if count not in (0, self.branching):
                raise ValidationError(
                    f"Node {node} has {count} children, expected 0 or {self.branching}"
                )

    def __len__(self):
        return len(self.letters)

    def children(self, node: int) -> typing.List[int]:
        return [v for v, p in enumerate(self.parents) if p == node]

    def height(self) -> int:
        depth = [0] * len(self.letters)
        for node, parent in enumerate(self.parents):
            if parent is not None:
                depth[node] = depth[parent] + 1
        return max(depth)

    def predicates(self) -> typing.Dict[str, int]:
        return {f.predicate: len(f.names) for l in self.letters for f in l.facts}


###############################################################################
# Coherence


def _incoherent(condition: int, node: int, message: str):
    raise ViewdetError(
        ErrorCode.INCOHERENT,
        f"Condition {condition} fails at node {node}: {message}",
        condition=condition,
        node=node,
    )


def _check_names(letter: Letter, width: int, where: str):
    bad = [n for n in letter.local_names() if not 1 <= n <= width]
    if bad:
        raise ViewdetError(
            ErrorCode.ALPHABET_MISMATCH,
            f"{where} uses local names {sorted(bad)} outside 1..{width}",
        )


def _is_partial_injection(letter: Letter) -> bool:
    keys = [a for a, _ in letter.mapping]
    values = [b for _, b in letter.mapping]
    return len(set(keys)) == len(keys) and len(set(values)) == len(values)


def _letter_violation(letter: Letter, width: int) -> typing.Optional[typing.Tuple[int, str]]:
    """Condition (1, 2 or 5) broken by a single letter, with a message"""
    equal = set(letter.equalities)
    for l in range(1, width + 1):
        if (l, l) not in equal:
            return 1, f"T=_{l},{l} missing"
    for a, b in equal:
        if (b, a) not in equal:
            return 1, f"T=_{a},{b} without T=_{b},{a}"
        for c, d in equal:
            if b == c and (a, d) not in equal:
                return 1, f"T=_{a},{b} and T=_{b},{d} without T=_{a},{d}"
    present = set(letter.facts)
    for fact in letter.facts:
        for position, name in enumerate(fact.names):
            for a, b in equal:
                if a != name:
                    continue
                names = list(fact.names)
                names[position] = b
                if LocalFact(fact.predicate, tuple(names)) not in present:
                    return 2, f"{fact} not closed under T=_{a},{b}"
    if not _is_partial_injection(letter):
        return 5, f"{letter.mapping} is not a partial injection"
    return None


def check_coherence(code: TreeCode):
    """Raise INCOHERENT naming the first violated condition (1 to 5)"""
    for node, letter in enumerate(code.letters):
        _check_names(letter, code.width, f"Node {node}")
    violations = [
        (node, _letter_violation(letter, code.width))
        for node, letter in enumerate(code.letters)
    ]
    for condition in (1, 2):
        for node, found in violations:
            if found is not None and found[0] == condition:
                _incoherent(condition, node, found[1])
    for node, parent in enumerate(code.parents):
        if parent is None or not _is_partial_injection(code.letters[node]):
            continue
        g = code.letters[node].g
        child_equal = set(code.letters[node].equalities)
        for a, b in code.letters[parent].equalities:
            if (a in g) != (b in g):
                _incoherent(3, node, f"T_g maps only one of the equal names {a},{b}")
            if a in g and (g[a], g[b]) not in child_equal:
                _incoherent(3, node, f"T=_{g[a]},{g[b]} missing below T=_{a},{b}")
    nullary = code.letters[0].nullary()
    for node, letter in enumerate(code.letters):
        if letter.nullary() != nullary:
            _incoherent(4, node, "nullary facts differ from the root")
    for node, found in violations:
        if found is not None and found[0] == 5:
            _incoherent(5, node, found[1])


###############################################################################
# Decoding and encoding


def decode(code: TreeCode) -> Instance:
    """Instance of a coherent code, raising INCOHERENT otherwise"""
    check_coherence(code)
    return quotient(code)


def quotient(code: TreeCode) -> Instance:
    """Quotient of (node, local name) pairs under the equalities and T_g links

    Each class is named after its least pair (node, local name). No coherence
    check is made; for a coherent code this is its decoding.
    """
    graph = nx.Graph()
    for node, letter in enumerate(code.letters):
        graph.add_nodes_from((node, l) for l in range(1, code.width + 1))
        graph.add_edges_from(((node, a), (node, b)) for a, b in letter.equalities)
        parent = code.parents[node]
        if parent is not None:
            graph.add_edges_from(((parent, a), (node, b)) for a, b in letter.mapping)
    element = {}
    for component in nx.connected_components(graph):
        node, local = min(component)
        term = Term.constant(f"e{node}_{local}")
        element.update((pair, term) for pair in component)
    facts = [
        Atom(f.predicate, tuple(element[(node, n)] for n in f.names))
        for node, letter in enumerate(code.letters)
        for f in letter.facts
    ]
    return Instance(facts=facts)


def encode(
    instance: Instance,
    decomposition: TreeDecomposition,
    branching: int = 2,
    width: typing.Optional[int] = None,
) -> TreeCode:
    """Tree code of instance along a decomposition of it

    Local names follow bag order. Vertices with fewer than `branching`
    children get empty padding children; vertices with more are split by
    copies of themselves. Nullary facts go to every node.
    """
    if branching < 2:
        raise ValidationError("Encoding needs a branching width of at least 2")
    if not len(decomposition):
        decomposition = TreeDecomposition(bags=[[]], parents=[None])
    validate_decomposition(instance, decomposition)
    needed = max(decomposition.width, 1)
    width = width or needed
    if decomposition.width > width:
        raise ViewdetError(
            ErrorCode.WIDTH_EXCEEDED,
            f"Decomposition of width {decomposition.width} does not fit {width} "
            "local names",
            width=decomposition.width,
        )
    placed = decomposition.placement(instance)
    nullary = [LocalFact(f.predicate, ()) for f in instance if not f.args]
    equalities = reflexive(width)
    letters, parents = [], []

    def local_facts(vertex: int) -> typing.List[LocalFact]:
        names = {t: i for i, t in enumerate(decomposition.bags[vertex], start=1)}
        return [
            LocalFact(f.predicate, tuple(names[t] for t in f.args))
            for f in placed[vertex]
            if f.args
        ] + nullary

    def link(parent_vertex, vertex) -> typing.List[typing.Tuple[int, int]]:
        if parent_vertex is None:
            return []
        below = {t: i for i, t in enumerate(decomposition.bags[vertex], start=1)}
        return [
            (i, below[t])
            for i, t in enumerate(decomposition.bags[parent_vertex], start=1)
            if t in below
        ]

    def add(letter: Letter, parent: typing.Optional[int]) -> int:
        letters.append(letter)
        parents.append(parent)
        return len(letters) - 1

    def visit(vertex: int, parent_vertex, parent_node, copy: bool = False, rest=None):
        if copy:
            letter = Letter(
                mapping=[(l, l) for l in range(1, len(decomposition.bags[vertex]) + 1)],
                equalities=equalities,
                facts=nullary,
            )
        else:
            letter = Letter(
                mapping=link(parent_vertex, vertex),
                equalities=equalities,
                facts=local_facts(vertex),
            )
        node = add(letter, parent_node)
        kids = decomposition.children(vertex) if rest is None else rest
        if not kids:
            return
        if len(kids) > branching:
            for kid in kids[: branching - 1]:
                visit(kid, vertex, node)
            visit(vertex, vertex, node, copy=True, rest=kids[branching - 1 :])
            return
        for kid in kids:
            visit(kid, vertex, node)
        for _ in range(branching - len(kids)):
            add(Letter(mapping=[], equalities=equalities, facts=nullary), node)

    visit(0, None, None)
    return TreeCode(width=width, branching=branching, letters=letters, parents=parents)


###############################################################################
# Bottom-up tree automata


@marshmallow_dataclass.dataclass
class Transition(SchemaBase):
    letter: Letter
    target: str
    # empty for leaf transitions
    children: typing.List[str] = dataclasses.field(default_factory=list)


@marshmallow_dataclass.dataclass
class TreeAutomaton(SchemaBase):
    """Nondeterministic bottom-up automaton over letters of width-k codes"""

    width: int = dataclasses.field(metadata={"validate": validate.Range(min=1)})
    branching: int = dataclasses.field(metadata={"validate": validate.Range(min=1)})
    # base predicates and their arities
    predicates: typing.Dict[str, int] = dataclasses.field(default_factory=dict)
    states: typing.List[str] = dataclasses.field(default_factory=list)
    accepting: typing.List[str] = dataclasses.field(default_factory=list)
    transitions: typing.List[Transition] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.states = list(dict.fromkeys(self.states))
        known = set(self.states)
        if not set(self.accepting) <= known:
            raise ValidationError("Accepting states must be states")
        self._by_letter: typing.Dict[Letter, typing.List[Transition]] = {}
        for index, transition in enumerate(self.transitions):
            if transition.target not in known or not set(transition.children) <= known:
                raise ValidationError(f"Transition {index} mentions unknown states")
            if len(transition.children) not in (0, self.branching):
                raise ValidationError(
                    f"Transition {index} has {len(transition.children)} children"
                )
            self._check_letter(transition.letter, f"Transition {index}")
            self._by_letter.setdefault(transition.letter, []).append(transition)

    def _check_letter(self, letter: Letter, where: str):
        _check_names(letter, self.width, where)
        for fact in letter.facts:
            if self.predicates.get(fact.predicate) != len(fact.names):
                raise ViewdetError(
                    ErrorCode.ALPHABET_MISMATCH,
                    f"{where} uses {fact} outside the automaton's predicates",
                )
        found = _letter_violation(letter, self.width)
        if found is not None:
            raise ViewdetError(
                ErrorCode.INCOHERENT,
                f"{where}: condition {found[0]} fails: {found[1]}",
                condition=found[0],
            )

    def transitions_on(self, letter: Letter) -> typing.List[Transition]:
        return self._by_letter.get(letter, [])

    def letters(self) -> typing.List[Letter]:
        return list(self._by_letter)


@marshmallow_dataclass.dataclass
class Run(SchemaBase):
    accepted: bool
    # state per node of an accepting run
    states: typing.Optional[typing.List[str]] = None


def _check_alphabet(automaton: TreeAutomaton, code: TreeCode):
    if code.width != automaton.width or code.branching != automaton.branching:
        raise ViewdetError(
            ErrorCode.ALPHABET_MISMATCH,
            f"Code of width {code.width} and branching {code.branching} against an "
            f"automaton with {automaton.width} and {automaton.branching}",
        )
    for predicate, arity in code.predicates().items():
        if automaton.predicates.get(predicate) != arity:
            raise ViewdetError(
                ErrorCode.ALPHABET_MISMATCH,
                f"Predicate {predicate}/{arity} is not in the automaton's alphabet",
            )


def run_automaton(automaton: TreeAutomaton, code: TreeCode) -> Run:
    """Search an accepting run bottom-up, returning one if there is any"""
    _check_alphabet(automaton, code)
    reachable: typing.List[typing.Dict[str, Transition]] = [dict() for _ in code.letters]
    for node in reversed(range(len(code))):
        kids = code.children(node)
        for transition in automaton.transitions_on(code.letters[node]):
            if len(transition.children) != len(kids):
                continue
            if all(q in reachable[k] for q, k in zip(transition.children, kids)):
                reachable[node].setdefault(transition.target, transition)
    final = [q for q in automaton.accepting if q in reachable[0]]
    if not final:
        return Run(accepted=False)
    states = [None] * len(code)
    states[0] = final[0]
    for node in range(len(code)):
        transition = reachable[node][states[node]]
        for q, kid in zip(transition.children, code.children(node)):
            states[kid] = q
    return Run(accepted=True, states=states)


def accepted_codes(
    automaton: TreeAutomaton,
    max_height: int,
    limit: typing.Optional[int] = None,
    coherent_only: bool = True,
) -> typing.Iterator[TreeCode]:
    """Codes accepted by automaton of height at most max_height

    Enumerated by height, then by transition order. For automata whose
    internal transitions lead to states of strictly higher rank, every
    accepted code appears once max_height reaches the number of states.
    """
    trees: typing.Dict[typing.Tuple[str, int], typing.List] = {}

    def exactly(state: str, height: int) -> typing.List:
        key = (state, height)
        if key in trees:
            return trees[key]
        found = []
        for transition in automaton.transitions:
            if transition.target != state:
                continue
            if not transition.children:
                if height == 0:
                    found.append((transition.letter, ()))
                continue
            if height == 0:
                continue
            lower = [
                [t for h in range(height) for t in exactly(q, h)]
                for q in transition.children
            ]
            for kids in itertools.product(*lower):
                if any(_tree_height(k) == height - 1 for k in kids):
                    found.append((transition.letter, kids))
        trees[key] = found
        return found

    seen = set()
    produced = 0
    for height in range(max_height + 1):
        for state in automaton.accepting:
            for tree in exactly(state, height):
                code = _flatten(tree, automaton)
                key = (tuple(code.letters), tuple(code.parents))
                if key in seen:
                    continue
                seen.add(key)
                if coherent_only:
                    try:
                        check_coherence(code)
                    except ViewdetError:
                        continue
                yield code
                produced += 1
                if limit is not None and produced >= limit:
                    return


def _tree_height(tree) -> int:
    _, kids = tree
    return 1 + max((_tree_height(k) for k in kids), default=-1)


def _flatten(tree, automaton: TreeAutomaton) -> TreeCode:
    letters, parents = [], []

    def visit(tree, parent):
        letter, kids = tree
        node = len(letters)
        letters.append(letter)
        parents.append(parent)
        for kid in kids:
            visit(kid, node)

    visit(tree, None)
    return TreeCode(
        width=automaton.width,
        branching=automaton.branching,
        letters=letters,
        parents=parents,
    )


###############################################################################
# From automata to Datalog


def partial_injections(width: int) -> typing.List[typing.Tuple[typing.Tuple[int, int], ...]]:
    names = range(1, width + 1)
    found = []
    for size in range(width + 1):
        for domain in itertools.combinations(names, size):
            for image in itertools.permutations(names, size):
                found.append(tuple(zip(domain, image)))
    return found


class _Names:
    def __init__(self, taken: typing.Iterable[str]):
        self._taken = set(taken)
        self._given: typing.Dict[typing.Hashable, str] = {}

    def get(self, key: typing.Hashable, wanted: str) -> str:
        if key not in self._given:
            name = wanted
            while name in self._taken:
                name += "_"
            self._taken.add(name)
            self._given[key] = name
        return self._given[key]


def _g_suffix(mapping) -> str:
    return "_".join(f"{a}to{b}" for a, b in mapping) or "none"


def backward_map(automaton: TreeAutomaton) -> DatalogProgram:
    """Datalog program true on M iff some accepted code decodes into M

    Uses adom rules per base predicate position, one LOCAL rule per bag used
    by a transition, a P_{q,g} rule per leaf transition, one rule per
    internal transition and choice of child injections, and Goal rules for
    accepting states. Equalities between variables are applied by
    substitution, so a P_{q,g} fact repeats the element of equal names.

    Only equalities inside letters are enforced by the automaton; codes that
    break the equality or nullary conditions between neighbouring nodes are
    read through their quotient (see `quotient`).
    """
    k = automaton.width
    names = _Names(automaton.predicates)
    goal = names.get("goal", "Goal")
    adom = names.get("adom", "adom")
    xs = [Term.variable(f"X{l}") for l in range(1, k + 1)]
    rules = []

    for predicate, arity in automaton.predicates.items():
        args = tuple(Term.variable(f"X{i}") for i in range(1, arity + 1))
        for var in dict.fromkeys(args):
            rules.append(DatalogRule(head=Atom(adom, (var,)), body=[Atom(predicate, args)]))

    def p(state: str, mapping) -> str:
        return names.get(("P", state, mapping), f"P_{state}_{_g_suffix(mapping)}")

    local_rules = {}
    for letter in automaton.letters():
        bag = letter.bag()
        if bag in local_rules:
            continue
        name = names.get(("LOCAL", bag), f"LOCAL_{len(local_rules)}")
        graph = nx.Graph()
        graph.add_nodes_from(range(1, k + 1))
        graph.add_edges_from(bag.equalities)
        rep = {}
        for component in nx.connected_components(graph):
            least = xs[min(component) - 1]
            rep.update((l, least) for l in component)
        head = Atom(name, tuple(rep[l] for l in range(1, k + 1)))
        body = [Atom(adom, (rep[l],)) for l in range(1, k + 1)]
        body = list(dict.fromkeys(body))
        body.extend(Atom(f.predicate, tuple(rep[n] for n in f.names)) for f in bag.facts)
        local_rules[bag] = head
        rules.append(DatalogRule(head=head, body=body))

    injections = partial_injections(k)
    for transition in automaton.transitions:
        letter = transition.letter
        local = local_rules[letter.bag()]
        # the LOCAL head already has equal names collapsed
        head = Atom(p(transition.target, letter.mapping), local.args)
        if not transition.children:
            rules.append(DatalogRule(head=head, body=[local]))
            continue
        for choice in itertools.product(injections, repeat=len(transition.children)):
            body = []
            for j, (state, mapping) in enumerate(zip(transition.children, choice), start=1):
                child = [Term.variable(f"X{j}_{l}") for l in range(1, k + 1)]
                for a, b in mapping:
                    child[b - 1] = local.args[a - 1]
                body.append(Atom(p(state, mapping), tuple(child)))
            body.append(local)
            rules.append(DatalogRule(head=head, body=body))

    for state in automaton.accepting:
        for mapping in injections:
            rules.append(DatalogRule(head=Atom(goal, ()), body=[Atom(p(state, mapping), tuple(xs))]))

    logger.info(
        "backward mapping of %d transitions: %d rules",
        len(automaton.transitions),
        len(rules),
    )
    return DatalogProgram(rules=rules, goal=goal, name="backward_map")


###############################################################################
# Automata for approximations of Datalog programs


class _Layout:
    """Local names of one rule application and its letter"""

    def __init__(self, rule, head_terms, constants, edb, width, nullary):
        mapping = dict(zip(rule.head.args, head_terms))
        self.head = rule.head.substitute(mapping)
        self.body = [a.substitute(mapping) for a in rule.body]
        bag = approximation_bag(self.head, self.body, constants)
        self.local = {t: i for i, t in enumerate(bag, start=1)}
        facts = [
            LocalFact(a.predicate, tuple(self.local[t] for t in a.args))
            for a in self.body
            if a.predicate in edb and a.args
        ]
        facts.extend(LocalFact(n, ()) for n in nullary)
        self.facts = facts
        self.calls = [a for a in self.body if a.predicate not in edb]
        self.nullary_used = frozenset(
            a.predicate for a in self.body if a.predicate in edb and not a.args
        )
        self.width = width

    def letter(self, mapping) -> Letter:
        return Letter(mapping=mapping, equalities=reflexive(self.width), facts=self.facts)

    def call_bindings(self) -> typing.List[typing.Tuple[str, typing.Tuple[int, ...]]]:
        return [(a.predicate, tuple(self.local[t] for t in a.args)) for a in self.calls]


def _placeholder(binding, constants) -> typing.List[Term]:
    return [
        constants[l - 1] if l <= len(constants) else Term.variable(f"_p{l}")
        for l in binding
    ]


def approx_automaton(program: DatalogProgram) -> TreeAutomaton:
    """Automaton accepting the codes of the approximations' decompositions

    States name an IDB predicate with the parent local names its arguments
    sit at, together with the guessed set of nullary facts of the whole code
    and the set used below. The program is brought into HU form first, and
    codes are taken with one bag per rule application.
    """
    hu = to_hu_form(program)
    idb = set(hu.idb_predicates())
    edb_arity = {
        a.predicate: a.arity for r in hu.rules for a in r.body if a.predicate not in idb
    }
    edb = set(edb_arity)
    constants = hu.constants()
    branching = max(
        [2] + [sum(1 for a in r.body if a.predicate in idb) for r in hu.rules]
    )
    width = max(
        [1]
        + [len(approximation_bag(r.head, r.body, constants)) for r in hu.rules]
    )
    nullary_predicates = sorted(p for p, n in edb_arity.items() if n == 0)
    fixed = [(l, l) for l in range(1, len(constants) + 1)]

    # bindings reachable top-down from the goal rules
    needed = set()
    work = []
    for index in hu.rules_for(hu.goal):
        layout = _Layout(hu.rules[index], hu.rules[index].head.args, constants, edb, width, ())
        for call in layout.call_bindings():
            if call not in needed:
                needed.add(call)
                work.append(call)
    while work:
        predicate, binding = work.pop()
        for index in hu.rules_for(predicate):
            rule = hu.rules[index]
            layout = _Layout(rule, _placeholder(binding, constants), constants, edb, width, ())
            for call in layout.call_bindings():
                if call not in needed:
                    needed.add(call)
                    work.append(call)

    states, accepting, transitions = [], [], []

    def state(kind, guess, used) -> str:
        name = f"{kind}|{''.join(sorted(guess))}|{''.join(sorted(used))}"
        if name not in states:
            states.append(name)
        return name

    guesses = [
        frozenset(s)
        for size in range(len(nullary_predicates) + 1)
        for s in itertools.combinations(nullary_predicates, size)
    ]
    for guess in guesses:
        pad = state("PAD", guess, ())
        transitions.append(
            Transition(
                letter=Letter(
                    equalities=reflexive(width),
                    facts=[LocalFact(n, ()) for n in guess],
                ),
                target=pad,
            )
        )
        # used-sets realizable per (predicate, binding), by fixpoint
        realizable: typing.Dict[typing.Tuple, typing.Set[frozenset]] = {
            call: set() for call in needed
        }
        emitted = set()

        def emit(layout, mapping, target_kind, children_options, base_used):
            found = []
            for kids in itertools.product(*children_options):
                used = base_used.union(*[u for _, u in kids])
                if not used <= guess:
                    continue
                children = [state(f"{q}{b}", guess, u) for (q, b), u in kids]
                children += [pad] * (branching - len(children)) if children else []
                target = state(target_kind, guess, used)
                key = (layout.letter(mapping), target, tuple(children))
                if key not in emitted:
                    emitted.add(key)
                    transitions.append(
                        Transition(letter=key[0], target=target, children=children)
                    )
                found.append(used)
            return found

        changed = True
        while changed:
            changed = False
            for predicate, binding in sorted(needed):
                for index in hu.rules_for(predicate):
                    rule = hu.rules[index]
                    layout = _Layout(
                        rule, _placeholder(binding, constants), constants, edb, width, guess
                    )
                    mapping = fixed + [
                        (l, layout.local[t])
                        for l, t in zip(binding, _placeholder(binding, constants))
                        if l > len(constants)
                    ]
                    options = [
                        [(call, u) for u in sorted(realizable[call], key=sorted)]
                        for call in layout.call_bindings()
                    ]
                    for used in emit(
                        layout,
                        list(dict.fromkeys(mapping)),
                        f"{predicate}{binding}",
                        options,
                        layout.nullary_used,
                    ):
                        if used not in realizable[(predicate, binding)]:
                            realizable[(predicate, binding)].add(used)
                            changed = True

        for index in hu.rules_for(hu.goal):
            rule = hu.rules[index]
            layout = _Layout(rule, rule.head.args, constants, edb, width, guess)
            options = [
                [(call, u) for u in sorted(realizable[call], key=sorted)]
                for call in layout.call_bindings()
            ]
            for used in emit(layout, [], "GOAL", options, layout.nullary_used):
                if used == guess:
                    name = state("GOAL", guess, used)
                    if name not in accepting:
                        accepting.append(name)

    automaton = TreeAutomaton(
        width=width,
        branching=branching,
        predicates=edb_arity,
        states=states,
        accepting=accepting,
        transitions=transitions,
    )
    logger.info(
        "approximation automaton: %d states, %d transitions, width %d, branching %d",
        len(states),
        len(transitions),
        width,
        branching,
    )
    return automaton


def approximation_code(approximation: Approximation, automaton: TreeAutomaton) -> TreeCode:
    """Code of an approximation's decomposition with the automaton's parameters"""
    instance, mapping = freeze(approximation.query)
    decomposition = approximation.decomposition
    frozen = TreeDecomposition(
        bags=[[mapping.get(t, t) for t in bag] for bag in decomposition.bags],
        parents=list(decomposition.parents),
        facts=[[a.substitute(mapping) for a in placed] for placed in decomposition.facts],
    )
    return encode(instance, frozen, automaton.branching, automaton.width)
