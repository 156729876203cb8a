from __future__ import annotations

import dataclasses
import itertools
import logging
import typing

import marshmallow_dataclass
import networkx as nx
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import (
    TGD,
    CertainAnswer,
    ChaseConfig,
    ChaseResult,
    TreeDecomposition,
    entails,
)
from .core import (
    Atom,
    CompactAtom,
    ConjunctiveQuery,
    FactIndex,
    Instance,
    Term,
    Unifier,
    cq_key,
    find_homomorphisms,
    find_homomorphisms_through,
    terms_of,
    variables_of,
)
from .errors import ErrorCode, ViewdetError

logger = logging.getLogger(__name__)

###############################################################################
# Programs


@marshmallow_dataclass.dataclass
class DatalogRule(SchemaBase):
    head: CompactAtom
    body: typing.List[CompactAtom] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.body = list(self.body)

    def __str__(self):
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(str(a) for a in self.body)}."

    def variables(self) -> typing.List[Term]:
        return variables_of([self.head] + self.body)


@marshmallow_dataclass.dataclass
class DatalogProgram(SchemaBase):
    """Positive Datalog with a distinguished goal predicate

    Every head predicate is intensional (IDB), and so is the goal even when no
    rule defines it. All other predicates are extensional (EDB).
    """

    rules: typing.List[DatalogRule] = dataclasses.field(default_factory=list)
    goal: str = dataclasses.field(
        default="Goal", metadata={"validate": validate.Length(min=1)}
    )
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.rules = list(self.rules)
        arities: typing.Dict[str, int] = {}
        for index, rule in enumerate(self.rules):
            for atom in [rule.head] + rule.body:
                known = arities.setdefault(atom.predicate, atom.arity)
                if known != atom.arity:
                    raise ViewdetError(
                        ErrorCode.ARITY_MISMATCH,
                        f"{atom.predicate} used with arities {known} and "
                        f"{atom.arity}",
                        rule_index=index,
                    )
                if any(t.is_null for t in atom.args):
                    raise ValidationError("Datalog rules cannot mention nulls")
            body_vars = set(variables_of(rule.body))
            missing = [v for v in rule.head.variables() if v not in body_vars]
            if missing:
                raise ViewdetError(
                    ErrorCode.UNSAFE_RULE,
                    f"Rule {index} ({rule}) has head variables "
                    f"{', '.join(str(v) for v in missing)} missing from its body",
                    rule_index=index,
                )
        self._arities = arities

    def __str__(self):
        lines = [str(rule) for rule in self.rules]
        return "\n".join(lines + [f"goal {self.goal}."])

    def arity(self, predicate: str) -> typing.Optional[int]:
        return self._arities.get(predicate)

    @property
    def goal_arity(self) -> int:
        return self._arities.get(self.goal, 0)

    def idb_predicates(self) -> typing.List[str]:
        heads = list(dict.fromkeys(r.head.predicate for r in self.rules))
        if self.goal not in heads:
            heads.append(self.goal)
        return heads

    def edb_predicates(self) -> typing.List[str]:
        idb = set(self.idb_predicates())
        return list(
            dict.fromkeys(
                a.predicate for r in self.rules for a in r.body if a.predicate not in idb
            )
        )

    def rules_for(self, predicate: str) -> typing.List[int]:
        return [i for i, r in enumerate(self.rules) if r.head.predicate == predicate]

    def constants(self) -> typing.List[Term]:
        return [
            t
            for t in terms_of(a for r in self.rules for a in [r.head] + r.body)
            if t.is_constant
        ]

    def is_recursive(self) -> bool:
        graph = nx.DiGraph()
        idb = set(self.idb_predicates())
        for rule in self.rules:
            for atom in rule.body:
                if atom.predicate in idb:
                    graph.add_edge(rule.head.predicate, atom.predicate)
        return not nx.is_directed_acyclic_graph(graph)


###############################################################################
# Evaluation


def _derive(rule: DatalogRule, matches) -> typing.List[Atom]:
    return [rule.head.substitute(h) for h in matches]


def eval_datalog(program: DatalogProgram, instance: Instance) -> Instance:
    """Least fixpoint by semi-naive iteration: the input plus derived facts"""
    store = FactIndex(instance.facts)
    idb = set(program.idb_predicates())

    derived = []
    for rule in program.rules:
        derived.extend(_derive(rule, list(find_homomorphisms(rule.body, store))))
    delta = [f for f in derived if store.add(f)]

    rounds = 1
    while delta:
        rounds += 1
        derived = []
        for fact in delta:
            for rule in program.rules:
                uses = [a for a in rule.body if a.predicate == fact.predicate]
                if not uses or fact.predicate not in idb:
                    continue
                derived.extend(
                    _derive(rule, list(find_homomorphisms_through(rule.body, store, fact)))
                )
        delta = [f for f in derived if store.add(f)]

    logger.debug(
        "evaluated %s in %d rounds: %d facts",
        program.name or program.goal,
        rounds,
        len(store),
    )
    return Instance(facts=store.facts(), signature=instance.signature)


def goal_answers(
    program: DatalogProgram, instance: Instance
) -> typing.Set[typing.Tuple[Term, ...]]:
    return {f.args for f in eval_datalog(program, instance).facts_of(program.goal)}


def derives_goal(
    program: DatalogProgram,
    instance: Instance,
    answer: typing.Sequence[Term] = (),
) -> bool:
    return Atom(program.goal, tuple(answer)) in eval_datalog(program, instance)


###############################################################################
# Classification


@marshmallow_dataclass.dataclass
class DatalogClassification(SchemaBase):
    mdl: bool
    fgdl: bool
    ec: bool
    # flag name -> index of the first rule violating it
    first_violation: typing.Dict[str, int] = dataclasses.field(default_factory=dict)

    def labels(self) -> typing.List[str]:
        return [name for name in ("mdl", "fgdl", "ec") if getattr(self, name)]


def _is_guarded(rule: DatalogRule, idb: typing.Set[str]) -> bool:
    head_vars = set(rule.head.variables())
    return not head_vars or any(
        a.predicate not in idb and head_vars <= set(a.args) for a in rule.body
    )


def _is_extensionally_connected(rule: DatalogRule, idb: typing.Set[str]) -> bool:
    head_vars = rule.head.variables()
    graph = nx.Graph()
    graph.add_nodes_from(head_vars)
    for atom in rule.body:
        if atom.predicate in idb:
            continue
        shared = [v for v in head_vars if v in atom.args]
        graph.add_edges_from(itertools.combinations(shared, 2))
    return len(graph) <= 1 or nx.is_connected(graph)


def classify_datalog(program: DatalogProgram) -> DatalogClassification:
    """Monadic (IDB arity at most one), frontier-guarded and EC flags

    Monadic programs count as frontier-guarded.
    """
    idb = set(program.idb_predicates())
    checks = {
        "mdl": lambda r: r.head.arity <= 1,
        "fgdl": lambda r: _is_guarded(r, idb),
        "ec": lambda r: _is_extensionally_connected(r, idb),
    }
    flags, first_violation = {}, {}
    for name, check in checks.items():
        failing = [i for i, rule in enumerate(program.rules) if not check(rule)]
        flags[name] = not failing
        if failing:
            first_violation[name] = failing[0]
    if flags["mdl"] and not flags["fgdl"]:
        flags["fgdl"] = True
        first_violation.pop("fgdl", None)
    return DatalogClassification(first_violation=first_violation, **flags)


###############################################################################
# Head-unconstrained form


def _shape(args: typing.Sequence[Term]) -> typing.Tuple:
    classes: typing.Dict[Term, int] = {}
    shape = []
    for term in args:
        if term.is_variable:
            shape.append(("v", classes.setdefault(term, len(classes))))
        else:
            shape.append(("c", term.name))
    return tuple(shape)


def _is_plain(shape: typing.Tuple) -> bool:
    return all(entry == ("v", i) for i, entry in enumerate(shape))


def _class_terms(args: typing.Sequence[Term]) -> typing.List[Term]:
    return list(dict.fromkeys(t for t in args if t.is_variable))


class _SpecializedNames:
    def __init__(self, taken: typing.Iterable[str]):
        self._taken = set(taken)
        self._names: typing.Dict[typing.Tuple, str] = {}

    def name(self, predicate: str, shape: typing.Tuple) -> str:
        if _is_plain(shape):
            return predicate
        key = (predicate, shape)
        if key not in self._names:
            suffix = "_".join(str(v) for _, v in shape)
            candidate = f"{predicate}__{suffix}"
            while candidate in self._taken:
                candidate += "_"
            self._taken.add(candidate)
            self._names[key] = candidate
        return self._names[key]


def _split_goal(program: DatalogProgram) -> DatalogProgram:
    goal = program.goal
    if not any(a.predicate == goal for r in program.rules for a in r.body):
        return program
    inner = f"{goal}_inner"
    taken = set(program.idb_predicates()) | set(program.edb_predicates())
    while inner in taken:
        inner += "_"

    def rename(atom: Atom) -> Atom:
        return atom.renamed(inner) if atom.predicate == goal else atom

    rules = []
    for rule in program.rules:
        body = [rename(a) for a in rule.body]
        rules.append(DatalogRule(head=rule.head, body=body))
        if rule.head.predicate == goal:
            rules.append(DatalogRule(head=rename(rule.head), body=body))
    return DatalogProgram(rules=rules, goal=goal, name=program.name)


def to_hu_form(program: DatalogProgram) -> DatalogProgram:
    """Equivalent program whose non-goal heads have distinct variables only

    The goal predicate is first split off from rule bodies. Every other IDB
    predicate P is then specialized per head shape (pattern of repeated
    variables and constants) into P__shape over the distinct head variables,
    and each call site unifies with the shapes it can match.
    """
    program = _split_goal(program)
    idb = set(program.idb_predicates())
    names = _SpecializedNames(idb | set(program.edb_predicates()))
    shapes: typing.Dict[str, typing.Set[typing.Tuple]] = {p: set() for p in idb}
    output: typing.Dict[str, DatalogRule] = {}

    changed = True
    while changed:
        changed = False
        for rule_index, rule in enumerate(program.rules):
            calls = [i for i, a in enumerate(rule.body) if a.predicate in idb]
            options = [sorted(shapes[rule.body[i].predicate]) for i in calls]
            for choice in itertools.product(*options):
                specialized = _specialize(rule, rule_index, calls, choice, names)
                if specialized is None:
                    continue
                head, body = specialized
                predicate = rule.head.predicate
                if predicate != program.goal:
                    head_shape = _shape(head.args)
                    if head_shape not in shapes[predicate]:
                        shapes[predicate].add(head_shape)
                        changed = True
                    head = Atom(
                        names.name(predicate, head_shape),
                        tuple(_class_terms(head.args)),
                    )
                new_rule = DatalogRule(head=head, body=body)
                output.setdefault(str(new_rule), new_rule)

    result = DatalogProgram(
        rules=list(output.values()), goal=program.goal, name=program.name
    )
    logger.debug(
        "HU form of %s: %d rules from %d", program.name, len(result.rules), len(program.rules)
    )
    return result


def _specialize(rule, rule_index, calls, choice, names):
    """Unify the IDB calls of rule with the chosen head shapes

    Returns the instantiated head and the body with each call replaced by its
    specialized predicate, or None when some call cannot match its shape.
    """
    unifier = Unifier()
    patterns = {}
    for call_number, (position, shape) in enumerate(zip(calls, choice)):
        pattern = [
            Term.variable(f"_w{rule_index}_{call_number}_{value}")
            if kind == "v"
            else Term.constant(value)
            for kind, value in shape
        ]
        if not unifier.unify(list(rule.body[position].args), pattern):
            return None
        patterns[position] = (shape, pattern)
    theta = unifier.substitution(rule.variables())
    body = []
    for position, atom in enumerate(rule.body):
        if position in patterns:
            shape, pattern = patterns[position]
            args = tuple(unifier.find(t) for t in _class_terms(pattern))
            body.append(Atom(names.name(atom.predicate, shape), args))
        else:
            body.append(atom.substitute(theta))
    return rule.head.substitute(theta), body


###############################################################################
# CQ approximations


@marshmallow_dataclass.dataclass
class ApproximationTree(SchemaBase):
    """Derivation tree of an approximation, nodes in preorder

    Internal nodes carry the index of the (HU form) rule applied there,
    leaves carry extensional atoms and no rule.
    """

    labels: typing.List[CompactAtom] = dataclasses.field(default_factory=list)
    parents: typing.List[typing.Optional[int]] = dataclasses.field(
        default_factory=list
    )
    rule_of: typing.List[typing.Optional[int]] = dataclasses.field(
        default_factory=list
    )

    def leaves(self) -> typing.List[Atom]:
        return [a for a, r in zip(self.labels, self.rule_of) if r is None]

    def internal_nodes(self) -> typing.List[int]:
        return [i for i, r in enumerate(self.rule_of) if r is not None]


@dataclasses.dataclass
class Approximation:
    query: ConjunctiveQuery
    tree: ApproximationTree
    decomposition: TreeDecomposition
    depth: int
    # derivation skeleton: (rule index, child skeletons per IDB body atom)
    skeleton: typing.Tuple


def _leaf_count(program: DatalogProgram, skeleton) -> int:
    rule_index, children = skeleton
    rule = program.rules[rule_index]
    idb = len(children)
    return len(rule.body) - idb + sum(_leaf_count(program, c) for c in children)


class _SkeletonTable:
    """Derivation skeletons per IDB predicate and exact height, memoized"""

    def __init__(self, program: DatalogProgram):
        self.program = program
        self.idb = set(program.idb_predicates())
        self._table: typing.Dict[typing.Tuple[str, int], typing.List] = {}

    def calls(self, rule_index: int) -> typing.List[str]:
        return [
            a.predicate
            for a in self.program.rules[rule_index].body
            if a.predicate in self.idb
        ]

    def at_most(self, predicate: str, height: int) -> typing.List:
        return [s for h in range(height + 1) for s in self.exactly(predicate, h)]

    def exactly(self, predicate: str, height: int) -> typing.List:
        key = (predicate, height)
        if key in self._table:
            return self._table[key]
        found = []
        for rule_index in self.program.rules_for(predicate):
            calls = self.calls(rule_index)
            if not calls:
                if height == 0:
                    found.append((rule_index, ()))
                continue
            if height == 0:
                continue
            lower = [self.at_most(p, height - 1) for p in calls]
            for children in itertools.product(*lower):
                if any(_height(c) == height - 1 for c in children):
                    found.append((rule_index, tuple(children)))
        self._table[key] = found
        return found


def approximation_bag(
    head: Atom, body: typing.Sequence[Atom], constants: typing.Sequence[Term]
) -> typing.List[Term]:
    """Bag of one rule application: program constants first, then its terms"""
    fixed = set(constants)
    return list(constants) + [t for t in terms_of([head] + list(body)) if t not in fixed]


def _instantiate(program: DatalogProgram, skeleton, constants) -> Approximation:
    labels, parents, rule_of = [], [], []
    bags, bag_parents, placed = [], [], []
    idb = set(program.idb_predicates())

    def visit(skeleton, call: typing.Optional[Atom], parent, parent_vertex):
        rule_index, children = skeleton
        rule = program.rules[rule_index]
        node = len(labels)
        mapping = {}
        if call is not None:
            mapping.update(zip(rule.head.args, call.args))
        for var in rule.variables():
            if var not in mapping:
                mapping[var] = Term.variable(f"{var.name}_{node}")
        head = rule.head.substitute(mapping)
        labels.append(head)
        parents.append(parent)
        rule_of.append(rule_index)
        body = [a.substitute(mapping) for a in rule.body]
        bag = approximation_bag(head, body, constants)
        vertex = len(bags)
        bags.append(bag)
        bag_parents.append(parent_vertex)
        placed.append([a for a in body if a.predicate not in idb])
        child_iter = iter(children)
        for atom in body:
            if atom.predicate in idb:
                visit(next(child_iter), atom, node, vertex)
            else:
                labels.append(atom)
                parents.append(node)
                rule_of.append(None)

    visit(skeleton, None, None, None)
    leaves = [a for a, r in zip(labels, rule_of) if r is None]
    tree = ApproximationTree(labels=labels, parents=parents, rule_of=rule_of)
    query = ConjunctiveQuery(
        head=list(labels[0].args), body=leaves, name=program.goal
    )
    decomposition = TreeDecomposition(bags=bags, parents=bag_parents, facts=placed)
    return Approximation(
        query=query,
        tree=tree,
        decomposition=decomposition,
        depth=_height(skeleton),
        skeleton=skeleton,
    )


def _height(skeleton) -> int:
    _, children = skeleton
    return 1 + max((_height(c) for c in children), default=-1)


def unfold_approximations(
    program: DatalogProgram,
    max_depth: int,
    max_leaves: typing.Optional[int] = None,
    hu_form: bool = False,
) -> typing.Iterator[Approximation]:
    """CQ approximations of the goal, breadth-first by derivation depth

    The program is brought into HU form first unless hu_form says it already
    is. Depth counts rule applications below the goal rule, so a goal rule
    with an extensional body gives the depth 0 approximations. Approximations
    with more than max_leaves atoms are skipped; α-equivalent ones are
    reported once.
    """
    hu = program if hu_form else to_hu_form(program)
    table = _SkeletonTable(hu)
    constants = hu.constants()
    seen = set()
    for depth in range(max_depth + 1):
        for skeleton in table.exactly(hu.goal, depth):
            if max_leaves is not None and _leaf_count(hu, skeleton) > max_leaves:
                continue
            approximation = _instantiate(hu, skeleton, constants)
            key = cq_key(approximation.query)
            if key in seen:
                continue
            seen.add(key)
            yield approximation


###############################################################################
# Datalog rules as TGDs and certain answers


def datalog_to_tgds(
    program: DatalogProgram,
) -> typing.Tuple[typing.List[TGD], ConjunctiveQuery]:
    """Each rule as a full TGD, plus the atomic goal query"""
    rules = [
        TGD(body=list(rule.body), head=[rule.head], label=f"{program.goal}:{i}")
        for i, rule in enumerate(program.rules)
    ]
    head = [Term.variable(f"X{i}") for i in range(program.goal_arity)]
    query = ConjunctiveQuery(
        head=head, body=[Atom(program.goal, tuple(head))], name=program.goal
    )
    return rules, query


def entails_goal(
    instance: Instance,
    rules: typing.Sequence[TGD],
    program: DatalogProgram,
    config: typing.Optional[ChaseConfig] = None,
    answer: typing.Optional[typing.Sequence[Term]] = None,
) -> typing.Tuple[CertainAnswer, ChaseResult]:
    """Whether instance and rules entail the goal of program

    The program's rules are moved into the rule set as full TGDs and the
    atomic goal query is checked on the chase.
    """
    extra, query = datalog_to_tgds(program)
    if answer is None and program.goal_arity:
        raise ViewdetError(
            ErrorCode.NON_BOOLEAN_QUERY,
            f"Goal {program.goal} has arity {program.goal_arity}; give an answer",
        )
    return entails(instance, list(rules) + extra, query, config, answer)
