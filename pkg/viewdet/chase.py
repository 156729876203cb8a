from __future__ import annotations

import collections
import dataclasses
import enum
import logging
import typing

import marshmallow_dataclass
import networkx as nx
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .core import (
    Atom,
    CompactAtom,
    CompactSubstitution,
    CompactTerm,
    FactIndex,
    Instance,
    Query,
    Substitution,
    Term,
    as_union,
    find_homomorphisms,
    find_homomorphisms_through,
    first_homomorphism,
    head_seed,
    terms_of,
    variables_of,
)
from .errors import ErrorCode, ViewdetError

logger = logging.getLogger(__name__)

###############################################################################
# Tuple-generating dependencies


@marshmallow_dataclass.dataclass
class TGD(SchemaBase):
    """An existential rule body -> exists existentials. head

    An empty body marks a seed rule that fires exactly once.
    """

    body: typing.List[CompactAtom] = dataclasses.field(default_factory=list)
    head: typing.List[CompactAtom] = dataclasses.field(default_factory=list)
    label: typing.Optional[str] = None

    def __post_init__(self):
        self.body = list(self.body)
        self.head = list(self.head)
        if not self.head:
            raise ValidationError("A TGD needs a nonempty head")
        if any(t.is_null for a in self.body + self.head for t in a.args):
            raise ValidationError("TGDs cannot mention labelled nulls")
        body_vars = variables_of(self.body)
        in_body = set(body_vars)
        head_vars = variables_of(self.head)
        in_head = set(head_vars)
        self._body_variables = body_vars
        self._frontier = [v for v in body_vars if v in in_head]
        self._existentials = [v for v in head_vars if v not in in_body]

    def __str__(self):
        body = ", ".join(str(a) for a in self.body) if self.body else "true"
        return f"{body} -> {', '.join(str(a) for a in self.head)}"

    @property
    def body_variables(self) -> typing.List[Term]:
        return list(self._body_variables)

    @property
    def frontier(self) -> typing.List[Term]:
        return list(self._frontier)

    @property
    def existentials(self) -> typing.List[Term]:
        return list(self._existentials)

    @property
    def is_linear(self) -> bool:
        return len(self.body) == 1

    @property
    def is_full(self) -> bool:
        return not self._existentials

    def guard(self) -> typing.Optional[int]:
        """Index of the first body atom holding the whole frontier"""
        frontier = set(self._frontier)
        for index, atom in enumerate(self.body):
            if frontier <= set(atom.args):
                return index
        return None

    @property
    def is_frontier_guarded(self) -> bool:
        return not self._frontier or self.guard() is not None

    def constants(self) -> typing.List[Term]:
        return [t for t in terms_of(self.body + self.head) if t.is_constant]

    def head_predicates(self) -> typing.List[str]:
        return list(dict.fromkeys(a.predicate for a in self.head))

    def body_predicates(self) -> typing.List[str]:
        return list(dict.fromkeys(a.predicate for a in self.body))


@marshmallow_dataclass.dataclass
class RuleClassification(SchemaBase):
    linear: bool
    full: bool
    frontier_guarded: bool
    frontier_one: bool
    uid: bool
    source_to_target: bool
    datalog_shaped: bool
    # flag name -> index of the first rule violating it
    first_violation: typing.Dict[str, int] = dataclasses.field(default_factory=dict)

    def labels(self) -> typing.List[str]:
        return [
            name
            for name in (
                "linear",
                "full",
                "frontier_guarded",
                "frontier_one",
                "uid",
                "source_to_target",
                "datalog_shaped",
            )
            if getattr(self, name)
        ]


def _is_uid(rule: TGD) -> bool:
    if not rule.is_linear or len(rule.frontier) > 1 or rule.constants():
        return False
    return all(len(set(a.args)) == len(a.args) for a in rule.body + rule.head)


def classify_rules(rules: typing.Sequence[TGD]) -> RuleClassification:
    per_rule = {
        "linear": lambda r: r.is_linear,
        "full": lambda r: r.is_full,
        "frontier_guarded": lambda r: r.is_frontier_guarded,
        "frontier_one": lambda r: len(r.frontier) <= 1,
        "uid": _is_uid,
        "datalog_shaped": lambda r: r.is_full and len(r.head) == 1,
    }
    flags = {}
    first_violation = {}
    for name, check in per_rule.items():
        failing = [i for i, rule in enumerate(rules) if not check(rule)]
        flags[name] = not failing
        if failing:
            first_violation[name] = failing[0]

    body_predicates = {p for rule in rules for p in rule.body_predicates()}
    offending = [
        i
        for i, rule in enumerate(rules)
        if any(p in body_predicates for p in rule.head_predicates())
    ]
    flags["source_to_target"] = not offending
    if offending:
        first_violation["source_to_target"] = offending[0]

    return RuleClassification(first_violation=first_violation, **flags)


###############################################################################
# Chase configuration and results


@marshmallow_dataclass.dataclass
class ChaseConfig(SchemaBase):
    max_steps: int = dataclasses.field(
        default=1000, metadata={"validate": validate.Range(min=0)}
    )
    max_new_nulls: int = dataclasses.field(
        default=1000, metadata={"validate": validate.Range(min=0)}
    )
    null_counter_start: int = dataclasses.field(
        default=1, metadata={"validate": validate.Range(min=0)}
    )

    def __post_init__(self):
        for name in ("max_steps", "max_new_nulls", "null_counter_start"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


class ChaseStatus(enum.Enum):
    SATURATED = "SATURATED"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"
    GOAL_REACHED = "GOAL_REACHED"


@marshmallow_dataclass.dataclass
class ChaseStep(SchemaBase):
    rule_index: int
    trigger: CompactSubstitution
    nulls: typing.List[CompactTerm] = dataclasses.field(default_factory=list)


@marshmallow_dataclass.dataclass
class TreeDecomposition(SchemaBase):
    """Rooted ordered tree of bags stored as parent pointers

    Vertex 0 is the root and every other vertex has a parent with a smaller
    index; children are ordered by index. `facts` optionally places facts at
    vertices whose bag covers them.
    """

    bags: typing.List[typing.List[CompactTerm]] = dataclasses.field(
        default_factory=list
    )
    parents: typing.List[typing.Optional[int]] = dataclasses.field(
        default_factory=list
    )
    facts: typing.Optional[typing.List[typing.List[CompactAtom]]] = None

    def __post_init__(self):
        self.bags = [list(bag) for bag in self.bags]
        self.parents = list(self.parents)
        if len(self.bags) != len(self.parents):
            raise ValidationError("Every bag needs exactly one parent entry")
        for vertex, parent in enumerate(self.parents):
            if vertex == 0 and parent is not None:
                raise ValidationError("Vertex 0 is the root and has no parent")
            if vertex > 0 and (parent is None or not 0 <= parent < vertex):
                raise ValidationError(
                    f"Vertex {vertex} needs a parent with a smaller index"
                )
        for bag in self.bags:
            if len(set(bag)) != len(bag):
                raise ValidationError(f"Bag {bag} repeats a term")
        if self.facts is not None:
            if len(self.facts) != len(self.bags):
                raise ValidationError("Fact placement must list every vertex")
            self.facts = [list(placed) for placed in self.facts]

    def __len__(self):
        return len(self.bags)

    @property
    def width(self) -> int:
        return max((len(bag) for bag in self.bags), default=0)

    def children(self, vertex: int) -> typing.List[int]:
        return [v for v, p in enumerate(self.parents) if p == vertex]

    def preorder(self) -> typing.List[int]:
        if not self.bags:
            return []
        kids = collections.defaultdict(list)
        for vertex, parent in enumerate(self.parents):
            if parent is not None:
                kids[parent].append(vertex)
        order, stack = [], [0]
        while stack:
            vertex = stack.pop()
            order.append(vertex)
            stack.extend(reversed(kids[vertex]))
        return order

    def add_vertex(
        self,
        bag: typing.Sequence[Term],
        parent: typing.Optional[int],
        facts: typing.Sequence[Atom] = (),
    ) -> int:
        if (parent is None) != (not self.bags):
            raise ValidationError("Only the first vertex may be parentless")
        if len(set(bag)) != len(bag):
            raise ValidationError(f"Bag {list(bag)} repeats a term")
        self.bags.append(list(bag))
        self.parents.append(parent)
        if self.facts is not None:
            self.facts.append(list(facts))
        return len(self.bags) - 1

    def vertex_covering(self, terms: typing.Iterable[Term]) -> typing.Optional[int]:
        wanted = set(terms)
        for vertex in self.preorder():
            if wanted <= set(self.bags[vertex]):
                return vertex
        return None

    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self.bags)))
        graph.add_edges_from(
            (parent, vertex)
            for vertex, parent in enumerate(self.parents)
            if parent is not None
        )
        return graph

    def copy(self) -> "TreeDecomposition":
        return TreeDecomposition(
            bags=[list(b) for b in self.bags],
            parents=list(self.parents),
            facts=None if self.facts is None else [list(f) for f in self.facts],
        )

    def placement(self, instance: Instance) -> typing.List[typing.List[Atom]]:
        """Facts per vertex: the stored placement, else first covering vertex"""
        if self.facts is not None:
            return [list(f) for f in self.facts]
        placed = [[] for _ in self.bags]
        for fact in instance:
            vertex = self.vertex_covering(fact.args)
            if vertex is None:
                raise ViewdetError(
                    ErrorCode.INVALID_DECOMPOSITION,
                    f"No bag covers {fact!r}",
                )
            placed[vertex].append(fact)
        return placed


def single_bag_decomposition(instance: Instance) -> TreeDecomposition:
    return TreeDecomposition(
        bags=[instance.adom()], parents=[None], facts=[list(instance.facts)]
    )


def validate_decomposition(instance: Instance, decomposition: TreeDecomposition):
    """Raise INVALID_DECOMPOSITION unless both decomposition conditions hold"""
    if not len(decomposition):
        if len(instance):
            raise ViewdetError(
                ErrorCode.INVALID_DECOMPOSITION, "Empty decomposition of facts"
            )
        return
    graph = decomposition.graph()
    if not nx.is_tree(graph):
        raise ViewdetError(ErrorCode.INVALID_DECOMPOSITION, "Bags do not form a tree")
    for fact in instance:
        if decomposition.vertex_covering(fact.args) is None:
            raise ViewdetError(
                ErrorCode.INVALID_DECOMPOSITION, f"No bag covers {fact!r}"
            )
    if decomposition.facts is not None:
        for vertex, placed in enumerate(decomposition.facts):
            bag = set(decomposition.bags[vertex])
            for fact in placed:
                if not set(fact.args) <= bag:
                    raise ViewdetError(
                        ErrorCode.INVALID_DECOMPOSITION,
                        f"{fact!r} placed at vertex {vertex} whose bag misses "
                        "some of its terms",
                    )
    occurrences = collections.defaultdict(list)
    for vertex, bag in enumerate(decomposition.bags):
        for term in bag:
            occurrences[term].append(vertex)
    for term, vertices in occurrences.items():
        if not nx.is_connected(graph.subgraph(vertices)):
            raise ViewdetError(
                ErrorCode.INVALID_DECOMPOSITION,
                f"Bags containing {term!r} are not connected",
                term=term.encode(),
            )


@marshmallow_dataclass.dataclass
class ChaseResult(SchemaBase):
    instance: Instance
    status: ChaseStatus = dataclasses.field(metadata={"by_value": True})
    rules: typing.List[TGD] = dataclasses.field(default_factory=list)
    step_log: typing.List[ChaseStep] = dataclasses.field(default_factory=list)
    # the first input_size facts of instance are the chase input
    input_size: int = 0
    null_counter_start: int = 1
    # per fact of instance, the step that created it (0 for input facts)
    fact_steps: typing.List[int] = dataclasses.field(default_factory=list)
    decomposition: typing.Optional[TreeDecomposition] = None

    @property
    def saturated(self) -> bool:
        return self.status is ChaseStatus.SATURATED

    @property
    def steps(self) -> int:
        return len(self.step_log)

    def input_instance(self) -> Instance:
        return Instance(facts=self.instance.facts[: self.input_size])


###############################################################################
# The restricted chase


class _TriggerQueue:
    def __init__(self, rules: typing.Sequence[TGD]):
        self.rules = rules
        self._queue = collections.deque()
        self._seen = set()

    def __bool__(self):
        return bool(self._queue)

    def push(self, rule_index: int, trigger: Substitution):
        rule = self.rules[rule_index]
        key = (rule_index, tuple(trigger[v] for v in rule.body_variables))
        if key not in self._seen:
            self._seen.add(key)
            self._queue.append((rule_index, trigger))

    def peek(self):
        return self._queue[0]

    def pop(self):
        return self._queue.popleft()

    def discover_all(self, store: FactIndex):
        for index, rule in enumerate(self.rules):
            for trigger in find_homomorphisms(rule.body, store):
                self.push(index, trigger)

    def discover_through(self, store: FactIndex, fact: Atom):
        for index, rule in enumerate(self.rules):
            if not any(a.predicate == fact.predicate for a in rule.body):
                continue
            for trigger in list(find_homomorphisms_through(rule.body, store, fact)):
                self.push(index, trigger)


def _is_active(rule: TGD, trigger: Substitution, store: FactIndex) -> bool:
    seed = {v: trigger[v] for v in rule.frontier}
    return first_homomorphism(rule.head, store, seed) is None


def _fire(rule: TGD, trigger: Substitution, next_null: int):
    extended = dict(trigger)
    nulls = []
    for var in rule.existentials:
        extended[var] = Term.null(next_null)
        nulls.append(extended[var])
        next_null += 1
    return [a.substitute(extended) for a in rule.head], nulls, next_null


StopCheck = typing.Callable[[FactIndex, typing.List[Atom]], bool]


def chase(
    instance: Instance,
    rules: typing.Sequence[TGD],
    config: typing.Optional[ChaseConfig] = None,
    stop: typing.Optional[StopCheck] = None,
) -> ChaseResult:
    """Restricted chase with a FIFO trigger queue

    A trigger is fired only while active, that is while its head has no
    extension into the current facts. `stop`, when given, is called with the
    store and the facts just added (all facts at the start) and ends the run
    with GOAL_REACHED when it returns True.
    """
    config = config or ChaseConfig()
    rules = list(rules)
    store = FactIndex(instance.facts)
    input_size = len(store)
    fact_steps = [0] * input_size
    queue = _TriggerQueue(rules)
    queue.discover_all(store)
    step_log = []
    next_null = config.null_counter_start
    new_nulls = 0
    status = ChaseStatus.SATURATED

    if stop is not None and stop(store, store.facts()):
        status = ChaseStatus.GOAL_REACHED
    else:
        while queue:
            rule_index, trigger = queue.peek()
            rule = rules[rule_index]
            if not _is_active(rule, trigger, store):
                queue.pop()
                continue
            if (
                len(step_log) >= config.max_steps
                or new_nulls + len(rule.existentials) > config.max_new_nulls
            ):
                status = ChaseStatus.BUDGET_EXHAUSTED
                break
            queue.pop()
            facts, nulls, next_null = _fire(rule, trigger, next_null)
            new_nulls += len(nulls)
            step_log.append(
                ChaseStep(rule_index=rule_index, trigger=dict(trigger), nulls=nulls)
            )
            added = [f for f in facts if store.add(f)]
            fact_steps.extend([len(step_log)] * len(added))
            logger.debug("step %d: rule %d added %s", len(step_log), rule_index, added)
            for fact in added:
                queue.discover_through(store, fact)
            if stop is not None and added and stop(store, added):
                status = ChaseStatus.GOAL_REACHED
                break

    logger.debug(
        "chase of %d facts with %d rules: %s after %d steps, %d facts",
        input_size,
        len(rules),
        status.value,
        len(step_log),
        len(store),
    )
    return ChaseResult(
        instance=Instance(facts=store.facts(), signature=instance.signature),
        status=status,
        rules=rules,
        step_log=step_log,
        input_size=input_size,
        null_counter_start=config.null_counter_start,
        fact_steps=fact_steps,
    )


def replay(
    instance: Instance,
    rules: typing.Sequence[TGD],
    step_log: typing.Sequence[ChaseStep],
    null_counter_start: int = 1,
) -> Instance:
    """Re-apply a step log to its input, numbering nulls the same way"""
    store = FactIndex(instance.facts)
    next_null = null_counter_start
    for step in step_log:
        facts, _, next_null = _fire(rules[step.rule_index], step.trigger, next_null)
        for fact in facts:
            store.add(fact)
    return Instance(facts=store.facts(), signature=instance.signature)


###############################################################################
# Decompositions of chase results


def emit_decomposition(
    result: ChaseResult, seed: typing.Optional[TreeDecomposition] = None
) -> TreeDecomposition:
    """Extend a decomposition of the chase input along the chase steps

    Each step creating nulls gets a child bag holding its head terms, hung
    below a vertex that holds the images of the frontier. Constants of the
    rules are added to every bag so facts mentioning them stay covered.
    """
    classification = classify_rules(result.rules)
    if not classification.frontier_guarded:
        raise ViewdetError(
            ErrorCode.NOT_FRONTIER_GUARDED,
            "Tree-shaped chase decompositions need frontier-guarded rules",
            rule_index=classification.first_violation["frontier_guarded"],
        )
    source = result.input_instance()
    if seed is None:
        decomposition = single_bag_decomposition(source)
    else:
        validate_decomposition(source, seed)
        decomposition = seed.copy()
        decomposition.facts = decomposition.placement(source)
    if not len(decomposition):
        decomposition.add_vertex([], None)

    rule_constants = list(
        dict.fromkeys(c for rule in result.rules for c in rule.constants())
    )
    if rule_constants:
        for bag in decomposition.bags:
            bag.extend(c for c in rule_constants if c not in bag)

    position = result.input_size
    facts = result.instance.facts
    for step_number, step in enumerate(result.step_log, start=1):
        rule = result.rules[step.rule_index]
        added = []
        while position < len(facts) and result.fact_steps[position] == step_number:
            added.append(facts[position])
            position += 1
        frontier = [step.trigger[v] for v in rule.frontier]
        if step.nulls:
            parent = decomposition.vertex_covering(frontier)
            bag = list(dict.fromkeys(frontier + list(step.nulls) + rule_constants))
            decomposition.add_vertex(bag, parent, added)
        else:
            for fact in added:
                vertex = decomposition.vertex_covering(fact.args)
                decomposition.facts[vertex].append(fact)
    return decomposition


###############################################################################
# Certain answers


class EntailmentStatus(enum.Enum):
    ENTAILED = "ENTAILED"
    NOT_ENTAILED_CERTIFIED = "NOT_ENTAILED_CERTIFIED"
    UNKNOWN = "UNKNOWN"


@marshmallow_dataclass.dataclass
class CertainAnswer(SchemaBase):
    status: EntailmentStatus = dataclasses.field(metadata={"by_value": True})
    chase_status: ChaseStatus = dataclasses.field(metadata={"by_value": True})
    witness: typing.Optional[CompactSubstitution] = None
    # chase steps performed before the witness appeared
    steps: typing.Optional[int] = None

    @property
    def entailed(self) -> bool:
        return self.status is EntailmentStatus.ENTAILED


def _instantiate(query: Query, answer) -> typing.List[typing.List[Atom]]:
    union = as_union(query)
    if answer is None:
        if not union.is_boolean:
            raise ViewdetError(
                ErrorCode.NON_BOOLEAN_QUERY,
                f"Query of arity {union.arity} needs an answer tuple",
            )
        answer = ()
    bodies = []
    for disjunct in union.disjuncts:
        seed = head_seed(disjunct.head, tuple(answer))
        if seed is not None:
            bodies.append([a.substitute(seed) for a in disjunct.body])
    return bodies


def entails(
    instance: Instance,
    rules: typing.Sequence[TGD],
    query: Query,
    config: typing.Optional[ChaseConfig] = None,
    answer: typing.Optional[typing.Sequence[Term]] = None,
) -> typing.Tuple[CertainAnswer, ChaseResult]:
    """certain_answer, also returning the chase it ran"""
    bodies = _instantiate(query, answer)
    found = {}

    def matched(store: FactIndex, added: typing.List[Atom]) -> bool:
        for body in bodies:
            if not body:
                found["witness"] = {}
                return True
            for fact in added:
                for h in find_homomorphisms_through(body, store, fact):
                    found["witness"] = h
                    return True
        return False

    result = chase(instance, rules, config, stop=matched)
    if "witness" in found:
        status = EntailmentStatus.ENTAILED
    elif result.saturated:
        status = EntailmentStatus.NOT_ENTAILED_CERTIFIED
    else:
        status = EntailmentStatus.UNKNOWN
    answer_record = CertainAnswer(
        status=status,
        chase_status=result.status,
        witness=found.get("witness"),
        steps=result.steps if "witness" in found else None,
    )
    return answer_record, result


def certain_answer(
    instance: Instance,
    rules: typing.Sequence[TGD],
    query: Query,
    config: typing.Optional[ChaseConfig] = None,
    answer: typing.Optional[typing.Sequence[Term]] = None,
) -> CertainAnswer:
    """Whether instance and rules entail query (instantiated on answer)

    ENTAILED as soon as some chase prefix matches; NOT_ENTAILED_CERTIFIED only
    for a saturated chase without match; UNKNOWN when the budget runs out.
    """
    return entails(instance, rules, query, config, answer)[0]
