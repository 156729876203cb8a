from __future__ import annotations

import collections
import dataclasses
import enum
import itertools
import logging
import typing

import marshmallow_dataclass
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import TGD, ChaseConfig, chase, classify_rules
from .core import (
    Atom,
    CompactSubstitution,
    ConjunctiveQuery,
    Instance,
    Query,
    Substitution,
    Term,
    Unifier,
    UnionQuery,
    VariableSupply,
    as_union,
    contains_ucq,
    eval_query,
    freeze,
    normalize_cq,
    variables_of,
)
from .datalog import DatalogProgram, DatalogRule, goal_answers
from .errors import ErrorCode, ViewdetError
from .views import ViewKind, ViewSet, view_image

logger = logging.getLogger(__name__)


@marshmallow_dataclass.dataclass
class RewriteConfig(SchemaBase):
    max_disjuncts: int = dataclasses.field(
        default=500, metadata={"validate": validate.Range(min=1)}
    )


@marshmallow_dataclass.dataclass
class RewriteStep(SchemaBase):
    # index into RewriteTrace.generated
    disjunct: int
    rule: int
    piece: typing.List[int]
    # head atom matched by each piece atom
    targets: typing.List[int]
    unifier: CompactSubstitution
    result: int


@marshmallow_dataclass.dataclass
class RewriteTrace(SchemaBase):
    """All kept disjuncts in discovery order and the steps producing them

    The first `initial` entries of `generated` are the normalized input
    disjuncts; every later entry is the result of exactly one step.
    """

    generated: typing.List[ConjunctiveQuery] = dataclasses.field(default_factory=list)
    steps: typing.List[RewriteStep] = dataclasses.field(default_factory=list)
    initial: int = 0
    final: typing.Optional[UnionQuery] = None


###############################################################################
# Backward rewriting by piece unification


def _rename_rule(rule: TGD, taken: typing.Iterable[Term]) -> typing.Tuple[TGD, Substitution]:
    supply = VariableSupply("R", (t.name for t in taken))
    mapping = {v: supply.fresh() for v in variables_of(rule.body + rule.head)}
    renamed = TGD(
        body=[a.substitute(mapping) for a in rule.body],
        head=[a.substitute(mapping) for a in rule.head],
        label=rule.label,
    )
    return renamed, mapping


def _apply_piece(
    query: ConjunctiveQuery,
    rule: TGD,
    piece: typing.Sequence[int],
    targets: typing.Sequence[int],
) -> typing.Optional[typing.Tuple[ConjunctiveQuery, Substitution]]:
    """Replace the piece atoms of query by the body of rule, if allowed

    The piece atoms are unified with the chosen head atoms. An existential
    variable of the rule may only meet query variables that occur nowhere
    outside the piece and are not answer variables; it never meets a
    constant, a frontier variable or another existential variable.
    """
    renamed, _ = _rename_rule(rule, query.variables())
    unifier = Unifier()
    for position, target in zip(piece, targets):
        if not unifier.unify(query.body[position].args, renamed.head[target].args):
            return None

    existentials = set(renamed.existentials)
    frontier = set(renamed.frontier)
    in_piece = set(piece)
    outside = {t for t in query.head if t.is_variable}
    for position, atom in enumerate(query.body):
        if position not in in_piece:
            outside.update(atom.variables())

    for members in unifier.classes().values():
        found = [m for m in members if m in existentials]
        if not found:
            continue
        if len(found) > 1:
            return None
        for member in members:
            if member == found[0]:
                continue
            if not member.is_variable or member in frontier or member in outside:
                return None

    theta = unifier.substitution(query.variables() + renamed.body_variables)
    body = [
        atom.substitute(theta)
        for position, atom in enumerate(query.body)
        if position not in in_piece
    ]
    body.extend(a.substitute(theta) for a in renamed.body)
    rewritten = ConjunctiveQuery(
        head=[theta.get(t, t) for t in query.head], body=body, name=query.name
    )
    return rewritten, {v: t for v, t in theta.items() if v != t}


def _pieces(query: ConjunctiveQuery, rule: TGD):
    """Candidate (piece, targets) pairs in a fixed order"""
    heads = collections.defaultdict(list)
    for index, atom in enumerate(rule.head):
        heads[atom.predicate].append(index)
    usable = [i for i, a in enumerate(query.body) if a.predicate in heads]
    for size in range(1, len(usable) + 1):
        for piece in itertools.combinations(usable, size):
            options = [heads[query.body[i].predicate] for i in piece]
            for targets in itertools.product(*options):
                yield list(piece), list(targets)


class _Kept:
    """Normalized disjuncts kept so far, pruning those already covered"""

    def __init__(self, config: RewriteConfig):
        self.config = config
        self.items: typing.List[ConjunctiveQuery] = []

    def admit(self, query: ConjunctiveQuery) -> typing.Optional[int]:
        normal = normalize_cq(query)
        for kept in self.items:
            if contains_ucq(normal, kept):
                return None
        self.items.append(normal)
        if len(self.items) > self.config.max_disjuncts:
            raise ViewdetError(
                ErrorCode.SATURATION_BUDGET,
                f"Rewriting exceeded {self.config.max_disjuncts} disjuncts",
                max_disjuncts=self.config.max_disjuncts,
            )
        return len(self.items) - 1


def backward_rewrite_trace(
    query: Query,
    rules: typing.Sequence[TGD],
    config: typing.Optional[RewriteConfig] = None,
) -> RewriteTrace:
    """Saturate query under backward piece rewriting with rules

    A new disjunct is kept unless it is contained in one kept earlier.
    Rules must be linear or source-to-target.
    """
    config = config or RewriteConfig()
    rules = list(rules)
    classification = classify_rules(rules)
    if rules and not (classification.linear or classification.source_to_target):
        raise ViewdetError(
            ErrorCode.UNSUPPORTED_CLASS,
            "Backward rewriting needs linear or source-to-target rules",
            rule_index=classification.first_violation.get("linear"),
        )
    union = as_union(query)
    kept = _Kept(config)
    for disjunct in union.disjuncts:
        kept.admit(disjunct)
    trace = RewriteTrace(initial=len(kept.items))

    position = 0
    while position < len(kept.items):
        current = kept.items[position]
        for rule_index, rule in enumerate(rules):
            for piece, targets in _pieces(current, rule):
                applied = _apply_piece(current, rule, piece, targets)
                if applied is None:
                    continue
                rewritten, unifier = applied
                result = kept.admit(rewritten)
                if result is None:
                    continue
                logger.debug(
                    "rewrote disjunct %d with rule %d on %s: %s",
                    position,
                    rule_index,
                    piece,
                    kept.items[result],
                )
                trace.steps.append(
                    RewriteStep(
                        disjunct=position,
                        rule=rule_index,
                        piece=piece,
                        targets=targets,
                        unifier=unifier,
                        result=result,
                    )
                )
        position += 1

    trace.generated = list(kept.items)
    trace.final = UnionQuery(
        disjuncts=list(kept.items), head_arity=union.arity, name=union.name
    )
    logger.info(
        "rewriting of %d disjuncts under %d rules: %d disjuncts",
        len(union),
        len(rules),
        len(kept.items),
    )
    return trace


def backward_rewrite_ucq(
    query: Query,
    rules: typing.Sequence[TGD],
    config: typing.Optional[RewriteConfig] = None,
) -> UnionQuery:
    """UCQ R with D |= R iff D and rules entail query, for every instance D"""
    return backward_rewrite_trace(query, rules, config).final


def replay_trace(trace: RewriteTrace, rules: typing.Sequence[TGD]) -> UnionQuery:
    """Recompute every step of trace, checking each gives its recorded result"""
    produced = list(trace.generated[: trace.initial])
    for step in trace.steps:
        applied = _apply_piece(
            trace.generated[step.disjunct], rules[step.rule], step.piece, step.targets
        )
        if applied is None or normalize_cq(applied[0]) != trace.generated[step.result]:
            raise ValidationError(
                f"Step {step} does not reproduce its recorded disjunct"
            )
        produced.append(trace.generated[step.result])
    return UnionQuery(disjuncts=produced, head_arity=trace.final.arity)


###############################################################################
# View expansion


def expand_views(rewriting: Query, views: ViewSet) -> UnionQuery:
    """Replace view atoms by their definitions, distributing unions

    Atoms over predicates that are not views are kept as they are.
    """
    union = as_union(rewriting)
    for view in views:
        if view.kind is ViewKind.DATALOG and view.name in union.predicates():
            raise ViewdetError(
                ErrorCode.DATALOG_VIEW_UNEXPANDABLE,
                f"View {view.name} is defined in Datalog and cannot be expanded",
            )
    expanded = []
    for disjunct in union.disjuncts:
        supply = VariableSupply("E", (v.name for v in disjunct.variables()))
        options = []
        for atom in disjunct.body:
            if atom.predicate in views:
                options.append(views.get(atom.predicate).query.disjuncts)
            else:
                options.append([None])
        for choice in itertools.product(*options):
            result = _expand_choice(disjunct, choice, supply)
            if result is not None:
                expanded.append(result)
    return UnionQuery(disjuncts=expanded, head_arity=union.arity, name=union.name)


def _expand_choice(disjunct, choice, supply) -> typing.Optional[ConjunctiveQuery]:
    unifier = Unifier()
    pending = []
    for atom, definition in zip(disjunct.body, choice):
        if definition is None:
            pending.append([atom])
            continue
        mapping = {v: supply.fresh() for v in definition.variables()}
        renamed = definition.substitute(mapping)
        if not unifier.unify(atom.args, renamed.head):
            return None
        pending.append(renamed.body)
    theta = {
        t: unifier.find(t)
        for t in unifier.terms()
        if t.is_variable and unifier.find(t) != t
    }
    body = [a.substitute(theta) for atoms in pending for a in atoms]
    return ConjunctiveQuery(
        head=[theta.get(t, t) for t in disjunct.head], body=body, name=disjunct.name
    )


###############################################################################
# Inverse rules for Datalog queries over full TGDs

_PLAIN = ("p",)


def _annotation_name(predicate: str, annotation: typing.Tuple) -> str:
    if all(entry == _PLAIN for entry in annotation):
        return predicate
    parts = ["p" if e == _PLAIN else f"{e[1]}{e[2]}" for e in annotation]
    return f"{predicate}__{'_'.join(parts)}"


def _inverse_view_rules(views: ViewSet):
    """Skolemized backward rules, one flattened rule per definition atom"""
    rules, skolem_arity = [], {}
    for view in views:
        if view.kind is not ViewKind.CQ:
            raise ViewdetError(
                ErrorCode.NON_CQ_VIEW,
                f"Inverse rules need CQ views, {view.name} is {view.kind.value}",
            )
        definition = view.query.disjuncts[0]
        xs = definition.head_variables()
        skolems = {}
        for j, var in enumerate(definition.existential_variables()):
            skolems[var] = ("f", view.name, j)
            skolem_arity[skolems[var]] = len(xs)
        for atom in definition.body:
            annotation = tuple(skolems.get(t, _PLAIN) for t in atom.args)
            args = []
            for term in atom.args:
                args.extend(xs if term in skolems else [term])
            rules.append(
                (
                    atom.predicate,
                    annotation,
                    DatalogRule(
                        head=Atom(_annotation_name(atom.predicate, annotation), tuple(args)),
                        body=[Atom(view.name, tuple(definition.head))],
                    ),
                )
            )
    return rules, skolem_arity


def _compose(rule: DatalogRule, combo, skolem_arity):
    per_var: typing.Dict[Term, typing.Tuple] = {}
    for atom, annotation in zip(rule.body, combo):
        for term, entry in zip(atom.args, annotation):
            if not term.is_variable:
                if entry != _PLAIN:
                    return None
            elif per_var.setdefault(term, entry) != entry:
                return None
    flat: typing.Dict[Term, typing.List[Term]] = {}
    for var, entry in per_var.items():
        if entry == _PLAIN:
            flat[var] = [var]
        else:
            flat[var] = [
                Term.variable(f"{var.name}_{k}") for k in range(skolem_arity[entry])
            ]

    def flatten(atom: Atom, annotation) -> Atom:
        args = []
        for term in atom.args:
            args.extend(flat[term] if term.is_variable else [term])
        return Atom(_annotation_name(atom.predicate, annotation), tuple(args))

    head_annotation = tuple(
        per_var[t] if t.is_variable else _PLAIN for t in rule.head.args
    )
    body = [flatten(a, ann) for a, ann in zip(rule.body, combo)]
    return rule.head.predicate, head_annotation, DatalogRule(
        head=flatten(rule.head, head_annotation), body=body
    )


def inverse_rules(
    program: DatalogProgram, views: ViewSet, rules: typing.Sequence[TGD] = ()
) -> DatalogProgram:
    """Datalog program over the view schema computing the certain answers

    Backward view rules get Skolem terms for existential variables. With full
    rules these terms never nest, so every predicate position holds either a
    plain term or f(x) for one Skolem symbol f; each such pattern becomes a
    predicate of its own whose arguments are the flattened tuples.
    """
    classification = classify_rules(list(rules))
    if not classification.full:
        raise ViewdetError(
            ErrorCode.NON_FULL_SIGMA,
            "Inverse rules need full TGDs",
            rule_index=classification.first_violation["full"],
        )
    inverse, skolem_arity = _inverse_view_rules(views)
    sources = [
        DatalogRule(head=head, body=list(rule.body))
        for rule in rules
        for head in rule.head
    ] + list(program.rules)

    annotations: typing.Dict[str, typing.Set[typing.Tuple]] = collections.defaultdict(set)
    output: typing.Dict[str, DatalogRule] = {}
    for predicate, annotation, rule in inverse:
        annotations[predicate].add(annotation)
        output.setdefault(str(rule), rule)

    changed = True
    while changed:
        changed = False
        for rule in sources:
            options = [sorted(annotations.get(a.predicate, ())) for a in rule.body]
            for combo in itertools.product(*options):
                composed = _compose(rule, combo, skolem_arity)
                if composed is None:
                    continue
                predicate, annotation, new_rule = composed
                if annotation not in annotations[predicate]:
                    annotations[predicate].add(annotation)
                    changed = True
                if str(new_rule) not in output:
                    output[str(new_rule)] = new_rule
                    changed = True

    result = DatalogProgram(
        rules=list(output.values()),
        goal=program.goal,
        name=f"{program.name or program.goal}_inverse",
    )
    logger.info("inverse rules: %d rules over views %s", len(result.rules), views.names())
    return result


###############################################################################
# Rewritings read off view images


class RewritingStatus(enum.Enum):
    REWRITTEN = "REWRITTEN"
    UNKNOWN = "UNKNOWN"


@marshmallow_dataclass.dataclass
class ViewImageRewriting(SchemaBase):
    status: RewritingStatus = dataclasses.field(metadata={"by_value": True})
    rewriting: typing.Optional[UnionQuery] = None
    # some disjunct has an empty view image, so the rewriting is constant true
    degenerate: bool = False
    # disjuncts whose image misses an answer variable
    dropped: typing.List[int] = dataclasses.field(default_factory=list)


def view_image_rewriting(
    query: Query,
    views: ViewSet,
    rules: typing.Sequence[TGD],
    config: typing.Optional[ChaseConfig] = None,
) -> ViewImageRewriting:
    """UCQ over the views read off the view images of chased disjuncts

    Frozen answer variables turn back into the answer variables and query
    constants stay; every other term becomes an existential variable. The
    result is a rewriting when the query is monotonically determined and a
    sound lower bound otherwise.
    """
    union = as_union(query)
    disjuncts, dropped, degenerate = [], [], False
    for index, disjunct in enumerate(union.disjuncts):
        instance, mapping = freeze(disjunct)
        result = chase(instance, rules, config)
        if not result.saturated:
            logger.info("chase of disjunct %d did not saturate", index)
            return ViewImageRewriting(status=RewritingStatus.UNKNOWN)
        image = view_image(result.instance, views)
        back = {}
        for var in disjunct.head_variables():
            back[mapping[var]] = var
        frozen = set(mapping.values())
        supply = VariableSupply("Y", (v.name for v in disjunct.variables()))
        terms = sorted(image.adom(), key=lambda t: t.sort_key())
        for term in terms:
            if term not in back and (term in frozen or not term.is_constant):
                back[term] = supply.fresh()
        body = [fact.substitute(back) for fact in image.facts]
        present = set(variables_of(body))
        if any(v not in present for v in disjunct.head_variables()):
            dropped.append(index)
            continue
        if not body:
            degenerate = True
        disjuncts.append(
            ConjunctiveQuery(head=list(disjunct.head), body=body, name=disjunct.name)
        )
    rewriting = UnionQuery(disjuncts=disjuncts, head_arity=union.arity, name=union.name)
    return ViewImageRewriting(
        status=RewritingStatus.REWRITTEN,
        rewriting=rewriting,
        degenerate=degenerate,
        dropped=dropped,
    )


def _answers(query, instance: Instance) -> typing.Set[typing.Tuple[Term, ...]]:
    if isinstance(query, DatalogProgram):
        return goal_answers(query, instance)
    return eval_query(query, instance)


def check_rewriting(
    rewriting: typing.Union[Query, DatalogProgram],
    query: typing.Union[Query, DatalogProgram],
    views: ViewSet,
    instances: typing.Iterable[Instance],
) -> typing.List[int]:
    """Indices of instances where the rewriting on the view image differs

    The instances are expected to satisfy the rules of the problem.
    """
    failing = []
    for index, instance in enumerate(instances):
        expected = _answers(query, instance)
        got = _answers(rewriting, view_image(instance, views))
        if expected != got:
            logger.info("rewriting disagrees on instance %d: %s vs %s", index, got, expected)
            failing.append(index)
    return failing
