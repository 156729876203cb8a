from __future__ import annotations

import dataclasses
import enum
import itertools
import logging
import math
import typing

import marshmallow_dataclass
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import (
    TGD,
    ChaseConfig,
    EntailmentStatus,
    chase,
    classify_rules,
    entails,
)
from .core import (
    Atom,
    CompactTerm,
    ConjunctiveQuery,
    Instance,
    PredicateRole,
    Signature,
    Term,
    UnionQuery,
    contains_ucq,
    eval_query,
    find_homomorphisms,
    first_homomorphism,
    freeze,
    frozen_head,
    head_seed,
)
from .datalog import (
    DatalogProgram,
    entails_goal,
    goal_answers,
    unfold_approximations,
)
from .errors import ErrorCode, ViewdetError
from .rewrite import RewriteConfig, backward_rewrite_ucq, expand_views
from .views import ViewKind, ViewSet, view_image

logger = logging.getLogger(__name__)

###############################################################################
# Problems, budgets and verdicts


@marshmallow_dataclass.dataclass
class MonDetProblem(SchemaBase):
    """Is the query monotonically determined over the views under the rules?

    The query is either a UCQ or a Datalog program (exactly one is set).
    """

    views: ViewSet
    rules: typing.List[TGD] = dataclasses.field(default_factory=list)
    query: typing.Optional[UnionQuery] = None
    program: typing.Optional[DatalogProgram] = None
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.rules = list(self.rules)
        if (self.query is None) == (self.program is None):
            raise ValidationError("A problem needs exactly one of query or program")
        self._signature = self._build_signature()

    def _build_signature(self) -> Signature:
        signature = Signature()
        if self.query is not None:
            for disjunct in self.query.disjuncts:
                signature.declare_atoms(disjunct.body)
        else:
            idb = set(self.program.idb_predicates())
            for rule in self.program.rules:
                for atom in [rule.head] + rule.body:
                    role = PredicateRole.IDB if atom.predicate in idb else PredicateRole.BASE
                    signature.declare(atom.predicate, atom.arity, role)
            signature.declare(self.program.goal, self.program.goal_arity, PredicateRole.IDB)
        for rule in self.rules:
            signature.declare_atoms(rule.body + rule.head)
        for view in self.views:
            if view.program is not None:
                edb = set(view.program.edb_predicates())
                atoms = [a for r in view.program.rules for a in r.body if a.predicate in edb]
            else:
                atoms = [a for d in view.query.disjuncts for a in d.body]
            signature.declare_atoms(atoms)
        for view in self.views:
            if view.name in signature:
                raise ValidationError(
                    f"View name {view.name} is also used as a base predicate"
                )
        return signature.merged(self.views.signature())

    @property
    def signature(self) -> Signature:
        return self._signature

    @property
    def arity(self) -> int:
        if self.query is not None:
            return self.query.arity
        return self.program.goal_arity

    def base_predicates(self) -> typing.List[str]:
        return self._signature.names(PredicateRole.BASE)

    def answers(self, instance: Instance) -> typing.Set[typing.Tuple[Term, ...]]:
        if self.program is not None:
            return goal_answers(self.program, instance)
        return eval_query(self.query, instance)


@marshmallow_dataclass.dataclass
class SearchBudgets(SchemaBase):
    unfold_depth: int = dataclasses.field(
        default=3, metadata={"validate": validate.Range(min=0)}
    )
    max_leaves: typing.Optional[int] = dataclasses.field(
        default=24, metadata={"validate": validate.Range(min=1)}
    )
    chase: ChaseConfig = dataclasses.field(
        default_factory=lambda: ChaseConfig(max_steps=300, max_new_nulls=300)
    )
    backv_limit: int = dataclasses.field(
        default=1024, metadata={"validate": validate.Range(min=1)}
    )
    fanout_cap: int = dataclasses.field(
        default=4096, metadata={"validate": validate.Range(min=1)}
    )
    rewrite: RewriteConfig = dataclasses.field(default_factory=RewriteConfig)


class VerdictKind(enum.Enum):
    DETERMINED = "DETERMINED"
    NOT_DETERMINED = "NOT_DETERMINED"
    UNKNOWN = "UNKNOWN"
    NO_SMALL_COUNTEREXAMPLE = "NO_SMALL_COUNTEREXAMPLE"


class Certification(enum.Enum):
    CERTIFIED = "CERTIFIED"
    CANDIDATE = "CANDIDATE"


@marshmallow_dataclass.dataclass
class Counterexample(SchemaBase):
    """Instances with V(first) included in V(second), q on first only"""

    first: Instance
    second: Instance
    certification: Certification = dataclasses.field(metadata={"by_value": True})
    answer: typing.List[CompactTerm] = dataclasses.field(default_factory=list)
    view_inclusion: bool = True
    # how far q was refuted on second
    refutation: EntailmentStatus = dataclasses.field(
        default=EntailmentStatus.NOT_ENTAILED_CERTIFIED, metadata={"by_value": True}
    )
    approximation: typing.Optional[ConjunctiveQuery] = None
    choice: typing.List[int] = dataclasses.field(default_factory=list)


@marshmallow_dataclass.dataclass
class BudgetReport(SchemaBase):
    approximations: int = 0
    unsaturated_chases: int = 0
    backv_truncated: bool = False
    # the approximation enumeration stopped at the depth bound
    depth_bounded: bool = False


@marshmallow_dataclass.dataclass
class Verdict(SchemaBase):
    kind: VerdictKind = dataclasses.field(metadata={"by_value": True})
    method: str
    counterexample: typing.Optional[Counterexample] = None
    report: typing.Optional[BudgetReport] = None
    semantics: str = dataclasses.field(
        default="unrestricted", metadata={"validate": validate.OneOf(["unrestricted"])}
    )
    notes: typing.List[str] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        if (self.kind is VerdictKind.NOT_DETERMINED) != (self.counterexample is not None):
            raise ValidationError("Exactly the NOT_DETERMINED verdicts carry a counterexample")

    @property
    def certified(self) -> bool:
        return (
            self.counterexample is not None
            and self.counterexample.certification is Certification.CERTIFIED
        )


###############################################################################
# Backward view instances


def _backv_options(image: Instance, views: ViewSet):
    options = []
    for fact in image:
        view = views.get(fact.predicate)
        if view.kind is ViewKind.DATALOG:
            raise ViewdetError(
                ErrorCode.DATALOG_VIEW_HERE,
                f"View {view.name} is Datalog; unfold it before building witnesses",
            )
        matching = []
        for index, disjunct in enumerate(view.query.disjuncts):
            seed = head_seed(disjunct.head, fact.args)
            if seed is not None:
                matching.append((index, disjunct, seed))
        options.append(matching)
    return options


def count_back_v(image: Instance, views: ViewSet) -> int:
    return math.prod(len(o) for o in _backv_options(image, views))


def back_v(
    image: Instance,
    views: ViewSet,
    limit: typing.Optional[int] = None,
    null_start: int = 1,
) -> typing.Iterator[typing.Tuple[Instance, typing.Tuple[int, ...]]]:
    """Base instances witnessing every view fact, with the disjunct choices

    Each fact gets the body of one matching disjunct with fresh nulls for its
    existential variables. Choices run over facts in insertion order, the
    last fact varying fastest; at most limit instances are produced.
    """
    options = _backv_options(image, views)
    choices = itertools.product(*options)
    if limit is not None:
        choices = itertools.islice(choices, limit)
    for choice in choices:
        next_null = null_start
        facts = []
        for index, disjunct, seed in choice:
            binding = dict(seed)
            for var in disjunct.existential_variables():
                binding[var] = Term.null(next_null)
                next_null += 1
            facts.extend(a.substitute(binding) for a in disjunct.body)
        indices = tuple(index for index, _, _ in choice)
        logger.debug("backV choice %s: %d facts", indices, len(facts))
        yield Instance(facts=facts), indices


###############################################################################
# The pipeline


def _next_null(instance: Instance) -> int:
    return max((t.null_id for t in instance.nulls()), default=0) + 1


def _entails(problem: MonDetProblem, instance: Instance, config, answer):
    if problem.program is not None:
        return entails_goal(
            instance, problem.rules, problem.program, config, answer
        )
    return entails(instance, problem.rules, problem.query, config, answer)


def _approximations(problem: MonDetProblem, budgets: SearchBudgets):
    if problem.query is not None:
        return ((d, 0) for d in problem.query.disjuncts)
    return (
        (a.query, a.depth)
        for a in unfold_approximations(
            problem.program, budgets.unfold_depth, budgets.max_leaves
        )
    )


def _run_pipeline(
    problem: MonDetProblem,
    budgets: SearchBudgets,
    views: ViewSet,
    approximations,
    fanout_cap: typing.Optional[int] = None,
    stop_at_candidate: bool = False,
):
    """Failures of the pipeline, the first certified one ending the run

    Returns (certified counterexample or None, first candidate or None,
    budget report).
    """
    report = BudgetReport()
    candidate = None
    base = problem.base_predicates()
    for approximation, _ in approximations:
        report.approximations += 1
        instance, mapping = freeze(approximation)
        answer = frozen_head(approximation, mapping)
        first = chase(instance, problem.rules, budgets.chase)
        if not first.saturated:
            report.unsaturated_chases += 1
        image = view_image(first.instance, views)
        count = count_back_v(image, views)
        if fanout_cap is not None and count > fanout_cap:
            raise ViewdetError(
                ErrorCode.FANOUT_LIMIT,
                f"{count} witness choices exceed the cap of {fanout_cap}",
                choices=count,
            )
        if count > budgets.backv_limit:
            report.backv_truncated = True
        config = dataclasses.replace(
            budgets.chase, null_counter_start=_next_null(first.instance)
        )
        for back, choice in back_v(
            image, views, budgets.backv_limit, config.null_counter_start
        ):
            start = dataclasses.replace(
                config,
                null_counter_start=max(_next_null(back), config.null_counter_start),
            )
            verdict, second = _entails(problem, back, start, answer)
            if verdict.entailed:
                continue
            if verdict.status is EntailmentStatus.UNKNOWN:
                report.unsaturated_chases += 1
            certified = (
                first.saturated
                and verdict.status is EntailmentStatus.NOT_ENTAILED_CERTIFIED
            )
            counterexample = Counterexample(
                first=first.instance.restricted(base),
                second=second.instance.restricted(base),
                certification=(
                    Certification.CERTIFIED if certified else Certification.CANDIDATE
                ),
                answer=list(answer),
                refutation=verdict.status,
                approximation=approximation,
                choice=list(choice),
            )
            logger.info(
                "pipeline failure on %s with choice %s (%s)",
                approximation,
                choice,
                counterexample.certification.value,
            )
            if certified:
                return counterexample, candidate, report
            if candidate is None:
                candidate = counterexample
                if stop_at_candidate:
                    return None, candidate, report
    return None, candidate, report


def search_counterexample(
    problem: MonDetProblem, budgets: typing.Optional[SearchBudgets] = None
) -> Verdict:
    """Bounded run of the determinacy pipeline

    Approximations of the query are chased, their view images are witnessed
    back in every way and chased again, and the query is checked on the
    result. A certified failure beats a candidate; with no failure the verdict
    is UNKNOWN unless the run was exhaustive (UCQ query, no Datalog view, all
    chases saturated, no witness choice skipped), in which case the query is
    determined.
    """
    budgets = budgets or SearchBudgets()
    views = problem.views.unfolded(budgets.unfold_depth, budgets.max_leaves)
    certified, candidate, report = _run_pipeline(
        problem, budgets, views, _approximations(problem, budgets)
    )
    method = "searchCounterexample"
    if certified is not None or candidate is not None:
        return Verdict(
            kind=VerdictKind.NOT_DETERMINED,
            method=method,
            counterexample=certified or candidate,
            report=report,
        )
    report.depth_bounded = problem.program is not None
    exhaustive = (
        problem.query is not None
        and not problem.views.has_datalog
        and not report.unsaturated_chases
        and not report.backv_truncated
    )
    if exhaustive:
        return Verdict(kind=VerdictKind.DETERMINED, method=method, report=report)
    return Verdict(kind=VerdictKind.UNKNOWN, method=method, report=report)


###############################################################################
# Decision procedures


def _require(condition: bool, message: str, **details):
    if not condition:
        raise ViewdetError(ErrorCode.UNSUPPORTED_CLASS, message, **details)


def decide_full(
    problem: MonDetProblem, budgets: typing.Optional[SearchBudgets] = None
) -> Verdict:
    """Exact verdict for UCQ queries, CQ or UCQ views and full rules

    Every chase terminates, so the pipeline is run to the end. Chase budgets
    still apply; running out of them gives UNKNOWN.
    """
    budgets = budgets or SearchBudgets()
    _require(problem.query is not None, "decideFull needs a UCQ query")
    _require(not problem.views.has_datalog, "decideFull needs CQ or UCQ views")
    classification = classify_rules(problem.rules)
    _require(
        classification.full,
        "decideFull needs full rules",
        rule_index=classification.first_violation.get("full"),
    )
    budgets = dataclasses.replace(budgets, backv_limit=budgets.fanout_cap)
    certified, candidate, report = _run_pipeline(
        problem,
        budgets,
        problem.views,
        _approximations(problem, budgets),
        fanout_cap=budgets.fanout_cap,
    )
    if certified is not None:
        return Verdict(
            kind=VerdictKind.NOT_DETERMINED,
            method="decideFull",
            counterexample=certified,
            report=report,
        )
    if candidate is not None or report.unsaturated_chases:
        return Verdict(kind=VerdictKind.UNKNOWN, method="decideFull", report=report)
    return Verdict(kind=VerdictKind.DETERMINED, method="decideFull", report=report)


def decide_linear_cq(
    problem: MonDetProblem, budgets: typing.Optional[SearchBudgets] = None
) -> Verdict:
    """Exact verdict for UCQ queries, CQ views and linear rules

    The query is rewritten under the rules, then under the backward view
    rules, keeping only disjuncts over views. Their expansion, rewritten
    once more under the rules, must contain the query. UCQ views are accepted
    when the bounded pipeline runs to the end.
    """
    budgets = budgets or SearchBudgets()
    _require(problem.query is not None, "decideLinearCQ needs a UCQ query")
    _require(not problem.views.has_datalog, "decideLinearCQ needs CQ views")
    classification = classify_rules(problem.rules)
    _require(
        classification.linear,
        "decideLinearCQ needs linear rules",
        rule_index=classification.first_violation.get("linear"),
    )
    if not problem.views.all_cq:
        return _decide_by_pipeline(problem, budgets)

    view_names = set(problem.views.names())
    first = backward_rewrite_ucq(problem.query, problem.rules, budgets.rewrite)
    second = backward_rewrite_ucq(first, problem.views.backward_rules(), budgets.rewrite)
    over_views = UnionQuery(
        disjuncts=[
            d for d in second.disjuncts if set(d.predicates()) <= view_names
        ],
        head_arity=second.arity,
    )
    expanded = expand_views(over_views, problem.views)
    final = backward_rewrite_ucq(expanded, problem.rules, budgets.rewrite)
    logger.info(
        "decideLinearCQ: %d, %d, %d view and %d final disjuncts",
        len(first),
        len(second),
        len(over_views),
        len(final),
    )
    failing = [
        d for d in problem.query.disjuncts if not contains_ucq(d, final)
    ]
    if not failing:
        return Verdict(kind=VerdictKind.DETERMINED, method="decideLinearCQ")
    certified, candidate, report = _run_pipeline(
        problem,
        budgets,
        problem.views,
        ((d, 0) for d in failing),
        stop_at_candidate=True,
    )
    counterexample = certified or candidate
    if counterexample is None:
        # refuted by containment, but no witness pair was built
        return Verdict(
            kind=VerdictKind.UNKNOWN,
            method="decideLinearCQ/refuted",
            report=report,
            notes=[
                "the query is not determined, but no failure showed up within "
                "the chase budget"
            ],
        )
    return Verdict(
        kind=VerdictKind.NOT_DETERMINED,
        method="decideLinearCQ",
        counterexample=counterexample,
        report=report,
    )


def _decide_by_pipeline(problem: MonDetProblem, budgets: SearchBudgets) -> Verdict:
    budgets = dataclasses.replace(budgets, backv_limit=budgets.fanout_cap)
    certified, candidate, report = _run_pipeline(
        problem, budgets, problem.views, _approximations(problem, budgets)
    )
    method = "decideLinearCQ/pipeline"
    if certified is not None:
        return Verdict(
            kind=VerdictKind.NOT_DETERMINED,
            method=method,
            counterexample=certified,
            report=report,
        )
    _require(
        candidate is None
        and not report.unsaturated_chases
        and not report.backv_truncated,
        "UCQ views need every pipeline chase to saturate",
    )
    return Verdict(kind=VerdictKind.DETERMINED, method=method, report=report)


###############################################################################
# Counterexample checks and the small-domain oracle


def satisfies(instance: Instance, rules: typing.Sequence[TGD]) -> bool:
    """Whether every trigger of every rule is satisfied in instance"""
    for rule in rules:
        if not rule.body:
            if first_homomorphism(rule.head, instance) is None:
                return False
            continue
        for trigger in find_homomorphisms(rule.body, instance):
            seed = {v: trigger[v] for v in rule.frontier}
            if first_homomorphism(rule.head, instance, seed) is None:
                return False
    return True


def check_counterexample(
    problem: MonDetProblem, counterexample: Counterexample
) -> typing.List[str]:
    """Names of the checks the counterexample fails (empty when sound)"""
    failed = []
    views = problem.views
    if not view_image(counterexample.first, views).issubset(
        view_image(counterexample.second, views)
    ):
        failed.append("view_inclusion")
    answer = tuple(counterexample.answer)
    if answer not in problem.answers(counterexample.first):
        failed.append("query_on_first")
    if answer in problem.answers(counterexample.second):
        failed.append("query_off_second")
    if counterexample.certification is Certification.CERTIFIED:
        if not satisfies(counterexample.first, problem.rules):
            failed.append("first_satisfies_rules")
        if not satisfies(counterexample.second, problem.rules):
            failed.append("second_satisfies_rules")
    return failed


def brute_force_mondet(
    problem: MonDetProblem, max_domain: int = 2, max_facts: int = 16
) -> Verdict:
    """Search all instance pairs over a small domain for a counterexample

    Instances range over every set of facts built from the base predicates,
    the problem's constants and max_domain fresh elements; only those
    satisfying the rules take part. Finding nothing proves nothing.
    """
    predicates = [
        (p.name, p.arity)
        for p in problem.signature.predicates
        if p.role is PredicateRole.BASE
    ]
    constants = set()
    if problem.query is not None:
        for d in problem.query.disjuncts:
            constants.update(d.constants())
    else:
        constants.update(problem.program.constants())
    for rule in problem.rules:
        constants.update(rule.constants())
    domain = sorted(constants, key=lambda t: t.name) + [
        Term.constant(f"d{i}") for i in range(1, max_domain + 1)
    ]
    facts = [
        Atom(name, args)
        for name, arity in predicates
        for args in itertools.product(domain, repeat=arity)
    ]
    if len(facts) > max_facts:
        raise ViewdetError(
            ErrorCode.SCHEMA_TOO_LARGE,
            f"{len(facts)} possible facts exceed the limit of {max_facts}",
            facts=len(facts),
        )

    instances = []
    for mask in range(1 << len(facts)):
        instance = Instance(facts=[f for i, f in enumerate(facts) if mask >> i & 1])
        if satisfies(instance, problem.rules):
            image = frozenset(view_image(instance, problem.views).facts)
            instances.append((instance, image, problem.answers(instance)))
    logger.info("brute force over %d instances satisfying the rules", len(instances))

    for first, first_image, first_answers in instances:
        if not first_answers:
            continue
        for second, second_image, second_answers in instances:
            missing = first_answers - second_answers
            if missing and first_image <= second_image:
                answer = min(missing, key=lambda t: [x.sort_key() for x in t])
                counterexample = Counterexample(
                    first=first,
                    second=second,
                    certification=Certification.CERTIFIED,
                    answer=list(answer),
                )
                return Verdict(
                    kind=VerdictKind.NOT_DETERMINED,
                    method="bruteForceMondet",
                    counterexample=counterexample,
                )
    return Verdict(
        kind=VerdictKind.NO_SMALL_COUNTEREXAMPLE,
        method="bruteForceMondet",
        notes=[f"no counterexample over {max_domain} fresh elements"],
    )
