from __future__ import annotations

import dataclasses
import enum
import logging
import typing

import marshmallow_dataclass
from marshmallow import validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .chase import TGD
from .core import (
    Atom,
    ConjunctiveQuery,
    Instance,
    PredicateRole,
    Signature,
    Term,
    UnionQuery,
    eval_query,
)
from .datalog import DatalogProgram, goal_answers, unfold_approximations
from .errors import ErrorCode, ViewdetError

logger = logging.getLogger(__name__)


class ViewKind(enum.Enum):
    CQ = "cq"
    UCQ = "ucq"
    DATALOG = "datalog"


@marshmallow_dataclass.dataclass
class ViewDefinition(SchemaBase):
    """A view predicate defined by a CQ, a UCQ or a Datalog program"""

    name: str = dataclasses.field(metadata={"validate": validate.Length(min=1)})
    query: typing.Optional[UnionQuery] = None
    program: typing.Optional[DatalogProgram] = None

    def __post_init__(self):
        if (self.query is None) == (self.program is None):
            raise ValidationError(
                f"View {self.name} needs exactly one of a query or a program"
            )

    def __str__(self):
        if self.program is not None:
            return f"view {self.name} := program {self.program.name or self.program.goal}"
        return f"view {self.name} := {self.query}"

    @property
    def kind(self) -> ViewKind:
        if self.program is not None:
            return ViewKind.DATALOG
        if len(self.query.disjuncts) == 1:
            return ViewKind.CQ
        return ViewKind.UCQ

    @property
    def arity(self) -> int:
        if self.program is not None:
            return self.program.goal_arity
        return self.query.arity

    def base_predicates(self) -> typing.List[str]:
        if self.program is not None:
            return self.program.edb_predicates()
        return self.query.predicates()

    def evaluate(self, instance: Instance) -> typing.Set[typing.Tuple[Term, ...]]:
        if self.program is not None:
            return goal_answers(self.program, instance)
        return eval_query(self.query, instance)

    def as_union(self, max_depth: int = 0, max_leaves=None) -> UnionQuery:
        """The definition as a UCQ; Datalog views by their approximations"""
        if self.program is None:
            return self.query
        disjuncts = [
            a.query
            for a in unfold_approximations(self.program, max_depth, max_leaves)
        ]
        return UnionQuery(disjuncts=disjuncts, head_arity=self.arity, name=self.name)


@marshmallow_dataclass.dataclass
class ViewSet(SchemaBase):
    views: typing.List[ViewDefinition] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.views = list(self.views)
        names = [v.name for v in self.views]
        if len(set(names)) != len(names):
            raise ValidationError("View names must be unique")
        self._by_name = {v.name: v for v in self.views}

    def __iter__(self):
        return iter(self.views)

    def __len__(self):
        return len(self.views)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> ViewDefinition:
        return self._by_name[name]

    def names(self) -> typing.List[str]:
        return [v.name for v in self.views]

    def signature(self) -> Signature:
        signature = Signature()
        for view in self.views:
            signature.declare(view.name, view.arity, PredicateRole.VIEW)
        return signature

    def base_predicates(self) -> typing.List[str]:
        return list(dict.fromkeys(p for v in self.views for p in v.base_predicates()))

    def kinds(self) -> typing.Set[ViewKind]:
        return {v.kind for v in self.views}

    @property
    def all_cq(self) -> bool:
        return all(v.kind is ViewKind.CQ for v in self.views)

    @property
    def has_datalog(self) -> bool:
        return any(v.kind is ViewKind.DATALOG for v in self.views)

    def unfolded(self, max_depth: int, max_leaves=None) -> "ViewSet":
        """Datalog views replaced by the UCQ of their approximations"""
        if not self.has_datalog:
            return self
        return ViewSet(
            views=[
                ViewDefinition(name=v.name, query=v.as_union(max_depth, max_leaves))
                for v in self.views
            ]
        )

    def backward_rules(self) -> typing.List[TGD]:
        """V(x) -> exists y. body for every CQ view"""
        rules = []
        for view in self.views:
            if view.kind is not ViewKind.CQ:
                raise ViewdetError(
                    ErrorCode.NON_CQ_VIEW,
                    f"Backward rules need CQ views, {view.name} is {view.kind.value}",
                )
            definition = view.query.disjuncts[0]
            rules.append(
                TGD(
                    body=[Atom(view.name, tuple(definition.head))],
                    head=list(definition.body),
                    label=f"back:{view.name}",
                )
            )
        return rules


def view_image(instance: Instance, views: ViewSet) -> Instance:
    """One V(t) fact per answer tuple t of each view definition"""
    facts = []
    for view in views:
        answers = sorted(view.evaluate(instance), key=lambda t: [x.sort_key() for x in t])
        facts.extend(Atom(view.name, answer) for answer in answers)
    return Instance(facts=facts, signature=views.signature())


def copy_views(predicates: typing.Dict[str, int], prefix: str = "V_") -> ViewSet:
    """Identity views V_R(x) := R(x) for the given predicates and arities"""
    views = []
    for predicate, arity in predicates.items():
        head = [Term.variable(f"X{i}") for i in range(arity)]
        query = ConjunctiveQuery(
            head=head, body=[Atom(predicate, tuple(head))], name=prefix + predicate
        )
        views.append(
            ViewDefinition(name=prefix + predicate, query=UnionQuery(disjuncts=[query]))
        )
    return ViewSet(views=views)
