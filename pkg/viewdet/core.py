from __future__ import annotations

import collections
import dataclasses
import enum
import itertools
import logging
import typing

import marshmallow_dataclass
from marshmallow import fields, validate
from marshmallow.exceptions import ValidationError

from . import SchemaBase
from .errors import ErrorCode, ViewdetError

logger = logging.getLogger(__name__)

###############################################################################
# Terms and atoms


class TermKind(enum.Enum):
    CONSTANT = "constant"
    VARIABLE = "variable"
    NULL = "null"


_KIND_RANK = {TermKind.CONSTANT: 0, TermKind.NULL: 1, TermKind.VARIABLE: 2}

_NULL_PREFIX = "_:"
_VARIABLE_PREFIX = "?"


@marshmallow_dataclass.dataclass(frozen=True)
class Term(SchemaBase):
    kind: TermKind = dataclasses.field(metadata={"by_value": True})
    name: str = dataclasses.field(metadata={"validate": validate.Length(min=1)})

    def __post_init__(self):
        if not self.name:
            raise ValidationError("Term names must be nonempty")

    def __repr__(self):
        return self.encode()

    def __str__(self):
        return self.name

    @classmethod
    def constant(cls, name: str) -> "Term":
        return cls(TermKind.CONSTANT, name)

    @classmethod
    def variable(cls, name: str) -> "Term":
        return cls(TermKind.VARIABLE, name)

    @classmethod
    def null(cls, null_id: int) -> "Term":
        return cls(TermKind.NULL, f"n{null_id}")

    @property
    def is_constant(self) -> bool:
        return self.kind is TermKind.CONSTANT

    @property
    def is_variable(self) -> bool:
        return self.kind is TermKind.VARIABLE

    @property
    def is_null(self) -> bool:
        return self.kind is TermKind.NULL

    @property
    def null_id(self) -> int:
        if not self.is_null:
            raise ValueError(f"{self!r} is not a labelled null")
        return int(self.name[1:])

    def sort_key(self):
        """Constants before nulls before variables, nulls by counter value"""
        rank = _KIND_RANK[self.kind]
        if self.is_null:
            return (rank, self.null_id, self.name)
        return (rank, 0, self.name)

    def encode(self) -> str:
        if self.is_variable:
            return _VARIABLE_PREFIX + self.name
        if self.is_null:
            return _NULL_PREFIX + self.name
        return self.name

    @classmethod
    def decode(cls, text: str) -> "Term":
        if text.startswith(_VARIABLE_PREFIX):
            return cls.variable(text[len(_VARIABLE_PREFIX) :])
        if text.startswith(_NULL_PREFIX):
            name = text[len(_NULL_PREFIX) :]
            if not (name.startswith("n") and name[1:].isdigit()):
                raise ValidationError(f"Malformed null {text!r}")
            return cls(TermKind.NULL, name)
        return cls.constant(text)


class TermField(fields.Field):
    """Terms as strings: constants bare, variables as ?X, nulls as _:n3"""

    def _serialize(self, value: Term, attr, obj, **kwargs):
        if value is None:
            return None
        return value.encode()

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, str) or not value:
            raise ValidationError("A term is encoded as a nonempty string")
        return Term.decode(value)


CompactTerm = marshmallow_dataclass.NewType("CompactTerm", Term, field=TermField)


@marshmallow_dataclass.dataclass(frozen=True)
class Atom(SchemaBase):
    predicate: str = dataclasses.field(metadata={"validate": validate.Length(min=1)})
    args: typing.List[Term] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    def __repr__(self):
        return f"{self.predicate}({', '.join(t.encode() for t in self.args)})"

    def __str__(self):
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(str(t) for t in self.args)})"

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_ground(self) -> bool:
        return not any(t.is_variable for t in self.args)

    def variables(self) -> typing.List[Term]:
        return _unique(t for t in self.args if t.is_variable)

    def substitute(self, substitution: typing.Mapping[Term, Term]) -> "Atom":
        return Atom(self.predicate, tuple(substitution.get(t, t) for t in self.args))

    def renamed(self, predicate: str) -> "Atom":
        return Atom(predicate, self.args)


class AtomField(fields.Field):
    """Atoms as arrays: predicate name followed by the encoded terms"""

    def _serialize(self, value: Atom, attr, obj, **kwargs):
        if value is None:
            return None
        return [value.predicate] + [t.encode() for t in value.args]

    def _deserialize(self, value, attr, data, **kwargs):
        if (
            not isinstance(value, (list, tuple))
            or not value
            or not all(isinstance(v, str) and v for v in value)
        ):
            raise ValidationError(
                "An atom is encoded as a list of strings [predicate, term, ...]"
            )
        return Atom(value[0], tuple(Term.decode(v) for v in value[1:]))


CompactAtom = marshmallow_dataclass.NewType("CompactAtom", Atom, field=AtomField)

Substitution = typing.Dict[Term, Term]


class SubstitutionField(fields.Field):
    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return {var.name: term.encode() for var, term in value.items()}

    def _deserialize(self, value, attr, data, **kwargs):
        if not isinstance(value, dict):
            raise ValidationError("A substitution is encoded as an object")
        return {Term.variable(k): Term.decode(v) for k, v in value.items()}


CompactSubstitution = marshmallow_dataclass.NewType(
    "CompactSubstitution", dict, field=SubstitutionField
)


def _unique(items: typing.Iterable) -> typing.List:
    return list(dict.fromkeys(items))


def variables_of(atoms: typing.Iterable[Atom]) -> typing.List[Term]:
    return _unique(t for atom in atoms for t in atom.args if t.is_variable)


def terms_of(atoms: typing.Iterable[Atom]) -> typing.List[Term]:
    return _unique(t for atom in atoms for t in atom.args)


class VariableSupply:
    """Hands out variables whose names are not already taken"""

    def __init__(self, prefix: str = "Z", taken: typing.Iterable[str] = ()):
        self.prefix = prefix
        self._taken = set(taken)
        self._counter = itertools.count()

    def reserve(self, names: typing.Iterable[str]):
        self._taken.update(names)

    def fresh(self) -> Term:
        while True:
            name = f"{self.prefix}{next(self._counter)}"
            if name not in self._taken:
                self._taken.add(name)
                return Term.variable(name)


class Unifier:
    """Union-find over terms where constants and nulls are rigid

    Two distinct rigid terms never end up in one class. A class containing a
    rigid term is represented by it; otherwise by the root of the first
    argument given to union.
    """

    def __init__(self):
        self._parent: typing.Dict[Term, Term] = {}

    def find(self, term: Term) -> Term:
        root = term
        while self._parent.get(root, root) != root:
            root = self._parent[root]
        while term != root:
            parent = self._parent[term]
            self._parent[term] = root
            term = parent
        return root

    def union(self, first: Term, second: Term) -> bool:
        self._parent.setdefault(first, first)
        self._parent.setdefault(second, second)
        a, b = self.find(first), self.find(second)
        if a == b:
            return True
        if not a.is_variable and not b.is_variable:
            return False
        if not b.is_variable:
            self._parent[a] = b
        else:
            self._parent[b] = a
        return True

    def unify(self, first: typing.Sequence[Term], second: typing.Sequence[Term]) -> bool:
        if len(first) != len(second):
            return False
        return all(self.union(a, b) for a, b in zip(first, second))

    def terms(self) -> typing.List[Term]:
        return list(self._parent)

    def substitution(self, terms: typing.Iterable[Term]) -> Substitution:
        return {t: self.find(t) for t in terms if t.is_variable}

    def classes(self) -> typing.Dict[Term, typing.List[Term]]:
        grouped: typing.Dict[Term, typing.List[Term]] = {}
        for term in list(self._parent):
            grouped.setdefault(self.find(term), []).append(term)
        return grouped


###############################################################################
# Schemas (signatures)


class PredicateRole(enum.Enum):
    BASE = "base"
    VIEW = "view"
    IDB = "idb"


@marshmallow_dataclass.dataclass
class Predicate(SchemaBase):
    name: str = dataclasses.field(metadata={"validate": validate.Length(min=1)})
    arity: int = dataclasses.field(metadata={"validate": validate.Range(min=0)})
    role: PredicateRole = dataclasses.field(
        default=PredicateRole.BASE, metadata={"by_value": True}
    )


@marshmallow_dataclass.dataclass
class Signature(SchemaBase):
    """Declared predicates with their arities and BASE / VIEW / IDB tags"""

    predicates: typing.List[Predicate] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(set(names)) != len(names):
            raise ValidationError("Duplicate predicate name in signature")
        self._by_name = {p.name: p for p in self.predicates}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self):
        return len(self.predicates)

    def get(self, name: str) -> typing.Optional[Predicate]:
        return self._by_name.get(name)

    def arity(self, name: str) -> typing.Optional[int]:
        predicate = self._by_name.get(name)
        return None if predicate is None else predicate.arity

    def role(self, name: str) -> typing.Optional[PredicateRole]:
        predicate = self._by_name.get(name)
        return None if predicate is None else predicate.role

    def names(self, role: typing.Optional[PredicateRole] = None) -> typing.List[str]:
        return [p.name for p in self.predicates if role is None or p.role is role]

    def declare(
        self, name: str, arity: int, role: PredicateRole = PredicateRole.BASE
    ) -> Predicate:
        existing = self._by_name.get(name)
        if existing is not None:
            if existing.arity != arity:
                raise ViewdetError(
                    ErrorCode.ARITY_MISMATCH,
                    f"{name} is declared with arity {existing.arity}, not {arity}",
                    predicate=name,
                )
            return existing
        predicate = Predicate(name=name, arity=arity, role=role)
        self.predicates.append(predicate)
        self._by_name[name] = predicate
        return predicate

    def declare_atoms(
        self, atoms: typing.Iterable[Atom], role: PredicateRole = PredicateRole.BASE
    ):
        for atom in atoms:
            self.declare(atom.predicate, atom.arity, role)

    def check_atom(self, atom: Atom):
        expected = self.arity(atom.predicate)
        if expected is not None and expected != atom.arity:
            raise ViewdetError(
                ErrorCode.ARITY_MISMATCH,
                f"{atom!r} has {atom.arity} arguments but {atom.predicate} "
                f"has arity {expected}",
                predicate=atom.predicate,
            )

    def merged(self, other: "Signature") -> "Signature":
        result = Signature(predicates=[dataclasses.replace(p) for p in self.predicates])
        for p in other.predicates:
            result.declare(p.name, p.arity, p.role)
        return result


###############################################################################
# Instances


class FactIndex:
    """Insertion-ordered fact store indexed by predicate and by argument"""

    def __init__(self, facts: typing.Iterable[Atom] = ()):
        self._facts: typing.List[Atom] = []
        self._seen: typing.Set[Atom] = set()
        self._by_predicate: typing.Dict[str, typing.List[Atom]] = {}
        self._by_position: typing.Dict[typing.Tuple, typing.List[Atom]] = {}
        self._arity: typing.Dict[str, int] = {}
        for fact in facts:
            self.add(fact)

    def add(self, fact: Atom) -> bool:
        """Add a fact, returning False when it was already present"""
        if fact in self._seen:
            return False
        known = self._arity.setdefault(fact.predicate, fact.arity)
        if known != fact.arity:
            raise ViewdetError(
                ErrorCode.ARITY_MISMATCH,
                f"{fact!r} disagrees with earlier {fact.predicate} facts of "
                f"arity {known}",
                predicate=fact.predicate,
            )
        self._seen.add(fact)
        self._facts.append(fact)
        self._by_predicate.setdefault(fact.predicate, []).append(fact)
        for position, term in enumerate(fact.args):
            self._by_position.setdefault((fact.predicate, position, term), []).append(
                fact
            )
        return True

    def __contains__(self, fact: Atom) -> bool:
        return fact in self._seen

    def __iter__(self):
        return iter(self._facts)

    def __len__(self):
        return len(self._facts)

    def facts(self) -> typing.List[Atom]:
        return list(self._facts)

    def arity(self, predicate: str) -> typing.Optional[int]:
        return self._arity.get(predicate)

    def with_predicate(self, predicate: str) -> typing.Sequence[Atom]:
        return self._by_predicate.get(predicate, ())

    def candidates(self, atom: Atom, binding: Substitution) -> typing.Sequence[Atom]:
        """Facts that may match atom under binding, smallest index first"""
        best = self._by_predicate.get(atom.predicate, ())
        for position, term in enumerate(atom.args):
            value = binding.get(term) if term.is_variable else term
            if value is None:
                continue
            bucket = self._by_position.get((atom.predicate, position, value), ())
            if len(bucket) < len(best):
                best = bucket
                if not best:
                    break
        return best


@marshmallow_dataclass.dataclass
class Instance(SchemaBase):
    """A finite set of ground facts, kept in insertion order"""

    facts: typing.List[CompactAtom] = dataclasses.field(default_factory=list)
    signature: typing.Optional[Signature] = None

    def __post_init__(self):
        index = FactIndex()
        for fact in self.facts:
            if not fact.is_ground:
                raise ValidationError(f"Instance facts must be ground, got {fact!r}")
            if self.signature is not None:
                self.signature.check_atom(fact)
            index.add(fact)
        self._index = index
        self.facts = index.facts()

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return False
        return set(self.facts) == set(other.facts)

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __contains__(self, fact: Atom) -> bool:
        return fact in self._index

    def __str__(self):
        return "{" + ", ".join(str(f) for f in self.facts) + "}"

    @property
    def index(self) -> FactIndex:
        return self._index

    def adom(self) -> typing.List[Term]:
        return terms_of(self.facts)

    def predicates(self) -> typing.List[str]:
        return _unique(f.predicate for f in self.facts)

    def facts_of(self, predicate: str) -> typing.List[Atom]:
        return list(self._index.with_predicate(predicate))

    def nulls(self) -> typing.List[Term]:
        return [t for t in self.adom() if t.is_null]

    def with_facts(self, facts: typing.Iterable[Atom]) -> "Instance":
        return Instance(facts=self.facts + list(facts), signature=self.signature)

    def restricted(self, predicates: typing.Iterable[str]) -> "Instance":
        keep = set(predicates)
        return Instance(
            facts=[f for f in self.facts if f.predicate in keep],
            signature=self.signature,
        )

    def issubset(self, other: "Instance") -> bool:
        return all(f in other for f in self.facts)

    def effective_signature(self) -> Signature:
        if self.signature is not None:
            return self.signature
        inferred = Signature()
        inferred.declare_atoms(self.facts)
        return inferred


###############################################################################
# Conjunctive queries and unions


@marshmallow_dataclass.dataclass
class ConjunctiveQuery(SchemaBase):
    head: typing.List[CompactTerm] = dataclasses.field(default_factory=list)
    body: typing.List[CompactAtom] = dataclasses.field(default_factory=list)
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.head = list(self.head)
        self.body = list(self.body)
        body_vars = set(variables_of(self.body))
        for term in self.head:
            if term.is_null:
                raise ValidationError("Query heads cannot contain labelled nulls")
            if term.is_variable and term not in body_vars:
                raise ViewdetError(
                    ErrorCode.UNSAFE_RULE,
                    f"Head variable {term} of {self.name or 'query'} does not "
                    "occur in the body",
                )

    def __str__(self):
        name = self.name or "Q"
        head = f"{name}({','.join(str(t) for t in self.head)})" if self.head else name
        body = ", ".join(str(a) for a in self.body) if self.body else "true"
        return f"{head} := {body}"

    @property
    def arity(self) -> int:
        return len(self.head)

    @property
    def is_boolean(self) -> bool:
        return not self.head

    def variables(self) -> typing.List[Term]:
        return _unique(
            [t for t in self.head if t.is_variable] + variables_of(self.body)
        )

    def head_variables(self) -> typing.List[Term]:
        return _unique(t for t in self.head if t.is_variable)

    def existential_variables(self) -> typing.List[Term]:
        answer = set(self.head)
        return [v for v in variables_of(self.body) if v not in answer]

    def constants(self) -> typing.List[Term]:
        return _unique(
            [t for t in self.head if t.is_constant]
            + [t for a in self.body for t in a.args if t.is_constant]
        )

    def predicates(self) -> typing.List[str]:
        return _unique(a.predicate for a in self.body)

    def substitute(self, substitution: typing.Mapping[Term, Term]) -> "ConjunctiveQuery":
        return ConjunctiveQuery(
            head=[substitution.get(t, t) for t in self.head],
            body=[a.substitute(substitution) for a in self.body],
            name=self.name,
        )


@marshmallow_dataclass.dataclass
class UnionQuery(SchemaBase):
    """A union of CQs with a common head arity

    The empty union (always false) needs its arity given explicitly; it
    arises as the result of rewritings that find no disjunct.
    """

    disjuncts: typing.List[ConjunctiveQuery] = dataclasses.field(default_factory=list)
    head_arity: typing.Optional[int] = dataclasses.field(
        default=None, metadata={"validate": validate.Range(min=0)}
    )
    name: typing.Optional[str] = None

    def __post_init__(self):
        self.disjuncts = list(self.disjuncts)
        arities = {d.arity for d in self.disjuncts}
        if len(arities) > 1:
            raise ViewdetError(
                ErrorCode.ARITY_MISMATCH,
                f"Disjuncts of {self.name or 'union'} have different head arities "
                f"{sorted(arities)}",
            )
        if arities:
            arity = arities.pop()
            if self.head_arity is not None and self.head_arity != arity:
                raise ViewdetError(
                    ErrorCode.ARITY_MISMATCH,
                    f"Union declared with arity {self.head_arity} has disjuncts of "
                    f"arity {arity}",
                )
            self.head_arity = arity
        elif self.head_arity is None:
            raise ValidationError("An empty union needs an explicit head arity")

    def __iter__(self):
        return iter(self.disjuncts)

    def __len__(self):
        return len(self.disjuncts)

    def __str__(self):
        if not self.disjuncts:
            return "false"
        return " | ".join(str(d) for d in self.disjuncts)

    @property
    def arity(self) -> int:
        return self.head_arity

    @property
    def is_boolean(self) -> bool:
        return self.head_arity == 0

    @classmethod
    def empty(cls, arity: int, name: typing.Optional[str] = None) -> "UnionQuery":
        return cls(disjuncts=[], head_arity=arity, name=name)

    def predicates(self) -> typing.List[str]:
        return _unique(p for d in self.disjuncts for p in d.predicates())


Query = typing.Union[ConjunctiveQuery, UnionQuery]


def as_union(query: Query) -> UnionQuery:
    if isinstance(query, UnionQuery):
        return query
    return UnionQuery(disjuncts=[query], name=query.name)


###############################################################################
# Homomorphisms


def _check_arities(atoms: typing.Sequence[Atom], target):
    signature = target.signature if isinstance(target, Instance) else None
    index = target.index if isinstance(target, Instance) else target
    for atom in atoms:
        expected = None
        if signature is not None:
            expected = signature.arity(atom.predicate)
        if expected is None:
            expected = index.arity(atom.predicate)
        if expected is not None and expected != atom.arity:
            raise ViewdetError(
                ErrorCode.ARITY_MISMATCH,
                f"Pattern atom {atom!r} disagrees with arity {expected} of "
                f"{atom.predicate}",
                predicate=atom.predicate,
            )


def match_atom(
    atom: Atom, fact: Atom, binding: Substitution
) -> typing.Optional[typing.List[Term]]:
    """Extend binding in place so atom maps onto fact

    Returns the newly bound variables, or None (leaving binding untouched) if
    the atom cannot be mapped onto the fact.
    """
    if atom.predicate != fact.predicate or atom.arity != fact.arity:
        return None
    added = []
    for term, value in zip(atom.args, fact.args):
        if term.is_variable:
            bound = binding.get(term)
            if bound is None:
                binding[term] = value
                added.append(term)
            elif bound != value:
                break
        elif term != value:
            break
    else:
        return added
    for var in added:
        del binding[var]
    return None


def _search(atoms, position, index, binding):
    if position == len(atoms):
        yield binding
        return
    atom = atoms[position]
    for fact in index.candidates(atom, binding):
        added = match_atom(atom, fact, binding)
        if added is None:
            continue
        yield from _search(atoms, position + 1, index, binding)
        for var in added:
            del binding[var]


def find_homomorphisms(
    pattern: typing.Iterable[Atom],
    target: typing.Union[Instance, FactIndex],
    seed: typing.Optional[typing.Mapping[Term, Term]] = None,
    limit: typing.Optional[int] = None,
) -> typing.Iterator[Substitution]:
    """Enumerate the extensions of seed mapping every pattern atom into target

    Backtracks over the atoms in pattern order; candidate facts come in
    insertion order, so the enumeration order is deterministic. Constants and
    nulls in the pattern only match themselves.
    """
    atoms = list(pattern)
    _check_arities(atoms, target)
    index = target.index if isinstance(target, Instance) else target
    results = (dict(h) for h in _search(atoms, 0, index, dict(seed or {})))
    if limit is not None:
        results = itertools.islice(results, limit)
    return results


def find_homomorphisms_through(
    pattern: typing.Sequence[Atom],
    target: typing.Union[Instance, FactIndex],
    fact: Atom,
) -> typing.Iterator[Substitution]:
    """Homomorphisms of pattern into target that use fact for some atom

    The same homomorphism may be produced once per atom mapped onto fact.
    """
    atoms = list(pattern)
    for position, atom in enumerate(atoms):
        seed: Substitution = {}
        if match_atom(atom, fact, seed) is None:
            continue
        rest = atoms[:position] + atoms[position + 1 :]
        yield from find_homomorphisms(rest, target, seed=seed)


def first_homomorphism(
    pattern: typing.Iterable[Atom],
    target: typing.Union[Instance, FactIndex],
    seed: typing.Optional[typing.Mapping[Term, Term]] = None,
) -> typing.Optional[Substitution]:
    return next(find_homomorphisms(pattern, target, seed=seed, limit=1), None)


def head_seed(
    head: typing.Sequence[Term], values: typing.Sequence[Term]
) -> typing.Optional[Substitution]:
    """Binding sending the head terms positionally to values, if consistent"""
    if len(head) != len(values):
        return None
    seed: Substitution = {}
    for term, value in zip(head, values):
        if term.is_variable:
            if seed.setdefault(term, value) != value:
                return None
        elif term != value:
            return None
    return seed


def eval_query(query: Query, instance: Instance) -> typing.Set[typing.Tuple[Term, ...]]:
    answers = set()
    for cq in as_union(query).disjuncts:
        for h in find_homomorphisms(cq.body, instance):
            answers.add(tuple(h.get(t, t) for t in cq.head))
    return answers


def holds(
    query: Query,
    instance: typing.Union[Instance, FactIndex],
    answer: typing.Sequence[Term] = (),
) -> bool:
    """Whether answer (empty for Boolean queries) is in the query's result"""
    for cq in as_union(query).disjuncts:
        seed = head_seed(cq.head, tuple(answer))
        if seed is not None and first_homomorphism(cq.body, instance, seed) is not None:
            return True
    return False


###############################################################################
# Canonical databases, containment and normal forms


def freeze(query: ConjunctiveQuery) -> typing.Tuple[Instance, Substitution]:
    """Canonical database of query together with the variable freezing map"""
    taken = {t.name for t in query.constants()}
    mapping: Substitution = {}
    for var in query.variables():
        name = f"c_{var.name}"
        while name in taken:
            name += "_"
        taken.add(name)
        mapping[var] = Term.constant(name)
    return Instance(facts=[a.substitute(mapping) for a in query.body]), mapping


def canondb(query: ConjunctiveQuery) -> Instance:
    return freeze(query)[0]


def frozen_head(query: ConjunctiveQuery, mapping: Substitution) -> typing.Tuple[Term, ...]:
    return tuple(mapping.get(t, t) for t in query.head)


def contains_ucq(contained: Query, container: Query) -> bool:
    """Classic UCQ containment: every disjunct is matched by some disjunct"""
    left, right = as_union(contained), as_union(container)
    if left.arity != right.arity:
        raise ViewdetError(
            ErrorCode.ARITY_MISMATCH,
            f"Cannot compare queries of arities {left.arity} and {right.arity}",
        )
    for disjunct in left.disjuncts:
        instance, mapping = freeze(disjunct)
        if not holds(right, instance, frozen_head(disjunct, mapping)):
            return False
    return True


def hom_equivalent(first: Query, second: Query) -> bool:
    return contains_ucq(first, second) and contains_ucq(second, first)


def normalize_cq(query: ConjunctiveQuery) -> ConjunctiveQuery:
    """Rename variables X0, X1, ... by first occurrence and drop repeated atoms"""
    mapping: Substitution = {}
    for var in query.variables():
        mapping[var] = Term.variable(f"X{len(mapping)}")
    body = _unique(a.substitute(mapping) for a in query.body)
    return ConjunctiveQuery(
        head=[mapping.get(t, t) for t in query.head], body=body, name=query.name
    )


def cq_key(query: ConjunctiveQuery) -> typing.Tuple:
    normal = normalize_cq(query)
    return (tuple(normal.head), tuple(normal.body))


def rename_apart(
    query: ConjunctiveQuery, supply: VariableSupply
) -> typing.Tuple[ConjunctiveQuery, Substitution]:
    mapping = {var: supply.fresh() for var in query.variables()}
    return query.substitute(mapping), mapping


def as_pattern(
    facts: typing.Iterable[Atom], rigid_constants: bool = False
) -> typing.Tuple[typing.List[Atom], Substitution]:
    """Turn facts into a pattern by replacing terms with variables"""
    mapping: Substitution = {}
    for term in terms_of(facts):
        if rigid_constants and term.is_constant:
            continue
        mapping[term] = Term.variable(f"T{len(mapping)}")
    return [f.substitute(mapping) for f in facts], mapping


def instance_homomorphism(
    source: Instance, target: Instance, rigid_constants: bool = False
) -> typing.Optional[Substitution]:
    """A homomorphism from source to target as a map on source terms"""
    pattern, mapping = as_pattern(source.facts, rigid_constants)
    h = first_homomorphism(pattern, target)
    if h is None:
        return None
    return {term: h[var] for term, var in mapping.items()}


def isomorphic(
    first: Instance, second: Instance, rigid_constants: bool = False
) -> bool:
    """Backtracking isomorphism test, meant for small instances"""
    if len(first) != len(second):
        return False
    count = collections.Counter
    if count(f.predicate for f in first) != count(f.predicate for f in second):
        return False
    if len(first.adom()) != len(second.adom()):
        return False
    pattern, _ = as_pattern(first.facts, rigid_constants)
    for h in find_homomorphisms(pattern, second):
        if len(set(h.values())) == len(h):
            return True
    return False
