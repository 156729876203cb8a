"""Text format for problems, instances and machine specs

    pred R/2.
    tgd R(X,Y) -> R(Y,Z).
    view V(X,Y) := R(X,Y) | S(X,Y).
    program P { Goal :- Reach(X,X). Reach(X,Y) :- R(X,Y). goal Goal. }
    query Q := program P.
    fact R(a,b).
    machine tm halt { ... }

Variables start with an uppercase letter or _, constants with a lowercase
letter or a digit (or are quoted), `#` starts a comment.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import re
import typing

from marshmallow.exceptions import ValidationError

from .chase import TGD
from .core import Atom, ConjunctiveQuery, Instance, Term, UnionQuery
from .corpus import (
    CASpec,
    CATransition,
    ForbiddenPair,
    Move,
    Orientation,
    TilingSpec,
    TMSpec,
    TMTransition,
)
from .datalog import DatalogProgram, DatalogRule
from .errors import ErrorCode, ViewdetError
from .mondet import MonDetProblem
from .views import ViewDefinition, ViewSet

logger = logging.getLogger(__name__)

MachineSpec = typing.Union[CASpec, TilingSpec, TMSpec]

###############################################################################
# Lexer


@dataclasses.dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int
    column: int

    def __str__(self):
        return self.value if self.kind != "EOF" else "end of file"


_TOKEN_RE = re.compile(
    r"""
    (?P<COMMENT>\#[^\n]*)
  | (?P<NEWLINE>\n)
  | (?P<SPACE>[ \t\r]+)
  | (?P<NULL>_:n\d+)
  | (?P<ARROW>->)
  | (?P<IF>:-)
  | (?P<DEFINE>:=)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<INT>\d+(?![A-Za-z_]))
  | (?P<IDENT>[A-Za-z0-9_]+)
  | (?P<PUNCT>[(),./|{}])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> typing.List[Token]:
    tokens = []
    line, line_start, position = 1, 0, 0
    while position < len(text):
        found = _TOKEN_RE.match(text, position)
        column = position - line_start + 1
        if found is None:
            raise ViewdetError(
                ErrorCode.PARSE_ERROR,
                f"{line}:{column}: unexpected character {text[position]!r}",
                line=line,
                column=column,
                expected="a token",
            )
        kind = found.lastgroup
        if kind == "NEWLINE":
            line += 1
            line_start = found.end()
        elif kind not in ("COMMENT", "SPACE"):
            tokens.append(Token(kind, found.group(), line, column))
        position = found.end()
    tokens.append(Token("EOF", "", line, position - line_start + 1))
    return tokens


###############################################################################
# Parsed files


@dataclasses.dataclass
class ProblemFile:
    """Everything one file declares, in file order"""

    predicates: typing.Dict[str, int] = dataclasses.field(default_factory=dict)
    rules: typing.List[TGD] = dataclasses.field(default_factory=list)
    programs: typing.Dict[str, DatalogProgram] = dataclasses.field(default_factory=dict)
    views: typing.List[ViewDefinition] = dataclasses.field(default_factory=list)
    queries: typing.List[ViewDefinition] = dataclasses.field(default_factory=list)
    facts: typing.List[Atom] = dataclasses.field(default_factory=list)
    machines: typing.List[MachineSpec] = dataclasses.field(default_factory=list)
    # statement key ("view:V", "tgd:0", ...) -> (line, column)
    positions: typing.Dict[str, typing.Tuple[int, int]] = dataclasses.field(
        default_factory=dict
    )
    source: str = "<string>"

    def instance(self) -> Instance:
        return Instance(facts=self.facts)

    def view_set(self) -> ViewSet:
        return ViewSet(views=self.views)

    def query(self) -> ViewDefinition:
        if len(self.queries) != 1:
            raise ValidationError(
                f"{self.source} declares {len(self.queries)} queries, expected one"
            )
        return self.queries[0]

    def problem(self) -> MonDetProblem:
        query = self.query()
        return MonDetProblem(
            views=self.view_set(),
            rules=self.rules,
            query=query.query,
            program=query.program,
            name=query.name,
        )

    def machine(self) -> MachineSpec:
        if len(self.machines) != 1:
            raise ValidationError(
                f"{self.source} declares {len(self.machines)} machines, expected one"
            )
        return self.machines[0]


###############################################################################
# Parser


class Parser:
    """Recursive descent over the token list with one token of lookahead"""

    def __init__(self, text: str, source: str = "<string>"):
        self.tokens = tokenize(text)
        self.index = 0
        self.result = ProblemFile(source=source)
        self.source = source
        # predicate -> (arity, first token using it)
        self.used: typing.Dict[str, typing.Tuple[int, Token]] = {}
        self.intensional: typing.Set[str] = set()

    @property
    def nt(self) -> Token:
        return self.tokens[self.index]

    def peek(self, kind: str, value: typing.Optional[str] = None, offset: int = 0) -> bool:
        token = self.tokens[min(self.index + offset, len(self.tokens) - 1)]
        return token.kind == kind and (value is None or token.value == value)

    def peek_kw(self, value: str) -> bool:
        return self.peek("IDENT", value)

    def advance(self) -> Token:
        token = self.nt
        if token.kind != "EOF":
            self.index += 1
        return token

    def error(self, token: Token, expected: str, code: ErrorCode = ErrorCode.PARSE_ERROR):
        raise ViewdetError(
            code,
            f"{self.source}:{token.line}:{token.column}: expected {expected}, "
            f"encountered {token or 'end of file'} instead",
            line=token.line,
            column=token.column,
            expected=expected,
        )

    def match(self, kind: str, value: typing.Optional[str] = None) -> Token:
        if not self.peek(kind, value):
            self.error(self.nt, value or kind.lower())
        return self.advance()

    def match_kw(self, value: str) -> Token:
        return self.match("IDENT", value)

    def match_punct(self, value: str) -> Token:
        return self.match("PUNCT", value)

    ##########################################################################
    # Terms and atoms

    def parse_term(self) -> Term:
        token = self.nt
        if token.kind == "IDENT":
            self.advance()
            if token.value[0].isupper() or token.value[0] == "_":
                return Term.variable(token.value)
            return Term.constant(token.value)
        if token.kind == "INT":
            self.advance()
            return Term.constant(token.value)
        if token.kind == "STRING":
            self.advance()
            return Term.constant(json.loads(token.value))
        if token.kind == "NULL":
            self.advance()
            return Term.decode(token.value)
        self.error(token, "a term")

    def parse_atom(self) -> Atom:
        token = self.match("IDENT")
        args = []
        if self.peek("PUNCT", "("):
            self.advance()
            if not self.peek("PUNCT", ")"):
                args.append(self.parse_term())
                while self.peek("PUNCT", ","):
                    self.advance()
                    args.append(self.parse_term())
            self.match_punct(")")
        atom = Atom(token.value, tuple(args))
        self.note_use(atom, token)
        return atom

    def note_use(self, atom: Atom, token: Token):
        declared = self.result.predicates.get(atom.predicate)
        known = self.used.get(atom.predicate)
        expected = declared if declared is not None else (known[0] if known else None)
        if expected is not None and expected != atom.arity:
            raise ViewdetError(
                ErrorCode.ARITY_MISMATCH,
                f"{self.source}:{token.line}:{token.column}: {atom.predicate} has "
                f"arity {expected}, used with {atom.arity} arguments",
                line=token.line,
                column=token.column,
                predicate=atom.predicate,
            )
        self.used.setdefault(atom.predicate, (atom.arity, token))

    def parse_atoms(self) -> typing.List[Atom]:
        atoms = [self.parse_atom()]
        while self.peek("PUNCT", ","):
            self.advance()
            atoms.append(self.parse_atom())
        return atoms

    def parse_body(self) -> typing.List[Atom]:
        if self.peek_kw("true") and not self.peek("PUNCT", "(", offset=1):
            self.advance()
            return []
        return self.parse_atoms()

    def parse_head_variables(self) -> typing.List[Term]:
        terms = []
        if self.peek("PUNCT", "("):
            self.advance()
            if not self.peek("PUNCT", ")"):
                terms.append(self.parse_term())
                while self.peek("PUNCT", ","):
                    self.advance()
                    terms.append(self.parse_term())
            self.match_punct(")")
        return terms

    ##########################################################################
    # Statements

    def parse_file(self) -> ProblemFile:
        while not self.peek("EOF"):
            self.parse_statement()
        self.check_declared()
        return self.result

    def parse_statement(self):
        token = self.nt
        key = token.value if token.kind == "IDENT" else None
        handler = {
            "pred": self.parse_pred,
            "tgd": self.parse_tgd,
            "view": self.parse_view,
            "query": self.parse_query,
            "program": self.parse_program,
            "fact": self.parse_fact,
            "machine": self.parse_machine,
        }.get(key)
        if handler is None:
            self.error(token, "pred, tgd, view, query, program, fact or machine")
        handler()

    def remember(self, key: str, token: Token):
        self.result.positions.setdefault(key, (token.line, token.column))

    def parse_pred(self):
        self.match_kw("pred")
        name = self.match("IDENT")
        self.match_punct("/")
        arity = int(self.match("INT").value)
        self.match_punct(".")
        known = self.used.get(name.value)
        declared = self.result.predicates.get(name.value)
        for expected in (declared, known[0] if known else None):
            if expected is not None and expected != arity:
                raise ViewdetError(
                    ErrorCode.ARITY_MISMATCH,
                    f"{self.source}:{name.line}:{name.column}: {name.value} declared "
                    f"with arity {arity} after arity {expected}",
                    line=name.line,
                    column=name.column,
                    predicate=name.value,
                )
        self.result.predicates[name.value] = arity
        self.remember(f"pred:{name.value}", name)

    def parse_tgd(self):
        token = self.match_kw("tgd")
        body = self.parse_body()
        self.match("ARROW")
        head = self.parse_atoms()
        self.match_punct(".")
        self.remember(f"tgd:{len(self.result.rules)}", token)
        self.result.rules.append(TGD(body=body, head=head))

    def parse_definition(self, keyword: str) -> ViewDefinition:
        self.match_kw(keyword)
        name = self.match("IDENT")
        head = self.parse_head_variables()
        self.match("DEFINE")
        if self.peek_kw("program") and self.peek("IDENT", offset=1) and self.peek(
            "PUNCT", ".", offset=2
        ):
            self.advance()
            program_name = self.match("IDENT")
            self.match_punct(".")
            program = self.result.programs.get(program_name.value)
            if program is None:
                self.error(program_name, "the name of a program declared above")
            self.remember(f"{keyword}:{name.value}", name)
            return ViewDefinition(name=name.value, program=program)
        bodies = [self.parse_body()]
        while self.peek("PUNCT", "|"):
            self.advance()
            bodies.append(self.parse_body())
        self.match_punct(".")
        self.remember(f"{keyword}:{name.value}", name)
        disjuncts = [ConjunctiveQuery(head=head, body=b, name=name.value) for b in bodies]
        return ViewDefinition(
            name=name.value,
            query=UnionQuery(disjuncts=disjuncts, head_arity=len(head), name=name.value),
        )

    def parse_view(self):
        view = self.parse_definition("view")
        self.intensional.add(view.name)
        self.result.views.append(view)

    def parse_query(self):
        self.result.queries.append(self.parse_definition("query"))

    def parse_program(self):
        self.match_kw("program")
        name = self.match("IDENT")
        self.match_punct("{")
        rules, goal = [], None
        while not self.peek("PUNCT", "}"):
            if self.peek_kw("goal") and self.peek("IDENT", offset=1):
                self.advance()
                goal = self.match("IDENT").value
                self.match_punct(".")
                continue
            head = self.parse_atom()
            body = []
            if self.peek("IF"):
                self.advance()
                body = self.parse_atoms()
            self.match_punct(".")
            rules.append(DatalogRule(head=head, body=body))
        self.match_punct("}")
        if goal is None:
            self.error(self.tokens[self.index - 1], f"a goal statement in program {name.value}")
        self.intensional.update(r.head.predicate for r in rules)
        self.intensional.add(goal)
        self.remember(f"program:{name.value}", name)
        self.result.programs[name.value] = DatalogProgram(
            rules=rules, goal=goal, name=name.value
        )

    def parse_fact(self):
        token = self.match_kw("fact")
        atom = self.parse_atom()
        self.match_punct(".")
        if any(t.is_variable for t in atom.args):
            self.error(token, "a fact without variables")
        self.result.facts.append(atom)

    def check_declared(self):
        if not self.result.predicates:
            return
        for predicate, (_, token) in self.used.items():
            if predicate in self.result.predicates or predicate in self.intensional:
                continue
            raise ViewdetError(
                ErrorCode.UNDECLARED_PREDICATE,
                f"{self.source}:{token.line}:{token.column}: predicate {predicate} "
                "is not declared",
                line=token.line,
                column=token.column,
                predicate=predicate,
            )

    ##########################################################################
    # Machine blocks

    def parse_machine(self):
        token = self.match_kw("machine")
        kind = self.match("IDENT")
        name = None
        if self.peek("IDENT"):
            name = self.advance().value
        self.match_punct("{")
        parsers = {
            "ca": self.parse_ca_block,
            "tiling": self.parse_tiling_block,
            "tm": self.parse_tm_block,
        }
        if kind.value not in parsers:
            self.error(kind, "ca, tiling or tm")
        try:
            spec = parsers[kind.value](name)
        except ViewdetError:
            raise
        except ValidationError as error:
            raise ViewdetError(
                ErrorCode.PARSE_ERROR,
                f"{self.source}:{token.line}:{token.column}: invalid {kind.value} "
                f"machine: {error.messages}",
                line=token.line,
                column=token.column,
                expected=f"a valid {kind.value} machine",
            ) from error
        self.match_punct("}")
        self.remember(f"machine:{len(self.result.machines)}", token)
        self.result.machines.append(spec)

    def parse_name(self) -> str:
        if self.peek("INT"):
            return self.advance().value
        return self.match("IDENT").value

    def parse_names(self) -> typing.List[str]:
        names = [self.parse_name()]
        while self.peek("PUNCT", ","):
            self.advance()
            names.append(self.parse_name())
        return names

    def parse_ca_state(self) -> int:
        token = self.nt
        if token.kind == "IDENT" and re.fullmatch(r"T\d+", token.value):
            self.advance()
            return int(token.value[1:])
        if token.kind == "INT":
            self.advance()
            return int(token.value)
        self.error(token, "a cell state such as T0")

    def parse_ca_block(self, name) -> CASpec:
        states, target, transitions = None, None, []
        while not self.peek("PUNCT", "}"):
            if self.peek_kw("states"):
                self.advance()
                states = int(self.match("INT").value)
            elif self.peek_kw("target"):
                self.advance()
                target = self.parse_ca_state()
            elif self.peek_kw("rule"):
                self.advance()
                neighbourhood = []
                while not self.peek("ARROW"):
                    neighbourhood.append(self.parse_ca_state())
                self.match("ARROW")
                result = self.parse_ca_state()
                transitions.append(CATransition(neighbourhood=neighbourhood, result=result))
            else:
                self.error(self.nt, "states, target or rule")
            self.match_punct(".")
        if states is None or target is None:
            self.error(self.nt, "states and target statements")
        return CASpec(states=states, target=target, transitions=transitions, name=name)

    def parse_tiling_block(self, name) -> TilingSpec:
        tiles, forbidden, initial = [], [], None
        while not self.peek("PUNCT", "}"):
            if self.peek_kw("tiles"):
                self.advance()
                tiles.extend(self.parse_names())
            elif self.peek_kw("forbid"):
                self.advance()
                first, second = self.parse_name(), self.parse_name()
                token = self.match("IDENT")
                try:
                    orientation = Orientation(token.value)
                except ValueError:
                    self.error(token, "horizontal or vertical")
                forbidden.append(ForbiddenPair(first=first, second=second, orientation=orientation))
            elif self.peek_kw("initial"):
                self.advance()
                initial = self.parse_name()
            else:
                self.error(self.nt, "tiles, forbid or initial")
            self.match_punct(".")
        return TilingSpec(tiles=tiles, forbidden=forbidden, initial=initial, name=name)

    def parse_tm_block(self, name) -> TMSpec:
        fields: typing.Dict[str, typing.Any] = {"alphabet": [], "states": [], "transitions": []}
        while not self.peek("PUNCT", "}"):
            token = self.match("IDENT")
            if token.value in ("alphabet", "states"):
                fields[token.value].extend(self.parse_names())
            elif token.value in ("start", "end", "blank", "left", "right"):
                fields[token.value] = self.parse_name()
            elif token.value == "delta":
                state, read = self.parse_name(), self.parse_name()
                self.match("ARROW")
                following, write = self.parse_name(), self.parse_name()
                move = self.match("IDENT")
                try:
                    direction = Move(move.value)
                except ValueError:
                    self.error(move, "L, R or S")
                fields["transitions"].append(
                    TMTransition(state=state, read=read, next=following, write=write, move=direction)
                )
            else:
                self.error(token, "alphabet, states, start, end, blank, left, right or delta")
            self.match_punct(".")
        return TMSpec(name=name, **fields)


def parse(text: str, source: str = "<string>") -> ProblemFile:
    result = Parser(text, source).parse_file()
    logger.debug(
        "parsed %s: %d rules, %d views, %d queries, %d facts, %d machines",
        source,
        len(result.rules),
        len(result.views),
        len(result.queries),
        len(result.facts),
        len(result.machines),
    )
    return result


def parse_file(path: str) -> ProblemFile:
    with open(path, encoding="utf-8") as handle:
        return parse(handle.read(), source=path)


###############################################################################
# Printer

_VARIABLE_NAME = re.compile(r"[A-Z_][A-Za-z0-9_]*")
_CONSTANT_NAME = re.compile(r"[a-z][A-Za-z0-9_]*|\d+")


def format_term(term: Term) -> str:
    if term.is_variable:
        if not _VARIABLE_NAME.fullmatch(term.name):
            raise ValidationError(f"Variable {term.name!r} cannot be written")
        return term.name
    if term.is_null:
        return term.encode()
    if _CONSTANT_NAME.fullmatch(term.name):
        return term.name
    return json.dumps(term.name)


def format_atom(atom: Atom) -> str:
    if not atom.args:
        return atom.predicate
    return f"{atom.predicate}({','.join(format_term(t) for t in atom.args)})"


def format_atoms(atoms: typing.Sequence[Atom]) -> str:
    return ", ".join(format_atom(a) for a in atoms) if atoms else "true"


def format_tgd(rule: TGD) -> str:
    return f"tgd {format_atoms(rule.body)} -> {format_atoms(rule.head)}."


def _shared_head(query: UnionQuery) -> typing.Tuple[typing.List[Term], typing.List[typing.List[Atom]]]:
    """Disjunct bodies renamed onto the head variables of the first disjunct"""
    if not query.disjuncts:
        raise ValidationError(f"The empty union {query.name} cannot be written")
    head = query.disjuncts[0].head
    if any(not t.is_variable for t in head) or len(set(head)) != len(head):
        raise ValidationError(f"Heads of {query.name} must be distinct variables")
    bodies = []
    for disjunct in query.disjuncts:
        if any(not t.is_variable for t in disjunct.head) or len(set(disjunct.head)) != len(
            disjunct.head
        ):
            raise ValidationError(f"Heads of {query.name} must be distinct variables")
        mapping = dict(zip(disjunct.head, head))
        taken = set(head)
        for var in disjunct.existential_variables():
            name, counter = var.name, 0
            while Term.variable(name) in taken:
                counter += 1
                name = f"{var.name}_{counter}"
            mapping[var] = Term.variable(name)
            taken.add(Term.variable(name))
        bodies.append([a.substitute(mapping) for a in disjunct.body])
    return head, bodies


def format_definition(keyword: str, definition: ViewDefinition) -> str:
    if definition.program is not None:
        return f"{keyword} {definition.name} := program {definition.program.name}."
    head, bodies = _shared_head(definition.query)
    args = f"({','.join(format_term(t) for t in head)})" if head else ""
    return f"{keyword} {definition.name}{args} := {' | '.join(format_atoms(b) for b in bodies)}."


def format_program(name: str, program: DatalogProgram) -> str:
    lines = [f"program {name} {{"]
    for rule in program.rules:
        if rule.body:
            lines.append(f"  {format_atom(rule.head)} :- {format_atoms(rule.body)}.")
        else:
            lines.append(f"  {format_atom(rule.head)}.")
    lines.append(f"  goal {program.goal}.")
    lines.append("}")
    return "\n".join(lines)


def format_machine(spec: MachineSpec) -> str:
    name = f" {spec.name}" if spec.name else ""
    if isinstance(spec, CASpec):
        lines = [f"machine ca{name} {{", f"  states {spec.states}.", f"  target {spec.state(spec.target)}."]
        for t in spec.transitions:
            states = " ".join(spec.state(s) for s in t.neighbourhood)
            lines.append(f"  rule {states} -> {spec.state(t.result)}.")
    elif isinstance(spec, TilingSpec):
        lines = [f"machine tiling{name} {{", f"  tiles {', '.join(spec.tiles)}."]
        for p in spec.forbidden:
            lines.append(f"  forbid {p.first} {p.second} {p.orientation.value}.")
        if spec.initial is not None:
            lines.append(f"  initial {spec.initial}.")
    else:
        lines = [
            f"machine tm{name} {{",
            f"  alphabet {', '.join(spec.alphabet)}.",
            f"  states {', '.join(spec.states)}.",
            f"  start {spec.start}.",
            f"  end {spec.end}.",
            f"  blank {spec.blank}.",
            f"  left {spec.left}.",
            f"  right {spec.right}.",
        ]
        for t in spec.transitions:
            lines.append(f"  delta {t.state} {t.read} -> {t.next} {t.write} {t.move.value}.")
    lines.append("}")
    return "\n".join(lines)


def format_problem_file(problem_file: ProblemFile) -> str:
    blocks = [f"pred {p}/{n}." for p, n in problem_file.predicates.items()]
    blocks += [format_tgd(r) for r in problem_file.rules]
    blocks += [format_program(n, p) for n, p in problem_file.programs.items()]
    blocks += [format_definition("view", v) for v in problem_file.views]
    blocks += [format_definition("query", q) for q in problem_file.queries]
    blocks += [f"fact {format_atom(a)}." for a in problem_file.facts]
    blocks += [format_machine(m) for m in problem_file.machines]
    return "\n".join(blocks) + "\n"


def problem_to_file(problem: MonDetProblem, facts: typing.Sequence[Atom] = ()) -> ProblemFile:
    """A problem file declaring every predicate the problem uses"""
    programs = {}
    views = []
    for view in problem.views:
        if view.program is not None:
            name = view.program.name or f"{view.name}_program"
            programs[name] = dataclasses.replace(view.program, name=name)
            views.append(ViewDefinition(name=view.name, program=programs[name]))
        else:
            views.append(view)
    name = problem.name or "Q"
    if problem.program is not None:
        program_name = problem.program.name or f"{name}_program"
        programs[program_name] = dataclasses.replace(problem.program, name=program_name)
        query = ViewDefinition(name=name, program=programs[program_name])
    else:
        query = ViewDefinition(name=name, query=problem.query)
    predicates = {
        p.name: p.arity
        for p in problem.signature.predicates
        if p.name not in problem.views
    }
    for fact in facts:
        predicates.setdefault(fact.predicate, fact.arity)
    return ProblemFile(
        predicates=predicates,
        rules=list(problem.rules),
        programs=programs,
        views=views,
        queries=[query],
        facts=list(facts),
        source=name,
    )
