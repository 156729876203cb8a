"""Command line front end

    viewdet decide problem.mdp
    viewdet search problem.mdp --unfold-depth 2 --json
    viewdet gen tm halt.tm -o halt.mdp

Exit codes: 0 determined or success, 1 not determined, 2 unknown, 3 usage
or input error, 4 unsupported class.
"""
import argparse
import dataclasses
import json
import logging
import sys
import typing

from marshmallow.exceptions import ValidationError

from .chase import (
    ChaseConfig,
    TreeDecomposition,
    chase,
    classify_rules,
    emit_decomposition,
    single_bag_decomposition,
)
from .core import Atom, Instance, freeze
from .corpus import (
    CASpec,
    TilingMode,
    TilingSpec,
    TMSpec,
    gen_cellular,
    gen_tiling,
    gen_tm,
    simulate,
)
from .datalog import DatalogProgram, DatalogRule, classify_datalog
from .dsl import (
    ProblemFile,
    format_atom,
    format_problem_file,
    format_program,
    parse_file,
    problem_to_file,
)
from .errors import ErrorCode, ViewdetError
from .mondet import (
    MonDetProblem,
    SearchBudgets,
    Verdict,
    VerdictKind,
    brute_force_mondet,
    decide_full,
    decide_linear_cq,
    search_counterexample,
)
from .rewrite import (
    RewritingStatus,
    backward_rewrite_ucq,
    check_rewriting,
    inverse_rules,
    view_image_rewriting,
)
from .treecode import (
    TreeAutomaton,
    TreeCode,
    approx_automaton,
    backward_map,
    decode,
    encode,
    run_automaton,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_DETERMINED = 1
EXIT_UNKNOWN = 2
EXIT_USAGE = 3
EXIT_UNSUPPORTED = 4

_VERDICT_EXIT = {
    VerdictKind.DETERMINED: EXIT_OK,
    VerdictKind.NOT_DETERMINED: EXIT_NOT_DETERMINED,
    VerdictKind.UNKNOWN: EXIT_UNKNOWN,
    VerdictKind.NO_SMALL_COUNTEREXAMPLE: EXIT_UNKNOWN,
}

# the problem is well formed but outside what the chosen procedure handles
_UNSUPPORTED = {
    ErrorCode.UNSUPPORTED_CLASS,
    ErrorCode.NON_CQ_VIEW,
    ErrorCode.NON_FULL_SIGMA,
    ErrorCode.NOT_FRONTIER_GUARDED,
    ErrorCode.DATALOG_VIEW_UNEXPANDABLE,
}

# budget errors end a run without an answer
_BUDGET = {ErrorCode.SATURATION_BUDGET, ErrorCode.FANOUT_LIMIT}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


###############################################################################
# Output helpers


def _emit(args, text: str = "", document=None):
    """Print text, or the JSON document when --json is given"""
    if args.json and document is not None:
        text = json.dumps(document, sort_keys=True, indent=2)
    out = getattr(args, "output", None)
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text.rstrip("\n") + "\n")
        logger.info("wrote %s", out)
    else:
        print(text.rstrip("\n"))


def _facts(instance: Instance) -> str:
    return "\n".join(f"fact {format_atom(f)}." for f in instance.facts)


def _describe_verdict(verdict: Verdict) -> str:
    lines = [f"{verdict.kind.value} ({verdict.method})"]
    counterexample = verdict.counterexample
    if counterexample is not None:
        lines.append(f"certification: {counterexample.certification.value}")
        if counterexample.answer:
            lines.append("answer: " + ", ".join(str(t) for t in counterexample.answer))
        if counterexample.approximation is not None:
            lines.append(f"approximation: {counterexample.approximation}")
        lines.append(f"first: {counterexample.first}")
        lines.append(f"second: {counterexample.second}")
    if verdict.report is not None:
        report = verdict.report
        lines.append(
            f"approximations: {report.approximations}, unsaturated chases: "
            f"{report.unsaturated_chases}, witnesses truncated: {report.backv_truncated}"
        )
    lines.extend(f"note: {n}" for n in verdict.notes)
    return "\n".join(lines)


def _load_json(path: str, schema_class):
    with open(path, encoding="utf-8") as handle:
        return schema_class.Schema().load(json.load(handle))


def _budgets(args) -> SearchBudgets:
    budgets = SearchBudgets()
    if args.budgets:
        budgets = _load_json(args.budgets, SearchBudgets)
    chase_changes = {
        name: value
        for name, value in (
            ("max_steps", args.chase_steps),
            ("max_new_nulls", args.max_nulls),
        )
        if value is not None
    }
    changes: typing.Dict[str, typing.Any] = {}
    if chase_changes:
        changes["chase"] = dataclasses.replace(budgets.chase, **chase_changes)
    if args.disjunct_cap is not None:
        changes["rewrite"] = dataclasses.replace(
            budgets.rewrite, max_disjuncts=args.disjunct_cap
        )
    for name in ("unfold_depth", "max_leaves", "backv_limit", "fanout_cap"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    budgets = dataclasses.replace(budgets, **changes)
    budgets.validate()
    return budgets


def _query_program(problem: MonDetProblem) -> DatalogProgram:
    """The query as a Datalog program, UCQs by one goal rule per disjunct"""
    if problem.program is not None:
        return problem.program
    goal = "Goal"
    while goal in problem.signature:
        goal += "_"
    rules = [
        DatalogRule(head=Atom(goal, tuple(d.head)), body=list(d.body))
        for d in problem.query.disjuncts
    ]
    return DatalogProgram(rules=rules, goal=goal, name=problem.name)


###############################################################################
# Problem commands


def cmd_print(args) -> int:
    _emit(args, format_problem_file(parse_file(args.file)))
    return EXIT_OK


def cmd_classify(args) -> int:
    parsed = parse_file(args.file)
    rules = classify_rules(parsed.rules)
    document = {
        "rules": rules.dump(),
        "views": {v.name: v.kind.value for v in parsed.views},
    }
    lines = [
        f"rules: {', '.join(rules.labels()) or 'none of the classes'}",
    ]
    lines.extend(f"view {v.name}: {v.kind.value}" for v in parsed.views)
    if parsed.queries:
        query = parsed.query()
        if query.program is not None:
            datalog = classify_datalog(query.program)
            document["query"] = {"kind": "datalog", "classes": datalog.dump()}
            lines.append(f"query {query.name}: datalog ({', '.join(datalog.labels()) or 'plain'})")
        else:
            document["query"] = {"kind": query.kind.value}
            lines.append(f"query {query.name}: {query.kind.value}")
    _emit(args, "\n".join(lines), document)
    return EXIT_OK


def _chase_config(args) -> ChaseConfig:
    config = ChaseConfig()
    if args.chase_steps is not None:
        config = dataclasses.replace(config, max_steps=args.chase_steps)
    if args.max_nulls is not None:
        config = dataclasses.replace(config, max_new_nulls=args.max_nulls)
    return config


def cmd_chase(args) -> int:
    parsed = parse_file(args.file)
    result = chase(parsed.instance(), parsed.rules, _chase_config(args))
    if args.decomposition:
        result.decomposition = emit_decomposition(
            result, single_bag_decomposition(result.input_instance())
        )
    text = f"# {result.status.value} after {result.steps} steps\n{_facts(result.instance)}"
    _emit(args, text, result.dump())
    return EXIT_OK if result.saturated else EXIT_UNKNOWN


def cmd_eval(args) -> int:
    parsed = parse_file(args.file)
    problem = parsed.problem()
    instance = parsed.instance()
    complete = True
    if args.rules:
        result = chase(instance, parsed.rules, _chase_config(args))
        complete = result.saturated
        instance = result.instance
    answers = sorted(
        (a for a in problem.answers(instance) if not any(t.is_null for t in a)),
        key=lambda t: [x.sort_key() for x in t],
    )
    encoded = [[t.encode() for t in a] for a in answers]
    lines = ["(" + ", ".join(a) + ")" for a in encoded]
    if not complete:
        lines.insert(0, "# chase budget exhausted, answers may be missing")
    _emit(args, "\n".join(lines), {"answers": encoded, "complete": complete})
    return EXIT_OK if complete else EXIT_UNKNOWN


def cmd_rewrite(args) -> int:
    parsed = parse_file(args.file)
    problem = parsed.problem()
    budgets = _budgets(args)
    if args.mode == "backward":
        if problem.query is None:
            raise ViewdetError(
                ErrorCode.UNSUPPORTED_CLASS, "Backward rewriting needs a UCQ query"
            )
        rewriting = backward_rewrite_ucq(problem.query, problem.rules, budgets.rewrite)
        text, document = str(rewriting), rewriting.dump()
    elif args.mode == "views":
        if problem.query is None:
            raise ViewdetError(
                ErrorCode.UNSUPPORTED_CLASS, "View image rewriting needs a UCQ query"
            )
        found = view_image_rewriting(
            problem.query, problem.views, problem.rules, budgets.chase
        )
        if found.status is RewritingStatus.UNKNOWN:
            _emit(args, "UNKNOWN", found.dump())
            return EXIT_UNKNOWN
        rewriting = found.rewriting
        text, document = str(rewriting), found.dump()
    else:
        rewriting = inverse_rules(_query_program(problem), problem.views, problem.rules)
        text, document = format_program(rewriting.name, rewriting), rewriting.dump()

    if args.check:
        text, document = _check(args, parsed, problem, rewriting, text, document)
        if document["mismatches"]:
            _emit(args, text, document)
            return EXIT_NOT_DETERMINED
    _emit(args, text, document)
    return EXIT_OK


def _check(args, parsed: ProblemFile, problem: MonDetProblem, rewriting, text, document):
    """Compare the rewriting with the query on saturated instances"""
    seeds = [parsed.instance()] if parsed.facts else []
    if problem.query is not None:
        seeds.extend(freeze(d)[0] for d in problem.query.disjuncts)
    instances = []
    for seed in seeds:
        result = chase(seed, problem.rules, _budgets(args).chase)
        if result.saturated:
            instances.append(result.instance)
        else:
            logger.warning("skipping an instance whose chase did not saturate")
    query = problem.query if problem.query is not None else problem.program
    mismatches = check_rewriting(rewriting, query, problem.views, instances)
    document = {"rewriting": document, "checked": len(instances), "mismatches": mismatches}
    text += f"\n# checked on {len(instances)} instances, {len(mismatches)} mismatches"
    return text, document


def _decide(problem: MonDetProblem, budgets: SearchBudgets) -> Verdict:
    if problem.query is None or problem.views.has_datalog:
        raise ViewdetError(
            ErrorCode.UNSUPPORTED_CLASS,
            "decide needs a UCQ query and CQ or UCQ views; try search",
        )
    classification = classify_rules(problem.rules)
    if classification.full:
        return decide_full(problem, budgets)
    if classification.linear:
        return decide_linear_cq(problem, budgets)
    raise ViewdetError(
        ErrorCode.UNSUPPORTED_CLASS,
        "decide needs full or linear rules; try search",
        rule_index=classification.first_violation.get("linear"),
    )


def _verdict_command(args, run) -> int:
    problem = parse_file(args.file).problem()
    verdict = run(problem)
    logger.info("%s: %s", problem.name, verdict.kind.value)
    _emit(args, _describe_verdict(verdict), verdict.dump())
    return _VERDICT_EXIT[verdict.kind]


def cmd_decide(args) -> int:
    return _verdict_command(args, lambda p: _decide(p, _budgets(args)))


def cmd_search(args) -> int:
    return _verdict_command(args, lambda p: search_counterexample(p, _budgets(args)))


def cmd_brute(args) -> int:
    return _verdict_command(
        args, lambda p: brute_force_mondet(p, args.max_domain, args.max_facts)
    )


###############################################################################
# Machine commands


_MACHINES = {"ca": CASpec, "tiling": TilingSpec, "tm": TMSpec}


def _machine(path: str, kind: typing.Optional[str] = None):
    spec = parse_file(path).machine()
    if kind is not None and not isinstance(spec, _MACHINES[kind]):
        raise ValidationError(f"{path} does not hold a {kind} machine")
    return spec


def cmd_gen(args) -> int:
    spec = _machine(args.spec, args.kind)
    if args.kind == "ca":
        problem = gen_cellular(spec, mdl=args.mdl)
    elif args.kind == "tiling":
        problem = gen_tiling(spec, TilingMode(args.mode))
    else:
        problem = gen_tm(spec)
    logger.info(
        "generated %s: %d rules, %d views", problem.name, len(problem.rules), len(problem.views)
    )
    _emit(args, format_problem_file(problem_to_file(problem)), problem.dump())
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _machine(args.spec)
    report = simulate(spec, args.bound)
    document = report.dump()
    if isinstance(spec, CASpec):
        outcome = {True: "reachable", False: "unreachable", None: "undecided"}[report.reachable]
        text = f"target {spec.state(spec.target)} {outcome} ({report.proof})"
    elif isinstance(spec, TMSpec):
        text = (
            f"halts on tape length {report.witness_length}"
            if report.halts
            else f"no halting run up to tape length {args.bound}"
        )
    else:
        text = f"valid tilings up to size {report.valid_up_to} of {args.bound}"
    _emit(args, text, document)
    return EXIT_OK


###############################################################################
# Tree codes


def cmd_treecode(args) -> int:
    if args.action == "encode":
        instance = parse_file(args.input).instance()
        if args.decomposition:
            decomposition = _load_json(args.decomposition, TreeDecomposition)
        else:
            decomposition = single_bag_decomposition(instance)
        code = encode(instance, decomposition, args.branching, args.width)
        _emit(args, code.dumps(sort_keys=True, indent=2))
    elif args.action == "decode":
        instance = decode(_load_json(args.input, TreeCode))
        _emit(args, _facts(instance), instance.dump())
    elif args.action == "automaton":
        program = _query_program(parse_file(args.input).problem())
        automaton = approx_automaton(program)
        _emit(args, automaton.dumps(sort_keys=True, indent=2))
    elif args.action == "backmap":
        program = backward_map(_load_json(args.input, TreeAutomaton))
        name = program.name or "E"
        _emit(args, format_program(name, program), program.dump())
    else:
        automaton = _load_json(args.input, TreeAutomaton)
        code = _load_json(args.code, TreeCode)
        run = run_automaton(automaton, code)
        _emit(args, "accepted" if run.accepted else "rejected", run.dump())
        return EXIT_OK if run.accepted else EXIT_NOT_DETERMINED
    return EXIT_OK


###############################################################################
# Argument parsing


def _add_budget_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("budgets")
    group.add_argument("--budgets", help="JSON file with search budgets")
    group.add_argument("--chase-steps", type=int, help="chase step limit")
    group.add_argument("--max-nulls", type=int, help="limit on nulls per chase")
    group.add_argument("--unfold-depth", type=int, help="Datalog unfolding depth")
    group.add_argument("--max-leaves", type=int, help="leaf limit per approximation")
    group.add_argument("--backv-limit", type=int, help="witness choices per view image")
    group.add_argument("--disjunct-cap", type=int, help="rewriting disjunct cap")
    group.add_argument("--fanout-cap", type=int, help="witness choices decide may try")


def _add_chase_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--chase-steps", type=int, help="chase step limit")
    parser.add_argument("--max-nulls", type=int, help="limit on nulls per chase")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    common.add_argument("--json", action="store_true", help="print JSON documents")
    common.add_argument("-o", "--output", help="write to this file instead of stdout")

    parser = _ArgumentParser(
        prog="viewdet", description="Monotonic determinacy of queries over views"
    )
    commands = parser.add_subparsers(
        dest="command", required=True, parser_class=_ArgumentParser
    )

    sub = commands.add_parser("print", parents=[common], help="pretty-print a problem file")
    sub.add_argument("file")
    sub.set_defaults(run=cmd_print)

    sub = commands.add_parser("classify", parents=[common], help="classes of rules, views and query")
    sub.add_argument("file")
    sub.set_defaults(run=cmd_classify)

    sub = commands.add_parser("chase", parents=[common], help="chase the facts with the rules")
    sub.add_argument("file")
    _add_chase_flags(sub)
    sub.add_argument(
        "--decomposition", action="store_true", help="attach a tree decomposition"
    )
    sub.set_defaults(run=cmd_chase)

    sub = commands.add_parser("eval", parents=[common], help="evaluate the query on the facts")
    sub.add_argument("file")
    sub.add_argument("--rules", action="store_true", help="chase with the rules first")
    _add_chase_flags(sub)
    sub.set_defaults(run=cmd_eval)

    sub = commands.add_parser("rewrite", parents=[common], help="rewrite the query")
    sub.add_argument("file")
    sub.add_argument(
        "--mode",
        choices=["backward", "views", "inverse"],
        default="views",
        help="backward: under the rules; views: over the view image; "
        "inverse: Datalog by inverse rules",
    )
    sub.add_argument(
        "--check", action="store_true", help="compare with the query on saturated instances"
    )
    _add_budget_flags(sub)
    sub.set_defaults(run=cmd_rewrite)

    for name, run, text in (
        ("decide", cmd_decide, "exact decision for full or linear rules"),
        ("search", cmd_search, "bounded counterexample search"),
    ):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("file")
        _add_budget_flags(sub)
        sub.set_defaults(run=run)

    sub = commands.add_parser("brute", parents=[common], help="small-domain counterexample search")
    sub.add_argument("file")
    sub.add_argument("--max-domain", type=int, default=2)
    sub.add_argument("--max-facts", type=int, default=16)
    sub.set_defaults(run=cmd_brute)

    sub = commands.add_parser("gen", parents=[common], help="problem from a machine spec")
    sub.add_argument("kind", choices=sorted(_MACHINES))
    sub.add_argument("spec")
    sub.add_argument(
        "--mode", choices=[m.value for m in TilingMode], default=TilingMode.CQ.value
    )
    sub.add_argument("--mdl", action="store_true", help="monadic Datalog query (ca)")
    sub.set_defaults(run=cmd_gen)

    sub = commands.add_parser("simulate", parents=[common], help="run a machine spec directly")
    sub.add_argument("spec")
    sub.add_argument("--bound", type=int, default=8)
    sub.set_defaults(run=cmd_simulate)

    sub = commands.add_parser("treecode", parents=[common], help="tree codes and automata")
    sub.add_argument("action", choices=["encode", "decode", "automaton", "backmap", "run"])
    sub.add_argument("input")
    sub.add_argument("code", nargs="?", help="tree code JSON (run)")
    sub.add_argument("--decomposition", help="tree decomposition JSON (encode)")
    sub.add_argument("--branching", type=int, default=2)
    sub.add_argument("--width", type=int)
    sub.set_defaults(run=cmd_treecode)
    return parser


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "treecode" and args.action == "run" and not args.code:
        parser.error("treecode run needs an automaton and a code")
    try:
        return args.run(args)
    except ViewdetError as error:
        print(f"viewdet: {error}", file=sys.stderr)
        if error.code in _UNSUPPORTED:
            return EXIT_UNSUPPORTED
        return EXIT_UNKNOWN if error.code in _BUDGET else EXIT_USAGE
    except ValidationError as error:
        print(f"viewdet: {error.messages}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as error:
        print(f"viewdet: {error}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
