"""Command-line interface for dptool

Subcommands: validate, analyze, audit, simulate, score, sweep, learn.
Reports go to stdout (or --out), logs go to stderr.

Exit codes:
    0   success
    1   invalid problem, agent spec or precondition
    2   audit verdict is not well_defined
    3   value of information is zero (raw scores still printed)
    64  unreadable or ill-formed input file
    65  behavioral CSV schema violation
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from dptool import __version__
from dptool.audit import WELL_DEFINED_RULES, audit_problem, is_binary_prediction, multiplicity_check
from dptool.behavioral import (
    behavioral_score,
    bootstrap_decomposition,
    calibrated_score,
    decompose_losses,
    ingest_csv,
    per_condition_report,
    write_csv,
)
from dptool.config import configure_logging, get_settings
from dptool.errors import (
    DPToolError,
    InfeasibleDisclosure,
    InvalidAgentSpec,
    ParseError,
    ProblemFileError,
    UnknownLabel,
    ZeroValueOfInformation,
)
from dptool.normative import (
    action_regions,
    belief_cutpoints,
    benchmarks,
    is_proper,
    optimal_action_certain,
    optimal_action_under_risk,
    properize,
    reachable_optimal_actions,
)
from dptool.parallel import BatchProcessor
from dptool.problem import BoundRule, DecisionProblem, belief_grid, load_problem, validate_problem
from dptool.reporting import (
    RunManifest,
    render_audit,
    render_mapping,
    render_validation,
    start_manifest,
    to_json,
    use_color,
    write_json,
)
from dptool.simulation import (
    AgentSpec,
    LearningAgentState,
    agent_grid,
    build_policy,
    design_sweep,
    exact_metrics,
    mean_learning_curve,
    sample_dataset,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_WELL_DEFINED = 2
EXIT_ZERO_VALUE = 3
EXIT_FILE_ERROR = 64
EXIT_CSV_ERROR = 65


class InvalidProblem(Exception):
    def __init__(self, report):
        super().__init__("problem failed validation")
        self.report = report


# ===== HELPERS =====

def _load_valid(path: str) -> DecisionProblem:
    problem = load_problem(path)
    report = validate_problem(problem)
    if not report.valid:
        raise InvalidProblem(report)
    return problem


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProblemFileError(f"cannot read {path}: {e}") from e


def _load_agent(path: Optional[str]) -> AgentSpec:
    if path is None:
        return AgentSpec()
    try:
        return AgentSpec.model_validate(_read_json(path))
    except ValidationError as e:
        raise InvalidAgentSpec([f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()]) from e


def _load_grid(path: str) -> List[AgentSpec]:
    """A JSON list of agent specs, or {"axes": {field: [values, ...]}}."""
    data = _read_json(path)
    try:
        if isinstance(data, dict) and "axes" in data:
            return agent_grid(**data["axes"])
        if isinstance(data, list):
            return [AgentSpec.model_validate(item) for item in data]
    except ValidationError as e:
        raise InvalidAgentSpec([f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()]) from e
    raise InvalidAgentSpec(["grid file must be a list of agent specs or an object with 'axes'"])


def _emit(args, manifest: RunManifest, report: Any, text: Optional[str] = None) -> None:
    out = getattr(args, "out", None)
    if out and not str(out).endswith(".csv"):
        write_json(out, manifest, report)
    if text is not None and getattr(args, "format", "json") == "text":
        print(text)
    elif not out:
        print(to_json(manifest, report))


def _processor(args) -> BatchProcessor:
    return BatchProcessor(max_concurrent=max(1, args.parallel))


def _decision_table(problem: DecisionProblem, which: str) -> Optional[BoundRule]:
    """The rule as a table over decision actions, when it has one."""
    rule = problem.incentive_rule if which == "incentive" else problem.evaluation_rule
    if rule.form != "table":
        return None
    if rule.actions is not None:
        return BoundRule.from_table(rule.table, rule.actions, problem.states.states, rule.unit)
    if problem.actions.kind == "discrete":
        return problem.rule(which)
    return None


# ===== COMMANDS =====

def cmd_validate(args) -> int:
    problem = load_problem(args.problem)
    report = validate_problem(problem)
    manifest = start_manifest(args.argv, args.problem)
    _emit(args, manifest, report, render_validation(report, use_color(args.no_color)))
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_analyze(args) -> int:
    problem = _load_valid(args.problem)
    which = args.rule
    bench = benchmarks(problem, which)
    grid = belief_grid(len(problem.states), args.grid)
    report: Dict[str, Any] = {
        "problem": problem.name,
        "rule": which,
        "R_baseline": bench.R_baseline,
        "R": bench.R,
        "Delta": bench.Delta,
        "signal_optimal_actions": dict(zip(
            [problem.signals.signals[v] for v in np.flatnonzero(problem.joint.sum(axis=1) > 0)],
            reachable_optimal_actions(problem, which),
        )),
        "warnings": [],
    }

    table = _decision_table(problem, which)
    if table is not None:
        report["certainty_optimal_actions"] = {s: optimal_action_certain(table, s) for s in problem.states.states}
        if len(problem.states) == 2:
            report["cutpoints"] = [c.model_dump() for c in belief_cutpoints(table)]
            report["action_regions"] = action_regions(properize(table, grid))
    if problem.disclosure.prior_endowed:
        action, value = optimal_action_under_risk(problem, which)
        report["optimal_action_under_prior"] = {"action": action, "expected_score": value}

    properness = {}
    for name in ("incentive", "evaluation"):
        bound = problem.rule(name)
        if bound.is_belief_report:
            properness[name] = is_proper(bound).model_dump()
    if properness:
        report["properness"] = properness

    if bench.Delta <= 1e-12:
        constant = len(set(reachable_optimal_actions(problem, "incentive"))) == 1
        report["warnings"].append({
            "code": "DEGENERATE" if constant else "ZERO_VALUE_OF_INFORMATION",
            "message": "the signal cannot change the optimal action; losses cannot be normalized",
        })
    manifest = start_manifest(args.argv, args.problem)
    _emit(args, manifest, report, render_mapping(
        f"Benchmarks ({which} rule)", {"R_baseline": bench.R_baseline, "R": bench.R, "Delta": bench.Delta},
        use_color(args.no_color),
    ))
    return EXIT_OK


def cmd_audit(args) -> int:
    problem = _load_valid(args.problem)
    report = audit_problem(problem)
    multiplicity = None
    if is_binary_prediction(problem):
        try:
            multiplicity = multiplicity_check(problem)
        except InfeasibleDisclosure as e:
            logger.warning(e.message)
    body = {
        "audit": report.model_dump(mode="json"),
        "multiplicity": None if multiplicity is None else multiplicity.model_dump(mode="json"),
        "rule_table": [r.model_dump() for r in WELL_DEFINED_RULES],
    }
    manifest = start_manifest(args.argv, args.problem)
    _emit(args, manifest, body, render_audit(report, WELL_DEFINED_RULES, multiplicity, use_color(args.no_color)))
    return EXIT_OK if report.verdict == "well_defined" else EXIT_NOT_WELL_DEFINED


def cmd_simulate(args) -> int:
    problem = _load_valid(args.problem)
    agent = _load_agent(args.agent)
    policy = build_policy(problem, agent)
    manifest = start_manifest(args.argv, args.problem, args.seed)
    if args.exact:
        metrics = exact_metrics(problem, policy)
        report = {"agent": agent.params(), "policy": policy.rho, **metrics.model_dump()}
        _emit(args, manifest, report)
        return EXIT_OK
    ds = sample_dataset(problem, policy, args.trials, args.seed)
    write_csv(ds, args.out)
    logger.info(f"Wrote {len(ds)} simulated trials to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    problem = _load_valid(args.problem)
    ds = ingest_csv(args.data, problem)
    rule = problem.rule(args.rule)
    B = behavioral_score(ds, rule)
    C = calibrated_score(ds, alpha=args.alpha, which=args.rule)
    bench = benchmarks(problem, args.rule)
    report: Dict[str, Any] = {"n": len(ds), "B": B, "C": C, **bench.model_dump()}
    manifest = start_manifest(args.argv, args.problem, args.seed)
    processor = _processor(args)

    if args.by_condition:
        conditions = per_condition_report(ds, processor=processor, alpha=args.alpha, which=args.rule)
        report["conditions"] = {k: v.model_dump() for k, v in conditions.items()}
    if args.bootstrap:
        report["bootstrap"] = bootstrap_decomposition(
            ds, n_resamples=args.bootstrap, seed=args.seed, processor=processor, alpha=args.alpha, which=args.rule,
        ).model_dump()
    code = EXIT_OK
    if args.decompose:
        try:
            report["decomposition"] = decompose_losses(ds, alpha=args.alpha, which=args.rule).model_dump()
        except ZeroValueOfInformation as e:
            report["decomposition"] = None
            report["error"] = {"code": e.code, "message": e.message}
            code = EXIT_ZERO_VALUE
    _emit(args, manifest, report)
    return code


def cmd_sweep(args) -> int:
    problem = _load_valid(args.problem)
    grid = _load_grid(args.grid)
    table = design_sweep(problem, grid, mode=args.mode, n_trials=args.trials, seed=args.seed,
                         processor=_processor(args))
    manifest = start_manifest(args.argv, args.problem, args.seed)
    if args.out and str(args.out).endswith(".csv"):
        table.to_frame().to_csv(args.out, index=False, lineterminator="\n")
        logger.info(f"Wrote sweep table to {args.out}")
        return EXIT_OK
    _emit(args, manifest, table)
    return EXIT_OK


def cmd_learn(args) -> int:
    problem = _load_valid(args.problem)
    agent = _load_agent(args.agent)
    initial = LearningAgentState.uniform(problem, args.pseudo_count)
    curve = mean_learning_curve(problem, args.trials, args.seeds, args.seed, initial, agent, _processor(args))
    bench = benchmarks(problem, agent.rule)
    tail = curve[-min(len(curve), 50):] if len(curve) else curve
    report = {
        "R": bench.R,
        "R_baseline": bench.R_baseline,
        "n_seeds": args.seeds,
        "final_mean": float(tail.mean()) if len(tail) else None,
        "curve": curve.tolist(),
    }
    manifest = start_manifest(args.argv, args.problem, args.seed)
    _emit(args, manifest, report)
    return EXIT_OK


# ===== PARSER =====

def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="Logging level for stderr (default WARNING).")
    common.add_argument("--no-color", action="store_true", default=argparse.SUPPRESS, help="Disable ANSI colors.")
    common.add_argument("--parallel", type=int, default=argparse.SUPPRESS, help="Worker threads for batch work.")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Root random seed.")

    parser = argparse.ArgumentParser(prog="dptool", parents=[common],
                                     description="Design and audit decision-making experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.set_defaults(log_level=settings.log_level, no_color=settings.no_color,
                        parallel=settings.workers, seed=settings.seed)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="Check a problem spec for invariant violations.")
    p.add_argument("problem")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", parents=[common], help="Rational benchmarks and properization summary.")
    p.add_argument("problem")
    p.add_argument("--out")
    p.add_argument("--grid", type=int, default=None, help="Belief grid denominator.")
    p.add_argument("--rule", choices=["incentive", "evaluation"], default="evaluation")
    p.add_argument("--format", choices=["text", "json"], default="json")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("audit", parents=[common], help="Is the decision problem well defined for participants?")
    p.add_argument("problem")
    p.add_argument("--out")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("simulate", parents=[common], help="Simulate a lossy agent.")
    p.add_argument("problem")
    p.add_argument("--agent", help="AgentSpec JSON file (default: rational agent).")
    p.add_argument("--trials", type=int, default=1000)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--out", help="Write sampled trials to this CSV.")
    target.add_argument("--exact", action="store_true", help="Print exact scores instead of sampling.")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", parents=[common], help="Score behavioral data against the benchmarks.")
    p.add_argument("problem")
    p.add_argument("data")
    p.add_argument("--decompose", action="store_true")
    p.add_argument("--by-condition", action="store_true")
    p.add_argument("--bootstrap", type=int, default=0, metavar="K")
    p.add_argument("--alpha", type=float, nargs="?", const=settings.laplace_alpha, default=None,
                   help="Laplace smoothing for the calibrated score (bare flag uses DPTOOL_LAPLACE_ALPHA).")
    p.add_argument("--rule", choices=["incentive", "evaluation"], default="evaluation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", parents=[common], help="Design sweep over a grid of agents.")
    p.add_argument("problem")
    p.add_argument("--grid", required=True, help="JSON list of agent specs or {\"axes\": {...}}.")
    p.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out", help="Output path; .csv writes the table, anything else JSON.")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("learn", parents=[common], help="Learning curve of a feedback-driven agent.")
    p.add_argument("problem")
    p.add_argument("--agent")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--pseudo-count", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_learn)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["dptool", *argv]
    configure_logging(args.log_level)

    try:
        return args.func(args)
    except InvalidProblem as e:
        print(render_validation(e.report, use_color(args.no_color)))
        return EXIT_INVALID
    except ProblemFileError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_FILE_ERROR
    except (ParseError, UnknownLabel) as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_CSV_ERROR
    except InvalidAgentSpec as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_INVALID
    except DPToolError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FILE_ERROR
