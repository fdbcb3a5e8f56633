"""Experiment design audit for dptool

Decides whether a decision problem, as disclosed to participants, lets a
rational participant identify the optimal response:
- ordered well-definedness rule table and loss-source ledger
- multiplicity of data-generating models consistent with disclosure
- incentive vs evaluation rule consistency
- deception screens (ambiguous action effects, feedback contradictions)
"""

import logging
from itertools import combinations
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from dptool.errors import InfeasibleDisclosure, MultiplicityNotApplicable
from dptool.normative import (
    check_non_indifference,
    is_proper,
    reachable_optimal_actions,
    value_of_information,
)
from dptool.problem import (
    IDENTITY_TOL,
    INPUT_TOL,
    AggregateStat,
    DecisionProblem,
    _posterior_rows,
    belief_grid,
    belief_label,
    best_index,
    marginal_prior,
)

logger = logging.getLogger(__name__)

LOSS_SOURCES = ("prior", "receiver", "updating", "optimization")
CONTRADICTION_TOL = 1e-6


class AuditFinding(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    message: str
    severity: Literal["error", "warning", "info"] = "warning"
    details: Dict[str, Any] = {}


class LedgerEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    definable: bool
    reason: str


class WellDefinedRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: str
    outcome: Literal["well_defined", "ill_defined", "degenerate"]
    criterion: str


WELL_DEFINED_RULES: Tuple[WellDefinedRule, ...] = (
    WellDefinedRule(
        code="DEGENERATE", outcome="degenerate",
        criterion="the optimal action is the same for every reachable posterior and the signal has no value; "
                  "no source of loss can be conceived",
    ),
    WellDefinedRule(
        code="RULE_NOT_COMMUNICATED", outcome="ill_defined",
        criterion="participants are not told the scoring rule, so the utility-maximizing response is unknown to them",
    ),
    WellDefinedRule(
        code="POSTERIOR_REVEALED", outcome="well_defined",
        criterion="the signal gives the posterior probability of the state; provision of the prior is not necessary",
    ),
    WellDefinedRule(
        code="PRIOR_AND_LIKELIHOODS", outcome="well_defined",
        criterion="the prior and the likelihood of each signal are available, so Bayes rule yields the posterior",
    ),
    WellDefinedRule(
        code="FEEDBACK_LEARNABLE", outcome="well_defined",
        criterion="the realized state is shown after each trial, so the data-generating model is learnable in the limit",
    ),
    WellDefinedRule(
        code="INSUFFICIENT_INFORMATION", outcome="ill_defined",
        criterion="participants cannot obtain sufficient information from the data-generating model to identify "
                  "the optimal response",
    ),
)


class AuditReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    verdict: Literal["well_defined", "ill_defined", "degenerate"]
    sub_verdict: Optional[str] = None
    reasons: List[AuditFinding]
    loss_ledger: Dict[str, LedgerEntry]
    warnings: List[AuditFinding] = []
    notes: List[AuditFinding] = []


# ===== DISCLOSED-CONSTRAINT POLYTOPE =====

def is_binary_prediction(problem: DecisionProblem) -> bool:
    """Two states and two signals, signal i predicting state i."""
    return len(problem.states) == 2 and len(problem.signals) == 2


def disclosed_constraints(
    problem: DecisionProblem, stats: Optional[Sequence[AggregateStat]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Linear equalities on vec(π') (signal-major) implied by the disclosure."""
    if not is_binary_prediction(problem):
        raise MultiplicityNotApplicable("disclosure constraints are built for binary prediction problems only")
    disclosure = problem.disclosure
    stats = disclosure.aggregate_stats if stats is None else stats
    joint = problem.joint

    def var(v: int, t: int) -> int:
        return 2 * v + t

    rows: List[np.ndarray] = [np.ones(4)]
    rhs: List[float] = [1.0]

    def equation(coeffs: Dict[int, float], value: float = 0.0):
        row = np.zeros(4)
        for k, c in coeffs.items():
            row[k] += c
        rows.append(row)
        rhs.append(value)

    def ratio(num: Tuple[int, int], den: Sequence[Tuple[int, int]], value: float):
        coeffs = {var(*num): 1.0}
        for cell in den:
            coeffs[var(*cell)] = coeffs.get(var(*cell), 0.0) - value
        equation(coeffs)

    if disclosure.prior_endowed:
        prior = problem.endowed_prior.array if problem.endowed_prior is not None else marginal_prior(joint)
        equation({var(0, 1): 1.0, var(1, 1): 1.0}, float(prior[1]))
    if disclosure.likelihoods_disclosed:
        p = marginal_prior(joint)
        for t in range(2):
            if p[t] > 0:
                ratio((1, t), [(0, t), (1, t)], joint[1, t] / p[t])
    if disclosure.posterior_in_signal:
        mass, post = _posterior_rows(joint)
        for v in np.flatnonzero(mass > 0):
            ratio((int(v), 1), [(int(v), 0), (int(v), 1)], post[v, 1])

    for stat in stats:
        if stat.name == "unconditional_accuracy":
            equation({var(0, 0): 1.0, var(1, 1): 1.0}, stat.value)
        elif stat.name == "class_conditional_accuracy":
            t = problem.state_index(stat.conditioning)
            ratio((t, t), [(0, t), (1, t)], stat.value)
        elif stat.name == "confidence_conditional_on_prediction":
            v = problem.signal_index(stat.conditioning)
            ratio((v, v), [(v, 0), (v, 1)], stat.value)
    return np.array(rows), np.array(rhs)


def polytope_vertices(a_eq: np.ndarray, b_eq: np.ndarray, tol: float = 1e-10) -> List[np.ndarray]:
    """Vertices of {x >= 0 : a_eq x = b_eq} by enumerating basic supports."""
    n = a_eq.shape[1]
    found: List[np.ndarray] = []
    for size in range(1, n + 1):
        for support in combinations(range(n), size):
            cols = a_eq[:, list(support)]
            if np.linalg.matrix_rank(cols) < size:
                continue
            x_s, *_ = np.linalg.lstsq(cols, b_eq, rcond=None)
            if np.any(x_s < -tol) or np.abs(cols @ x_s - b_eq).max() > tol:
                continue
            x = np.zeros(n)
            x[list(support)] = np.clip(x_s, 0.0, None)
            if not any(np.allclose(x, y, atol=tol) for y in found):
                found.append(x)
    return found


def _stat_bounds(vertices: List[np.ndarray], fn) -> Optional[Tuple[float, float]]:
    values = [fn(x) for x in vertices]
    values = [v for v in values if v is not None]
    if not values:
        return None
    return min(values), max(values)


def _conditional(x: np.ndarray, num: int, den: Sequence[int]) -> Optional[float]:
    mass = sum(x[k] for k in den)
    return None if mass <= IDENTITY_TOL else float(x[num] / mass)


# ===== MULTIPLICITY =====

class SignalBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    signal: str
    lower: float
    upper: float
    lower_action: str
    upper_action: str
    action_flips: bool
    lower_witness: List[List[float]]
    upper_witness: List[List[float]]


class MultiplicityResult(BaseModel):
    """Bounds on π'(θ = second state | v) over joints consistent with disclosure."""

    model_config = ConfigDict(frozen=True)

    posterior_bounds: Dict[str, SignalBounds]
    action_flips: Dict[str, bool]
    witnesses: List[List[List[float]]]
    multiplicity: bool


def multiplicity_check(
    problem: DecisionProblem, disclosed_stats: Optional[Sequence[AggregateStat]] = None
) -> MultiplicityResult:
    a_eq, b_eq = disclosed_constraints(problem, disclosed_stats)
    vertices = polytope_vertices(a_eq, b_eq)
    if not vertices:
        raise InfeasibleDisclosure("no joint distribution satisfies the disclosed statistics")
    rule = problem.rule("incentive")

    bounds: Dict[str, SignalBounds] = {}
    for v, label in enumerate(problem.signals.signals):
        scored = [(q, x) for x in vertices if (q := _conditional(x, 2 * v + 1, [2 * v, 2 * v + 1])) is not None]
        if not scored:
            logger.warning(f"Signal {label} is unreachable under every consistent joint")
            continue
        low_q, low_x = min(scored, key=lambda item: item[0])
        high_q, high_x = max(scored, key=lambda item: item[0])
        low_a = rule.action_labels[best_index(rule.matrix @ np.array([1 - low_q, low_q]))]
        high_a = rule.action_labels[best_index(rule.matrix @ np.array([1 - high_q, high_q]))]
        for x in (low_x, high_x):
            residual = np.abs(a_eq @ x - b_eq).max()
            if residual > INPUT_TOL:
                logger.warning(f"Witness for {label} violates disclosed constraints by {residual:.3g}")
        bounds[label] = SignalBounds(
            signal=label,
            lower=low_q,
            upper=high_q,
            lower_action=low_a,
            upper_action=high_a,
            action_flips=low_a != high_a,
            lower_witness=low_x.reshape(2, 2).tolist(),
            upper_witness=high_x.reshape(2, 2).tolist(),
        )

    positive = problem.signals.signals[-1]
    witnesses = []
    if positive in bounds:
        witnesses = [bounds[positive].lower_witness, bounds[positive].upper_witness]
    result = MultiplicityResult(
        posterior_bounds=bounds,
        action_flips={label: b.action_flips for label, b in bounds.items()},
        witnesses=witnesses,
        multiplicity=any(b.upper - b.lower > INPUT_TOL for b in bounds.values()),
    )
    logger.info(f"Multiplicity check over {len(vertices)} vertices: multiplicity={result.multiplicity}")
    return result


def _pinned(problem: DecisionProblem, fns) -> bool:
    try:
        vertices = polytope_vertices(*disclosed_constraints(problem))
    except MultiplicityNotApplicable:
        return False
    if not vertices:
        return False
    for fn in fns:
        bounds = _stat_bounds(vertices, fn)
        if bounds is None or bounds[1] - bounds[0] > INPUT_TOL:
            return False
    return True


def prior_identified(problem: DecisionProblem) -> bool:
    """Whether participants can know the prior from what they are told."""
    if problem.disclosure.prior_endowed:
        return True
    return _pinned(problem, [lambda x: float(x[1] + x[3])])


def likelihoods_identified(problem: DecisionProblem) -> bool:
    """Whether participants can know Pr(v | θ) from what they are told."""
    if problem.disclosure.likelihoods_disclosed:
        return True
    return _pinned(problem, [lambda x: _conditional(x, 2, [0, 2]), lambda x: _conditional(x, 3, [1, 3])])


def posterior_revealed(problem: DecisionProblem) -> bool:
    disclosure = problem.disclosure
    if disclosure.posterior_in_signal:
        return True
    mass = problem.joint.sum(axis=1)
    reachable = {problem.signals.signals[v] for v in np.flatnonzero(mass > 0)}
    covered = {s.conditioning for s in disclosure.aggregate_stats if s.name == "confidence_conditional_on_prediction"}
    return len(problem.states) == len(problem.signals) and reachable <= covered


def is_degenerate(problem: DecisionProblem) -> bool:
    """Constant optimal action over reachable posteriors and zero value of information."""
    constant = len(set(reachable_optimal_actions(problem, "incentive"))) == 1
    return constant and value_of_information(problem, "incentive") <= IDENTITY_TOL


# ===== CONSISTENCY AND DECEPTION =====

def beliefs_transferable(problem: DecisionProblem) -> bool:
    """A proper belief-report incentive rule lets reports be rescored under any rule."""
    incentive = problem.rule("incentive")
    return incentive.is_belief_report and is_proper(incentive).proper


def incentive_evaluation_consistency(problem: DecisionProblem) -> List[AuditFinding]:
    """Warn when the evaluation rule would misread responses optimized for the incentive rule."""
    if problem.incentive_rule == problem.evaluation_rule or beliefs_transferable(problem):
        return []
    incentive, evaluation = problem.rule("incentive"), problem.rule("evaluation")
    grid = belief_grid(len(problem.states))
    disagree = [
        b for b in grid
        if best_index(incentive.matrix @ b) != best_index(evaluation.matrix @ b)
    ]
    if not disagree:
        return []
    details: Dict[str, Any] = {"disagreement": [b.tolist() for b in disagree]}
    if len(problem.states) == 2:
        second = [float(b[1]) for b in disagree]
        details["interval"] = [min(second), max(second)]
    return [AuditFinding(
        code="MISMATCHED_RULES",
        message=f"incentive and evaluation rules prescribe different actions at {len(disagree)} grid beliefs; "
                "one rule will misinterpret actions optimized for the other",
        details=details,
    )]


def implied_stat(problem: DecisionProblem, stat: AggregateStat) -> Optional[float]:
    """Value of a disclosed statistic under the true π, when computable."""
    if len(problem.signals) != len(problem.states) or stat.name == "confidence_conditional_on_features":
        return None
    joint = problem.joint
    if stat.name == "unconditional_accuracy":
        return float(np.trace(joint))
    if stat.name == "class_conditional_accuracy":
        t = problem.state_index(stat.conditioning)
        p = joint[:, t].sum()
        return float(joint[t, t] / p) if p > 0 else None
    v = problem.signal_index(stat.conditioning)
    m = joint[v].sum()
    return float(joint[v, v] / m) if m > 0 else None


def _constant_difference_classes(matrix: np.ndarray) -> List[List[int]]:
    """Groups of actions whose score rows differ only by state-independent amounts."""
    classes: List[List[int]] = []
    seen: set = set()
    for a in range(matrix.shape[0]):
        if a in seen:
            continue
        members = [b for b in range(matrix.shape[0])
                   if b not in seen and np.ptp(matrix[b] - matrix[a]) <= IDENTITY_TOL]
        seen.update(members)
        if len(members) > 1:
            classes.append(members)
    return classes


def deception_screen(problem: DecisionProblem) -> List[AuditFinding]:
    """Ambiguous action effects and statistics that trial feedback contradicts.

    Actions are compared pairwise, so the findings do not depend on the
    order in which actions are listed.
    """
    findings: List[AuditFinding] = []
    incentive = problem.rule("incentive")
    if incentive.n_states >= 2 and not incentive.is_belief_report and not problem.disclosure.action_effects_disclosed:
        for members in _constant_difference_classes(incentive.matrix):
            best = max(members, key=lambda b: incentive.matrix[b].mean())
            offsets = {incentive.action_labels[b]: float((incentive.matrix[b] - incentive.matrix[best]).mean())
                       for b in members}
            labels = list(offsets)
            findings.append(AuditFinding(
                code="DISCLOSURE_AMBIGUOUS",
                message=f"actions {', '.join(repr(l) for l in labels)} differ in score by amounts that do not "
                        "depend on the state, but the instructions do not say the choice has no effect on "
                        "the payoff-relevant state",
                details={"actions": labels, "score_offsets": offsets},
            ))

    if problem.disclosure.feedback_after_trial:
        for stat in problem.disclosure.aggregate_stats:
            implied = implied_stat(problem, stat)
            if implied is not None and abs(implied - stat.value) > CONTRADICTION_TOL:
                findings.append(AuditFinding(
                    code="FEEDBACK_CONTRADICTION",
                    message=f"disclosed {stat.name} {stat.value:g} but trial feedback implies {implied:.6g}; "
                            "participants observe a contradiction with the instructions",
                    details={"statistic": stat.name, "disclosed": stat.value, "implied": implied},
                ))
    return findings


# ===== AUDIT =====

def audit_problem(problem: DecisionProblem) -> AuditReport:
    """Apply the ordered rule table and build the loss ledger."""
    disclosure = problem.disclosure
    warnings: List[AuditFinding] = []
    notes: List[AuditFinding] = [AuditFinding(
        code="INTERPRETATION_UNMEASURABLE", severity="info",
        message="misunderstanding of the decision problem can contribute to every loss source and is not measured",
    )]

    delta = value_of_information(problem, "incentive")
    degenerate = is_degenerate(problem)
    revealed = posterior_revealed(problem)
    prior_ok = prior_identified(problem)
    likelihoods_ok = likelihoods_identified(problem)
    optimizable = check_non_indifference(problem.rule("incentive"))

    rule_by_code = {r.code: r for r in WELL_DEFINED_RULES}

    def finding(code: str, severity: str = "error") -> AuditFinding:
        return AuditFinding(code=code, message=rule_by_code[code].criterion, severity=severity)

    sub_verdict: Optional[str] = None
    if degenerate:
        verdict, reasons = "degenerate", [finding("DEGENERATE")]
    elif not disclosure.scoring_rule_communicated:
        verdict, reasons = "ill_defined", [finding("RULE_NOT_COMMUNICATED")]
    elif revealed:
        verdict, reasons, sub_verdict = "well_defined", [finding("POSTERIOR_REVEALED", "info")], "posterior_revealed"
    elif prior_ok and likelihoods_ok:
        verdict, reasons, sub_verdict = "well_defined", [finding("PRIOR_AND_LIKELIHOODS", "info")], "prior_and_likelihoods"
    elif disclosure.feedback_after_trial:
        verdict, reasons, sub_verdict = "well_defined", [finding("FEEDBACK_LEARNABLE", "info")], "learnable_in_the_limit"
        warnings.append(AuditFinding(
            code="LEARNABLE_IN_LIMIT",
            message="the normative response is only identifiable after enough feedback; early trials are ambiguous",
        ))
    else:
        verdict, reasons = "ill_defined", [finding("INSUFFICIENT_INFORMATION")]
        if not prior_ok:
            reasons.append(AuditFinding(code="PRIOR_UNAVAILABLE", message="the prior is neither endowed nor implied by disclosure"))
        if not likelihoods_ok:
            reasons.append(AuditFinding(code="LIKELIHOODS_UNAVAILABLE", message="the likelihood of each signal given the state is not disclosed"))
        if any(s.name == "confidence_conditional_on_features" for s in disclosure.aggregate_stats):
            reasons.append(AuditFinding(
                code="FEATURE_CONDITIONAL_CONFIDENCE",
                message="confidence conditional on features alone is not conditional on the prediction and does not reveal the posterior",
            ))

    if delta <= IDENTITY_TOL:
        warnings.append(AuditFinding(code="ZERO_VALUE_OF_INFORMATION",
                                     message="the signal cannot improve the expected score; losses cannot be normalized"))
    if not optimizable.passed:
        warnings.append(AuditFinding(code="FLAT_RULE", message="incentive rule is flat: " + optimizable.message))
    if not check_non_indifference(problem.rule("evaluation")).passed:
        warnings.append(AuditFinding(code="FLAT_EVALUATION_RULE",
                                     message="evaluation rule is flat; it cannot be used for evaluation"))
    warnings.extend(incentive_evaluation_consistency(problem))
    warnings.extend(deception_screen(problem))
    if beliefs_transferable(problem) and problem.incentive_rule != problem.evaluation_rule:
        notes.append(AuditFinding(code="BELIEFS_TRANSFERABLE", severity="info",
                                  message="the incentive rule is proper; elicited beliefs can be rescored under the evaluation rule"))
    if is_binary_prediction(problem):
        if not polytope_vertices(*disclosed_constraints(problem)):
            warnings.append(AuditFinding(code="INFEASIBLE_DISCLOSURE",
                                         message="no joint distribution is consistent with the disclosed statistics"))

    if degenerate:
        ledger = {source: LedgerEntry(definable=False, reason="degenerate decision problem: no loss source can be conceived")
                  for source in LOSS_SOURCES}
    else:
        if prior_ok:
            prior_entry = LedgerEntry(definable=True, reason="a normative prior is available to participants")
        elif disclosure.feedback_after_trial:
            prior_entry = LedgerEntry(definable=True, reason="the prior is learnable from trial feedback")
        elif revealed:
            prior_entry = LedgerEntry(definable=False, reason="the posterior is given directly; no prior enters the normative response")
        else:
            prior_entry = LedgerEntry(definable=False, reason="no normative prior exists for participants to deviate from")
        ledger = {
            "prior": prior_entry,
            "receiver": LedgerEntry(definable=True, reason="signals carry decision-relevant information")
            if delta > IDENTITY_TOL else
            LedgerEntry(definable=False, reason="signals carry no decision-relevant information"),
            "updating": LedgerEntry(definable=True, reason="prior and likelihoods are both pinned down")
            if prior_ok and likelihoods_ok else
            LedgerEntry(definable=False, reason="prior and likelihoods are not both pinned down"),
            "optimization": LedgerEntry(definable=True, reason="the incentive rule separates actions")
            if optimizable.passed else
            LedgerEntry(definable=False, reason="the incentive rule is flat"),
        }

    report = AuditReport(verdict=verdict, sub_verdict=sub_verdict, reasons=reasons,
                         loss_ledger=ledger, warnings=warnings, notes=notes)
    logger.info(f"Audit of {problem.name or '<unnamed>'}: {verdict} ({len(warnings)} warnings)")
    return report
