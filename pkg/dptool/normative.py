"""Normative apparatus for dptool

Implements the rational-agent side of a decision problem:
- expected scores and optimal actions (uncertainty, risk, certainty)
- properization of arbitrary scoring rules and properness checks
- rational baseline, rational benchmark and value of information
- finite checks of the ordering and non-indifference axioms
"""

import logging
from fractions import Fraction
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from dptool.errors import PreconditionError
from dptool.problem import (
    IDENTITY_TOL,
    TIE_TOL,
    BoundRule,
    DecisionProblem,
    Key,
    _posterior_rows,
    belief_grid,
    belief_label,
    best_index,
    marginal_prior,
)

logger = logging.getLogger(__name__)

RuleChoice = Literal["incentive", "evaluation"]


# ===== OPTIMAL ACTIONS =====

def expected_score(rule: BoundRule, action: Key, belief: Sequence[float]) -> float:
    """Σ_θ belief[θ] · S(a, θ)."""
    a = rule.action_index(action)
    return float(rule.matrix[a] @ np.asarray(belief, dtype=float))


def optimal_action_index(rule: BoundRule, belief: Sequence[float]) -> int:
    return best_index(rule.matrix @ np.asarray(belief, dtype=float))


def optimal_action(rule: BoundRule, belief: Sequence[float]) -> Tuple[str, float]:
    """Expected-score maximizer under `belief`; ties go to the lowest index."""
    values = rule.matrix @ np.asarray(belief, dtype=float)
    a = best_index(values)
    return rule.action_labels[a], float(values[a])


def optimal_action_certain(rule: BoundRule, state: Key) -> str:
    """argmax_a S(a, θ) when the state is known."""
    j = rule.state_index(state)
    return rule.action_labels[best_index(rule.matrix[:, j])]


def optimal_action_under_risk(problem: DecisionProblem, which: RuleChoice = "incentive") -> Tuple[str, float]:
    """Optimal action when the prior is known and substituted for the posterior."""
    prior = problem.endowed_prior.array if problem.endowed_prior is not None else marginal_prior(problem.info)
    return optimal_action(problem.rule(which), prior)


# ===== PROPERIZATION =====

class ProperizedRule:
    """Ŝ(p, θ) = S(argmax_a E_{θ'~p}[S(a, θ')], θ).

    The belief -> action map is computed for the whole grid at
    construction; other beliefs are resolved on demand.
    """

    def __init__(self, base: BoundRule, grid: Optional[np.ndarray] = None):
        self.base = base
        self.grid = belief_grid(base.n_states) if grid is None else np.asarray(grid, dtype=float)
        values = self.grid @ base.matrix.T
        self._grid_actions = np.array([best_index(row) for row in values], dtype=int)
        self._grid_actions.setflags(write=False)
        self._lookup: Dict[Tuple[float, ...], int] = {
            _belief_key(b): int(a) for b, a in zip(self.grid, self._grid_actions)
        }

    @property
    def grid_actions(self) -> np.ndarray:
        return self._grid_actions

    def action_index_of(self, belief: Sequence[float]) -> int:
        b = np.asarray(belief, dtype=float)
        hit = self._lookup.get(_belief_key(b))
        return hit if hit is not None else best_index(self.base.matrix @ b)

    def optimal_action_of(self, belief: Sequence[float]) -> str:
        return self.base.action_labels[self.action_index_of(belief)]

    def score(self, belief: Sequence[float], state: Key) -> float:
        return float(self.base.matrix[self.action_index_of(belief), self.base.state_index(state)])

    __call__ = score

    def expected(self, true_belief: Sequence[float], report: Sequence[float]) -> float:
        """E_{θ~true_belief}[Ŝ(report, θ)]."""
        return float(self.base.matrix[self.action_index_of(report)] @ np.asarray(true_belief, dtype=float))

    def as_belief_rule(self) -> BoundRule:
        """The properization as a table rule over the grid of belief reports."""
        labels = [belief_label(b) for b in self.grid]
        return BoundRule(self.base.matrix[self._grid_actions], labels, self.base.state_labels, self.grid, self.base.unit)


def _belief_key(belief: np.ndarray) -> Tuple[float, ...]:
    return tuple(np.round(belief, 12).tolist())


def properize(rule: BoundRule, grid: Optional[np.ndarray] = None) -> ProperizedRule:
    return ProperizedRule(rule, grid)


class Counterexample(BaseModel):
    model_config = ConfigDict(frozen=True)

    belief: List[float]
    better_report: List[float]
    gain: float


class ProperVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    proper: bool
    strict: bool
    counterexample: Optional[Counterexample] = None
    warning: Optional[str] = None


def is_proper(rule: BoundRule, grid: Optional[np.ndarray] = None) -> ProperVerdict:
    """Check that truthful reporting maximizes expected score on the grid.

    Weak properness (truth among several maximizers) passes with the
    WEAKLY_PROPER_NON_STRICT warning and a tie as counterexample. A rule
    whose score ignores the report, such as the properized voting rule,
    comes back `proper=True, strict=False` with that tie attached; read
    `strict` when truthful reporting has to be the unique optimum.
    """
    if not rule.is_belief_report:
        raise PreconditionError("properness is defined for belief-report action spaces only")
    reports = rule.beliefs
    grid = reports if grid is None else np.asarray(grid, dtype=float)

    tie: Optional[Counterexample] = None
    for p in grid:
        matches = np.flatnonzero(np.all(np.abs(reports - p) <= 1e-9, axis=1))
        if matches.size == 0:
            raise PreconditionError(f"grid belief {belief_label(p)} is not an available report")
        truthful = int(matches[0])
        values = rule.matrix @ p
        top = values.max()
        slack = TIE_TOL * max(1.0, abs(top))
        if values[truthful] < top - slack:
            best = best_index(values)
            logger.debug(f"Rule is improper at {belief_label(p)}: report {belief_label(reports[best])} scores higher")
            return ProperVerdict(
                proper=False,
                strict=False,
                counterexample=Counterexample(
                    belief=p.tolist(), better_report=reports[best].tolist(), gain=float(values[best] - values[truthful])
                ),
            )
        if tie is None:
            rivals = [j for j in np.flatnonzero(values >= values[truthful] - slack) if j != truthful]
            if rivals:
                tie = Counterexample(belief=p.tolist(), better_report=reports[rivals[0]].tolist(), gain=0.0)

    if tie is not None:
        logger.warning("Rule is weakly proper: truthful reports are optimal but not uniquely so")
        return ProperVerdict(proper=True, strict=False, counterexample=tie, warning="WEAKLY_PROPER_NON_STRICT")
    return ProperVerdict(proper=True, strict=True)


# ===== BENCHMARKS =====

def properized_value(joint: np.ndarray, rule: BoundRule) -> float:
    """Σ_r Σ_θ joint[r, θ] · Ŝ(joint(θ | r), θ), skipping zero-mass rows.

    Rows are signals for the rational benchmark and responses for the
    calibrated behavioral score.
    """
    mass, post = _posterior_rows(np.asarray(joint, dtype=float))
    total = 0.0
    for r in np.flatnonzero(mass > 0):
        a = best_index(rule.matrix @ post[r])
        total += float(joint[r] @ rule.matrix[a])
    return total


def rational_baseline(problem: DecisionProblem, which: RuleChoice = "evaluation") -> float:
    """R∅ = E_{θ~p}[Ŝ(p, θ)] for the marginal prior p."""
    rule = problem.rule(which)
    p = marginal_prior(problem.info)
    return float(p @ rule.matrix[best_index(rule.matrix @ p)])


def rational_benchmark(problem: DecisionProblem, which: RuleChoice = "evaluation") -> float:
    """R = Σ_{v,θ} π(v, θ) · Ŝ(π(θ | v), θ)."""
    return properized_value(problem.joint, problem.rule(which))


def value_of_information(problem: DecisionProblem, which: RuleChoice = "evaluation") -> float:
    """Δ = R − R∅."""
    return rational_benchmark(problem, which) - rational_baseline(problem, which)


class Benchmarks(BaseModel):
    model_config = ConfigDict(frozen=True)

    R: float
    R_baseline: float
    Delta: float
    rule: RuleChoice


def benchmarks(problem: DecisionProblem, which: RuleChoice = "evaluation") -> Benchmarks:
    r = rational_benchmark(problem, which)
    r0 = rational_baseline(problem, which)
    return Benchmarks(R=r, R_baseline=r0, Delta=r - r0, rule=which)


def reachable_optimal_actions(problem: DecisionProblem, which: RuleChoice = "incentive") -> List[str]:
    """Optimal action for each reachable signal's posterior, in signal order."""
    rule = problem.rule(which)
    mass, post = _posterior_rows(problem.joint)
    return [rule.action_labels[best_index(rule.matrix @ post[v])] for v in np.flatnonzero(mass > 0)]


# ===== THRESHOLDS =====

class Cutpoint(BaseModel):
    """Belief in the second state at which the optimal action switches."""

    model_config = ConfigDict(frozen=True)

    belief: float
    fraction: str
    below: str
    above: str


def belief_cutpoints(rule: BoundRule) -> List[Cutpoint]:
    """Exact switch points of the upper envelope for two-state rules."""
    if rule.n_states != 2:
        raise PreconditionError("belief cutpoints are defined for two-state problems")
    intercept = rule.matrix[:, 0]
    slope = rule.matrix[:, 1] - rule.matrix[:, 0]
    current = best_index(intercept)
    q = 0.0
    cuts: List[Cutpoint] = []
    while True:
        nxt: Optional[Tuple[float, float, int]] = None
        for b in range(rule.n_actions):
            if slope[b] <= slope[current] + TIE_TOL:
                continue
            x = (intercept[current] - intercept[b]) / (slope[b] - slope[current])
            if x < q - IDENTITY_TOL or x >= 1.0 - IDENTITY_TOL:
                continue
            candidate = (x, -slope[b], b)
            if nxt is None or candidate < nxt:
                nxt = candidate
        if nxt is None:
            return cuts
        x, _, b = nxt
        x = max(x, q)
        cuts.append(Cutpoint(
            belief=float(x),
            fraction=str(Fraction(x).limit_denominator(1000)),
            below=rule.action_labels[current],
            above=rule.action_labels[b],
        ))
        current, q = b, x


def action_regions(properized: ProperizedRule) -> Dict[str, List[float]]:
    """[min, max] grid belief in the second state where each action is optimal."""
    if properized.base.n_states != 2:
        raise PreconditionError("action regions are reported for two-state problems")
    regions: Dict[str, List[float]] = {}
    for b, a in zip(properized.grid[:, 1], properized.grid_actions):
        label = properized.base.action_labels[a]
        lo, hi = regions.get(label, [float(b), float(b)])
        regions[label] = [min(lo, float(b)), max(hi, float(b))]
    return regions


# ===== AXIOMS =====

class PreferenceRelation(BaseModel):
    """Weak preference over options; weak_pref[i][j] means option i ⪰ option j."""

    model_config = ConfigDict(frozen=True)

    options: List[str]
    weak_pref: List[List[bool]]

    @model_validator(mode="after")
    def _square_reflexive(self) -> "PreferenceRelation":
        n = len(self.options)
        if len(self.weak_pref) != n or any(len(row) != n for row in self.weak_pref):
            raise ValueError("preference matrix must be square over the options")
        if not all(self.weak_pref[i][i] for i in range(n)):
            raise ValueError("weak preference must be reflexive")
        return self


class AxiomVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    axiom: str
    passed: bool
    violation: Optional[str] = None
    witness: List[str] = []
    message: str = ""


def check_ordering_axiom(rel: PreferenceRelation) -> AxiomVerdict:
    """Completeness and transitivity of a finite weak preference."""
    pref, names, n = rel.weak_pref, rel.options, len(rel.options)
    for i in range(n):
        for j in range(i + 1, n):
            if not (pref[i][j] or pref[j][i]):
                return AxiomVerdict(axiom="ordering", passed=False, violation="completeness",
                                    witness=[names[i], names[j]],
                                    message=f"{names[i]} and {names[j]} are not compared")
    for i in range(n):
        for j in range(n):
            if not pref[i][j]:
                continue
            for k in range(n):
                if pref[j][k] and not pref[i][k]:
                    return AxiomVerdict(axiom="ordering", passed=False, violation="transitivity",
                                        witness=[names[i], names[j], names[k]],
                                        message=f"{names[i]} ⪰ {names[j]} ⪰ {names[k]} but not {names[i]} ⪰ {names[k]}")
    return AxiomVerdict(axiom="ordering", passed=True, message="complete and transitive")


def preference_from_rule(rule: BoundRule, belief: Sequence[float]) -> PreferenceRelation:
    """Actions ordered by expected score under `belief`."""
    values = rule.matrix @ np.asarray(belief, dtype=float)
    slack = TIE_TOL * max(1.0, float(np.abs(values).max()))
    weak = [[bool(values[i] >= values[j] - slack) for j in range(len(values))] for i in range(len(values))]
    return PreferenceRelation(options=rule.action_labels, weak_pref=weak)


def check_non_indifference(rule: BoundRule, grid: Optional[np.ndarray] = None) -> AxiomVerdict:
    """Pass iff some belief separates two actions by more than 1e-12."""
    grid = belief_grid(rule.n_states) if grid is None else np.asarray(grid, dtype=float)
    for b in grid:
        values = rule.matrix @ b
        hi, lo = int(np.argmax(values)), int(np.argmin(values))
        if values[hi] - values[lo] > IDENTITY_TOL:
            return AxiomVerdict(axiom="non_indifference", passed=True,
                                witness=[belief_label(b), rule.action_labels[hi], rule.action_labels[lo]],
                                message=f"{rule.action_labels[hi]} beats {rule.action_labels[lo]} at {belief_label(b)}")
    return AxiomVerdict(axiom="non_indifference", passed=False, violation="flat_rule",
                        message="every action scores the same in expectation; the rule cannot be used for evaluation")
