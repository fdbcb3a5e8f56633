"""Synthetic agents for dptool

Generates behavioral data from parametrized lossy agents:
- AgentSpec: prior override, signal garbling, updating exponent,
  softmax temperature and lapse rate (one knob per loss source)
- exact scores of a policy without sampling noise
- seeded dataset sampling and learning agents that update on feedback
- design sweeps over agent grids with monotonicity diagnostics
"""

import json
import logging
from itertools import product
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import softmax

from dptool.behavioral import BehavioralDataset, behavioral_score, calibrated_score
from dptool.config import get_settings
from dptool.errors import InvalidAgentSpec, PreconditionError, ZeroMassPerceivedSignal
from dptool.normative import RuleChoice, benchmarks, properized_value
from dptool.parallel import BatchProcessor
from dptool.problem import (
    FROZEN,
    IDENTITY_TOL,
    INPUT_TOL,
    Belief,
    DecisionProblem,
    _posterior_rows,
    best_index,
    is_probability_vector,
    marginal_prior,
)

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]


class AgentSpec(BaseModel):
    """A lossy agent.

    Losses compose in the order prior -> garbling -> update -> optimize.
    The agent is unaware of its own garbling and updates as if the
    perceived signal were the true one.
    """

    model_config = FROZEN

    prior_override: Optional[Belief] = None
    garbling: Optional[List[List[float]]] = None
    updating_exponent: float = Field(1.0, ge=0)
    softmax_temperature: float = Field(0.0, ge=0)
    lapse_rate: float = Field(0.0, ge=0, le=1)
    rule: RuleChoice = "incentive"
    label: str = ""

    @property
    def is_rational(self) -> bool:
        return (
            self.prior_override is None
            and self.garbling is None
            and self.updating_exponent == 1.0
            and self.softmax_temperature == 0.0
            and self.lapse_rate == 0.0
        )

    def params(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "prior_override": None if self.prior_override is None else self.prior_override.probs,
            "garbling": self.garbling,
            "updating_exponent": self.updating_exponent,
            "softmax_temperature": self.softmax_temperature,
            "lapse_rate": self.lapse_rate,
            "rule": self.rule,
        }


def validate_agent(problem: DecisionProblem, agent: AgentSpec) -> None:
    """Raise InvalidAgentSpec listing every way `agent` does not fit `problem`."""
    problems: List[str] = []
    n_signals, n_states = len(problem.signals), len(problem.states)
    if agent.prior_override is not None:
        probs = agent.prior_override.probs
        if len(probs) != n_states:
            problems.append(f"prior_override must cover {n_states} states, got {len(probs)}")
        elif not is_probability_vector(probs):
            problems.append("prior_override must be a probability vector")
    if agent.garbling is not None:
        g = agent.garbling
        if len(g) != n_signals or any(len(row) != n_signals for row in g):
            problems.append(f"garbling must be {n_signals} x {n_signals}")
        elif not all(is_probability_vector(row) for row in g):
            problems.append("garbling rows must be probability vectors")
    for name in ("updating_exponent", "softmax_temperature"):
        if not np.isfinite(getattr(agent, name)):
            problems.append(f"{name} must be finite")
    if problems:
        raise InvalidAgentSpec(problems)


class PolicyKernel(BaseModel):
    """ρ(a | v): rows are true signals, columns are actions."""

    model_config = ConfigDict(frozen=True)

    rho: List[List[float]]

    @model_validator(mode="after")
    def _stochastic(self) -> "PolicyKernel":
        if not all(is_probability_vector(row) for row in self.rho):
            raise ValueError("policy rows must be probability vectors")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.rho, dtype=float)

    @classmethod
    def from_matrix(cls, rho: np.ndarray) -> "PolicyKernel":
        return cls(rho=np.asarray(rho, dtype=float).tolist())


def _beliefs(problem: DecisionProblem, agent: AgentSpec, reach: np.ndarray) -> np.ndarray:
    """Belief held after each perceived signal."""
    joint = problem.joint
    if agent.prior_override is None and agent.updating_exponent == 1.0:
        mass, post = _posterior_rows(joint)
        prior = marginal_prior(joint)
        post[mass <= 0] = prior
        return post

    prior = agent.prior_override.array if agent.prior_override is not None else marginal_prior(joint)
    p = marginal_prior(joint)
    lik = np.zeros_like(joint)
    lik[:, p > 0] = joint[:, p > 0] / p[p > 0]
    beliefs = prior[None, :] * lik ** agent.updating_exponent
    norm = beliefs.sum(axis=1)
    for v in np.flatnonzero(norm <= 0):
        if reach[v] > 0:
            raise ZeroMassPerceivedSignal(
                f"perceived signal {problem.signals.signals[v]!r} has zero probability under the agent's prior"
            )
        beliefs[v] = prior
        norm[v] = 1.0
    return beliefs / norm[:, None]


def build_policy(problem: DecisionProblem, agent: AgentSpec) -> PolicyKernel:
    validate_agent(problem, agent)
    rule = problem.rule(agent.rule)
    n_signals, n_actions = len(problem.signals), rule.n_actions

    garbling = None if agent.garbling is None else np.asarray(agent.garbling, dtype=float)
    if garbling is not None and np.array_equal(garbling, np.eye(n_signals)):
        garbling = None
    signal_mass = problem.joint.sum(axis=1)
    reach = signal_mass if garbling is None else signal_mass @ garbling

    beliefs = _beliefs(problem, agent, reach)
    values = beliefs @ rule.matrix.T
    if agent.softmax_temperature == 0.0:
        decision = np.zeros((n_signals, n_actions))
        decision[np.arange(n_signals), [best_index(row) for row in values]] = 1.0
    else:
        decision = softmax(values / agent.softmax_temperature, axis=1)
    if agent.lapse_rate > 0.0:
        decision = (1.0 - agent.lapse_rate) * decision + agent.lapse_rate / n_actions

    rho = decision if garbling is None else garbling @ decision
    return PolicyKernel.from_matrix(rho)


# ===== EXACT METRICS =====

class ExactMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    B: float
    C: float
    R: float
    R_baseline: float
    Delta: float
    joint: List[List[float]]


def exact_metrics(problem: DecisionProblem, policy: PolicyKernel, which: RuleChoice = "evaluation") -> ExactMetrics:
    """B and C from the policy's exact outcome distribution π^B(a, θ) = Σ_v π(v, θ) ρ(a | v)."""
    rule = problem.rule(which)
    outcome = policy.matrix.T @ problem.joint
    bench = benchmarks(problem, which)
    return ExactMetrics(
        B=float((rule.matrix * outcome).sum()),
        C=properized_value(outcome, rule),
        R=bench.R,
        R_baseline=bench.R_baseline,
        Delta=bench.Delta,
        joint=outcome.tolist(),
    )


# ===== SAMPLING =====

def _draw_actions(rng: np.random.Generator, rho: np.ndarray, signals: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(rho[signals], axis=1)
    u = rng.random(len(signals))
    return np.minimum((u[:, None] >= cumulative).sum(axis=1), rho.shape[1] - 1)


def sample_dataset(problem: DecisionProblem, policy: PolicyKernel, n_trials: int, seed: Seed = 0,
                   participant_id: str = "sim-1") -> BehavioralDataset:
    """i.i.d. trials: (v, θ) ~ π, then a ~ ρ(· | v)."""
    if n_trials < 1:
        raise PreconditionError("n_trials must be at least 1")
    rng = np.random.default_rng(seed)
    joint = problem.joint
    n_states = joint.shape[1]
    flat = joint.ravel()
    cells = rng.choice(flat.size, size=n_trials, p=flat / flat.sum())
    signals, states = cells // n_states, cells % n_states
    actions = _draw_actions(rng, policy.matrix, signals)
    logger.debug(f"Sampled {n_trials} trials")
    return BehavioralDataset(
        problem, signals, actions, states,
        [participant_id] * n_trials, range(n_trials), ["simulated"] * n_trials,
    )


# ===== LEARNING AGENTS =====

class LearningAgentState(BaseModel):
    """Dirichlet pseudo-counts over signals x states."""

    model_config = ConfigDict(frozen=True)

    pseudo_counts: List[List[float]]

    @model_validator(mode="after")
    def _positive(self) -> "LearningAgentState":
        if not self.pseudo_counts or not np.all(np.asarray(self.pseudo_counts, dtype=float) > 0):
            raise ValueError("pseudo-counts must all be positive")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.pseudo_counts, dtype=float)

    @classmethod
    def uniform(cls, problem: DecisionProblem, alpha: Optional[float] = None) -> "LearningAgentState":
        alpha = get_settings().learning_pseudo_count if alpha is None else alpha
        return cls(pseudo_counts=np.full(problem.joint.shape, float(alpha)).tolist())


class LearningResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    curve: List[float]
    final_state: LearningAgentState


def policy_value(problem: DecisionProblem, policy: PolicyKernel, which: RuleChoice = "incentive") -> float:
    """Expected score of `policy` against the true π."""
    outcome = policy.matrix.T @ problem.joint
    return float((problem.rule(which).matrix * outcome).sum())


def run_learning_agent(
    problem: DecisionProblem,
    initial: Optional[LearningAgentState] = None,
    n_trials: int = 100,
    seed: Seed = 0,
    decision_spec: Optional[AgentSpec] = None,
) -> LearningResult:
    """An agent that treats normalized pseudo-counts as π and updates on feedback.

    The curve holds, per trial, the expected incentive score of the
    trial's policy against the true π.
    """
    if not problem.disclosure.feedback_after_trial:
        raise PreconditionError("learning agents need feedback_after_trial in the disclosure")
    initial = initial or LearningAgentState.uniform(problem)
    if initial.matrix.shape != problem.joint.shape:
        raise PreconditionError(f"pseudo-counts must be {problem.joint.shape}")
    spec = (decision_spec or AgentSpec()).model_copy(update={"updating_exponent": 1.0, "prior_override": None})

    rng = np.random.default_rng(seed)
    counts = initial.matrix.copy()
    joint = problem.joint
    n_states = joint.shape[1]
    flat = joint.ravel() / joint.sum()
    curve: List[float] = []
    for _ in range(n_trials):
        believed = problem.with_joint(counts / counts.sum())
        policy = build_policy(believed, spec)
        curve.append(policy_value(problem, policy, spec.rule))
        cell = rng.choice(flat.size, p=flat)
        counts[cell // n_states, cell % n_states] += 1.0
    return LearningResult(curve=curve, final_state=LearningAgentState(pseudo_counts=counts.tolist()))


def mean_learning_curve(
    problem: DecisionProblem,
    n_trials: int,
    n_seeds: int,
    seed: int = 0,
    initial: Optional[LearningAgentState] = None,
    decision_spec: Optional[AgentSpec] = None,
    processor: Optional[BatchProcessor] = None,
) -> np.ndarray:
    """Learning curve averaged over independent seeded runs."""
    if n_seeds < 1:
        raise PreconditionError("n_seeds must be at least 1")
    processor = processor or BatchProcessor()
    children = np.random.SeedSequence(seed).spawn(n_seeds)
    runs = processor.process_batch(
        children, lambda child: run_learning_agent(problem, initial, n_trials, child, decision_spec).curve
    )
    return np.asarray(runs, dtype=float).reshape(n_seeds, n_trials).mean(axis=0)


# ===== DESIGN SWEEPS =====

def agent_grid(**axes: Sequence[Any]) -> List[AgentSpec]:
    """Cartesian product of AgentSpec fields, e.g. agent_grid(lapse_rate=[0, 0.5, 1])."""
    names = list(axes)
    return [AgentSpec(**dict(zip(names, combo))) for combo in product(*(axes[n] for n in names))]


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: Dict[str, Any]
    B: Optional[float] = None
    C: Optional[float] = None
    total_loss: Optional[float] = None
    gap_rc: Optional[float] = None
    gap_cb: Optional[float] = None
    error: Optional[str] = None


class SweepDiagnostic(BaseModel):
    model_config = ConfigDict(frozen=True)

    check: str
    passed: bool
    detail: str = ""


class SweepTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["exact", "sampled"]
    R: float
    R_baseline: float
    Delta: float
    rows: List[SweepRow]
    diagnostics: List[SweepDiagnostic] = []

    def to_frame(self) -> pd.DataFrame:
        param_columns = list(AgentSpec().params())
        records = []
        for row in self.rows:
            record = {
                k: json.dumps(v) if isinstance(v, list) else v
                for k, v in row.params.items()
            }
            record.update(B=row.B, C=row.C, total_loss=row.total_loss, gap_rc=row.gap_rc, gap_cb=row.gap_cb)
            records.append(record)
        return pd.DataFrame(records, columns=param_columns + ["B", "C", "total_loss", "gap_rc", "gap_cb"])


def _lapse_diagnostics(problem: DecisionProblem, grid: Sequence[AgentSpec], rows: List[SweepRow]) -> List[SweepDiagnostic]:
    groups: Dict[str, List[tuple]] = {}
    for spec, row in zip(grid, rows):
        if row.B is None:
            continue
        key = json.dumps({k: v for k, v in spec.params().items() if k not in ("lapse_rate", "label")}, sort_keys=True)
        groups.setdefault(key, []).append((spec, row))

    found = []
    for key, members in groups.items():
        members.sort(key=lambda m: m[0].lapse_rate)
        base_spec = members[0][0]
        if len(members) < 2 or base_spec.lapse_rate != 0.0:
            continue
        optimal = build_policy(problem, AgentSpec(rule=base_spec.rule)).matrix
        try:
            base = build_policy(problem, base_spec).matrix
        except ZeroMassPerceivedSignal:
            continue
        if not np.allclose(base, optimal, atol=INPUT_TOL):
            continue
        scores = [m[1].B for m in members]
        monotone = all(b <= a + INPUT_TOL for a, b in zip(scores, scores[1:]))
        found.append(SweepDiagnostic(
            check="lapse_nonincreasing", passed=monotone,
            detail=f"B over lapse rates {[m[0].lapse_rate for m in members]}: {[round(s, 6) for s in scores]}",
        ))
    return found


def design_sweep(
    problem: DecisionProblem,
    grid: Sequence[AgentSpec],
    mode: Literal["exact", "sampled"] = "exact",
    n_trials: int = 1000,
    seed: int = 0,
    processor: Optional[BatchProcessor] = None,
    which: RuleChoice = "evaluation",
) -> SweepTable:
    """One row per grid point; per-row seeds are spawned from `seed`."""
    bench = benchmarks(problem, which)
    rule = problem.rule(which)
    processor = processor or BatchProcessor()
    children = np.random.SeedSequence(seed).spawn(len(grid))
    defined = bench.Delta > IDENTITY_TOL

    def run(item: tuple) -> SweepRow:
        spec, child = item
        policy = build_policy(problem, spec)
        if mode == "exact":
            metrics = exact_metrics(problem, policy, which)
            B, C = metrics.B, metrics.C
        else:
            ds = sample_dataset(problem, policy, n_trials, child)
            B, C = behavioral_score(ds, rule), calibrated_score(ds, which=which)
        if not defined:
            return SweepRow(params=spec.params(), B=B, C=C)
        return SweepRow(
            params=spec.params(), B=B, C=C,
            total_loss=(bench.R - B) / bench.Delta,
            gap_rc=(bench.R - C) / bench.Delta,
            gap_cb=(C - B) / bench.Delta,
        )

    results = processor.process_batch(list(zip(grid, children)), run, return_exceptions=True)
    rows = [
        SweepRow(params=spec.params(), error=getattr(r, "code", type(r).__name__)) if isinstance(r, Exception) else r
        for spec, r in zip(grid, results)
    ]

    diagnostics: List[SweepDiagnostic] = []
    if not defined:
        diagnostics.append(SweepDiagnostic(check="loss_columns_defined", passed=False,
                                           detail="value of information is zero; loss columns are undefined"))
    if mode == "exact":
        scored = [r for r in rows if r.B is not None]
        dominated = all(bench.R + INPUT_TOL >= r.C >= r.B - INPUT_TOL for r in scored)
        diagnostics.append(SweepDiagnostic(check="R_ge_C_ge_B", passed=dominated,
                                           detail=f"{len(scored)} rows checked"))
        diagnostics.extend(_lapse_diagnostics(problem, grid, rows))
    logger.info(f"Design sweep over {len(grid)} agents ({mode}): {sum(r.error is not None for r in rows)} failed")
    return SweepTable(mode=mode, R=bench.R, R_baseline=bench.R_baseline, Delta=bench.Delta,
                      rows=rows, diagnostics=diagnostics)


# ===== RANDOM GENERATORS =====

def random_problem(
    rng: np.random.Generator,
    n_signals: Optional[int] = None,
    n_states: Optional[int] = None,
    n_actions: Optional[int] = None,
    sparsity: float = 0.0,
) -> DecisionProblem:
    """A valid random problem; `sparsity` zeroes joint cells with that probability."""
    n_signals = n_signals or int(rng.integers(2, 6))
    n_states = n_states or int(rng.integers(2, 6))
    n_actions = n_actions or int(rng.integers(2, 5))
    joint = rng.dirichlet(np.ones(n_signals * n_states))
    if sparsity > 0:
        keep = rng.random(joint.size) >= sparsity
        keep[int(rng.integers(joint.size))] = True
        joint = np.where(keep, joint, 0.0)
        joint = joint / joint.sum()
    table = rng.uniform(-1.0, 1.0, size=(n_actions, n_states)).round(6)
    return DecisionProblem(
        name="random",
        states=[f"t{j}" for j in range(n_states)],
        actions=[f"a{k}" for k in range(n_actions)],
        signals=[f"s{i}" for i in range(n_signals)],
        joint=joint.reshape(n_signals, n_states).tolist(),
        incentive_rule=table.tolist(),
    )


def random_policy(rng: np.random.Generator, n_signals: int, n_actions: int) -> PolicyKernel:
    rho = rng.dirichlet(np.ones(n_actions), size=n_signals)
    return PolicyKernel.from_matrix(rho / rho.sum(axis=1, keepdims=True))
