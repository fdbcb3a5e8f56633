"""Decision problem model for dptool

Implements the problem core:
- state, action and signal spaces
- information structures (joint distribution over signals x states)
- scoring rules and their binding to a response space
- validation, marginals, likelihoods and posteriors
- problem spec file loading (JSON) and the shipped fixtures
"""

import json
import logging
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, computed_field, model_validator

from dptool.config import get_settings
from dptool.errors import ProblemFileError, UnknownLabel, ZeroMassSignal, ZeroMassState

logger = logging.getLogger(__name__)

INPUT_TOL = 1e-9
IDENTITY_TOL = 1e-12
TIE_TOL = 1e-12

Key = Union[int, str]

FROZEN = ConfigDict(frozen=True, extra="forbid")


# ===== SPACES =====

class StateSpace(BaseModel):
    model_config = FROZEN

    states: List[str]

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        return {"states": data} if isinstance(data, list) else data

    def __len__(self) -> int:
        return len(self.states)


class SignalSpace(BaseModel):
    model_config = FROZEN

    signals: List[str]

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        return {"signals": data} if isinstance(data, list) else data

    def __len__(self) -> int:
        return len(self.signals)


class ActionSpace(BaseModel):
    """Responses available to participants.

    A belief-report space carries one belief (a probability vector over
    the states) per action label.
    """

    model_config = FROZEN

    actions: List[str]
    kind: Literal["discrete", "belief_report"] = "discrete"
    beliefs: Optional[List[List[float]]] = None

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        return {"actions": data} if isinstance(data, list) else data

    @classmethod
    def belief_report(cls, n_states: int, denominator: Optional[int] = None) -> "ActionSpace":
        grid = belief_grid(n_states, denominator)
        return cls(
            actions=[belief_label(b) for b in grid],
            kind="belief_report",
            beliefs=grid.tolist(),
        )

    def __len__(self) -> int:
        return len(self.actions)


def belief_grid(n_states: int, denominator: Optional[int] = None) -> np.ndarray:
    """Finite grid of beliefs over `n_states` states.

    Two states: evenly spaced points ordered by the probability of the
    second state. More states: the simplex lattice with the given
    denominator (stars and bars order).
    """
    settings = get_settings()
    if n_states < 1:
        raise ValueError("belief grid needs at least one state")
    if n_states == 1:
        return np.ones((1, 1))
    if n_states == 2:
        d = denominator or settings.binary_grid_denominator
        k = np.arange(d + 1) / d
        return np.column_stack([1.0 - k, k])
    d = denominator or settings.simplex_grid_denominator
    points = []
    for bars in combinations(range(d + n_states - 1), n_states - 1):
        edges = (-1,) + bars + (d + n_states - 1,)
        points.append([edges[i + 1] - edges[i] - 1 for i in range(n_states)])
    return np.array(points, dtype=float) / d


def belief_label(belief: Sequence[float]) -> str:
    return "p(" + ",".join(f"{x:.6g}" for x in belief) + ")"


# ===== INFORMATION STRUCTURE =====

class InformationStructure(BaseModel):
    """Joint distribution over signals (rows) and states (columns)."""

    model_config = FROZEN

    joint: List[List[float]]
    signal_labels: Optional[List[str]] = None
    state_labels: Optional[List[str]] = None

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.joint, dtype=float)

    @classmethod
    def from_matrix(cls, joint: np.ndarray, signal_labels=None, state_labels=None) -> "InformationStructure":
        return cls(joint=np.asarray(joint, dtype=float).tolist(), signal_labels=signal_labels, state_labels=state_labels)


class Belief(BaseModel):
    model_config = FROZEN

    probs: List[float]

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        return {"probs": data} if isinstance(data, list) else data

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def is_probability_vector(values: Sequence[float], tol: float = INPUT_TOL) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(arr.ndim == 1 and arr.size > 0 and np.all(np.isfinite(arr)) and np.all(arr >= 0) and abs(arr.sum() - 1.0) <= tol)


# ===== SCORING RULES =====

class ScoringRule(BaseModel):
    """Payoff table or belief-scoring family.

    A table with its own `actions` is a decision rule applied to belief
    reports: each report is scored by the rule's optimal action under it.
    """

    model_config = FROZEN

    form: Literal["table", "quadratic", "logarithmic", "linear"] = "table"
    table: Optional[List[List[float]]] = None
    actions: Optional[List[str]] = None
    clip: float = 1e-4
    unit: str = "score"

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        return {"form": "table", "table": data} if isinstance(data, list) else data


def best_index(values: np.ndarray, tol: float = TIE_TOL) -> int:
    """Lowest index among the maximizers of `values`."""
    values = np.asarray(values, dtype=float)
    top = values.max()
    slack = tol * max(1.0, abs(top))
    return int(np.flatnonzero(values >= top - slack)[0])


class BoundRule:
    """A scoring rule closed against an action space and a state space.

    `matrix[a, θ]` is the score of response `a` when state `θ` is realized.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        action_labels: Sequence[str],
        state_labels: Sequence[str],
        beliefs: Optional[np.ndarray] = None,
        unit: str = "score",
    ):
        m = np.array(matrix, dtype=float)
        if m.shape != (len(action_labels), len(state_labels)):
            raise ValueError(f"score matrix shape {m.shape} does not match {len(action_labels)} actions x {len(state_labels)} states")
        m.setflags(write=False)
        self.matrix = m
        self.action_labels = list(action_labels)
        self.state_labels = list(state_labels)
        self.beliefs = None if beliefs is None else np.array(beliefs, dtype=float)
        self.unit = unit

    @classmethod
    def from_table(cls, table, actions: Sequence[str], states: Sequence[str], unit: str = "score") -> "BoundRule":
        return cls(np.asarray(table, dtype=float), actions, states, unit=unit)

    @property
    def n_actions(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_states(self) -> int:
        return self.matrix.shape[1]

    @property
    def is_belief_report(self) -> bool:
        return self.beliefs is not None

    def action_index(self, key: Key) -> int:
        return resolve_index(self.action_labels, key, "action")

    def state_index(self, key: Key) -> int:
        return resolve_index(self.state_labels, key, "state")

    def affine(self, alpha: float, beta: float) -> "BoundRule":
        return BoundRule(alpha * self.matrix + beta, self.action_labels, self.state_labels, self.beliefs, self.unit)

    def __repr__(self) -> str:
        return f"BoundRule({self.n_actions} actions x {self.n_states} states)"


def bind_rule(rule: ScoringRule, actions: ActionSpace, states: StateSpace) -> BoundRule:
    """Close `rule` against a response space."""
    n = len(states)
    beliefs = np.asarray(actions.beliefs, dtype=float) if actions.kind == "belief_report" else None

    if rule.form == "table":
        table = np.asarray(rule.table, dtype=float)
        if rule.actions is None:
            return BoundRule(table, actions.actions, states.states, beliefs, rule.unit)
        if beliefs is None:
            raise ValueError("a decision rule with its own actions can only score belief reports")
        chosen = [best_index(table @ b) for b in beliefs]
        return BoundRule(table[chosen], actions.actions, states.states, beliefs, rule.unit)

    if beliefs is None:
        raise ValueError(f"{rule.form} rule requires a belief-report action space")
    eye = np.eye(n)
    if rule.form == "quadratic":
        matrix = -((beliefs[:, None, :] - eye[None, :, :]) ** 2).sum(axis=2)
    elif rule.form == "logarithmic":
        matrix = np.log(np.clip(beliefs, rule.clip, 1.0 - rule.clip))
    else:
        matrix = beliefs.copy()
    return BoundRule(matrix, actions.actions, states.states, beliefs, rule.unit)


# ===== DISCLOSURE =====

StatName = Literal[
    "unconditional_accuracy",
    "class_conditional_accuracy",
    "confidence_conditional_on_features",
    "confidence_conditional_on_prediction",
]


class AggregateStat(BaseModel):
    """A summary statistic told to participants.

    `conditioning` names the state (class-conditional accuracy) or the
    signal (confidence conditional on prediction) the statistic refers to.
    """

    model_config = FROZEN

    name: StatName
    value: float
    conditioning: Optional[str] = None


class DisclosureSpec(BaseModel):
    model_config = FROZEN

    prior_endowed: bool = False
    likelihoods_disclosed: bool = False
    posterior_in_signal: bool = False
    feedback_after_trial: bool = False
    aggregate_stats: List[AggregateStat] = []
    scoring_rule_communicated: bool = True
    action_effects_disclosed: bool = False


# ===== DECISION PROBLEM =====

def _labels(value: Any, key: str) -> Optional[List[str]]:
    if isinstance(value, list):
        return list(value)
    if isinstance(value, dict):
        return value.get(key)
    if isinstance(value, BaseModel):
        return list(getattr(value, key))
    return None


class DecisionProblem(BaseModel):
    """The full decision problem presented to participants."""

    model_config = FROZEN

    name: str = ""
    regime: Literal["uncertainty", "risk", "certainty"] = "uncertainty"
    states: StateSpace
    actions: ActionSpace
    signals: SignalSpace
    info: InformationStructure
    incentive_rule: ScoringRule
    evaluation_rule: ScoringRule
    disclosure: DisclosureSpec = DisclosureSpec()
    endowed_prior: Optional[Belief] = None

    @model_validator(mode="before")
    @classmethod
    def _from_file(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        states = _labels(data.get("states"), "states")
        signals = _labels(data.get("signals"), "signals")

        if "joint" in data and "info" not in data:
            data["info"] = {"joint": data.pop("joint")}
        info = data.get("info")
        if isinstance(info, InformationStructure):
            info = info.model_dump()
        if isinstance(info, dict):
            info = dict(info)
            info.setdefault("signal_labels", signals)
            info.setdefault("state_labels", states)
            if info["signal_labels"] is None:
                info["signal_labels"] = signals
            if info["state_labels"] is None:
                info["state_labels"] = states
            data["info"] = info

        actions = data.get("actions")
        if isinstance(actions, dict) and actions.get("kind") == "belief_report" and "actions" not in actions:
            extra = set(actions) - {"kind", "denominator"}
            if extra:
                raise ValueError(f"unknown belief_report keys: {sorted(extra)}")
            if states:
                data["actions"] = ActionSpace.belief_report(len(states), actions.get("denominator"))

        if data.get("evaluation_rule") is None and "incentive_rule" in data:
            data["evaluation_rule"] = data["incentive_rule"]
        return data

    # label resolution
    def state_index(self, key: Key) -> int:
        return resolve_index(self.states.states, key, "state")

    def signal_index(self, key: Key) -> int:
        return resolve_index(self.signals.signals, key, "signal")

    def action_index(self, key: Key) -> int:
        return resolve_index(self.actions.actions, key, "action")

    @property
    def joint(self) -> np.ndarray:
        return self.info.matrix

    def rule(self, which: Literal["incentive", "evaluation"] = "evaluation") -> BoundRule:
        source = self.incentive_rule if which == "incentive" else self.evaluation_rule
        return bind_rule(source, self.actions, self.states)

    def with_joint(self, joint: np.ndarray) -> "DecisionProblem":
        info = InformationStructure.from_matrix(joint, self.signals.signals, self.states.states)
        return self.model_copy(update={"info": info})


def resolve_index(labels: Optional[Sequence[str]], key: Key, kind: str) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if labels is not None and not 0 <= key < len(labels):
            raise UnknownLabel(str(key), kind)
        return int(key)
    if labels is None or key not in labels:
        raise UnknownLabel(str(key), kind)
    return list(labels).index(key)


# ===== VALIDATION =====

class Violation(BaseModel):
    model_config = FROZEN

    code: str
    message: str
    path: str = ""


class ValidationReport(BaseModel):
    model_config = FROZEN

    violations: List[Violation] = []

    @computed_field
    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> List[str]:
        return [v.code for v in self.violations]


def _rule_violations(rule: ScoringRule, path: str, problem: DecisionProblem) -> List[Violation]:
    found = []
    n_states = len(problem.states)
    belief_report = problem.actions.kind == "belief_report"
    if rule.form == "table":
        if rule.actions is not None and not belief_report:
            found.append(Violation(code="RULE_REQUIRES_BELIEF_REPORT", path=f"{path}.actions",
                                  message="a rule with its own actions only applies to belief-report responses"))
        rows = len(rule.actions) if rule.actions is not None else len(problem.actions)
        table = rule.table or []
        if len(table) != rows or any(len(row) != n_states for row in table):
            found.append(Violation(code="RULE_SHAPE_MISMATCH", path=f"{path}.table",
                                  message=f"score table must be {rows} actions x {n_states} states"))
        elif not np.all(np.isfinite(np.asarray(table, dtype=float))):
            found.append(Violation(code="RULE_NOT_FINITE", path=f"{path}.table", message="all scores must be finite"))
    else:
        if not belief_report:
            found.append(Violation(code="RULE_REQUIRES_BELIEF_REPORT", path=f"{path}.form",
                                  message=f"{rule.form} rule scores belief reports, but actions are discrete"))
        if rule.form == "logarithmic" and not 0.0 < rule.clip < 0.5:
            found.append(Violation(code="LOG_CLIP_OUT_OF_RANGE", path=f"{path}.clip",
                                  message=f"clip must lie in (0, 0.5), got {rule.clip}"))
    return found


def validate_problem(problem: DecisionProblem) -> ValidationReport:
    """Collect every invariant violation of `problem`; empty means valid."""
    found: List[Violation] = []
    spaces = (
        ("states", problem.states.states),
        ("actions", problem.actions.actions),
        ("signals", problem.signals.signals),
    )
    for name, labels in spaces:
        if not labels:
            found.append(Violation(code="EMPTY_SPACE", path=name, message=f"{name} must not be empty"))
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            found.append(Violation(code="DUPLICATE_LABEL", path=name, message=f"duplicate {name} labels: {duplicates}"))

    n_states, n_signals = len(problem.states), len(problem.signals)
    if n_states == 1 and problem.regime != "certainty":
        found.append(Violation(code="SINGLE_STATE_REQUIRES_CERTAINTY", path="states",
                              message="a single state is only meaningful for decisions under certainty"))

    if problem.actions.kind == "belief_report":
        beliefs = problem.actions.beliefs or []
        if len(beliefs) != len(problem.actions) or not all(
            len(b) == n_states and is_probability_vector(b) for b in beliefs
        ):
            found.append(Violation(code="BELIEF_GRID_INVALID", path="actions.beliefs",
                                  message="every belief-report action needs a probability vector over the states"))

    joint_ok = False
    rows = problem.info.joint
    if len(rows) != n_signals or any(len(row) != n_states for row in rows):
        found.append(Violation(code="JOINT_SHAPE_MISMATCH", path="joint",
                              message=f"joint must be {n_signals} signals x {n_states} states"))
    else:
        joint = problem.joint
        if not np.all(np.isfinite(joint)):
            found.append(Violation(code="JOINT_NOT_FINITE", path="joint", message="joint entries must be finite"))
        elif np.any(joint < 0):
            found.append(Violation(code="JOINT_NEGATIVE", path="joint", message="joint entries must be nonnegative"))
        elif abs(joint.sum() - 1.0) > INPUT_TOL:
            found.append(Violation(code="JOINT_NOT_NORMALIZED", path="joint",
                                  message=f"joint mass is {joint.sum():.12g}, expected 1"))
        else:
            joint_ok = True

    found.extend(_rule_violations(problem.incentive_rule, "incentive_rule", problem))
    if problem.evaluation_rule != problem.incentive_rule:
        found.extend(_rule_violations(problem.evaluation_rule, "evaluation_rule", problem))

    if problem.endowed_prior is not None:
        if len(problem.endowed_prior.probs) != n_states:
            found.append(Violation(code="PRIOR_SHAPE_MISMATCH", path="endowed_prior",
                                  message=f"endowed prior must cover {n_states} states"))
        elif not is_probability_vector(problem.endowed_prior.probs):
            found.append(Violation(code="PRIOR_INVALID", path="endowed_prior",
                                  message="endowed prior must be a probability vector"))

    for i, stat in enumerate(problem.disclosure.aggregate_stats):
        path = f"disclosure.aggregate_stats[{i}]"
        if not 0.0 <= stat.value <= 1.0:
            found.append(Violation(code="STAT_OUT_OF_RANGE", path=path,
                                  message=f"{stat.name} must be a probability, got {stat.value}"))
        if stat.name == "class_conditional_accuracy" and stat.conditioning not in problem.states.states:
            found.append(Violation(code="STAT_UNKNOWN_CONDITION", path=path,
                                  message=f"class-conditional accuracy needs a state label, got {stat.conditioning!r}"))
        if stat.name == "confidence_conditional_on_prediction" and stat.conditioning not in problem.signals.signals:
            found.append(Violation(code="STAT_UNKNOWN_CONDITION", path=path,
                                  message=f"prediction-conditional confidence needs a signal label, got {stat.conditioning!r}"))

    if problem.regime == "risk" and not problem.disclosure.prior_endowed:
        found.append(Violation(code="RISK_PRIOR_NOT_ENDOWED", path="regime",
                              message="decisions under risk require the prior to be given to participants"))
    if problem.regime == "certainty" and joint_ok:
        mass, post = _posterior_rows(problem.joint)
        if np.any(post[mass > 0].max(axis=1) < 1.0 - INPUT_TOL):
            found.append(Violation(code="CERTAINTY_NOT_REVEALING", path="regime",
                                  message="decisions under certainty require every signal to reveal the state"))

    if found:
        logger.debug(f"Problem {problem.name or '<unnamed>'} has {len(found)} violations")
    return ValidationReport(violations=found)


# ===== MARGINALS AND POSTERIORS =====

def _matrix(info: Union[InformationStructure, np.ndarray]) -> np.ndarray:
    return info.matrix if isinstance(info, InformationStructure) else np.asarray(info, dtype=float)


def _posterior_rows(joint: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Signal masses and posterior rows; rows of zero-mass signals are zero."""
    mass = joint.sum(axis=1)
    post = np.zeros_like(joint)
    reachable = mass > 0
    post[reachable] = joint[reachable] / mass[reachable, None]
    return mass, post


def marginal_prior(info: Union[InformationStructure, np.ndarray]) -> np.ndarray:
    """p(θ) = Σ_v π(v, θ)."""
    return _matrix(info).sum(axis=0)


def signal_marginal(info: Union[InformationStructure, np.ndarray]) -> np.ndarray:
    """Pr(v) = Σ_θ π(v, θ)."""
    return _matrix(info).sum(axis=1)


def likelihood(info: InformationStructure, state: Key) -> np.ndarray:
    """Pr(v | θ) as a vector over signals."""
    joint = info.matrix
    j = resolve_index(info.state_labels, state, "state")
    p = joint[:, j].sum()
    if p <= 0:
        raise ZeroMassState(f"state {state!r} has zero prior mass; its likelihood is undefined")
    return joint[:, j] / p


def posterior(info: InformationStructure, signal: Key) -> np.ndarray:
    """q(θ) = π(v, θ) / Σ_θ π(v, θ)."""
    joint = info.matrix
    i = resolve_index(info.signal_labels, signal, "signal")
    mass = joint[i].sum()
    if mass <= 0:
        raise ZeroMassSignal(f"signal {signal!r} has zero probability; its posterior is undefined")
    return joint[i] / mass


# ===== LOADING =====

def problem_from_dict(data: Dict[str, Any]) -> DecisionProblem:
    try:
        return DecisionProblem.model_validate(data)
    except ValidationError as e:
        raise ProblemFileError(f"ill-formed problem spec: {e}") from e


def load_problem(path: Union[str, Path]) -> DecisionProblem:
    """Read a problem spec file (UTF-8 JSON)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ProblemFileError(f"cannot read problem file {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"problem file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ProblemFileError(f"problem file {path} must contain a JSON object")
    problem = problem_from_dict(data)
    logger.info(f"Loaded problem {problem.name or path}: {len(problem.signals)} signals, "
                f"{len(problem.states)} states, {len(problem.actions)} actions")
    return problem


FIXTURES = (
    "recidivism",
    "recidivism_features",
    "recidivism_prediction",
    "recidivism_accuracy",
    "voting",
    "voting_original",
)


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name}, try: " + ", ".join(FIXTURES))
    return Path(str(resources.files("dptool.fixtures").joinpath(f"{name}.json")))


def load_fixture(name: str) -> DecisionProblem:
    return load_problem(fixture_path(name))
