"""Behavioral data scoring for dptool

Implements the observed-behavior side of a decision problem:
- CSV ingest of per-trial records with row-level errors
- behavioral score B and calibrated score C
- loss decomposition normalized by the value of information
- per-condition reports and bootstrap intervals
"""

import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from dptool.config import get_settings
from dptool.errors import (
    DPToolError,
    EmptyDataset,
    ParseError,
    PreconditionError,
    UnknownLabel,
    ZeroValueOfInformation,
)
from dptool.normative import Benchmarks, RuleChoice, benchmarks, properized_value
from dptool.parallel import BatchProcessor
from dptool.problem import IDENTITY_TOL, BoundRule, DecisionProblem

logger = logging.getLogger(__name__)

COLUMNS = ["participant_id", "trial_index", "condition", "signal", "action", "state"]


class TrialRecord(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    participant_id: str
    trial_index: int = Field(ge=0)
    condition: str
    signal: str
    action: str
    realized_state: str = Field(alias="state")


class BehavioralDataset:
    """Per-trial records bound to a decision problem.

    Labels are resolved to indices once; scoring works on the index arrays.
    """

    def __init__(
        self,
        problem: DecisionProblem,
        signal_idx: Sequence[int],
        action_idx: Sequence[int],
        state_idx: Sequence[int],
        participant_ids: Sequence[str],
        trial_indices: Sequence[int],
        conditions: Sequence[str],
    ):
        self.problem = problem
        self.signal_idx = np.asarray(signal_idx, dtype=int)
        self.action_idx = np.asarray(action_idx, dtype=int)
        self.state_idx = np.asarray(state_idx, dtype=int)
        self.participant_ids = list(participant_ids)
        self.trial_indices = [int(t) for t in trial_indices]
        self.conditions = list(conditions)
        n = len(self.signal_idx)
        if not all(len(x) == n for x in (self.action_idx, self.state_idx, self.participant_ids, self.trial_indices, self.conditions)):
            raise ValueError("dataset columns must have equal length")

    @classmethod
    def from_records(cls, problem: DecisionProblem, records: Iterable[TrialRecord]) -> "BehavioralDataset":
        records = list(records)
        return cls(
            problem,
            [problem.signal_index(r.signal) for r in records],
            [problem.action_index(r.action) for r in records],
            [problem.state_index(r.realized_state) for r in records],
            [r.participant_id for r in records],
            [r.trial_index for r in records],
            [r.condition for r in records],
        )

    def __len__(self) -> int:
        return len(self.signal_idx)

    @property
    def records(self) -> List[TrialRecord]:
        p = self.problem
        return [
            TrialRecord(
                participant_id=self.participant_ids[i],
                trial_index=self.trial_indices[i],
                condition=self.conditions[i],
                signal=p.signals.signals[self.signal_idx[i]],
                action=p.actions.actions[self.action_idx[i]],
                state=p.states.states[self.state_idx[i]],
            )
            for i in range(len(self))
        ]

    def take(self, rows: Sequence[int]) -> "BehavioralDataset":
        rows = np.asarray(rows, dtype=int)
        return BehavioralDataset(
            self.problem,
            self.signal_idx[rows],
            self.action_idx[rows],
            self.state_idx[rows],
            [self.participant_ids[i] for i in rows],
            [self.trial_indices[i] for i in rows],
            [self.conditions[i] for i in rows],
        )

    def rebind(self, problem: DecisionProblem) -> "BehavioralDataset":
        """The same records bound to another problem over identical label spaces."""
        same = (
            problem.states.states == self.problem.states.states
            and problem.actions.actions == self.problem.actions.actions
            and problem.signals.signals == self.problem.signals.signals
        )
        if not same:
            raise PreconditionError("condition problem must share state, action and signal labels")
        return BehavioralDataset(problem, self.signal_idx, self.action_idx, self.state_idx,
                                 self.participant_ids, self.trial_indices, self.conditions)

    def relabel_conditions(self, conditions: Sequence[str]) -> "BehavioralDataset":
        return BehavioralDataset(self.problem, self.signal_idx, self.action_idx, self.state_idx,
                                 self.participant_ids, self.trial_indices, conditions)

    def condition_names(self) -> List[str]:
        return list(dict.fromkeys(self.conditions))

    def to_frame(self) -> pd.DataFrame:
        p = self.problem
        return pd.DataFrame({
            "participant_id": self.participant_ids,
            "trial_index": self.trial_indices,
            "condition": self.conditions,
            "signal": [p.signals.signals[i] for i in self.signal_idx],
            "action": [p.actions.actions[i] for i in self.action_idx],
            "state": [p.states.states[i] for i in self.state_idx],
        }, columns=COLUMNS)


# ===== INGEST =====

def _first_undecodable_line(path: Union[str, Path]) -> int:
    for number, line in enumerate(Path(path).read_bytes().splitlines(), start=1):
        try:
            line.decode("utf-8")
        except UnicodeDecodeError:
            return number
    return 0


def ingest_csv(path: Union[str, Path], problem: DecisionProblem) -> BehavioralDataset:
    """Parse and label-check a behavioral CSV; row numbers are file lines."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(1, "", "missing header") from None
    except UnicodeDecodeError as e:
        raise ParseError(_first_undecodable_line(path), "", "invalid UTF-8") from e
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(int(match.group(1)) if match else 0, "", str(e)) from e

    header = [str(c) for c in frame.columns]
    if header != COLUMNS:
        for expected, got in zip(COLUMNS + [""] * len(header), header + [""] * len(COLUMNS)):
            if expected != got:
                raise ParseError(1, got or expected, f"expected header {','.join(COLUMNS)}")

    lines = np.arange(len(frame)) + 2

    bad = ~frame["trial_index"].str.fullmatch(r"\d+")
    if bad.any():
        row = int(lines[bad.to_numpy().argmax()])
        raise ParseError(row, "trial_index", "not a nonnegative integer")
    blank = frame["participant_id"].str.strip() == ""
    if blank.any():
        raise ParseError(int(lines[blank.to_numpy().argmax()]), "participant_id", "empty participant id")

    indices = {}
    for column, kind, labels in (
        ("signal", "signal", problem.signals.signals),
        ("action", "action", problem.actions.actions),
        ("state", "state", problem.states.states),
    ):
        mapped = frame[column].map({label: i for i, label in enumerate(labels)})
        missing = mapped.isna().to_numpy()
        if missing.any():
            first = int(missing.argmax())
            raise UnknownLabel(frame[column].iloc[first], kind, row=int(lines[first]))
        indices[column] = mapped.astype(int).to_numpy()

    dataset = BehavioralDataset(
        problem,
        indices["signal"],
        indices["action"],
        indices["state"],
        frame["participant_id"].tolist(),
        frame["trial_index"].astype(int).tolist(),
        frame["condition"].tolist(),
    )
    logger.info(f"Ingested {len(dataset)} records from {path}")
    return dataset


def write_csv(ds: BehavioralDataset, path) -> None:
    ds.to_frame().to_csv(path, index=False, lineterminator="\n")


def split_by_checks(ds: BehavioralDataset, passed_participants: Iterable[str]) -> BehavioralDataset:
    """Relabel conditions by whether the participant passed the check questions."""
    passed = set(passed_participants)
    return ds.relabel_conditions(
        ["passed_checks" if pid in passed else "failed_checks" for pid in ds.participant_ids]
    )


# ===== SCORES =====

def _require_records(ds: BehavioralDataset):
    if len(ds) == 0:
        raise EmptyDataset("scoring needs at least one record")


def behavioral_score(ds: BehavioralDataset, rule: Optional[BoundRule] = None) -> float:
    """B: mean realized score over records."""
    _require_records(ds)
    rule = rule or ds.problem.rule("evaluation")
    return float(rule.matrix[ds.action_idx, ds.state_idx].mean())


def empirical_joint(ds: BehavioralDataset, alpha: Optional[float] = None) -> np.ndarray:
    """π^B over actions x states; `alpha` enables Laplace add-α smoothing."""
    _require_records(ds)
    shape = (len(ds.problem.actions), len(ds.problem.states))
    counts = np.zeros(shape)
    np.add.at(counts, (ds.action_idx, ds.state_idx), 1.0)
    if alpha:
        return (counts + alpha) / (counts.sum() + alpha * counts.size)
    return counts / len(ds)


def calibrated_score(
    ds: BehavioralDataset,
    problem: Optional[DecisionProblem] = None,
    alpha: Optional[float] = None,
    which: RuleChoice = "evaluation",
) -> float:
    """C: score of a rational agent acting on π^B(θ | a)."""
    problem = problem or ds.problem
    return properized_value(empirical_joint(ds, alpha), problem.rule(which))


class LossDecomposition(BaseModel):
    """Normalized loss ratios; the two gaps are confounded pairs of loss sources."""

    model_config = ConfigDict(frozen=True)

    R: float
    R_baseline: float
    Delta: float
    B: float
    C: float
    total_loss: float
    stimulus_prior_gap: float
    updating_optimization_gap: float
    n: int = 0


def decompose_scores(B: float, C: float, bench: Benchmarks, n: int = 0) -> LossDecomposition:
    if bench.Delta <= IDENTITY_TOL:
        raise ZeroValueOfInformation(
            f"value of information is {bench.Delta:.3g}; losses cannot be normalized",
            behavioral=B,
            calibrated=C,
        )
    d = bench.Delta
    return LossDecomposition(
        R=bench.R,
        R_baseline=bench.R_baseline,
        Delta=d,
        B=B,
        C=C,
        total_loss=(bench.R - B) / d,
        stimulus_prior_gap=(bench.R - C) / d,
        updating_optimization_gap=(C - B) / d,
        n=n,
    )


def decompose_losses(
    ds: BehavioralDataset,
    problem: Optional[DecisionProblem] = None,
    alpha: Optional[float] = None,
    which: RuleChoice = "evaluation",
) -> LossDecomposition:
    problem = problem or ds.problem
    rule = problem.rule(which)
    B = behavioral_score(ds, rule)
    C = properized_value(empirical_joint(ds, alpha), rule)
    return decompose_scores(B, C, benchmarks(problem, which), n=len(ds))


# ===== CONDITIONS =====

class ConditionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    condition: str
    n: int
    decomposition: Optional[LossDecomposition] = None
    B: Optional[float] = None
    C: Optional[float] = None
    error_code: Optional[str] = None
    error: Optional[str] = None


def per_condition_report(
    ds: BehavioralDataset,
    problem: Optional[DecisionProblem] = None,
    condition_problems: Optional[Dict[str, DecisionProblem]] = None,
    conditions: Optional[Sequence[str]] = None,
    processor: Optional[BatchProcessor] = None,
    alpha: Optional[float] = None,
    which: RuleChoice = "evaluation",
) -> Dict[str, ConditionReport]:
    """Loss decomposition per condition; one failing condition does not abort the others.

    A condition listed in `condition_problems` is scored against its own
    problem (distinct disclosure may mean a distinct benchmark).
    """
    problem = problem or ds.problem
    condition_problems = condition_problems or {}
    names = list(conditions) if conditions is not None else ds.condition_names()
    names += [c for c in condition_problems if c not in names]
    labels = np.asarray(ds.conditions, dtype=object)

    def run(name: str) -> ConditionReport:
        sub = ds.take(np.flatnonzero(labels == name))
        target = condition_problems.get(name, problem)
        try:
            sub = sub.rebind(target)
            return ConditionReport(condition=name, n=len(sub),
                                   decomposition=decompose_losses(sub, target, alpha, which))
        except ZeroValueOfInformation as e:
            return ConditionReport(condition=name, n=len(sub), B=e.behavioral, C=e.calibrated,
                                   error_code=e.code, error=e.message)
        except DPToolError as e:
            return ConditionReport(condition=name, n=len(sub), error_code=e.code, error=e.message)

    processor = processor or BatchProcessor()
    reports = processor.process_batch(names, run)
    logger.info(f"Scored {len(names)} conditions")
    return {r.condition: r for r in reports}


# ===== BOOTSTRAP =====

class Interval(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: float
    low: float
    high: float


class BootstrapResult(BaseModel):
    """Percentile intervals from a seeded nonparametric bootstrap."""

    model_config = ConfigDict(frozen=True)

    n_resamples: int
    seed: int
    level: float
    B: Interval
    C: Interval
    total_loss: Optional[Interval] = None
    stimulus_prior_gap: Optional[Interval] = None
    updating_optimization_gap: Optional[Interval] = None
    artifact_added: bool = True


def bootstrap_decomposition(
    ds: BehavioralDataset,
    problem: Optional[DecisionProblem] = None,
    n_resamples: Optional[int] = None,
    seed: int = 0,
    level: Optional[float] = None,
    processor: Optional[BatchProcessor] = None,
    alpha: Optional[float] = None,
    which: RuleChoice = "evaluation",
) -> BootstrapResult:
    settings = get_settings()
    n_resamples = n_resamples or settings.bootstrap_resamples
    level = level or settings.bootstrap_level
    problem = problem or ds.problem
    _require_records(ds)

    rule = problem.rule(which)
    bench = benchmarks(problem, which)
    children = np.random.SeedSequence(seed).spawn(n_resamples)
    n = len(ds)

    def resample(child: np.random.SeedSequence) -> tuple:
        rng = np.random.default_rng(child)
        sub = ds.take(rng.integers(0, n, size=n))
        return behavioral_score(sub, rule), properized_value(empirical_joint(sub, alpha), rule)

    processor = processor or BatchProcessor()
    draws = np.array(processor.process_batch(children, resample))
    B_point = behavioral_score(ds, rule)
    C_point = properized_value(empirical_joint(ds, alpha), rule)
    tails = [50.0 * (1.0 - level), 50.0 * (1.0 + level)]

    def interval(estimate: float, values: np.ndarray) -> Interval:
        low, high = np.percentile(values, tails)
        return Interval(estimate=estimate, low=float(low), high=float(high))

    result = dict(
        n_resamples=n_resamples, seed=seed, level=level,
        B=interval(B_point, draws[:, 0]), C=interval(C_point, draws[:, 1]),
    )
    if bench.Delta > IDENTITY_TOL:
        d = bench.Delta
        result["total_loss"] = interval((bench.R - B_point) / d, (bench.R - draws[:, 0]) / d)
        result["stimulus_prior_gap"] = interval((bench.R - C_point) / d, (bench.R - draws[:, 1]) / d)
        result["updating_optimization_gap"] = interval((C_point - B_point) / d, (draws[:, 1] - draws[:, 0]) / d)
    logger.info(f"Bootstrapped {n_resamples} resamples of {n} records (seed {seed})")
    return BootstrapResult(**result)
