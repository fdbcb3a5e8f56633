"""Shared fixtures for the dptool test suite."""

import pytest

from dptool.config import get_settings
from dptool.problem import DecisionProblem, load_fixture

RECID_STATES = ["not_recidivate", "recidivate"]
RECID_ACTIONS = ["release", "not_release"]
RECID_SIGNALS = ["predicted_not_recidivate", "predicted_recidivate"]
RECID_RULE = [[0.2, -0.2], [-1.0, 0.5]]
ACCURACY_RULE = [[1.0, 0.0], [0.0, 1.0]]


def make_problem(joint, rule=RECID_RULE, **fields) -> DecisionProblem:
    """Binary recidivism-style problem with the given joint and rule."""
    data = dict(
        states=RECID_STATES,
        actions=RECID_ACTIONS,
        signals=RECID_SIGNALS[: len(joint)] if len(joint) <= 2 else [f"s{i}" for i in range(len(joint))],
        joint=joint,
        incentive_rule=rule,
    )
    data.update(fields)
    return DecisionProblem.model_validate(data)


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    for name in ("DPTOOL_NO_COLOR", "DPTOOL_LOG_LEVEL", "DPTOOL_SEED", "DPTOOL_WORKERS"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def recidivism():
    return load_fixture("recidivism")


@pytest.fixture
def recidivism_features():
    return load_fixture("recidivism_features")


@pytest.fixture
def recidivism_prediction():
    return load_fixture("recidivism_prediction")


@pytest.fixture
def recidivism_accuracy():
    return load_fixture("recidivism_accuracy")


@pytest.fixture
def voting():
    return load_fixture("voting")


@pytest.fixture
def voting_original():
    return load_fixture("voting_original")


@pytest.fixture
def belief_problem():
    """Belief reports on a 101-point grid scored by the quadratic rule."""
    return DecisionProblem.model_validate(dict(
        states=RECID_STATES,
        actions={"kind": "belief_report", "denominator": 100},
        signals=RECID_SIGNALS,
        joint=[[0.4, 0.1], [0.1, 0.4]],
        incentive_rule={"form": "quadratic"},
    ))
