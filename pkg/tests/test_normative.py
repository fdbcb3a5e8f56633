"""Tests for optimal actions, properization, benchmarks and axiom checks."""

import numpy as np
import pytest

from dptool.errors import PreconditionError
from dptool.normative import (
    PreferenceRelation,
    action_regions,
    belief_cutpoints,
    benchmarks,
    check_non_indifference,
    check_ordering_axiom,
    expected_score,
    is_proper,
    optimal_action,
    optimal_action_certain,
    optimal_action_index,
    optimal_action_under_risk,
    preference_from_rule,
    properize,
    rational_baseline,
    rational_benchmark,
    reachable_optimal_actions,
    value_of_information,
)
from dptool.problem import BoundRule, DecisionProblem, belief_grid
from tests.conftest import RECID_ACTIONS, RECID_RULE, RECID_STATES, make_problem

VOTE_RULE = [[0.0, 0.5], [-0.25, 0.25]]


@pytest.fixture
def recid_rule():
    return BoundRule.from_table(RECID_RULE, RECID_ACTIONS, RECID_STATES)


@pytest.fixture
def vote_rule():
    return BoundRule.from_table(VOTE_RULE, ["do_not_vote", "vote"], ["lose", "win"])


def belief_problem(form: str, **rule) -> DecisionProblem:
    return DecisionProblem.model_validate(dict(
        states=RECID_STATES, signals=["s"], joint=[[0.5, 0.5]],
        actions={"kind": "belief_report", "denominator": 100},
        incentive_rule={"form": form, **rule},
    ))


class TestOptimalActions:
    """Expected scores and optimal actions under each regime."""

    def test_expected_score(self, recid_rule):
        assert expected_score(recid_rule, "release", [0.5, 0.5]) == pytest.approx(0.0)
        assert expected_score(recid_rule, "not_release", [0.5, 0.5]) == pytest.approx(-0.25)
        assert expected_score(recid_rule, 1, [0.0, 1.0]) == pytest.approx(0.5)

    def test_optimal_action(self, recid_rule):
        action, value = optimal_action(recid_rule, [0.3, 0.7])
        assert action == "not_release"
        assert value == pytest.approx(0.05)
        assert optimal_action(recid_rule, [0.5, 0.5]) == ("release", pytest.approx(0.0))

    def test_voting_never_votes(self, vote_rule):
        grid = belief_grid(2, 100)
        assert len(grid) == 101
        assert all(optimal_action(vote_rule, belief)[0] == "do_not_vote" for belief in grid)

    def test_optimal_action_certain(self, recid_rule):
        assert optimal_action_certain(recid_rule, "recidivate") == "not_release"
        assert optimal_action_certain(recid_rule, "not_recidivate") == "release"
        flat = BoundRule.from_table([[3.0, 3.0], [3.0, 3.0]], RECID_ACTIONS, RECID_STATES)
        assert optimal_action_certain(flat, "recidivate") == "release"

    def test_optimal_action_under_risk_uses_endowed_prior(self):
        problem = make_problem([[0.1, 0.4], [0.1, 0.4]], endowed_prior=[0.55, 0.45],
                               disclosure={"prior_endowed": True}, regime="risk")
        action, value = optimal_action_under_risk(problem)
        assert action == "release"
        assert value == pytest.approx(0.02)


class TestCutpoints:
    """Exact belief thresholds of two-state rules."""

    def test_recidivism_switch_at_12_19(self, recid_rule):
        cuts = belief_cutpoints(recid_rule)
        assert len(cuts) == 1
        assert cuts[0].fraction == "12/19"
        assert cuts[0].belief == pytest.approx(12 / 19)
        assert (cuts[0].below, cuts[0].above) == ("release", "not_release")

    def test_voting_has_no_cutpoint(self, vote_rule):
        assert belief_cutpoints(vote_rule) == []

    def test_three_state_rule_rejected(self):
        rule = BoundRule.from_table([[1, 0, 0]], ["a"], ["x", "y", "z"])
        with pytest.raises(PreconditionError):
            belief_cutpoints(rule)

    def test_action_regions(self, recid_rule):
        regions = action_regions(properize(recid_rule))
        assert regions["release"] == [0.0, pytest.approx(0.63)]
        assert regions["not_release"] == [pytest.approx(0.64), 1.0]


class TestProperization:
    """Properized rules and properness checks."""

    def test_properized_voting_rule(self, vote_rule):
        s_hat = properize(vote_rule)
        for q in (0.0, 0.3, 1.0):
            assert s_hat([1 - q, q], "win") == 0.5
            assert s_hat([1 - q, q], "lose") == 0.0

    def test_properized_recidivism_rule(self, recid_rule):
        s_hat = properize(recid_rule)
        assert s_hat.score([0.3, 0.7], "recidivate") == 0.5
        assert s_hat.score([0.5, 0.5], "recidivate") == -0.2

    def test_properized_rule_is_proper_by_construction(self, recid_rule):
        s_hat = properize(recid_rule)
        for p in s_hat.grid[::5]:
            truthful = s_hat.expected(p, p)
            assert all(truthful >= s_hat.expected(p, other) - 1e-12 for other in s_hat.grid)

    def test_quadratic_is_strictly_proper(self):
        verdict = is_proper(belief_problem("quadratic").rule())
        assert verdict.proper and verdict.strict
        assert verdict.counterexample is None

    def test_logarithmic_is_strictly_proper(self):
        verdict = is_proper(belief_problem("logarithmic", clip=1e-4).rule())
        assert verdict.proper and verdict.strict

    def test_linear_rule_is_improper(self):
        verdict = is_proper(belief_problem("linear").rule())
        assert not verdict.proper
        assert verdict.counterexample.gain > 0

    def test_properized_voting_rule_is_weakly_proper(self, vote_rule):
        """Report-independent scores pass as proper; the tie is the counterexample."""
        verdict = is_proper(properize(vote_rule).as_belief_rule())
        assert verdict.proper and not verdict.strict
        assert verdict.warning == "WEAKLY_PROPER_NON_STRICT"
        assert verdict.counterexample.gain == 0.0

    def test_properness_requires_belief_reports(self, recid_rule):
        with pytest.raises(PreconditionError):
            is_proper(recid_rule)

    def test_decision_rule_plugged_into_belief_reports(self):
        problem = belief_problem("table", table=RECID_RULE, actions=RECID_ACTIONS)
        rule = problem.rule()
        assert rule.matrix.shape == (101, 2)
        np.testing.assert_allclose(rule.matrix[63], RECID_RULE[0])
        np.testing.assert_allclose(rule.matrix[64], RECID_RULE[1])


class TestBenchmarks:
    """Rational baseline, benchmark and value of information."""

    def test_recidivism_revealing(self, recidivism):
        assert rational_baseline(recidivism) == pytest.approx(0.0)
        assert rational_benchmark(recidivism) == pytest.approx(0.35)
        assert value_of_information(recidivism) == pytest.approx(0.35)

    def test_baseline_with_skewed_prior(self):
        problem = make_problem([[0.3, 0.25], [0.25, 0.2]])
        assert rational_baseline(problem) == pytest.approx(0.02)

    def test_point_mass_prior(self):
        problem = make_problem([[0.0, 0.6], [0.0, 0.4]])
        assert rational_baseline(problem) == pytest.approx(0.5)

    def test_uninformative_joint(self):
        problem = make_problem(np.outer([0.5, 0.5], [0.3, 0.7]).tolist())
        assert rational_benchmark(problem) == pytest.approx(rational_baseline(problem))
        assert value_of_information(problem) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("w", [0.2, 0.5, 0.9])
    def test_voting_benchmark_is_half_win_probability(self, w):
        problem = DecisionProblem.model_validate(dict(
            states=["lose", "win"], actions=["do_not_vote", "vote"], signals=["behind", "ahead"],
            joint=[[0.6 * (1 - w), 0.3 * w], [0.4 * (1 - w), 0.7 * w]], incentive_rule=VOTE_RULE,
        ))
        assert rational_benchmark(problem) == pytest.approx(0.5 * w)
        assert value_of_information(problem) == pytest.approx(0.0, abs=1e-12)

    def test_benchmarks_bundle(self, voting):
        bench = benchmarks(voting)
        assert bench.Delta == pytest.approx(0.0, abs=1e-12)
        assert reachable_optimal_actions(voting) == ["do_not_vote"] * 3


class TestAxioms:
    """Finite checks of ordering and non-indifference."""

    def test_total_order_passes(self):
        rel = PreferenceRelation(options=["A", "B", "C"], weak_pref=[
            [True, True, True], [False, True, True], [False, False, True],
        ])
        assert check_ordering_axiom(rel).passed

    def test_missing_comparison_fails_completeness(self):
        rel = PreferenceRelation(options=["A", "B"], weak_pref=[[True, False], [False, True]])
        verdict = check_ordering_axiom(rel)
        assert not verdict.passed
        assert verdict.violation == "completeness"
        assert verdict.witness == ["A", "B"]

    def test_cycle_fails_transitivity(self):
        rel = PreferenceRelation(options=["A", "B", "C"], weak_pref=[
            [True, True, False], [False, True, True], [True, False, True],
        ])
        verdict = check_ordering_axiom(rel)
        assert verdict.violation == "transitivity"
        assert verdict.witness == ["A", "B", "C"]

    def test_relation_must_be_reflexive(self):
        with pytest.raises(ValueError):
            PreferenceRelation(options=["A"], weak_pref=[[False]])

    def test_rule_induced_preferences_are_ordered(self, recid_rule):
        for q in (0.0, 12 / 19, 0.9):
            assert check_ordering_axiom(preference_from_rule(recid_rule, [1 - q, q])).passed

    def test_non_indifference(self, recid_rule, vote_rule):
        assert check_non_indifference(recid_rule).passed
        assert check_non_indifference(vote_rule).passed
        flat = BoundRule.from_table([[5.0, 5.0], [5.0, 5.0]], RECID_ACTIONS, RECID_STATES)
        verdict = check_non_indifference(flat)
        assert not verdict.passed
        assert verdict.violation == "flat_rule"


class TestAffineInvariance:
    """Positive affine rescaling leaves decisions unchanged."""

    def test_optimal_actions_survive_rescaling(self, recid_rule):
        scaled = recid_rule.affine(3.0, -7.0)
        for q in np.linspace(0, 1, 21):
            belief = [1 - q, q]
            assert optimal_action_index(scaled, belief) == optimal_action_index(recid_rule, belief)

    def test_properized_actions_survive_rescaling(self, recid_rule):
        base, scaled = properize(recid_rule), properize(recid_rule.affine(0.5, 2.0))
        np.testing.assert_array_equal(base.grid_actions, scaled.grid_actions)
        assert scaled.optimal_action_of([0.2, 0.8]) == "not_release"
