"""Tests for the experiment design audit."""

import json

import pytest

from dptool.audit import (
    WELL_DEFINED_RULES,
    audit_problem,
    deception_screen,
    incentive_evaluation_consistency,
    likelihoods_identified,
    multiplicity_check,
    prior_identified,
)
from dptool.errors import InfeasibleDisclosure, MultiplicityNotApplicable
from dptool.problem import AggregateStat, Belief, DecisionProblem, fixture_path
from tests.conftest import ACCURACY_RULE, RECID_ACTIONS, RECID_RULE, RECID_STATES, make_problem

SIGNAL_1 = "predicted_recidivate"


def accuracy_problem(accuracy: float, **disclosure) -> DecisionProblem:
    return make_problem(
        [[0.35, 0.15], [0.15, 0.35]],
        endowed_prior=[0.5, 0.5],
        disclosure={
            "prior_endowed": True,
            "aggregate_stats": [{"name": "unconditional_accuracy", "value": accuracy}],
            **disclosure,
        },
    )


class TestVerdicts:
    """Well-definedness rule table."""

    def test_feature_conditional_confidence_is_ill_defined(self, recidivism_features):
        report = audit_problem(recidivism_features)
        assert report.verdict == "ill_defined"
        codes = [r.code for r in report.reasons]
        assert "FEATURE_CONDITIONAL_CONFIDENCE" in codes
        assert "PRIOR_UNAVAILABLE" in codes

    def test_prediction_conditional_confidence_is_well_defined(self, recidivism_prediction):
        report = audit_problem(recidivism_prediction)
        assert report.verdict == "well_defined"
        assert report.sub_verdict == "posterior_revealed"
        assert not report.loss_ledger["prior"].definable

    def test_original_voting_is_degenerate(self, voting_original):
        report = audit_problem(voting_original)
        assert report.verdict == "degenerate"
        assert all(not entry.definable for entry in report.loss_ledger.values())
        assert "FLAT_RULE" in [w.code for w in report.warnings]

    def test_voting_with_cost_is_degenerate(self, voting):
        assert audit_problem(voting).verdict == "degenerate"

    def test_revealing_recidivism_is_well_defined(self, recidivism):
        report = audit_problem(recidivism)
        assert report.verdict == "well_defined"
        assert report.sub_verdict == "prior_and_likelihoods"
        assert all(entry.definable for entry in report.loss_ledger.values())

    def test_feedback_only_is_learnable_in_the_limit(self):
        problem = make_problem([[0.4, 0.1], [0.1, 0.4]], disclosure={"feedback_after_trial": True})
        report = audit_problem(problem)
        assert report.verdict == "well_defined"
        assert report.sub_verdict == "learnable_in_the_limit"
        assert "LEARNABLE_IN_LIMIT" in [w.code for w in report.warnings]

    def test_class_conditional_accuracies_count_as_likelihoods(self):
        problem = make_problem([[0.4, 0.1], [0.1, 0.4]], endowed_prior=[0.5, 0.5], disclosure={
            "prior_endowed": True,
            "aggregate_stats": [
                {"name": "class_conditional_accuracy", "value": 0.8, "conditioning": "not_recidivate"},
                {"name": "class_conditional_accuracy", "value": 0.8, "conditioning": "recidivate"},
            ],
        })
        assert likelihoods_identified(problem)
        assert audit_problem(problem).sub_verdict == "prior_and_likelihoods"

    def test_accuracy_alone_does_not_pin_likelihoods(self, recidivism_accuracy):
        assert prior_identified(recidivism_accuracy)
        assert not likelihoods_identified(recidivism_accuracy)
        assert audit_problem(recidivism_accuracy).verdict == "ill_defined"

    def test_rule_not_communicated(self, recidivism):
        disclosure = recidivism.disclosure.model_copy(update={"scoring_rule_communicated": False})
        report = audit_problem(recidivism.model_copy(update={"disclosure": disclosure}))
        assert report.verdict == "ill_defined"
        assert report.reasons[0].code == "RULE_NOT_COMMUNICATED"

    def test_interpretation_note_always_present(self, recidivism):
        assert "INTERPRETATION_UNMEASURABLE" in [n.code for n in audit_problem(recidivism).notes]

    def test_adding_disclosure_never_breaks_well_definedness(self, recidivism_prediction):
        base = recidivism_prediction.disclosure
        for field in ("prior_endowed", "likelihoods_disclosed", "feedback_after_trial"):
            richer = recidivism_prediction.model_copy(update={
                "disclosure": base.model_copy(update={field: True}),
                "endowed_prior": Belief(probs=[0.5, 0.5]),
            })
            assert audit_problem(richer).verdict == "well_defined"

    def test_rule_table_is_ordered(self):
        assert WELL_DEFINED_RULES[0].code == "DEGENERATE"
        assert WELL_DEFINED_RULES[-1].outcome == "ill_defined"


class TestMultiplicity:
    """Posterior bounds over joints consistent with disclosure."""

    def test_accuracy_07_flips_action(self):
        result = multiplicity_check(accuracy_problem(0.7))
        bounds = result.posterior_bounds[SIGNAL_1]
        assert bounds.lower == pytest.approx(0.625)
        assert bounds.upper == pytest.approx(1.0)
        assert (bounds.lower_action, bounds.upper_action) == ("release", "not_release")
        assert result.action_flips[SIGNAL_1]
        assert result.multiplicity

    def test_witnesses_attain_bounds_and_satisfy_constraints(self):
        result = multiplicity_check(accuracy_problem(0.7))
        low, high = result.witnesses
        assert low == [[pytest.approx(0.2), pytest.approx(0.0)], [pytest.approx(0.3), pytest.approx(0.5)]]
        assert high == [[pytest.approx(0.5), pytest.approx(0.3)], [pytest.approx(0.0), pytest.approx(0.2)]]
        for joint in (low, high):
            assert joint[0][0] + joint[1][1] == pytest.approx(0.7)
            assert joint[0][1] + joint[1][1] == pytest.approx(0.5)
            assert sum(map(sum, joint)) == pytest.approx(1.0)

    def test_accuracy_08_no_flip_but_multiplicity(self):
        stats = [AggregateStat(name="unconditional_accuracy", value=0.8)]
        result = multiplicity_check(accuracy_problem(0.7), disclosed_stats=stats)
        bounds = result.posterior_bounds[SIGNAL_1]
        assert bounds.lower == pytest.approx(5 / 7)
        assert bounds.upper == pytest.approx(1.0)
        assert not bounds.action_flips
        assert result.multiplicity

    def test_perfect_accuracy_collapses(self, recidivism):
        result = multiplicity_check(recidivism)
        bounds = result.posterior_bounds[SIGNAL_1]
        assert bounds.lower == pytest.approx(bounds.upper)
        assert not result.multiplicity

    def test_infeasible_disclosure(self):
        problem = accuracy_problem(0.7, likelihoods_disclosed=False)
        stats = [
            AggregateStat(name="unconditional_accuracy", value=0.2),
            AggregateStat(name="class_conditional_accuracy", value=1.0, conditioning="recidivate"),
            AggregateStat(name="class_conditional_accuracy", value=1.0, conditioning="not_recidivate"),
        ]
        with pytest.raises(InfeasibleDisclosure):
            multiplicity_check(problem, disclosed_stats=stats)

    def test_requires_binary_prediction(self, voting):
        with pytest.raises(MultiplicityNotApplicable):
            multiplicity_check(voting)


class TestConsistency:
    """Incentive vs evaluation rule agreement."""

    def test_identical_rules(self, recidivism):
        assert incentive_evaluation_consistency(recidivism) == []

    def test_accuracy_evaluation_disagrees_between_half_and_12_19(self):
        problem = make_problem([[0.4, 0.1], [0.1, 0.4]], evaluation_rule=ACCURACY_RULE)
        warnings = incentive_evaluation_consistency(problem)
        assert [w.code for w in warnings] == ["MISMATCHED_RULES"]
        low, high = warnings[0].details["interval"]
        assert 0.5 < low <= high < 12 / 19
        assert low == pytest.approx(0.51)
        assert high == pytest.approx(0.63)

    def test_proper_incentive_beliefs_transfer(self):
        problem = DecisionProblem.model_validate(dict(
            states=RECID_STATES, signals=["s0", "s1"], joint=[[0.4, 0.1], [0.1, 0.4]],
            actions={"kind": "belief_report", "denominator": 100},
            incentive_rule={"form": "quadratic"},
            evaluation_rule={"form": "table", "table": RECID_RULE, "actions": RECID_ACTIONS},
        ))
        assert incentive_evaluation_consistency(problem) == []
        assert "BELIEFS_TRANSFERABLE" in [n.code for n in audit_problem(problem).notes]


class TestDeception:
    """Ambiguous action effects and contradicting feedback."""

    def test_original_voting_is_ambiguous(self, voting_original):
        findings = deception_screen(voting_original)
        assert [f.code for f in findings] == ["DISCLOSURE_AMBIGUOUS"]
        assert "vote" in findings[0].details["actions"]
        assert findings[0].details["score_offsets"] == {"do_not_vote": 0.0, "vote": 0.0}

    def test_action_order_does_not_change_findings(self):
        data = json.loads(fixture_path("voting_original").read_text(encoding="utf-8"))
        data["actions"] = ["vote", "do_not_vote"]
        reordered = DecisionProblem.model_validate(data)
        findings = deception_screen(reordered)
        assert [f.code for f in findings] == ["DISCLOSURE_AMBIGUOUS"]
        assert set(findings[0].details["actions"]) == {"vote", "do_not_vote"}

    def test_constant_shift_between_later_actions(self):
        problem = DecisionProblem.model_validate(dict(
            states=["lose", "win"],
            signals=["behind", "ahead"],
            actions=["abstain", "vote", "vote_and_donate"],
            joint=[[0.4, 0.1], [0.1, 0.4]],
            incentive_rule={"table": [[0.5, 0.0], [0.0, 1.0], [-0.2, 0.8]]},
        ))
        findings = deception_screen(problem)
        assert len(findings) == 1
        assert findings[0].details["actions"] == ["vote", "vote_and_donate"]
        assert findings[0].details["score_offsets"]["vote_and_donate"] == pytest.approx(-0.2)

    def test_disclosed_action_effects_silence_the_screen(self):
        data = json.loads(fixture_path("voting_original").read_text(encoding="utf-8"))
        data["disclosure"]["action_effects_disclosed"] = True
        assert deception_screen(DecisionProblem.model_validate(data)) == []

    def test_feedback_contradiction(self):
        problem = make_problem([[0.35, 0.25], [0.125, 0.275]], disclosure={
            "feedback_after_trial": True,
            "aggregate_stats": [{"name": "unconditional_accuracy", "value": 0.9}],
        })
        findings = deception_screen(problem)
        assert [f.code for f in findings] == ["FEEDBACK_CONTRADICTION"]
        assert findings[0].details["implied"] == pytest.approx(0.625)

    def test_consistent_disclosure(self, recidivism):
        assert deception_screen(recidivism) == []
