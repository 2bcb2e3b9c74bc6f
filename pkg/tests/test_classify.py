"""Likelihood filter, consultation sessions, and the tolerability vote."""
import dataclasses

import pytest

from pclkit.classify import (
    AggregationRule,
    ConsultationSession,
    IncompleteVotesError,
    SessionStateError,
    classify,
    close_session,
    filter_by_likelihood,
    ledger_from_session,
    missing_votes,
    open_session,
    record_vote,
    register_groups,
    retained_exposure_detail,
    session_from_ledger,
)
from pclkit.model import EventScenario, HazardModel, ModelError


class TestLikelihoodFilter:
    def test_mini_splits_at_default_threshold(self, mini_doc):
        result = filter_by_likelihood(mini_doc.hazard)
        assert result.considered_events == ("e1", "e2")
        assert result.retained == (("L1", "e3"),)

    def test_boundary_probability_is_excluded(self):
        hazard = HazardModel(
            "h", "", (EventScenario("edge", 0.005, {"x": 1.0}),)
        )
        result = filter_by_likelihood(hazard, 0.005)
        assert result.considered_events == ()
        assert result.retained == (("x", "edge"),)

    def test_just_above_threshold_is_considered(self):
        hazard = HazardModel("h", "", (EventScenario("in", 0.0051, {"x": 1.0}),))
        result = filter_by_likelihood(hazard, 0.005)
        assert result.considered_events == ("in",)
        assert result.retained == ()

    def test_threshold_zero_considers_everything(self, mini_doc):
        result = filter_by_likelihood(mini_doc.hazard, 0.0)
        assert set(result.considered_events) == {"e1", "e2", "e3"}

    def test_threshold_validation(self, mini_doc):
        for bad in (-0.1, 1.0, 1.5):
            with pytest.raises(ModelError):
                filter_by_likelihood(mini_doc.hazard, bad)

    def test_retained_detail_rows(self, mini_doc):
        result = filter_by_likelihood(mini_doc.hazard)
        rows = retained_exposure_detail(mini_doc.hazard, result.retained)
        assert rows == [
            {
                "loss_id": "L1",
                "event_id": "e3",
                "annual_probability": 0.004,
                "magnitude": 500.0,
                "expected_annual_exposure": 2.0,
            }
        ]


class TestSessionLifecycle:
    def test_open_session_scopes_to_considered_losses(self, mini_doc):
        session = open_session(mini_doc)
        assert session.considered_losses == ("L1", "L2")
        assert session.status == "open"
        # completeness is per registered group; registering one creates gaps
        assert session.complete
        assert not register_groups(session, ["a"]).complete

    def test_vote_and_tally(self, mini_doc):
        s = register_groups(open_session(mini_doc), ["a", "b"])
        s = record_vote(s, "a", "L1", "intolerable")
        s = record_vote(s, "b", "L1", "tolerable")
        assert s.tally()["L1"] == {"tolerable": 1, "intolerable": 1}

    def test_duplicate_vote_replaces_verdict(self, mini_doc):
        s = register_groups(open_session(mini_doc), ["a"])
        s = record_vote(s, "a", "L1", "intolerable")
        s = record_vote(s, "a", "L1", "tolerable")
        assert s.tally()["L1"] == {"tolerable": 1, "intolerable": 0}
        assert len(s.votes) == 1

    def test_missing_votes_enumerates_pairs(self, mini_doc):
        s = register_groups(open_session(mini_doc), ["a", "b"])
        s = record_vote(s, "a", "L1", "tolerable")
        assert ("a", "L2") in missing_votes(s)
        assert ("b", "L1") in missing_votes(s)
        assert len(missing_votes(s)) == 3

    def test_vote_rejections(self, mini_doc):
        s = register_groups(open_session(mini_doc), ["a"])
        with pytest.raises(ModelError):
            record_vote(s, "ghost", "L1", "tolerable")
        with pytest.raises(ModelError):
            record_vote(s, "a", "ghost", "tolerable")
        with pytest.raises(ModelError):
            record_vote(s, "a", "L1", "unsure")

    def test_closed_session_rejects_writes(self, mini_doc):
        s = close_session(register_groups(open_session(mini_doc), ["a"]))
        with pytest.raises(SessionStateError):
            record_vote(s, "a", "L1", "tolerable")
        with pytest.raises(SessionStateError):
            register_groups(s, ["b"])


class TestClassification:
    def run(self, mini_doc, verdicts, threshold=0.5):
        s = register_groups(open_session(mini_doc), sorted(verdicts))
        for group, by_loss in verdicts.items():
            for loss_id, verdict in by_loss.items():
                s = record_vote(s, group, loss_id, verdict)
        return classify(close_session(s), AggregationRule(threshold=threshold))

    def test_majority_fraction_boundary_is_inclusive(self, mini_doc):
        # 2 of 4 intolerable at threshold 0.5: count/n == threshold -> intolerable
        verdicts = {
            f"g{i}": {"L1": v, "L2": "tolerable"}
            for i, v in enumerate(["intolerable", "intolerable", "tolerable", "tolerable"])
        }
        part = self.run(mini_doc, verdicts)
        assert part.intolerable == frozenset({"L1"})
        assert part.tolerable == frozenset({"L2"})

    def test_below_fraction_stays_tolerable(self, mini_doc):
        verdicts = {
            f"g{i}": {"L1": v, "L2": "tolerable"}
            for i, v in enumerate(["intolerable", "tolerable", "tolerable"])
        }
        part = self.run(mini_doc, verdicts)
        assert part.intolerable == frozenset()

    def test_unanimity_threshold(self, mini_doc):
        verdicts = {
            f"g{i}": {"L1": "intolerable", "L2": "intolerable" if i else "tolerable"}
            for i in range(3)
        }
        part = self.run(mini_doc, verdicts, threshold=1.0)
        assert part.intolerable == frozenset({"L1"})

    def test_incomplete_votes_raise_with_missing_pairs(self, mini_doc):
        s = register_groups(open_session(mini_doc), ["a", "b"])
        s = record_vote(s, "a", "L1", "tolerable")
        with pytest.raises(IncompleteVotesError) as exc:
            classify(close_session(s), AggregationRule())
        assert ("b", "L2") in exc.value.missing

    def test_partition_carries_rule_and_retained(self, mini_session):
        part = classify(mini_session, AggregationRule(threshold=0.5))
        assert part.rule_used == "group-fraction>=0.5"
        assert part.retained_by_default == (("L1", "e3"),)
        d = part.to_dict()
        assert d["intolerable"] == ["L1"] and d["tolerable"] == ["L2"]

    def test_rule_threshold_validation(self):
        with pytest.raises(ModelError):
            AggregationRule(threshold=0.0)
        with pytest.raises(ModelError):
            AggregationRule(threshold=1.1)


class TestLedgerBridge:
    def test_session_from_ledger_replays_votes(self, mini_session):
        assert mini_session.status == "closed"
        assert mini_session.complete
        assert mini_session.tally()["L1"] == {"tolerable": 1, "intolerable": 2}

    def test_round_trip_preserves_content(self, mini_doc, mini_session):
        ledger = ledger_from_session(mini_session)
        again = session_from_ledger(mini_doc, ledger, threshold=mini_session.likelihood_threshold)
        assert again.votes == mini_session.votes
        assert again.groups == mini_session.groups
        assert again.status == mini_session.status

    def test_digest_mismatch_rejected(self, mini_doc, mini_ledger):
        pinned = dataclasses.replace(mini_ledger, scenario_digest="a" * 64)
        with pytest.raises(ModelError, match="bound to scenario digest"):
            session_from_ledger(mini_doc, pinned, threshold=0.005, scenario_digest="b" * 64)

    def test_null_digest_skips_the_check(self, mini_doc, mini_ledger):
        assert mini_ledger.scenario_digest is None
        session = session_from_ledger(mini_doc, mini_ledger, threshold=0.005, scenario_digest="b" * 64)
        assert session.complete

    def test_ledger_vote_for_filtered_loss_rejected(self, mini_doc, mini_ledger):
        bad = dataclasses.replace(
            mini_ledger, votes=mini_ledger.votes + (("business", "ghost", "tolerable"),)
        )
        with pytest.raises(ModelError):
            session_from_ledger(mini_doc, bad, threshold=0.005)
