"""End-to-end cycle runs, the record store, revisions, and audits."""
import dataclasses

import pytest

from pclkit.classify import session_from_ledger
from pclkit.config import RunConfig, resolve_config
from pclkit.cover import CoverSolution
from pclkit.cycle import (
    CycleError,
    CycleRecord,
    GapReport,
    RecordStore,
    compare_scenarios,
    diff_records,
    history,
    inputs_digest,
    record_from_dict,
    revise_cycle,
    run_cycle,
)
from pclkit.model import ActionCluster
from pclkit.portfolio import Appraisal, Portfolio
from pclkit.scenario_io import scenario_digest


def remake_session(mini_doc, mini_ledger, config, session_id=None, votes=None):
    ledger = mini_ledger
    if session_id is not None:
        ledger = dataclasses.replace(ledger, session_id=session_id)
    if votes is not None:
        ledger = dataclasses.replace(ledger, votes=tuple(votes))
    return session_from_ledger(
        mini_doc, ledger,
        threshold=config.likelihood_threshold,
        scenario_digest=scenario_digest(mini_doc),
    )


class TestRunCycle:
    def test_record_identity_and_stages(self, mini_record):
        rec = mini_record
        assert rec.cycle_id == "c" + rec.inputs_digest[:12]
        assert rec.cycle_id == "c3bccbaa75326"
        assert rec.lineage == "coastal-flood"
        assert rec.revision == 1
        assert rec.created_at == 0
        assert rec.currency_unit == "MUSD"
        assert rec.considered_events == ("e1", "e2")
        assert isinstance(rec.step1, CoverSolution)
        assert isinstance(rec.step2, Portfolio)
        assert isinstance(rec.appraisal, Appraisal)
        assert isinstance(rec.gap, GapReport)
        assert rec.solver_modes == {"step1": "exact", "step2": "exact"}
        assert not rec.escalation

    def test_stage_handoff_values(self, mini_record):
        rec = mini_record
        assert rec.partition.intolerable == frozenset({"L1"})
        assert rec.step1.selected == ("A1",)
        assert rec.step1.annualized_cost == 10.0
        # A1's half reduction on L2 carries into step 2's input
        assert rec.revised_tolerable == {"L2": 10.0}
        assert rec.fully_addressed == ()
        assert rec.step2.p_selected == ("A3",)
        assert rec.step2.c_selected == ("I1",)
        assert rec.step2.assignments == {"L2": ActionCluster.C}

    def test_gap_report(self, mini_record):
        gap = mini_record.gap
        assert gap.unoptimized_total == 15.0
        assert gap.optimized_total == pytest.approx(22.2)
        assert gap.optimized_tolerable_total == pytest.approx(12.2)
        assert gap.savings == pytest.approx(2.8)
        assert gap.intolerable_exposure == {
            "loss_ids": ["L1"],
            "total_eal": 1.0,
            "eliminated": True,
        }
        assert [r["loss_id"] for r in gap.retained_by_default] == ["L1"]

    def test_synergy_disclosure(self, mini_record):
        loadings = mini_record.disclosures["instrument_loadings"]
        assert loadings == {
            "I1": {"base": 1.3, "effective": 0.9, "synergy_active": True}
        }

    def test_nondeterministic_ids_are_fresh(self, mini_doc, mini_session, mini_config):
        rec = run_cycle(mini_doc, mini_session, mini_config)
        assert rec.cycle_id != "c3bccbaa75326"
        assert rec.created_at > 0
        # identity differs, content does not
        assert rec.inputs_digest == inputs_digest(mini_doc, mini_session, mini_config)

    def test_require_pins_into_step2(self, mini_doc, mini_session, mini_config):
        rec = run_cycle(mini_doc, mini_session, mini_config, require=("A2",))
        assert rec.step2.p_selected == ("A2", "A3")
        assert rec.step2.outlay.total == pytest.approx(16.2)

    def test_require_already_selected_in_step1_is_dropped(
        self, mini_doc, mini_session, mini_config, mini_record
    ):
        rec = run_cycle(
            mini_doc, mini_session, mini_config, deterministic=True, require=("A1",)
        )
        assert rec.step2.to_dict() == mini_record.step2.to_dict()

    def test_threshold_mismatch_demands_a_reopen(self, mini_doc, mini_session):
        cfg = resolve_config(mini_doc.appraisal_defaults, None, {"likelihood_threshold": 0.01})
        with pytest.raises(CycleError, match="reopen the session"):
            run_cycle(mini_doc, mini_session, cfg)

    def test_invalid_scenario_refused(self, mini_doc, mini_session, mini_config):
        bad_loss = dataclasses.replace(mini_doc.losses[0], incidence={"low-income": 0.2})
        bad = dataclasses.replace(mini_doc, losses=(bad_loss,) + mini_doc.losses[1:])
        with pytest.raises(CycleError, match="fails validation"):
            run_cycle(bad, mini_session, mini_config)

    def test_escalation_when_elimination_falls_short(self, infeasible_record):
        rec = infeasible_record
        assert rec.escalation
        assert not rec.step1.feasible
        assert not rec.gap.intolerable_exposure["eliminated"]
        # step 2 still ran on the tolerable side
        assert rec.step2.solver_mode == "exact"


class TestInputsDigest:
    def test_session_identity_is_not_content(self, mini_doc, mini_ledger, mini_config):
        a = remake_session(mini_doc, mini_ledger, mini_config, session_id="one")
        b = remake_session(mini_doc, mini_ledger, mini_config, session_id="two")
        assert inputs_digest(mini_doc, a, mini_config) == inputs_digest(mini_doc, b, mini_config)

    def test_votes_and_config_are_content(self, mini_doc, mini_ledger, mini_config):
        base = remake_session(mini_doc, mini_ledger, mini_config)
        flipped_votes = [
            (g, l, "tolerable" if l == "L1" else v) for g, l, v in mini_ledger.votes
        ]
        flipped = remake_session(mini_doc, mini_ledger, mini_config, votes=flipped_votes)
        assert inputs_digest(mini_doc, base, mini_config) != inputs_digest(
            mini_doc, flipped, mini_config
        )
        other_cfg = dataclasses.replace(mini_config, epsilon=0.1)
        assert inputs_digest(mini_doc, base, mini_config) != inputs_digest(
            mini_doc, base, other_cfg
        )


class TestRecordRoundTrip:
    def test_to_dict_from_dict_identity(self, mini_record):
        again = record_from_dict(mini_record.to_dict())
        assert isinstance(again, CycleRecord)
        assert again == mini_record

    def test_round_trip_survives_infeasible_records(self, infeasible_record):
        assert record_from_dict(infeasible_record.to_dict()) == infeasible_record


class TestRecordStore:
    def test_append_list_latest(self, tmp_path, mini_doc, mini_session, mini_config):
        store = RecordStore(tmp_path)
        assert store.next_revision("coastal-flood") == 1
        rec = run_cycle(mini_doc, mini_session, mini_config, store=store, deterministic=True)
        assert (tmp_path / "coastal-flood" / "r0001.json").exists()
        assert store.next_revision("coastal-flood") == 2
        assert store.lineages() == ["coastal-flood"]
        assert store.latest("coastal-flood")["cycle_id"] == rec.cycle_id
        assert [d["revision"] for d in store.list("coastal-flood")] == [1]

    def test_revision_collision_refused(self, tmp_path, mini_doc, mini_session, mini_config):
        store = RecordStore(tmp_path)
        run_cycle(mini_doc, mini_session, mini_config, store=store, deterministic=True)
        with pytest.raises(CycleError, match="already stored"):
            run_cycle(
                mini_doc, mini_session, mini_config,
                store=store, deterministic=True, revision=1,
            )

    def test_unknown_lineage_is_empty_not_an_error(self, tmp_path):
        store = RecordStore(tmp_path)
        assert store.list("nowhere") == []
        assert store.latest("nowhere") is None
        assert history(store, "nowhere") == []

    def test_history_rebuilds_typed_records(
        self, tmp_path, mini_doc, mini_ledger, mini_config
    ):
        store = RecordStore(tmp_path)
        session = remake_session(mini_doc, mini_ledger, mini_config)
        first = run_cycle(mini_doc, session, mini_config, store=store, deterministic=True)
        run_cycle(mini_doc, session, mini_config, store=store, deterministic=True)
        records = history(store, "coastal-flood")
        assert [r.revision for r in records] == [1, 2]
        assert records[0] == first


class TestRevisions:
    def test_vote_flip_changes_the_answer_and_the_diff_says_how(
        self, tmp_path, mini_doc, mini_ledger, mini_config
    ):
        store = RecordStore(tmp_path)
        base_session = remake_session(mini_doc, mini_ledger, mini_config)
        base = run_cycle(mini_doc, base_session, mini_config, store=store, deterministic=True)

        flipped_votes = [
            (g, l, "tolerable" if l == "L1" else v) for g, l, v in mini_ledger.votes
        ]
        flipped = remake_session(mini_doc, mini_ledger, mini_config, votes=flipped_votes)
        rec, diff = revise_cycle(
            base, mini_doc, flipped, mini_config, store=store, deterministic=True
        )
        assert rec.revision == 2
        assert diff.reclassified == {"L1": ("intolerable", "tolerable")}
        assert diff.step1_removed == ("A1",)
        assert not diff.empty
        assert store.next_revision("coastal-flood") == 3

    def test_identical_rerun_diffs_empty(self, mini_doc, mini_session, mini_config, mini_record):
        again = run_cycle(mini_doc, mini_session, mini_config, deterministic=True)
        diff = diff_records(mini_record, again)
        assert diff.empty
        assert diff.optimized_delta == 0.0

    def test_lineage_mismatch_refused(self, mini_record, mini_session, mini_config):
        import json

        from pclkit.scenario_io import parse_scenario
        from conftest import SCENARIO_DIR

        other, _ = parse_scenario((SCENARIO_DIR / "landslide-road.json").read_text())
        with pytest.raises(CycleError, match="lineage"):
            revise_cycle(mini_record, other, mini_session, mini_config)


class TestCompareScenarios:
    def test_audit_recomputation_matches_stored_gap(self, mini_record):
        audited = compare_scenarios(mini_record)
        assert audited.unoptimized_total == mini_record.gap.unoptimized_total
        assert audited.optimized_total == mini_record.gap.optimized_total
        assert audited.optimized_tolerable_total == mini_record.gap.optimized_tolerable_total
        assert audited.savings == mini_record.gap.savings

    def test_audit_matches_on_the_infeasible_record_too(self, infeasible_record):
        audited = compare_scenarios(infeasible_record)
        assert audited.to_dict() == infeasible_record.gap.to_dict()
