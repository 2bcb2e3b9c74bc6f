"""File round-trips, diagnostics-as-data, and the three report renderings."""
import json

import pytest

from pclkit.scenario_io import (
    REPORT_FORMATS,
    UsageError,
    canonical_json,
    emit_report,
    emit_scenario,
    emit_votes,
    gap_plotdata,
    parse_config,
    parse_scenario,
    parse_votes,
    scenario_digest,
)

from conftest import GOLDEN_SCENARIOS, SCENARIO_DIR


class TestGoldenRoundTrips:
    @pytest.mark.parametrize("name", GOLDEN_SCENARIOS)
    def test_shipped_files_are_canonical(self, name):
        text = (SCENARIO_DIR / name).read_text()
        doc, diags = parse_scenario(text)
        assert doc is not None
        assert diags == []
        assert emit_scenario(doc) == text  # byte-stable on disk

    @pytest.mark.parametrize("name", GOLDEN_SCENARIOS)
    def test_parse_emit_parse_is_identity(self, name):
        text = (SCENARIO_DIR / name).read_text()
        doc, _ = parse_scenario(text)
        again, diags = parse_scenario(emit_scenario(doc))
        assert diags == []
        assert again == doc

    def test_key_order_never_changes_digest_or_bytes(self):
        text = (SCENARIO_DIR / "coastal-flood-mini.json").read_text()
        shuffled = json.dumps(json.loads(text))  # flat, unsorted, no indent
        doc_a, _ = parse_scenario(text)
        doc_b, _ = parse_scenario(shuffled)
        assert doc_a == doc_b
        assert scenario_digest(doc_a) == scenario_digest(doc_b)
        assert emit_scenario(doc_a) == emit_scenario(doc_b)

    def test_votes_round_trip(self):
        text = (SCENARIO_DIR / "coastal-flood-mini-votes.json").read_text()
        ledger, diags = parse_votes(text)
        assert ledger is not None and diags == []
        assert emit_votes(ledger) == text
        again, _ = parse_votes(emit_votes(ledger))
        assert again == ledger


class TestScenarioDiagnostics:
    def test_broken_json_reports_line_and_column(self):
        doc, diags = parse_scenario('{\n  "schema_version": 1,,\n}')
        assert doc is None
        assert len(diags) == 1
        assert diags[0].code == "E_JSON"
        assert diags[0].kind == "syntax"
        assert "line 2" in diags[0].location

    def test_non_object_top_level(self):
        doc, diags = parse_scenario("[1, 2]")
        assert doc is None
        assert diags[0].code == "E_TYPE"

    def test_unsupported_schema_version(self):
        doc, diags = parse_scenario('{"schema_version": 99}')
        assert any(d.code == "E_SCHEMA_VERSION" for d in diags)

    def test_missing_hazard_is_syntax_not_crash(self):
        _, diags = parse_scenario('{"schema_version": 1, "losses": []}')
        assert any(d.code == "E_MISSING" and d.location == "/hazard" for d in diags)

    def test_wrong_types_located_by_pointer(self):
        _, diags = parse_scenario(
            '{"schema_version": 1, "hazard": {"hazard_id": "h", "events": [7]}}'
        )
        locations = {d.location for d in diags if d.code == "E_TYPE"}
        assert "/hazard/events/0" in locations

    def test_validation_findings_come_with_a_document(self, mini_doc):
        # dangling reference: the document still parses, the finding rides along
        text = (SCENARIO_DIR / "coastal-flood-mini.json").read_text()
        payload = json.loads(text)
        payload["actions"][0]["reductions"]["ghost"] = 0.5
        doc, diags = parse_scenario(json.dumps(payload))
        assert doc is not None
        assert any(d.code == "E_REF_LOSS" and d.kind == "validation" for d in diags)

    def test_all_findings_collected_in_one_pass(self):
        payload = {
            "schema_version": 1,
            "hazard": {"hazard_id": "h", "events": [
                {"event_id": "e", "annual_probability": 2.0, "magnitudes": {"L": -1}},
            ]},
            "losses": [{"loss_id": "L", "category": "imaginary", "incidence": {"g": 0.4}}],
            "income_groups": ["g"],
        }
        _, diags = parse_scenario(json.dumps(payload))
        codes = {d.code for d in diags}
        assert {"E_EVENT_PROB", "E_MAG_NEG", "E_CATEGORY", "E_INCIDENCE_SUM"} <= codes


class TestVoteDiagnostics:
    def test_bad_verdict_is_validation(self):
        ledger, diags = parse_votes(json.dumps({
            "schema_version": 1,
            "session_id": "s",
            "scenario_digest": None,
            "groups": ["a"],
            "votes": [["a", "L1", "maybe"]],
            "status": "open",
        }))
        assert ledger is not None  # validation does not block parsing
        assert ledger.votes == ()  # but the bad vote is dropped
        assert any(d.code == "E_VERDICT" for d in diags)

    def test_malformed_vote_row_is_syntax(self):
        ledger, diags = parse_votes(json.dumps({
            "schema_version": 1, "groups": ["a"], "votes": [["a", "L1"]],
        }))
        assert ledger is None
        assert any(d.code == "E_TYPE" and d.location == "/votes/0" for d in diags)

    def test_invalid_status_flagged(self):
        ledger, diags = parse_votes(json.dumps({
            "schema_version": 1, "groups": [], "votes": [], "status": "paused",
        }))
        assert any(d.code == "E_STATUS" for d in diags)
        assert ledger.status == "open"


class TestConfigFiles:
    def test_known_keys_pass_through(self):
        cfg, diags = parse_config('{"epsilon": 0.1, "mode": "social"}')
        assert diags == []
        assert cfg == {"epsilon": 0.1, "mode": "social"}

    def test_unknown_keys_flagged_and_filtered(self):
        cfg, diags = parse_config('{"epsilon": 0.1, "epsilonn": 0.2}')
        assert cfg == {"epsilon": 0.1}
        assert any(d.code == "E_CONFIG_KEY" for d in diags)

    def test_broken_config_returns_none(self):
        cfg, diags = parse_config("{")
        assert cfg is None
        assert diags[0].code == "E_JSON"


class TestReports:
    def test_unknown_format_is_a_usage_error(self, mini_record):
        with pytest.raises(UsageError, match="unknown report format"):
            emit_report(mini_record, "pdf")
        assert set(REPORT_FORMATS) == {"human", "machine", "plotdata"}

    def test_machine_format_is_the_canonical_record(self, mini_record):
        assert emit_report(mini_record, "machine") == canonical_json(mini_record.to_dict())

    def test_plotdata_series_carry_the_gap_comparison(self, mini_record):
        plot = json.loads(emit_report(mini_record, "plotdata"))
        assert plot["kind"] == "gap-comparison"
        assert plot["currency_unit"] == "MUSD"
        unopt, opt = plot["series"]
        assert unopt["name"] == "unoptimized"
        assert unopt["segments"] == {"P": 0.0, "C": 0.0, "L": 15.0}
        assert opt["segments"]["P"] == 5.0
        assert opt["segments"]["C"] == pytest.approx(7.2)
        assert opt["segments"]["L"] == 0.0
        assert opt["total"] == pytest.approx(12.2)
        assert plot["savings"] == pytest.approx(2.8)
        assert plot["step1_cost"] == 10.0

    def test_plotdata_tolerates_missing_sections(self):
        plot = gap_plotdata({})
        assert plot["series"][0]["total"] == 0.0

    def test_human_report_sections(self, mini_record):
        text = emit_report(mini_record, "human")
        for needle in (
            "Consideration filter (annual probability > 0.005)",
            "retained by default",
            "L1/e3: p=0.004 magnitude=500.0 expected=2.0",
            "Classification (group-fraction>=0.5)",
            "Step 1: eliminate intolerable losses",
            "selected actions: A1",
            "Step 2: optimize tolerable outlay",
            "cluster assignment: L2->C",
            "outlay: P 5.00 + C 7.20 + L 0.00 = 12.20 MUSD/yr",
            "accept-all tolerable losses: 15.00 MUSD/yr",
            "savings on the tolerable cluster: 2.80 MUSD/yr",
        ):
            assert needle in text, needle
        # synergy pricing is disclosed, not silently applied
        assert "base loading 1.3, effective 0.9 (synergy discount active)" in text

    def test_human_report_flags_infeasible_elimination(self, infeasible_record):
        text = emit_report(infeasible_record, "human")
        assert "INFEASIBLE" in text
