"""Deterministic decision support for climate-hazard response portfolios.

The pipeline: filter events by likelihood, classify losses by societal
tolerability, eliminate intolerable losses at minimum cost (step 1), then
optimize the preemptive / contingent / accepted split over what remains
(step 2), and report the gap against doing nothing clever.
"""

from .classify import (
    AggregationRule,
    ConsultationSession,
    FilterResult,
    IncompleteVotesError,
    SessionStateError,
    TolerabilityPartition,
    VoteLedger,
    classify,
    close_session,
    filter_by_likelihood,
    ledger_from_session,
    open_session,
    record_vote,
    register_groups,
    session_from_ledger,
)
from .config import RunConfig, resolve_config
from .cover import CoverSolution, eliminate_intolerable, propagate_ancillary
from .cycle import (
    CycleError,
    CycleRecord,
    GapReport,
    RecordStore,
    RevisionDiff,
    compare_scenarios,
    diff_records,
    history,
    record_from_dict,
    revise_cycle,
    run_cycle,
)
from .model import (
    ActionCluster,
    ContingentInstrument,
    EventScenario,
    HazardModel,
    LossItem,
    ModelError,
    ResponseAction,
    ScenarioDocument,
    Synergy,
    Violation,
    annualize_capital,
    contingent_cost,
    effective_loading,
    expected_annual_loss,
    residual_fraction,
    residual_meets_target,
    validate_model,
)
from .portfolio import (
    Appraisal,
    AppraisalConfig,
    OutlayDecomposition,
    Portfolio,
    appraise,
    assign_clusters,
    optimize,
    optimize_oracle,
    total_outlay,
    weighted_eal,
)
from .scenario_io import (
    Diagnostic,
    UsageError,
    canonical_json,
    document_digest,
    emit_report,
    emit_scenario,
    emit_votes,
    parse_config,
    parse_scenario,
    parse_votes,
    scenario_digest,
)

__version__ = "0.1.0"

__all__ = [
    "ActionCluster",
    "AggregationRule",
    "Appraisal",
    "AppraisalConfig",
    "ConsultationSession",
    "ContingentInstrument",
    "CoverSolution",
    "CycleError",
    "CycleRecord",
    "Diagnostic",
    "EventScenario",
    "FilterResult",
    "GapReport",
    "HazardModel",
    "IncompleteVotesError",
    "LossItem",
    "ModelError",
    "OutlayDecomposition",
    "Portfolio",
    "RecordStore",
    "ResponseAction",
    "RevisionDiff",
    "RunConfig",
    "ScenarioDocument",
    "SessionStateError",
    "Synergy",
    "TolerabilityPartition",
    "UsageError",
    "Violation",
    "VoteLedger",
    "annualize_capital",
    "appraise",
    "assign_clusters",
    "canonical_json",
    "classify",
    "close_session",
    "compare_scenarios",
    "contingent_cost",
    "diff_records",
    "document_digest",
    "effective_loading",
    "eliminate_intolerable",
    "emit_report",
    "emit_scenario",
    "emit_votes",
    "expected_annual_loss",
    "filter_by_likelihood",
    "history",
    "ledger_from_session",
    "open_session",
    "optimize",
    "optimize_oracle",
    "parse_config",
    "parse_scenario",
    "parse_votes",
    "propagate_ancillary",
    "record_from_dict",
    "record_vote",
    "register_groups",
    "residual_fraction",
    "residual_meets_target",
    "resolve_config",
    "revise_cycle",
    "run_cycle",
    "scenario_digest",
    "session_from_ledger",
    "total_outlay",
    "validate_model",
    "weighted_eal",
]
