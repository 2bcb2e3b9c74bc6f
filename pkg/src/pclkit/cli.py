"""Command-line interface.

Subcommands mirror the pipeline stages: validate, classify, step1,
optimize (a dry run of the full cycle), cycle (runs and persists), compare
(gap report from the stored record), serve (HTTP facade). Exit codes: 0
success, 1 diagnostic or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional

from .classify import AggregationRule, IncompleteVotesError, classify, session_from_ledger
from .config import RunConfig, resolve_config
from .cover import eliminate_intolerable
from .cycle import CycleError, RecordStore, compare_scenarios, record_from_dict, run_cycle
from .model import ModelError, ScenarioDocument
from .scenario_io import (
    REPORT_FORMATS,
    UsageError,
    canonical_json,
    emit_report,
    gap_plotdata,
    parse_config,
    parse_scenario,
    parse_votes,
    scenario_digest,
)

DEFAULT_STORE = "./pcl-store"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcl",
        description="Deterministic decision support for climate-hazard response portfolios.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p: argparse.ArgumentParser, votes: bool = True):
        p.add_argument("--scenario", required=True, help="scenario file path")
        if votes:
            p.add_argument("--votes", required=True, help="vote ledger file path")
        p.add_argument("--config", help="config override file path")
        p.add_argument("--format", default="human", help="human | machine | plotdata")
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--mode", choices=["financial", "economic", "social"])
        p.add_argument("--epsilon", type=float, help="step-1 residual target")
        p.add_argument("--hardship", type=float, help="hardship multiplier on accepted losses")
        p.add_argument("--discount-rate", type=float)
        p.add_argument("--likelihood-threshold", type=float)
        p.add_argument("--vote-threshold", type=float)
        p.add_argument("--seed", type=int, help="seed for the heuristic search")
        p.add_argument("--deterministic", action="store_true", help="zero timestamps, digest-derived ids")

    p = sub.add_parser("validate", help="parse a scenario file and report diagnostics")
    p.add_argument("--scenario", required=True)

    add_common(sub.add_parser("classify", help="aggregate votes into the tolerability partition"))
    add_common(sub.add_parser("step1", help="solve intolerable-loss elimination only"))
    add_common(sub.add_parser("optimize", help="run the full cycle without persisting"))

    p = sub.add_parser("cycle", help="run the full cycle and append the record to the store")
    add_common(p)
    p.add_argument("--store", help=f"record store directory (default $PCL_STORE or {DEFAULT_STORE})")

    p = sub.add_parser("compare", help="gap report for the latest stored record of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--format", default="human", help="human | machine | plotdata")
    p.add_argument("--output")
    p.add_argument("--store", help=f"record store directory (default $PCL_STORE or {DEFAULT_STORE})")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="port (default $PCL_PORT or 8000)")
    p.add_argument("--store", help=f"record store directory (default $PCL_STORE or {DEFAULT_STORE})")

    return parser


def _store_dir(flag_value: Optional[str]) -> str:
    return flag_value or os.environ.get("PCL_STORE") or DEFAULT_STORE


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CycleError(f"cannot read {path}: {exc.strerror or exc}")


def _load_scenario(path: str) -> ScenarioDocument:
    doc, diags = parse_scenario(_read_file(path))
    if doc is None or diags:
        for d in diags:
            print(d, file=sys.stderr)
        raise CycleError(f"scenario {path} has {len(diags)} diagnostic(s)")
    return doc


def _flag_overrides(args: argparse.Namespace) -> dict:
    return {
        "mode": getattr(args, "mode", None),
        "epsilon": getattr(args, "epsilon", None),
        "hardship_multiplier": getattr(args, "hardship", None),
        "discount_rate": getattr(args, "discount_rate", None),
        "likelihood_threshold": getattr(args, "likelihood_threshold", None),
        "vote_threshold": getattr(args, "vote_threshold", None),
        "seed": getattr(args, "seed", None),
    }


def _resolve_config(doc: ScenarioDocument, args: argparse.Namespace) -> RunConfig:
    file_overrides = None
    if getattr(args, "config", None):
        file_overrides, diags = parse_config(_read_file(args.config))
        if file_overrides is None or diags:
            for d in diags:
                print(d, file=sys.stderr)
            raise CycleError(f"config {args.config} has {len(diags)} diagnostic(s)")
    return resolve_config(doc.appraisal_defaults, file_overrides, _flag_overrides(args))


def _pipeline_inputs(args: argparse.Namespace):
    doc = _load_scenario(args.scenario)
    config = _resolve_config(doc, args)
    ledger, diags = parse_votes(_read_file(args.votes))
    if ledger is None or diags:
        for d in diags:
            print(d, file=sys.stderr)
        raise CycleError(f"votes {args.votes} has {len(diags)} diagnostic(s)")
    session = session_from_ledger(
        doc, ledger, threshold=config.likelihood_threshold, scenario_digest=scenario_digest(doc)
    )
    return doc, session, config


def _emit(text: str, output: Optional[str]) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _check_format(fmt: str) -> None:
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")


def cmd_validate(args: argparse.Namespace) -> int:
    doc, diags = parse_scenario(_read_file(args.scenario))
    for d in diags:
        print(d)
    if doc is None or diags:
        return 1
    print(
        f"OK: {len(doc.hazard.events)} events, {len(doc.losses)} losses, "
        f"{len(doc.actions)} actions, {len(doc.instruments)} instruments, "
        f"{len(doc.synergies)} synergies"
    )
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    _check_format(args.format)
    doc, session, config = _pipeline_inputs(args)
    partition = classify(session, AggregationRule(threshold=config.vote_threshold))
    if args.format == "human":
        lines = [
            f"Classification ({partition.rule_used})",
            f"  intolerable: {', '.join(sorted(partition.intolerable)) or '(none)'}",
            f"  tolerable:   {', '.join(sorted(partition.tolerable)) or '(none)'}",
        ]
        if partition.retained_by_default:
            pairs = ", ".join(f"{l}/{e}" for l, e in partition.retained_by_default)
            lines.append(f"  retained by default: {pairs}")
        _emit("\n".join(lines), args.output)
    else:
        _emit(canonical_json(partition.to_dict()), args.output)
    return 0


def cmd_step1(args: argparse.Namespace) -> int:
    _check_format(args.format)
    doc, session, config = _pipeline_inputs(args)
    partition = classify(session, AggregationRule(threshold=config.vote_threshold))
    solution = eliminate_intolerable(
        sorted(partition.intolerable),
        doc.actions,
        epsilon=config.epsilon,
        discount_rate=config.discount_rate,
    )
    if args.format == "human":
        lines = [
            f"Step 1 (target residual <= {solution.epsilon}, solver {solution.solver_mode})",
            f"  selected: {', '.join(solution.selected) or '(none needed)'}",
            f"  annualized cost: {solution.annualized_cost:,.2f} {doc.hazard.currency_unit}/yr",
        ]
        for loss_id, resid in sorted(solution.residuals.items()):
            lines.append(f"  residual {loss_id}: {resid:.6g}")
        if not solution.feasible:
            lines.append("  ** INFEASIBLE: best achievable residuals shown; escalate.")
        _emit("\n".join(lines), args.output)
    else:
        _emit(canonical_json(solution.to_dict()), args.output)
    # Infeasibility is a computed, flagged answer, not a process failure.
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    _check_format(args.format)
    doc, session, config = _pipeline_inputs(args)
    record = run_cycle(doc, session, config, store=None, deterministic=args.deterministic)
    _emit(emit_report(record, args.format), args.output)
    return 0


def cmd_cycle(args: argparse.Namespace) -> int:
    _check_format(args.format)
    doc, session, config = _pipeline_inputs(args)
    store = RecordStore(_store_dir(args.store))
    record = run_cycle(doc, session, config, store=store, deterministic=args.deterministic)
    _emit(emit_report(record, args.format), args.output)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    _check_format(args.format)
    doc = _load_scenario(args.scenario)
    store = RecordStore(_store_dir(args.store))
    latest = store.latest(doc.hazard.hazard_id)
    if latest is None:
        print(f"no record for lineage {doc.hazard.hazard_id!r} in {store.root}", file=sys.stderr)
        return 1
    record = record_from_dict(latest)
    gap = compare_scenarios(record)
    if args.format == "human":
        unit = record.currency_unit
        lines = [
            f"Gap comparison for {record.lineage} (revision {record.revision})",
            f"  accept-all tolerable losses: {gap.unoptimized_total:,.2f} {unit}/yr",
            f"  optimized total (step 1 + step 2): {gap.optimized_total:,.2f} {unit}/yr",
            f"  optimized tolerable cluster: {gap.optimized_tolerable_total:,.2f} {unit}/yr",
            f"  savings on the tolerable cluster: {gap.savings:,.2f} {unit}/yr",
        ]
        _emit("\n".join(lines), args.output)
    elif args.format == "plotdata":
        _emit(canonical_json(gap_plotdata(record.to_dict())), args.output)
    else:
        _emit(canonical_json(gap.to_dict()), args.output)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    port = args.port or int(os.environ.get("PCL_PORT", "8000"))
    app = create_app(store_dir=_store_dir(args.store))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


_COMMANDS = {
    "validate": cmd_validate,
    "classify": cmd_classify,
    "step1": cmd_step1,
    "optimize": cmd_optimize,
    "cycle": cmd_cycle,
    "compare": cmd_compare,
    "serve": cmd_serve,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except IncompleteVotesError as exc:
        print(f"incomplete votes: {exc}", file=sys.stderr)
        return 1
    except (CycleError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
