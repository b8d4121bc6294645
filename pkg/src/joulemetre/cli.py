"""Command-line surface: idle | profile | sweep | analyze | report.

Exit codes: 0 success, 2 workload failure, 3 configuration error. Everything
else that goes wrong inside the toolkit exits 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, config as config_mod, energy
from .errors import (
    ConfigError,
    DegenerateInput,
    DegenerateVariance,
    DuplicateBatchSize,
    InsufficientRuns,
    JoulemetreError,
    ParseError,
    SchemaError,
    WorkloadFailed,
)
from .models import load_manifest
from .profiler import Profiler, resolve_baseline, run_idle, substitute_batch
from .runstore import (
    STATUS_SUCCESS,
    RunConfig,
    RunRecord,
    RunStore,
    summarise_record,
)
from .telemetry.samples import UtilChannel
from .trace import read_util_trace

EXIT_OK = 0
EXIT_WORKLOAD = 2
EXIT_CONFIG = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="joulemetre",
        description=(
            "Workload-wrapping energy profiler: samples component power "
            "around a command, subtracts the idle baseline, and attributes "
            "energy to training epochs."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--runs-dir", help="directory holding run records")
    common.add_argument(
        "--delta-t", type=float, help="sampling interval in seconds"
    )
    common.add_argument(
        "--source",
        help="power source: 'hardware' or 'replay:<power.csv>[,<util.csv>]'",
    )
    common.add_argument("--manifest", help="model manifest JSON file")

    sub = parser.add_subparsers(dest="cmd", required=True)

    p_idle = sub.add_parser(
        "idle", parents=[common], help="measure and cache the idle power baseline"
    )
    p_idle.add_argument(
        "--duration", type=float, help="idle window length in seconds"
    )

    p_profile = sub.add_parser(
        "profile", parents=[common], help="supervise a workload and record its energy"
    )
    p_profile.add_argument(
        "--phase",
        default="training",
        choices=["experimentation", "training", "inference"],
    )
    p_profile.add_argument("--batch", type=int, help="batch size to record")
    p_profile.add_argument(
        "command", nargs=argparse.REMAINDER, help="workload command (after --)"
    )

    p_sweep = sub.add_parser(
        "sweep", parents=[common], help="profile the workload across batch sizes"
    )
    p_sweep.add_argument(
        "--batch-sizes",
        required=True,
        help="comma-separated batch sizes; '{batch}' in the command/source is substituted",
    )
    p_sweep.add_argument(
        "--phase",
        default="training",
        choices=["experimentation", "training", "inference"],
    )
    p_sweep.add_argument(
        "command", nargs=argparse.REMAINDER, help="workload command (after --)"
    )

    p_analyze = sub.add_parser(
        "analyze", parents=[common], help="run the analysis suite over stored records"
    )
    p_analyze.add_argument(
        "--target-epochs",
        type=int,
        help="epoch count to extrapolate each run's energy to",
    )
    p_analyze.add_argument(
        "--carbon-intensity",
        type=float,
        help="grid intensity in gCO2e per kWh for the carbon column",
    )
    p_analyze.add_argument(
        "--expected-units",
        type=float,
        help="expected inference volume for the lifecycle estimate",
    )
    p_analyze.add_argument("--no-plots", action="store_true", help="skip SVG charts")

    p_report = sub.add_parser(
        "report", parents=[common], help="print the energy report of a stored run"
    )
    p_report.add_argument(
        "run_id", nargs="?", help="run to report on (default: newest successful)"
    )
    p_report.add_argument("--json", action="store_true", dest="as_json")

    return parser


def _load_effective_config(args) -> dict:
    cfg = config_mod.load_config(args.config)
    return config_mod.apply_overrides(
        cfg,
        runs_dir=args.runs_dir,
        delta_t=args.delta_t,
        source=args.source,
    )


def _command_tokens(raw: list[str]) -> tuple[str, ...]:
    tokens = list(raw)
    if tokens and tokens[0] == "--":
        tokens = tokens[1:]
    if not tokens:
        raise ConfigError("no workload command given (pass it after --)")
    return tuple(tokens)


def _run_config(cfg: dict, phase: str, command: tuple[str, ...], args) -> RunConfig:
    return RunConfig(
        phase=phase,
        command=command,
        source=cfg["source"],
        hardware=config_mod.hardware_from_config(cfg),
        delta_t=cfg["delta_t"],
        batch_size=getattr(args, "batch", None) or cfg["batch_size"],
        manifest_path=args.manifest,
        config_hash=config_mod.effective_hash(cfg),
    )


def _print_report(record: RunRecord) -> None:
    report = record.report
    print(f"run {record.run_id}: {record.status}")
    if report is None:
        return
    for channel, joules in report.adjusted_j.items():
        print(f"  {channel:<5} adjusted {joules:12.3f} J (gross {report.gross_j[channel]:.3f} J)")
    print(f"  total adjusted {report.total_adjusted_j:.3f} J over {report.duration_s:.1f} s")
    if report.per_epoch_j:
        for index, joules in zip(report.epoch_indices, report.per_epoch_j):
            print(f"  epoch {index}: {joules:.3f} J")
        print(f"  overhead: {report.overhead_j:.3f} J")
    for warning in report.warnings:
        print(f"  warning: {warning}")


def cmd_idle(args) -> int:
    cfg = _load_effective_config(args)
    store = RunStore(cfg["runs_dir"])
    run_cfg = _run_config(cfg, "idle", (), args)
    duration = args.duration if args.duration is not None else cfg["idle"]["duration_s"]
    baseline, path = run_idle(
        store, run_cfg, duration_s=duration, min_duration_s=cfg["idle"]["min_duration_s"]
    )
    print(f"baseline cached at {path}")
    for channel, mean in baseline.means_w.items():
        print(f"  {channel.value:<5} idle mean {mean:.3f} W")
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _load_effective_config(args)
    store = RunStore(cfg["runs_dir"])
    command = _command_tokens(args.command)
    run_cfg = _run_config(cfg, args.phase, command, args)
    baseline, note = resolve_baseline(
        store,
        run_cfg,
        min_duration_s=cfg["idle"]["min_duration_s"],
        auto_duration_s=cfg["idle"]["duration_s"],
    )
    if note:
        print(f"warning: {note}", file=sys.stderr)
    outcome = Profiler(store, run_cfg).run(baseline)
    _print_report(outcome.record)
    return EXIT_OK


def _sweep_point(store: RunStore, record: RunRecord) -> analysis.SweepPoint:
    report = record.report
    mean_power = (
        report.total_gross_j / report.duration_s if report.duration_s > 0 else 0.0
    )
    mean_gpu = _mean_gpu_util(store, record)
    return analysis.SweepPoint(
        batch_size=record.batch_size,
        total_energy=report.total_adjusted_j,
        mean_power=mean_power,
        duration=report.duration_s,
        mean_gpu_util=mean_gpu if mean_gpu is not None else 0.0,
    )


def _mean_gpu_util(store: RunStore, record: RunRecord) -> float | None:
    util_file = record.files.get("util")
    if not util_file:
        return None
    path = store.run_dir(record.run_id) / util_file
    if not path.exists():
        return None
    try:
        util = read_util_trace(path, delta_t=record.delta_t)
    except (ParseError, OSError):
        return None
    return util.mean_util(UtilChannel.GPU)


def cmd_sweep(args) -> int:
    cfg = _load_effective_config(args)
    store = RunStore(cfg["runs_dir"])
    command = _command_tokens(args.command)
    try:
        batches = [int(tok) for tok in args.batch_sizes.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"unparseable --batch-sizes {args.batch_sizes!r}") from None
    if len(batches) < 2:
        raise ConfigError("a sweep needs at least 2 batch sizes")
    if len(set(batches)) != len(batches):
        raise DuplicateBatchSize(f"repeated batch size in {batches}")

    base_cfg = _run_config(cfg, args.phase, command, args)
    baseline, note = resolve_baseline(
        store,
        base_cfg,
        min_duration_s=cfg["idle"]["min_duration_s"],
        auto_duration_s=cfg["idle"]["duration_s"],
    )
    if note:
        print(f"warning: {note}", file=sys.stderr)

    points: list[analysis.SweepPoint] = []
    summaries = []
    failures: list[str] = []
    for batch in batches:
        cmd, src = substitute_batch(command, cfg["source"], batch)
        run_cfg = replace(base_cfg, command=cmd, source=src, batch_size=batch)
        try:
            outcome = Profiler(store, run_cfg).run(baseline)
        except WorkloadFailed as exc:
            failures.append(f"batch {batch}: {exc}")
            print(f"batch {batch} failed: {exc}", file=sys.stderr)
            continue
        record = outcome.record
        points.append(_sweep_point(store, record))
        summaries.append(
            summarise_record(
                record,
                manifest=_record_manifest(store, record),
                mean_gpu_util=_mean_gpu_util(store, record),
            )
        )
        print(f"batch {batch}: {record.report.total_adjusted_j:.3f} J")

    if len(points) < 2:
        print("sweep produced fewer than 2 usable runs; no summary", file=sys.stderr)
        return EXIT_WORKLOAD
    summary = analysis.batch_sweep_summary(points)
    out_dir = store.new_analysis_dir()
    bundle = analysis.write_report_bundle(out_dir, summaries, sweep=summary)
    if failures:
        gaps = out_dir / "sweep_failures.txt"
        gaps.write_text("".join(f"{line}\n" for line in failures), encoding="utf-8")
    print(
        f"minimum energy at batch {summary.best_batch_size} "
        f"({summary.min_energy:.3f} J); report bundle in {out_dir}"
    )
    # Per-run failures are recorded as gaps; a usable summary still succeeds.
    return EXIT_OK


def _record_manifest(store: RunStore, record: RunRecord):
    if not record.manifest_path:
        return None
    candidates = [
        store.run_dir(record.run_id) / record.manifest_path,
        Path(record.manifest_path),
    ]
    for path in candidates:
        if path.exists():
            try:
                return load_manifest(path)
            except (SchemaError, JoulemetreError):
                return None
    return None


def cmd_analyze(args) -> int:
    cfg = _load_effective_config(args)
    store = RunStore(cfg["runs_dir"])
    records = [r for r in store.iter_records() if r.status == STATUS_SUCCESS]
    if not records:
        raise ConfigError(
            f"no completed runs under {cfg['runs_dir']!r}; profile something first"
        )
    summaries = [
        summarise_record(
            r,
            manifest=_record_manifest(store, r),
            mean_gpu_util=_mean_gpu_util(store, r),
        )
        for r in records
    ]

    # Extrapolation table: fit each epoch-marked run and project it forward.
    target = args.target_epochs or cfg["analysis"]["target_epochs"]
    extrapolation_rows = []
    for record in records:
        per_epoch = record.report.per_epoch_j
        if not per_epoch:
            continue
        points = energy.cumulative_epoch_points(per_epoch)
        try:
            model = energy.fit_extrapolation(points, unit="epoch")
        except DegenerateInput:
            continue
        extrapolation_rows.append(
            {
                "run_id": record.run_id,
                "epochs_profiled": len(per_epoch),
                "fit_r": model.fit_r,
                "flagged": model.flagged,
                "target_epochs": target,
                "predicted_total_j": model.predict(float(target)),
            }
        )

    sweep = None
    sweep_records = [r for r in records if r.batch_size is not None]
    distinct_batches = {r.batch_size for r in sweep_records}
    if len(sweep_records) >= 2 and len(distinct_batches) == len(sweep_records):
        try:
            sweep = analysis.batch_sweep_summary(
                [_sweep_point(store, r) for r in sweep_records]
            )
        except (DuplicateBatchSize, DegenerateInput):
            sweep = None

    lifecycle = None
    by_phase: dict[str, float] = {}
    for summary in summaries:
        by_phase[summary.phase] = by_phase.get(summary.phase, 0.0) + summary.total_adjusted_j
    inference_runs = [s for s in summaries if s.phase == "inference"]
    if by_phase.get("experimentation") or by_phase.get("training") or inference_runs:
        per_unit = (
            by_phase.get("inference", 0.0) / len(inference_runs)
            if inference_runs
            else 0.0
        )
        units = (
            args.expected_units
            if args.expected_units is not None
            else float(len(inference_runs))
        )
        lifecycle = analysis.lifecycle_estimate(
            e_experimentation=by_phase.get("experimentation", 0.0),
            e_training=by_phase.get("training", 0.0),
            e_inference_per_unit=per_unit,
            expected_units=units,
        )

    intensity = (
        args.carbon_intensity
        if args.carbon_intensity is not None
        else (cfg["analysis"]["carbon_intensity_g_per_kwh"] or None)
    )
    out_dir = store.new_analysis_dir()
    summary = analysis.write_report_bundle(
        out_dir,
        summaries,
        sweep=sweep,
        lifecycle=lifecycle,
        carbon_intensity=intensity,
        plots=not args.no_plots,
    )
    if extrapolation_rows:
        analysis.write_csv(out_dir / "extrapolation.csv", extrapolation_rows)
        summary["extrapolation"] = extrapolation_rows
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    print(f"analyzed {len(records)} runs; report bundle in {out_dir}")
    for row in summary.get("correlations", []):
        print(
            f"  {row['metric']:<16} [{row['group']}] r={row['pearson_r']:+.3f} "
            f"rho={row['spearman_rho']:+.3f} n={row['n']}"
        )
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_effective_config(args)
    store = RunStore(cfg["runs_dir"])
    if args.run_id:
        record = store.load_record(args.run_id)
    else:
        finished = [r for r in store.iter_records() if r.status == STATUS_SUCCESS]
        if not finished:
            raise ConfigError(f"no successful runs under {cfg['runs_dir']!r}")
        record = finished[-1]
    if args.as_json:
        print(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    else:
        _print_report(record)
    return EXIT_OK


_COMMANDS = {
    "idle": cmd_idle,
    "profile": cmd_profile,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except WorkloadFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WORKLOAD
    except (ConfigError, SchemaError, DuplicateBatchSize) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InsufficientRuns, DegenerateVariance, DegenerateInput, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JoulemetreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
