# api/cli.py

"""
Command-line entry point.

    python -m api.cli simulate --source lr --jitter uniform:0.11 --out results/lr
    python -m api.cli train results/lr/training.jsonl
    python -m api.cli analyze results/lr/analysis.jsonl --mode all --out results/lr
    python -m api.cli sweep --jitter-grid uniform:0.02,uniform:0.06,uniform:0.10
    python -m api.cli correlate results/lr/analysis.jsonl --bin-width 0.01
    python -m api.cli verify

Configuration precedence: command-line flags, then the --config document,
then BELLTAG_* environment defaults.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from core.config import get_settings
from core.models import JitterModel, TrialRecord
from core.trialio import iter_trials, write_trials
from diagnostics.coincidence import coincidence_frame
from diagnostics.correlation import broadening_check, correlation_panels
from pipeline.models import ProtocolConfig, default_protocol_config, load_protocol_config
from pipeline.orchestrator import ANALYSIS_MODES, ProtocolOrchestrator, pbr_frame, sweep_frame
from pipeline.store import ParameterStore, save_report

logger = logging.getLogger(__name__)


def _jitter_grid(text: str) -> List[JitterModel]:
    return [JitterModel.parse(item) for item in text.split(",") if item.strip()]


def _median_grid(kind: str, text: str) -> List[JitterModel]:
    return [JitterModel.from_median(kind, float(item)) for item in text.split(",") if item.strip()]


def build_config(args: argparse.Namespace) -> ProtocolConfig:
    """Environment defaults, overlaid by the config document, overlaid by flags."""
    scale = getattr(args, "scale", None)
    if getattr(args, "config", None):
        config = load_protocol_config(args.config)
        if scale is not None and scale != config.scale:
            config = default_protocol_config(scale, **config.model_dump(exclude={"scale", "n_training", "n_analysis", "t_win"}))
    else:
        config = default_protocol_config(scale)

    overrides: Dict[str, Any] = {}
    for flag, field in (
        ("seed", "seed"),
        ("efficiency", "efficiency"),
        ("source", "source"),
        ("delta", "delta"),
        ("t_win", "t_win"),
        ("training", "n_training"),
        ("trials", "n_analysis"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "jitter", None):
        overrides["jitter"] = JitterModel.parse(args.jitter)
    if overrides:
        config = ProtocolConfig.model_validate({**config.model_dump(), **overrides})
    return config


def _read_trials(path: str) -> List[TrialRecord]:
    trials = list(iter_trials(path))
    if not trials:
        raise ValueError(f"no trials in {path}")
    return trials


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    return path


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    config = build_config(args)
    orchestrator = ProtocolOrchestrator(config=config)
    source = orchestrator.prepare_source()
    training, analysis = orchestrator.generate_trials(source)

    out = Path(args.out)
    write_trials(out / "training.jsonl", training)
    write_trials(out / "analysis.jsonl", analysis)
    _write_json(
        out / "source.json",
        {
            "config": config.model_dump(mode="json"),
            "source": source.summary().model_dump(mode="json"),
            "calibration": source.calibration.model_dump(mode="json") if source.calibration else None,
        },
    )
    print(f"✅ Wrote {len(training)} training and {len(analysis)} analysis trials to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    store = ParameterStore(args.params)
    trained = ProtocolOrchestrator(config=config, store=store).train(_read_trials(args.trials_file))
    t = trained.tuple_params
    print(f"✅ Trained window w={trained.window:.4g}, tuple t={t.t_h.s11:.4g} m={t.m_h:.4g} -> {store.file_path}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    config = build_config(args)
    trained = ParameterStore(args.params).require()
    if args.window is not None:
        trained = trained.model_copy(update={"window": args.window})
    modes = list(ANALYSIS_MODES) if args.mode == "all" else [args.mode]
    analysis = _read_trials(args.trials_file)

    results = ProtocolOrchestrator(config=config).analyze(analysis, trained, modes=modes)

    out = Path(args.out)
    _write_json(out / "analysis.json", results.model_dump(mode="json"))
    if results.conventional is not None:
        coincidence_frame(analysis, trained.window).to_csv(out / "coincidences.csv", index=False)
    if results.pbr is not None:
        pbr_frame(results.pbr).to_csv(out / "pbr_blocks.csv", index=False)
    print(f"✅ {results.headline()}")
    print(f"   Reports written to {out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    store = ParameterStore(Path(args.out) / "parameters.json")
    report = ProtocolOrchestrator(config=config, store=store).run_protocol()
    path = save_report(report, Path(args.out) / "report.json")
    pbr_frame(report.pbr).to_csv(Path(args.out) / "pbr_blocks.csv", index=False)
    row = report.row
    print(
        f"✅ conventional SNR {row.conventional_snr:.3g}, timetag SNR {row.timetag_snr:.3g}, "
        f"PBR log-p {row.pbr_log_p:.3g} ({row.sigma:.2f} sigma) -> {path}"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.medians:
        grid = _median_grid(args.kind, args.medians)
    elif args.jitter_grid:
        grid = _jitter_grid(args.jitter_grid)
    else:
        grid = list(config.jitter_grid)
    report = ProtocolOrchestrator(config=config).sweep(grid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = sweep_frame(report)
    frame.to_csv(out / "sweep.csv", index=False)
    _write_json(out / "sweep.json", report.model_dump(mode="json"))
    print(frame.to_string(index=False))
    print(f"\nThreshold median jitter: {report.threshold}  (tabulated lower bound: {report.reference})")
    return 0


def cmd_correlate(args: argparse.Namespace) -> int:
    trials = _read_trials(args.trials_file)
    t_win = args.t_win if args.t_win is not None else default_protocol_config(args.scale).t_win
    frame = correlation_panels(trials, args.bin_width, args.max_lag, t_win)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "correlation.csv", index=False)
    check = broadening_check(trials, cutoff=args.cutoff)
    _write_json(out / "broadening.json", check.model_dump(mode="json"))
    print(f"✅ {frame['panel'].nunique()} correlation panels -> {out / 'correlation.csv'}")
    print(f"   22 separation broadening: KS={check.statistic:.3g}, p={check.pvalue:.3g}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from evaluation.quick_eval import main as run_eval

    return run_eval(full=args.full)


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON protocol config document")
    scale = parser.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk")
    scale.add_argument("--full-scale", dest="scale", action="store_const", const="full")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--efficiency", type=float)
    parser.add_argument("--jitter", help="uniform:J | exp:G | none")
    parser.add_argument("--source", choices=["quantum", "lr", "delta_shift"])
    parser.add_argument("--delta", type=float, help="delta-shift source offset")
    parser.add_argument("--t-win", dest="t_win", type=float)
    parser.add_argument("--training", type=int, help="number of training trials")
    parser.add_argument("--trials", type=int, help="number of analysis trials")


def build_parser() -> argparse.ArgumentParser:
    env = get_settings()
    parser = argparse.ArgumentParser(prog="belltag", description="Timetag Bell tests for continuously emitting sources")
    parser.add_argument("--log-level", default=env.log_level, help="logging level (default: BELLTAG_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate training and analysis trial files")
    _add_config_flags(p)
    p.add_argument("--out", default=str(Path(env.output_dir) / "trials"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fix analysis parameters from a training trial file")
    p.add_argument("trials_file")
    _add_config_flags(p)
    p.add_argument("--params", default=str(Path(env.output_dir) / "parameters.json"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="analyze a trial file with trained parameters")
    p.add_argument("trials_file")
    _add_config_flags(p)
    p.add_argument("--params", default=str(Path(env.output_dir) / "parameters.json"))
    p.add_argument("--mode", choices=[*ANALYSIS_MODES, "all"], default="all")
    p.add_argument("--window", type=float, help="override the trained coincidence window")
    p.add_argument("--out", default=env.output_dir)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="simulate, train and analyze in one go")
    _add_config_flags(p)
    p.add_argument("--out", default=env.output_dir)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one protocol run per jitter point")
    _add_config_flags(p)
    p.add_argument("--jitter-grid", help="comma-separated jitter specs, e.g. uniform:0.02,uniform:0.06")
    p.add_argument("--medians", help="comma-separated median delays (used with --kind)")
    p.add_argument("--kind", choices=["uniform", "exponential"], default="uniform")
    p.add_argument("--out", default=env.output_dir)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("correlate", help="binned auto- and cross-correlation panels")
    p.add_argument("trials_file")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk")
    scale.add_argument("--full-scale", dest="scale", action="store_const", const="full")
    p.add_argument("--t-win", dest="t_win", type=float)
    p.add_argument("--bin-width", type=float, default=0.01)
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--cutoff", type=float, default=1.0, help="largest |separation| kept by the broadening check")
    p.add_argument("--out", default=env.output_dir)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--full", action="store_true", help="include the desk-scale protocol runs")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
