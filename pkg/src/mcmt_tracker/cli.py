import argparse
import os
import sys

from loguru import logger

from .config import IcaConfig, TrackerConfig, apply_overrides, build_model, load_run_config, read_settings
from .errors import DataIntegrityError, TrackingError, UsageError
from .io import write_scenario
from .logging import initialize_logging
from .pipeline import (
    ABLATION_COLUMNS,
    ablation_variants,
    associate_outputs,
    evaluate_outputs,
    run_ablation,
    run_pipeline,
    track_single,
)
from .report import METRIC_COLUMNS, format_table, metric_rows
from .store import ResultStore
from .synth import PRESETS, generate_scenario, preset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")

def key_value_type(kv_string):
    if "=" not in kv_string or kv_string.startswith("="):
        raise argparse.ArgumentTypeError(f"Invalid override '{kv_string}', expected key=value")

    return kv_string

def positive_int(value):
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{value}' is not an integer")

    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {number}")

    return number

def _load_run(args):
    overrides = list(args.set)
    if getattr(args, "out", None):
        overrides.append(f"output={os.path.abspath(args.out)}")
    if getattr(args, "jobs", None):
        overrides.append(f"jobs={args.jobs}")

    return load_run_config(args.config, overrides)

def _print_reports(result):
    rows = metric_rows((("single-camera", result.scmt_report), ("multi-camera", result.mcmt_report)))
    if rows:
        print(format_table(rows, METRIC_COLUMNS))

def command_synth(args):
    overrides = apply_overrides({}, args.set)
    scenario = generate_scenario(preset(args.preset, args.seed, **overrides))
    config_path = write_scenario(args.out, scenario)
    print(config_path)

def command_track(args):
    run = _load_run(args)
    tracklets = track_single(run, args.camera)
    logger.info(f"Camera {args.camera}: wrote {len(tracklets)} tracklets to '{run.output}'")

def command_associate(args):
    result = associate_outputs(_load_run(args))
    logger.info(f"{len(result.assignment.components)} global identities")

def command_pipeline(args):
    _print_reports(run_pipeline(_load_run(args)))

def command_evaluate(args):
    _print_reports(evaluate_outputs(_load_run(args)))

def command_ablate(args):
    settings = read_settings(args.config, args.set)
    unknown = set(settings) - {"tracker", "ica"}
    if unknown:
        raise UsageError(f"Ablation settings only take 'tracker' and 'ica' sections, got {sorted(unknown)}")

    tracker = build_model(TrackerConfig, settings.get("tracker"), "tracker config")
    ica = build_model(IcaConfig, settings.get("ica"), "association config")

    variants = ablation_variants(tracker, ica)
    if args.group:
        variants = [variant for variant in variants if variant.group in args.group]

    seeds = list(range(args.seed, args.seed + args.seeds))
    store = ResultStore(args.db) if args.db else None
    try:
        rows = run_ablation(variants, seeds, args.jobs, store)
    finally:
        if store is not None:
            store.dispose()

    print(format_table([row.as_tuple() for row in rows], ABLATION_COLUMNS))

def _add_run_arguments(parser, jobs: bool = True):
    parser.add_argument("--config", required=True, help="Run config JSON file")
    parser.add_argument("--out", help="Output folder, overrides 'output' in the run config")
    parser.add_argument(
        "--set", nargs="+", default=[], type=key_value_type, metavar="KEY=VALUE",
        help="Config overrides, e.g. tracker.max_lost=40"
    )
    if jobs:
        parser.add_argument("--jobs", type=positive_int, help="Worker threads for cameras and links")

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="mcmt-tracker", description="Multi-camera vehicle tracking")
    parser.add_argument("--log-folder", help="Folder for the serialized debug log")
    parser.add_argument("--log-level", default="INFO", help="Console log level")

    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="Generate a synthetic scenario")
    synth.add_argument("--preset", choices=PRESETS, default="clean")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="Folder for the scenario files")
    synth.add_argument("--set", nargs="+", default=[], type=key_value_type, metavar="KEY=VALUE")
    synth.set_defaults(func=command_synth)

    track = subparsers.add_parser("track", help="Track a single camera")
    _add_run_arguments(track, jobs=False)
    track.add_argument("--camera", type=int, required=True)
    track.set_defaults(func=command_track)

    associate = subparsers.add_parser("associate", help="Associate tracked cameras into global identities")
    _add_run_arguments(associate)
    associate.set_defaults(func=command_associate)

    pipeline = subparsers.add_parser("pipeline", help="Track, associate and evaluate")
    _add_run_arguments(pipeline)
    pipeline.set_defaults(func=command_pipeline)

    evaluate = subparsers.add_parser("evaluate", help="Evaluate written tracking output")
    _add_run_arguments(evaluate, jobs=False)
    evaluate.set_defaults(func=command_evaluate)

    ablate = subparsers.add_parser("ablate", help="Run the strategy ablation grid")
    ablate.add_argument("--config", help="JSON file with 'tracker' and 'ica' sections")
    ablate.add_argument("--seed", type=int, default=0, help="First seed")
    ablate.add_argument("--seeds", type=positive_int, default=20, help="Number of seeds")
    ablate.add_argument("--jobs", type=positive_int, default=1)
    ablate.add_argument("--db", help="SQLite file receiving every per-seed result")
    ablate.add_argument("--group", nargs="+", choices=("scmt", "ica", "matrix", "k"))
    ablate.add_argument("--set", nargs="+", default=[], type=key_value_type, metavar="KEY=VALUE")
    ablate.set_defaults(func=command_ablate)

    return parser

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    initialize_logging(args.log_folder, args.log_level)

    try:
        args.func(args)
    except DataIntegrityError as exc:
        logger.error(str(exc))
        return EXIT_DATA
    except TrackingError as exc:
        logger.error(str(exc))
        return EXIT_USAGE

    return EXIT_OK

if __name__ == "__main__":
    sys.exit(main())
