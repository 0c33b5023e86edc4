"""
Main entry point for the FedIN simulator
"""
import os

# One BLAS thread per process; must be set before numpy loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import dataclasses
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import config
from database.models import init_database
from database.operations import DatabaseOperations
from harness.experiment_config import parse_config
from harness.gradcheck import format_results, run_suite
from harness.metrics import compare_runs
from harness.runner import run_experiment


LOG_HANDLER_NAMES = ("fedin-file", "fedin-console")


def setup_logging(log_dir: Path = config.LOG_PATH, console_level: str = config.LOG_LEVEL):
    """Full DEBUG trace to a rotating file, round summaries to the console; calling again replaces both"""
    log_dir.mkdir(parents=True, exist_ok=True)
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        if handler.get_name() in LOG_HANDLER_NAMES:
            root_logger.removeHandler(handler)
            handler.close()

    file_handler = RotatingFileHandler(
        log_dir / config.LOG_FILE_NAME,
        maxBytes=config.MAX_LOG_SIZE_MB * 1024 * 1024,
        backupCount=config.LOG_BACKUP_COUNT,
    )
    file_handler.set_name("fedin-file")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(config.LOG_FILE_FORMAT))

    console_handler = logging.StreamHandler()
    console_handler.set_name("fedin-console")
    console_handler.setLevel(getattr(logging, console_level.upper(), logging.INFO))
    console_handler.setFormatter(logging.Formatter(config.LOG_CONSOLE_FORMAT))

    root_logger.setLevel(logging.DEBUG)
    for handler in (file_handler, console_handler):
        root_logger.addHandler(handler)

    # Keep SQL statements out of the file log
    logging.getLogger('sqlalchemy.engine').setLevel(logging.WARNING)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedin", description=f"{config.APP_NAME} v{config.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--mode", choices=config.RUN_MODES, help="override the run mode")
    run.add_argument("--rounds", type=int, help="override num_rounds")
    run.add_argument("--out", type=Path, help="metrics CSV path")
    run.add_argument("--db", type=Path, help="run registry SQLite file")

    compare = sub.add_parser("compare", help="per-round accuracy deltas between two metric CSVs")
    compare.add_argument("csv_a", type=Path)
    compare.add_argument("csv_b", type=Path)
    compare.add_argument("--tail", type=int, default=config.COMPARE_TAIL_ROUNDS,
                         help="rounds in the summary window")

    check = sub.add_parser("check-grads", help="finite-difference and projection self-checks")
    check.add_argument("--seed", type=int, default=config.DEFAULT_SEED)

    history = sub.add_parser("history", help="list recent runs from the registry")
    history.add_argument("--limit", type=int, default=10)
    history.add_argument("--db", type=Path, help="run registry SQLite file")
    return parser


def command_run(args) -> int:
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.rounds is not None:
        overrides["num_rounds"] = args.rounds
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    summary = run_experiment(cfg, out_csv=args.out, db_path=args.db)
    print(f"metrics:             {summary.csv_path}")
    print(f"final mean accuracy: {summary.final_mean_accuracy:.4f}")
    print(f"best round:          {summary.best_round} ({summary.best_accuracy:.4f})")
    return 0


def command_compare(args) -> int:
    report = compare_runs(args.csv_a, args.csv_b, tail=args.tail)
    print(report.format_table())
    return 0


def command_check_grads(args) -> int:
    results = run_suite(args.seed)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def command_history(args) -> int:
    init_database(args.db)
    with DatabaseOperations(args.db) as db:
        runs = db.get_recent_runs(args.limit)
        if not runs:
            print("no runs recorded")
            return 0
        for run in runs:
            accuracy = f"{run.final_mean_accuracy:.4f}" if run.final_mean_accuracy is not None else "-"
            started = run.started_at.strftime('%Y-%m-%d %H:%M:%S') if run.started_at else "-"
            print(f"{run.id:>4}  {started}  {run.status:<9}  {run.mode:<24}  seed={run.seed:<4}  "
                  f"rounds={run.num_rounds:<4}  acc={accuracy}  {run.run_name}")
    return 0


COMMANDS = {
    "run": command_run,
    "compare": command_compare,
    "check-grads": command_check_grads,
    "history": command_history,
}


def main(argv=None):
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    try:
        # Setup logging
        setup_logging()
        logger = logging.getLogger(__name__)
        logger.info(f"Starting {config.APP_NAME} v{config.APP_VERSION}: {args.command}")

        # Create necessary directories
        config.create_directories()

        sys.exit(COMMANDS[args.command](args))

    except Exception as e:
        logger = logging.getLogger(__name__)
        logger.critical(f"Fatal error: {e}", exc_info=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
