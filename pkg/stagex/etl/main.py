"""
StageX Command Line

Entry point for the batch lifecycle and the debugging commands:

    etl run | rerun | backfill           full batches
    etl extract | transform | validate-keys | load    single pipeline steps
    etl dds | inspect | verify | status | oracle       reading and checking

Exit code 0 on success; 1 with an ``ERROR code=... message=...`` line for
engine errors; 2 for anything unexpected.
"""

import argparse
import logging
import sys
import tempfile
import traceback
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dateutil.rrule import DAILY, rrule
from tqdm import tqdm

from stagex.config import (
    CONFIG_PATH,
    DATA_DIR,
    DDS_AREA,
    LOG_LEVEL,
    PARALLELISM,
    SOR_AREA,
    SSA1_AREA,
    SSA2_AREA,
    STATUS_INDICATORS,
)
from stagex.etl.dds import extract_dimension, extract_fact, extraction_window
from stagex.etl.errors import EtlError, PhaseFailure, TableNotFound
from stagex.etl.extractor import ingest_all, ingest_change_feed
from stagex.etl.keyvalidator import validate_keys_table
from stagex.etl.loader import load_table
from stagex.etl.oracle import compare_states, read_history, replay_naive, state_from_store
from stagex.etl.orchestrator import BatchReport, rerun_batch, run_batch
from stagex.etl.records import from_datetime, parse_date, to_datetime
from stagex.etl.schema import MappingConfig, TargetMapping, load_config
from stagex.etl.storage import FileStore
from stagex.etl.transformer import transform_table
from stagex.etl.workload import generate_workload, run_workload

logger = logging.getLogger(__name__)

EMOJIS = STATUS_INDICATORS["emojis"]


def _date(value: str) -> int:
    try:
        return parse_date(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not a YYYYMMDD date")


def _banner(title: str, subtitle: Optional[str] = None) -> None:
    print("=" * 60)
    print(title)
    if subtitle:
        print(subtitle)
    print("=" * 60)


def _print_report(report: BatchReport) -> None:
    for line in report.summary_lines():
        print(line)


def _open(args) -> tuple:
    cfg = load_config(args.config)
    return cfg, FileStore(args.data_dir, cfg)


def _selected_targets(cfg: MappingConfig, name: Optional[str]) -> List[TargetMapping]:
    return [cfg.target(name)] if name else list(cfg.targets)


def _require_date(args) -> int:
    if args.batch_date is None:
        raise SystemExit("error: --batch-date is required for this command")
    return args.batch_date


# --- Batch commands ---

def cmd_run(args) -> int:
    cfg, store = _open(args)
    batch_date = _require_date(args)
    _banner(f"BATCH {batch_date} - STAGEX", f"Started: {datetime.now():%Y-%m-%d %H:%M:%S}")
    try:
        report = run_batch(batch_date, cfg, store, args.parallelism, extract_dds=args.dds)
    except PhaseFailure as failure:
        if failure.report is not None:
            _print_report(failure.report)
        raise
    _print_report(report)
    return 0


def cmd_rerun(args) -> int:
    cfg, store = _open(args)
    batch_date = _require_date(args)
    _banner(f"RERUN {batch_date} - STAGEX", "Replaying from SSA Lv1")
    try:
        report = rerun_batch(batch_date, cfg, store, args.parallelism)
    except PhaseFailure as failure:
        if failure.report is not None:
            _print_report(failure.report)
        raise
    _print_report(report)
    return 0


def cmd_backfill(args) -> int:
    cfg, store = _open(args)
    dates = [from_datetime(d) for d in rrule(DAILY, dtstart=to_datetime(args.start), until=to_datetime(args.end))]
    done = {d for d, info in store.batches().items() if info.get("status") == "success"}
    _banner(f"BACKFILL {args.start} -> {args.end}", f"{len(dates)} daily batches")

    for batch_date in tqdm(dates, desc="batches", unit="batch"):
        if batch_date in done:
            logger.info(f"⏭️  {batch_date} already complete, skipping")
            continue
        try:
            run_batch(batch_date, cfg, store, args.parallelism)
        except PhaseFailure as failure:
            print(f"\n{EMOJIS['aborted']} Backfill stopped at {batch_date}")
            raise failure
    print(f"{EMOJIS['success']} Backfill complete")
    return 0


# --- Single steps ---

def cmd_extract(args) -> int:
    cfg, store = _open(args)
    batch_date = _require_date(args)
    if args.feed:
        feed = cfg.feed(args.feed)
        stats = {feed.feed_id: ingest_change_feed(feed.resolve_path(store.data_dir, batch_date), cfg, batch_date,
                                                  store, feed_id=feed.feed_id)}
    else:
        stats = ingest_all(cfg, batch_date, store)
    for feed_id, s in stats.items():
        print(f"{EMOJIS['ingest']} {feed_id}: {s.rows_read} read, {s.rows_kept} kept, {s.rows_superseded} superseded")
    return 0


def cmd_transform(args) -> int:
    cfg, store = _open(args)
    batch_date = _require_date(args)
    for target in _selected_targets(cfg, args.target):
        store.clear_lv2(target.target_name)
        stats = transform_table(target, batch_date, store)
        print(f"{EMOJIS['transform']} {target.target_name}: {stats.op_counts} ({stats.skipped} skipped)")
    store.flush()
    return 0


def cmd_validate_keys(args) -> int:
    cfg, store = _open(args)
    for target in _selected_targets(cfg, args.target):
        stats = validate_keys_table(target, store)
        print(f"{EMOJIS['keys']} {target.target_name}: {stats.from_sor} SOR / {stats.from_lv2} Lv2 / "
              f"{stats.augments} augments")
    store.flush()
    return 0


def cmd_load(args) -> int:
    cfg, store = _open(args)
    batch_date = _require_date(args)
    for target in _selected_targets(cfg, args.target):
        stats = load_table(target, store, batch_date)
        print(f"{EMOJIS['load']} {target.target_name}: {stats.rows_loaded} rows {stats.op_counts}")
    store.flush()
    return 0


# --- Reading and checking ---

def cmd_dds(args) -> int:
    cfg, store = _open(args)
    since = extraction_window(store, args.since)
    if args.dimension:
        frame = extract_dimension(store, args.dimension, since, scd=args.scd)
    elif args.fact:
        if not args.affected_col:
            raise SystemExit("error: --fact needs --affected-col")
        frame = extract_fact(store, args.fact, args.affected_col, since, rebuild=args.rebuild)
    else:
        raise SystemExit("error: pass --dimension or --fact")
    print(f"{EMOJIS['dds']} {len(frame)} rows extracted")
    return 0


def cmd_inspect(args) -> int:
    cfg, store = _open(args)
    area, _, table = args.table.partition("/")
    if area == DDS_AREA:
        path = store.data_dir / DDS_AREA / f"{table}.csv"
        if not path.exists():
            raise TableNotFound(f"table {args.table} does not exist")
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    elif area in (SSA1_AREA, SSA2_AREA, SOR_AREA):
        frame = store.frame(area, table)
    else:
        raise TableNotFound(f"unknown area {area!r}")

    print(f"{EMOJIS['verify']} {args.table}: {len(frame)} rows")
    if not frame.empty:
        print(frame.head(args.rows).to_string(index=False))
    return 0


def cmd_verify(args) -> int:
    cfg, store = _open(args)
    violations = store.verify()
    for v in violations:
        print(f"VIOLATION code={v.code} table={v.location} detail={v.message}")
    if violations:
        print(f"{EMOJIS['aborted']} {len(violations)} violations")
        return 1
    print(f"{EMOJIS['success']} store verified: no violations")
    return 0


def cmd_status(args) -> int:
    cfg, store = _open(args)
    batches = store.batches()
    if not batches:
        print("No batches recorded")
        return 0
    for batch_date, info in batches.items():
        status = info.get("status", "?")
        mark = EMOJIS["success"] if status == "success" else EMOJIS["warning"]
        error = f"  {info['error']}" if info.get("error") else ""
        print(f"{mark} {batch_date}  {status:<8} {info.get('updated_at', '')}{error}")
    return 0


def cmd_oracle(args) -> int:
    if args.random:
        failures = 0
        for seed in range(args.seed, args.seed + args.workloads):
            workload = generate_workload(seed, entities=args.entities, days=args.days)
            with tempfile.TemporaryDirectory(prefix="stagex-oracle-") as tmp:
                store, _ = run_workload(workload, Path(tmp), parallelism=args.parallelism)
                differences = compare_states(state_from_store(store), replay_naive(workload.history, workload.cfg))
            mark = EMOJIS["success"] if not differences else EMOJIS["aborted"]
            print(f"{mark} seed={seed}: {len(differences)} differences")
            for difference in differences[:10]:
                print(f"   {difference}")
            failures += bool(differences)
        return 1 if failures else 0

    if args.history and args.compare:
        cfg, store = _open(args)
        reference = replay_naive(read_history(args.history, cfg), cfg)
        differences = compare_states(state_from_store(store), reference)
        for difference in differences:
            print(f"DIFF {difference}")
        print(f"{EMOJIS['success'] if not differences else EMOJIS['aborted']} {len(differences)} differences")
        return 1 if differences else 0

    raise SystemExit("error: pass --random or --history FILE --compare")


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=CONFIG_PATH, help="mapping config (JSON)")
    common.add_argument("--data-dir", type=Path, default=DATA_DIR, help="store data directory")
    common.add_argument("--batch-date", type=_date, default=None, help="batch date YYYYMMDD")
    common.add_argument("--parallelism", type=int, default=PARALLELISM, help="jobs per phase")
    common.add_argument("--log-level", default=LOG_LEVEL, help="logging level (default INFO)")

    parser = argparse.ArgumentParser(prog="etl", description="StageX two-level staging ETL")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="run the full batch")
    run.add_argument("--dds", action="store_true", help="extract static dimensions after loading")
    run.set_defaults(handler=cmd_run)

    commands.add_parser("rerun", parents=[common], help="rerun a batch from SSA Lv1").set_defaults(handler=cmd_rerun)

    backfill = commands.add_parser("backfill", parents=[common], help="run consecutive daily batches")
    backfill.add_argument("--from", dest="start", type=_date, required=True)
    backfill.add_argument("--to", dest="end", type=_date, required=True)
    backfill.set_defaults(handler=cmd_backfill)

    extract = commands.add_parser("extract", parents=[common], help="ingest change feeds into SSA Lv1")
    extract.add_argument("--feed", help="single feed id")
    extract.set_defaults(handler=cmd_extract)

    for name, handler in (("transform", cmd_transform), ("validate-keys", cmd_validate_keys), ("load", cmd_load)):
        step = commands.add_parser(name, parents=[common], help=f"{name} step only")
        step.add_argument("--target", help="single target")
        step.set_defaults(handler=handler)

    dds = commands.add_parser("dds", parents=[common], help="extract DDS record sets")
    dds.add_argument("--dimension", help="dimension target")
    dds.add_argument("--fact", help="fact target")
    dds.add_argument("--affected-col", help="history column holding the affected date")
    dds.add_argument("--since", type=_date, help="job start / earliest affected date")
    dds.add_argument("--scd", action="store_true", help="slowly changing dimension (all versions)")
    dds.add_argument("--rebuild", action="store_true", help="all versions from the earliest affected date")
    dds.set_defaults(handler=cmd_dds)

    inspect = commands.add_parser("inspect", parents=[common], help="print a table")
    inspect.add_argument("table", help="<area>/<table>, e.g. sor/customer_static")
    inspect.add_argument("--rows", type=int, default=50)
    inspect.set_defaults(handler=cmd_inspect)

    commands.add_parser("verify", parents=[common], help="check store invariants").set_defaults(handler=cmd_verify)
    commands.add_parser("status", parents=[common], help="list recorded batches").set_defaults(handler=cmd_status)

    oracle = commands.add_parser("oracle", parents=[common], help="compare the pipeline with the naive replay")
    oracle.add_argument("--random", action="store_true", help="generate randomized workloads")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--workloads", type=int, default=1)
    oracle.add_argument("--entities", type=int, default=50)
    oracle.add_argument("--days", type=int, default=10)
    oracle.add_argument("--history", type=Path, help="JSON-lines feed history")
    oracle.add_argument("--compare", action="store_true", help="compare the replay with the current store")
    oracle.set_defaults(handler=cmd_oracle)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except EtlError as e:
        print(e.to_line(), file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
