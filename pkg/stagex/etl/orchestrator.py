"""
Batch Orchestrator

Drives one daily batch through the pipeline:

    extract -> transform -> validate-keys -> load (-> dds)

Each phase runs one job per target on a thread pool and finishes completely
before the next phase starts, so every transform precedes every key
validation and every augment is staged before its table loads. The SOR is
snapshotted before the first phase; any failure restores it and marks the
batch aborted in the store's batch registry.
"""

import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from stagex.config import STATUS_INDICATORS
from stagex.etl.dds import extract_dimension
from stagex.etl.errors import BatchStateError, EtlError, FeedMissing, Lv1Missing, PhaseFailure, SnapshotNotFound
from stagex.etl.extractor import IngestStats, ingest_all
from stagex.etl.keyvalidator import ValidationStats, validate_keys_table
from stagex.etl.loader import LoadStats, load_table
from stagex.etl.schema import MappingConfig, TargetMapping
from stagex.etl.storage import FileStore
from stagex.etl.transformer import TransformStats, transform_table

logger = logging.getLogger(__name__)

JobHook = Callable[[str, str], None]

PHASES = ("transform", "validate", "load")


class BatchReport(BaseModel):
    batch_date: int
    outcome: Literal["success", "aborted"] = "success"
    rerun: bool = False
    snapshot_id: str = ""
    ingest: Dict[str, IngestStats] = Field(default_factory=dict)
    transform: Dict[str, TransformStats] = Field(default_factory=dict)
    validation: Dict[str, ValidationStats] = Field(default_factory=dict)
    load: Dict[str, LoadStats] = Field(default_factory=dict)
    dds_rows: Dict[str, int] = Field(default_factory=dict)
    phase_seconds: Dict[str, float] = Field(default_factory=dict)
    error: Optional[str] = None

    def op_counts_consistent(self) -> bool:
        """Every staged row loaded exactly once, and every augment created was loaded."""
        for target, staged in self.transform.items():
            loaded = self.load.get(target)
            if loaded is None:
                return False
            if staged.op_counts != {op: n for op, n in loaded.op_counts.items() if op != "A"}:
                return False
        created = sum(v.augments for v in self.validation.values())
        loaded_augments = sum(v.op_counts.get("A", 0) for v in self.load.values())
        return created == loaded_augments

    def summary_lines(self) -> List[str]:
        emojis = STATUS_INDICATORS["emojis"]
        status = emojis["success"] if self.outcome == "success" else emojis["aborted"]
        lines = [f"{status} Batch {self.batch_date}: {self.outcome}" + (" (rerun)" if self.rerun else "")]
        for feed_id, stats in self.ingest.items():
            lines.append(f"   {emojis['ingest']} {feed_id}: {stats.rows_read} read, {stats.rows_kept} kept")
        for target, stats in self.transform.items():
            lines.append(f"   {emojis['transform']} {target}: {stats.op_counts} ({stats.skipped} skipped)")
        for target, stats in self.validation.items():
            lines.append(
                f"   {emojis['keys']} {target}: {stats.from_sor} SOR / {stats.from_lv2} Lv2 / {stats.augments} augments"
            )
        for target, stats in self.load.items():
            lines.append(f"   {emojis['load']} {target}: {stats.rows_loaded} rows {stats.op_counts}")
        for phase, seconds in self.phase_seconds.items():
            lines.append(f"   ⏱️  {phase}: {seconds:.3f}s")
        if self.error:
            lines.append(f"   {emojis['aborted']} {self.error}")
        return lines


def snapshot_id_for(batch_date: int) -> str:
    return f"pre-{batch_date}"


def _check_feeds(cfg: MappingConfig, store: FileStore, batch_date: int) -> None:
    missing = [
        feed.feed_id for feed in cfg.source_feeds
        if not feed.resolve_path(store.data_dir, batch_date).exists()
    ]
    if missing:
        raise FeedMissing(f"batch {batch_date}: no feed file for {missing}")


def _check_batch_state(store: FileStore, batch_date: int, rerun: bool) -> None:
    batches = store.batches()
    later = [d for d, info in batches.items() if d > batch_date and info.get("status") == "success"]
    if later:
        raise BatchStateError(f"batch {batch_date} precedes completed batch {max(later)}")
    if rerun:
        return
    current = batches.get(batch_date)
    if current and current.get("status") == "success":
        raise BatchStateError(f"batch {batch_date} already completed; use rerun")
    if current and current.get("status") in ("aborted", "running"):
        raise BatchStateError(f"batch {batch_date} is {current['status']}; use rerun")
    earlier = [d for d in batches if d < batch_date]
    if earlier and batches[max(earlier)].get("status") != "success":
        raise BatchStateError(f"previous batch {max(earlier)} did not complete")


def _job(phase: str, target: TargetMapping, store: FileStore, batch_date: int, job_hook: Optional[JobHook]):
    if job_hook is not None:
        job_hook(phase, target.target_name)
    if phase == "transform":
        return transform_table(target, batch_date, store)
    if phase == "validate":
        return validate_keys_table(target, store)
    return load_table(target, store, batch_date)


def run_phase(
    phase: str,
    cfg: MappingConfig,
    store: FileStore,
    batch_date: int,
    parallelism: int = 1,
    rng: Optional[random.Random] = None,
    job_hook: Optional[JobHook] = None,
) -> Dict[str, BaseModel]:
    """
    Run one job per target for a phase and wait for all of them.

    Raises:
        PhaseFailure: first failed job (by submission order), after all jobs finished
    """
    targets = list(cfg.targets)
    if rng is not None:
        rng.shuffle(targets)

    results: Dict[str, BaseModel] = {}
    failures: Dict[str, BaseException] = {}
    with ThreadPoolExecutor(max_workers=max(1, parallelism), thread_name_prefix=f"etl-{phase}") as pool:
        futures = {
            pool.submit(_job, phase, target, store, batch_date, job_hook): target.target_name
            for target in targets
        }
        for future in as_completed(futures):
            name = futures[future]
            try:
                results[name] = future.result()
            except Exception as e:
                logger.error(f"❌ {phase}/{name} failed: {e}")
                failures[name] = e

    store.flush()
    if failures:
        name = next(t.target_name for t in targets if t.target_name in failures)
        raise PhaseFailure(phase, name, failures[name])
    return {t.target_name: results[t.target_name] for t in cfg.targets}


def _run_phases(
    report: BatchReport,
    cfg: MappingConfig,
    store: FileStore,
    parallelism: int,
    job_order_seed: Optional[int],
    job_hook: Optional[JobHook],
    extract_dds: bool,
) -> BatchReport:
    batch_date = report.batch_date
    rng = random.Random(job_order_seed) if job_order_seed is not None else None

    for target in cfg.targets:
        store.clear_lv2(target.target_name)

    for phase in PHASES:
        started = time.perf_counter()
        results = run_phase(phase, cfg, store, batch_date, parallelism, rng, job_hook)
        report.phase_seconds[phase] = round(time.perf_counter() - started, 6)
        getattr(report, "validation" if phase == "validate" else phase).update(results)

    if extract_dds:
        started = time.perf_counter()
        for target in cfg.targets:
            frame = extract_dimension(store, target.target_name, batch_date, scd=False)
            report.dds_rows[target.target_name] = len(frame)
        report.phase_seconds["dds"] = round(time.perf_counter() - started, 6)

    if not report.op_counts_consistent():
        logger.warning(f"⚠️ batch {batch_date}: transform and load op counts disagree")
    return report


def _abort(report: BatchReport, store: FileStore, failure: PhaseFailure, status: str = "aborted") -> PhaseFailure:
    report.outcome = "aborted"
    report.error = str(failure)
    if report.snapshot_id and store.has_snapshot(report.snapshot_id):
        store.restore_sor(report.snapshot_id)
    store.record_batch(report.batch_date, status=status, error=str(failure), snapshot=report.snapshot_id)
    failure.report = report
    logger.error(f"❌ batch {report.batch_date} aborted: {failure}")
    return failure


def run_batch(
    batch_date: int,
    cfg: MappingConfig,
    store: FileStore,
    parallelism: int = 1,
    job_order_seed: Optional[int] = None,
    job_hook: Optional[JobHook] = None,
    extract_dds: bool = False,
) -> BatchReport:
    """
    Run the full daily batch for ``batch_date``.

    Args:
        batch_date: YYYYMMDD batch identity
        cfg: mapping config
        store: file store for the data directory
        parallelism: worker threads per phase
        job_order_seed: shuffle per-target job order in every phase
        job_hook: called as ``job_hook(phase, target)`` before each job
        extract_dds: extract static dimensions for every target after loading

    Raises:
        FeedMissing: a configured feed file is absent (nothing touched)
        BatchStateError: batch already run, or previous batch incomplete
        PhaseFailure: a phase failed; SOR restored, report attached
    """
    _check_batch_state(store, batch_date, rerun=False)
    _check_feeds(cfg, store, batch_date)

    report = BatchReport(batch_date=batch_date, snapshot_id=snapshot_id_for(batch_date))
    logger.info(f"🚀 batch {batch_date} starting (parallelism={parallelism})")
    store.record_batch(batch_date, status="running", snapshot=report.snapshot_id)

    try:
        started = time.perf_counter()
        report.ingest = ingest_all(cfg, batch_date, store)
        report.phase_seconds["extract"] = round(time.perf_counter() - started, 6)
    except EtlError as e:
        report.snapshot_id = ""
        # nothing staged yet; the batch can simply be run again
        raise _abort(report, store, PhaseFailure("extract", None, e), status="failed")

    store.snapshot_sor(report.snapshot_id)
    try:
        _run_phases(report, cfg, store, parallelism, job_order_seed, job_hook, extract_dds)
    except PhaseFailure as failure:
        raise _abort(report, store, failure)
    except Exception as e:
        raise _abort(report, store, PhaseFailure("batch", None, e))

    store.record_batch(batch_date, status="success", snapshot=report.snapshot_id, error=None)
    logger.info(f"✅ batch {batch_date} complete")
    return report


def rerun_batch(
    batch_date: int,
    cfg: MappingConfig,
    store: FileStore,
    parallelism: int = 1,
    job_order_seed: Optional[int] = None,
    job_hook: Optional[JobHook] = None,
) -> BatchReport:
    """
    Rerun a batch from its preserved Lv1 tables, skipping extraction.

    Raises:
        Lv1Missing: some feed's Lv1 table does not hold ``batch_date``
        SnapshotNotFound: no pre-batch SOR snapshot for ``batch_date``
    """
    stale = [feed.feed_id for feed in cfg.source_feeds if store.lv1_batch(feed.feed_id) != batch_date]
    if stale or not cfg.source_feeds:
        raise Lv1Missing(f"no Lv1 data for batch {batch_date} (feeds {stale})")
    snapshot_id = snapshot_id_for(batch_date)
    if not store.has_snapshot(snapshot_id):
        raise SnapshotNotFound(f"snapshot {snapshot_id!r} not found")
    _check_batch_state(store, batch_date, rerun=True)

    report = BatchReport(batch_date=batch_date, rerun=True, snapshot_id=snapshot_id)
    logger.info(f"🔁 batch {batch_date} rerun from Lv1")
    store.restore_sor(snapshot_id)
    store.record_batch(batch_date, status="running", snapshot=snapshot_id)

    try:
        _run_phases(report, cfg, store, parallelism, job_order_seed, job_hook, extract_dds=False)
    except PhaseFailure as failure:
        raise _abort(report, store, failure)
    except Exception as e:
        raise _abort(report, store, PhaseFailure("batch", None, e))

    store.record_batch(batch_date, status="success", snapshot=snapshot_id, error=None)
    logger.info(f"✅ batch {batch_date} rerun complete")
    return report
