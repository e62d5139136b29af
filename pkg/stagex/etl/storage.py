"""
File-backed Table Store

Holds the four table areas of the engine - SSA Lv1, SSA Lv2, SOR static and
SOR history - as one UTF-8 CSV file per table, plus a ``meta.json`` sidecar
with surrogate-key sequences, the batch registry and the batch date of each
Lv1 table. Tables are loaded lazily into in-memory BK/SK maps and written
back on ``flush()``.

Concurrency: every target has its own re-entrant lock covering its Lv2 and
SOR tables; the sequence and metadata share one lock. Jobs for different
targets may run concurrently.
"""

import json
import logging
import os
import shutil
import threading
import uuid
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import pandas as pd

from stagex.config import (
    ARCHIVE_DIR,
    META_FILE,
    OPEN_END_DATE,
    SEQUENCE_BLOCK,
    SNAPSHOTS_DIR,
    SOR_AREA,
    SSA1_AREA,
    SSA2_AREA,
)
from stagex.etl.errors import (
    DuplicateStatic,
    InvariantViolation,
    PersistenceError,
    SnapshotNotFound,
    StoreCorruption,
    TableNotFound,
)
from stagex.etl.records import (
    BusinessKey,
    Lv1Record,
    OperationCode,
    SorHistoryRecord,
    SorStaticRecord,
    StagingRecord,
    format_bk,
    history_columns,
    lv1_columns,
    lv2_columns,
    static_columns,
)
from stagex.etl.schema import MappingConfig, TargetMapping, Violation

logger = logging.getLogger(__name__)


# --- CSV helpers ---

def read_csv_table(path: Path, columns: List[str]) -> List[Dict[str, str]]:
    """Read a header-first CSV as string rows; a missing file is an empty table."""
    if not path.exists():
        return []
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise StoreCorruption(f"{path} is not a readable table: {e}")
    if list(frame.columns) != columns:
        raise StoreCorruption(f"{path} header {list(frame.columns)} != expected {columns}")
    return frame.to_dict("records")


def write_csv_table(path: Path, columns: List[str], rows: List[Dict[str, str]]) -> None:
    """Write rows as CSV (header always present, ``\\n`` line endings), atomically."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame.from_records(rows, columns=columns)
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        frame.to_csv(tmp_path, index=False, lineterminator="\n", encoding="utf-8")
        os.replace(tmp_path, path)
    except OSError as e:
        raise PersistenceError(f"cannot write {path}: {e}")


def table_frame(columns: List[str], rows: List[Dict[str, str]]) -> pd.DataFrame:
    return pd.DataFrame.from_records(rows, columns=columns)


class FileStore:
    """CSV-backed store for one data directory and one mapping config."""

    def __init__(self, data_dir: Path, cfg: MappingConfig, sequence_block: int = SEQUENCE_BLOCK):
        self.data_dir = Path(data_dir)
        self.cfg = cfg
        self.sequence_block = max(1, sequence_block)
        self._next_sk: Dict[str, int] = {}
        self._targets: Dict[str, TargetMapping] = {t.target_name: t for t in cfg.targets}
        self._locks: Dict[str, threading.RLock] = {name: threading.RLock() for name in self._targets}
        self._meta_lock = threading.RLock()
        self._cache_lock = threading.RLock()

        self._lv2: Dict[str, Dict[BusinessKey, StagingRecord]] = {}
        self._lv2_sks: Dict[str, Dict[int, BusinessKey]] = {}
        self._static: Dict[str, Dict[int, SorStaticRecord]] = {}
        self._static_bk: Dict[str, Dict[BusinessKey, int]] = {}
        self._history: Dict[str, Dict[int, Dict[int, SorHistoryRecord]]] = {}
        self._dirty: set = set()

        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._meta = self._read_meta()

    # --- Paths ---

    @property
    def sor_dir(self) -> Path:
        return self.data_dir / SOR_AREA

    def lv1_path(self, feed_id: str) -> Path:
        return self.data_dir / SSA1_AREA / f"{feed_id}.csv"

    def lv2_path(self, table: str) -> Path:
        return self.data_dir / SSA2_AREA / f"{table}.csv"

    def static_path(self, table: str) -> Path:
        return self.sor_dir / f"{table}_static.csv"

    def history_path(self, table: str) -> Path:
        return self.sor_dir / f"{table}_history.csv"

    def archive_path(self, table: str, batch_date: int) -> Path:
        return self.data_dir / SSA2_AREA / ARCHIVE_DIR / str(batch_date) / f"{table}.csv"

    def snapshot_dir(self, snapshot_id: str) -> Path:
        return self.data_dir / SNAPSHOTS_DIR / snapshot_id

    def target(self, table: str) -> TargetMapping:
        try:
            return self._targets[table]
        except KeyError:
            raise TableNotFound(f"table {table!r} does not exist")

    @contextmanager
    def table_lock(self, table: str) -> Iterator[None]:
        """Single-writer lock for a target's Lv2 and SOR tables."""
        self.target(table)
        with self._locks[table]:
            yield

    # --- Metadata ---

    def _read_meta(self) -> Dict[str, Any]:
        meta_path = self.data_dir / META_FILE
        meta: Dict[str, Any] = {}
        if meta_path.exists():
            try:
                with open(meta_path, "r", encoding="utf-8") as f:
                    meta = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise StoreCorruption(f"{meta_path} is unreadable: {e}")
        meta.setdefault("sequences", {})
        meta.setdefault("batches", {})
        meta.setdefault("lv1", {})
        return meta

    def _write_meta(self) -> None:
        meta_path = self.data_dir / META_FILE
        tmp_path = meta_path.with_name(META_FILE + ".tmp")
        try:
            with open(tmp_path, "w", encoding="utf-8") as f:
                json.dump(self._meta, f, indent=2, sort_keys=True)
                f.write("\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, meta_path)
        except OSError as e:
            raise PersistenceError(f"cannot persist {meta_path}: {e}")

    def batch_info(self, batch_date: int) -> Optional[Dict[str, Any]]:
        with self._meta_lock:
            info = self._meta["batches"].get(str(batch_date))
            return dict(info) if info else None

    def batches(self) -> Dict[int, Dict[str, Any]]:
        with self._meta_lock:
            return {int(k): dict(v) for k, v in sorted(self._meta["batches"].items())}

    def record_batch(self, batch_date: int, **info: Any) -> None:
        with self._meta_lock:
            entry = self._meta["batches"].setdefault(str(batch_date), {})
            entry.update(info)
            entry["updated_at"] = datetime.now(timezone.utc).isoformat()
            self._write_meta()

    def lv1_batch(self, feed_id: str) -> Optional[int]:
        with self._meta_lock:
            return self._meta["lv1"].get(feed_id)

    # --- Surrogate keys ---

    def next_surrogate_key(self, table: str) -> int:
        """
        Draw the next surrogate key for a table.

        Keys are handed out from a block reserved in meta.json; the sequence
        stored there is the end of the block, so a reopened store never
        reissues a drawn key. Unused keys of a block are skipped.
        The first draw seeds at max(configured start, largest stored sk + 1).
        """
        target = self.target(table)
        with self._meta_lock:
            sequences = self._meta["sequences"]
            reserved = sequences.get(table)
            current = self._next_sk.get(table, reserved)
            if current is None:
                current = max(target.sequence_start, self._max_known_sk(table) + 1)
            if reserved is None or current >= reserved:
                sequences[table] = current + self.sequence_block
                try:
                    self._write_meta()
                except PersistenceError:
                    if reserved is None:
                        del sequences[table]
                    else:
                        sequences[table] = reserved
                    raise
            self._next_sk[table] = current + 1
            return current

    def _max_known_sk(self, table: str) -> int:
        static_sks = self._static_rows(table).keys()
        lv2_sks = self._lv2_rows(table)[1].keys()
        return max([0, *static_sks, *lv2_sks])

    # --- SSA Lv1 ---

    def fk_sources(self, feed_id: str) -> Tuple[str, ...]:
        """Feed columns that carry FK business values in any target mapping."""
        sources = []
        for target, mapping in self.cfg.mappings_for_feed(feed_id):
            for source_col, target_col in mapping.column_map.items():
                if target_col in target.fk_columns and source_col not in sources:
                    sources.append(source_col)
        return tuple(sources)

    def write_lv1(self, feed_id: str, records: List[Lv1Record], batch_date: int) -> None:
        feed = self.cfg.feed(feed_id)
        write_csv_table(self.lv1_path(feed_id), lv1_columns(feed), [r.to_row(feed) for r in records])
        with self._meta_lock:
            self._meta["lv1"][feed_id] = batch_date
            self._write_meta()

    def read_lv1(self, feed_id: str) -> List[Lv1Record]:
        feed = self.cfg.feed(feed_id)
        rows = read_csv_table(self.lv1_path(feed_id), lv1_columns(feed))
        fk_sources = self.fk_sources(feed_id)
        return [Lv1Record.from_row(row, feed, fk_sources, line=i + 2) for i, row in enumerate(rows)]

    # --- SSA Lv2 ---

    def _lv2_rows(self, table: str) -> Tuple[Dict[BusinessKey, StagingRecord], Dict[int, BusinessKey]]:
        target = self.target(table)
        with self._cache_lock:
            if table not in self._lv2:
                by_bk: Dict[BusinessKey, StagingRecord] = {}
                by_sk: Dict[int, BusinessKey] = {}
                for row in read_csv_table(self.lv2_path(table), lv2_columns(target)):
                    rec = StagingRecord.from_row(row, target)
                    if rec.bk in by_bk:
                        raise StoreCorruption(f"Lv2 {table}: bk {format_bk(rec.bk)} present twice")
                    if rec.sk in by_sk:
                        raise StoreCorruption(f"Lv2 {table}: sk {rec.sk} present twice")
                    by_bk[rec.bk] = rec
                    by_sk[rec.sk] = rec.bk
                self._lv2[table] = by_bk
                self._lv2_sks[table] = by_sk
            return self._lv2[table], self._lv2_sks[table]

    def lookup_lv2_by_bk(self, table: str, bk: BusinessKey) -> Optional[StagingRecord]:
        with self._locks[self.target(table).target_name]:
            return self._lv2_rows(table)[0].get(tuple(bk))

    def lv2_records(self, table: str) -> List[StagingRecord]:
        """Current Lv2 rows of a table, ascending by surrogate key."""
        with self._locks[self.target(table).target_name]:
            return sorted(self._lv2_rows(table)[0].values(), key=lambda r: r.sk)

    def upsert_lv2(self, table: str, rec: StagingRecord) -> StagingRecord:
        """Insert ``rec`` or merge it onto the row with the same business key."""
        with self._locks[self.target(table).target_name]:
            by_bk, by_sk = self._lv2_rows(table)
            existing = by_bk.get(rec.bk)
            stored = existing.merged_with(rec) if existing else rec
            stored.check()
            owner = by_sk.get(stored.sk)
            if owner is not None and owner != stored.bk:
                raise InvariantViolation(f"Lv2 {table}: sk {stored.sk} already used by bk {format_bk(owner)}")
            by_bk[stored.bk] = stored
            by_sk[stored.sk] = stored.bk
            self._mark_dirty(SSA2_AREA, table)
            return stored

    def lv2_state(self, table: str) -> Dict[BusinessKey, StagingRecord]:
        with self._locks[self.target(table).target_name]:
            return dict(self._lv2_rows(table)[0])

    def set_lv2_state(self, table: str, state: Dict[BusinessKey, StagingRecord]) -> None:
        with self._locks[self.target(table).target_name]:
            self._lv2[table] = dict(state)
            self._lv2_sks[table] = {rec.sk: bk for bk, rec in state.items()}
            self._mark_dirty(SSA2_AREA, table)

    def clear_lv2(self, table: str) -> None:
        self.set_lv2_state(table, {})

    def archive_lv2(self, table: str, batch_date: int) -> Path:
        target = self.target(table)
        path = self.archive_path(table, batch_date)
        rows = [r.to_row(target) for r in self.lv2_records(table)]
        write_csv_table(path, lv2_columns(target), rows)
        return path

    # --- SOR ---

    def _static_rows(self, table: str) -> Dict[int, SorStaticRecord]:
        target = self.target(table)
        with self._cache_lock:
            if table not in self._static:
                by_sk: Dict[int, SorStaticRecord] = {}
                by_bk: Dict[BusinessKey, int] = {}
                for row in read_csv_table(self.static_path(table), static_columns(target)):
                    rec = SorStaticRecord.from_row(row, target)
                    if rec.sk in by_sk:
                        raise StoreCorruption(f"SOR {table}: static sk {rec.sk} present twice")
                    if rec.bk in by_bk:
                        raise StoreCorruption(f"SOR {table}: static bk {format_bk(rec.bk)} present twice")
                    by_sk[rec.sk] = rec
                    by_bk[rec.bk] = rec.sk
                self._static[table] = by_sk
                self._static_bk[table] = by_bk
            return self._static[table]

    def _history_rows(self, table: str) -> Dict[int, Dict[int, SorHistoryRecord]]:
        target = self.target(table)
        with self._cache_lock:
            if table not in self._history:
                by_sk: Dict[int, Dict[int, SorHistoryRecord]] = {}
                for row in read_csv_table(self.history_path(table), history_columns(target)):
                    rec = SorHistoryRecord.from_row(row, target)
                    versions = by_sk.setdefault(rec.sk, {})
                    if rec.bd in versions:
                        raise StoreCorruption(f"SOR {table}: history ({rec.sk}, {rec.bd}) present twice")
                    versions[rec.bd] = rec
                self._history[table] = by_sk
            return self._history[table]

    def lookup_sor_static_by_bk(self, table: str, bk: BusinessKey) -> Optional[SorStaticRecord]:
        """Unique static row for a business key, augment rows included."""
        self.target(table)
        with self._cache_lock:
            rows = self._static_rows(table)
            sk = self._static_bk[table].get(tuple(bk))
            return rows[sk] if sk is not None else None

    def static_by_sk(self, table: str, sk: int) -> Optional[SorStaticRecord]:
        with self._cache_lock:
            return self._static_rows(table).get(sk)

    def static_records(self, table: str) -> List[SorStaticRecord]:
        with self._cache_lock:
            return sorted(self._static_rows(table).values(), key=lambda r: r.sk)

    def history_records(self, table: str, sk: Optional[int] = None) -> List[SorHistoryRecord]:
        with self._cache_lock:
            rows = self._history_rows(table)
            if sk is not None:
                return sorted(rows.get(sk, {}).values(), key=lambda r: r.bd)
            return [rec for key in sorted(rows) for rec in sorted(rows[key].values(), key=lambda r: r.bd)]

    def open_version(self, table: str, sk: int) -> Optional[SorHistoryRecord]:
        for rec in self.history_records(table, sk):
            if rec.is_open:
                return rec
        return None

    def find_history(self, table: str, sk: int, bd: int) -> Optional[SorHistoryRecord]:
        with self._cache_lock:
            return self._history_rows(table).get(sk, {}).get(bd)

    def insert_static(self, table: str, rec: SorStaticRecord) -> None:
        with self._cache_lock:
            rows = self._static_rows(table)
            if rec.sk in rows:
                raise DuplicateStatic(f"SOR {table}: static sk {rec.sk} already exists")
            if rec.bk in self._static_bk[table]:
                raise DuplicateStatic(f"SOR {table}: static bk {format_bk(rec.bk)} already exists")
            rows[rec.sk] = rec
            self._static_bk[table][rec.bk] = rec.sk
            self._mark_dirty(SOR_AREA, table)

    def update_static(self, table: str, rec: SorStaticRecord) -> None:
        with self._cache_lock:
            rows = self._static_rows(table)
            if rec.sk not in rows:
                raise StoreCorruption(f"SOR {table}: no static row with sk {rec.sk}")
            rows[rec.sk] = rec
            self._mark_dirty(SOR_AREA, table)

    def put_history(self, table: str, rec: SorHistoryRecord) -> None:
        """Insert a history row or replace the one with the same (sk, bd)."""
        with self._cache_lock:
            self._history_rows(table).setdefault(rec.sk, {})[rec.bd] = rec
            self._mark_dirty(SOR_AREA, table)

    def sor_state(self, table: str) -> Tuple[Dict[int, SorStaticRecord], Dict[int, Dict[int, SorHistoryRecord]]]:
        with self._cache_lock:
            return dict(self._static_rows(table)), {sk: dict(v) for sk, v in self._history_rows(table).items()}

    def set_sor_state(self, table: str, state: Tuple[Dict[int, SorStaticRecord], Dict[int, Dict[int, SorHistoryRecord]]]) -> None:
        static, history = state
        with self._cache_lock:
            self._static[table] = dict(static)
            self._static_bk[table] = {rec.bk: sk for sk, rec in static.items()}
            self._history[table] = {sk: dict(v) for sk, v in history.items()}
            self._mark_dirty(SOR_AREA, table)

    # --- Frames (inspection / DDS) ---

    def frame(self, area: str, table: str) -> pd.DataFrame:
        """Current contents of ``<area>/<table>`` as a string DataFrame."""
        if area == SSA1_AREA:
            feed = self.cfg.feed(table)
            return table_frame(lv1_columns(feed), read_csv_table(self.lv1_path(table), lv1_columns(feed)))
        if area == SSA2_AREA:
            target = self.target(table)
            return table_frame(lv2_columns(target), [r.to_row(target) for r in self.lv2_records(table)])
        if area == SOR_AREA:
            name, _, kind = table.rpartition("_")
            target = self.target(name)
            if kind == "static":
                return table_frame(static_columns(target), [r.to_row(target) for r in self.static_records(name)])
            if kind == "history":
                return table_frame(history_columns(target), [r.to_row(target) for r in self.history_records(name)])
        raise TableNotFound(f"table {area}/{table} does not exist")

    # --- Persistence ---

    def _mark_dirty(self, area: str, table: str) -> None:
        with self._cache_lock:
            self._dirty.add((area, table))

    def flush(self, area: Optional[str] = None) -> None:
        """Write every modified table (optionally of one area) back to disk."""
        with self._cache_lock:
            pending = sorted(key for key in self._dirty if area is None or key[0] == area)
            for key in pending:
                area_name, table = key
                target = self.target(table)
                if area_name == SSA2_AREA:
                    staged = sorted(self._lv2.get(table, {}).values(), key=lambda r: r.sk)
                    rows = [r.to_row(target) for r in staged]
                    write_csv_table(self.lv2_path(table), lv2_columns(target), rows)
                else:
                    write_csv_table(self.static_path(table), static_columns(target),
                                    [r.to_row(target) for r in self.static_records(table)])
                    write_csv_table(self.history_path(table), history_columns(target),
                                    [r.to_row(target) for r in self.history_records(table)])
                self._dirty.discard(key)

    def _drop_sor_cache(self) -> None:
        with self._cache_lock:
            self._static.clear()
            self._static_bk.clear()
            self._history.clear()
            self._dirty = {key for key in self._dirty if key[0] != SOR_AREA}

    def reload(self) -> None:
        """Forget unflushed in-memory state and re-read everything from disk."""
        with self._cache_lock:
            self._drop_sor_cache()
            self._lv2.clear()
            self._lv2_sks.clear()
            self._dirty.clear()
        with self._meta_lock:
            self._meta = self._read_meta()
            self._next_sk.clear()

    # --- Snapshots ---

    def snapshot_sor(self, snapshot_id: Optional[str] = None) -> str:
        """Copy the persisted SOR area byte-for-byte; returns the snapshot id."""
        snapshot_id = snapshot_id or f"snap-{datetime.now(timezone.utc):%Y%m%d%H%M%S}-{uuid.uuid4().hex[:6]}"
        with self._cache_lock:
            self.flush(SOR_AREA)
            self.sor_dir.mkdir(parents=True, exist_ok=True)
            destination = self.snapshot_dir(snapshot_id) / SOR_AREA
            try:
                if destination.exists():
                    shutil.rmtree(destination)
                shutil.copytree(self.sor_dir, destination)
            except OSError as e:
                raise PersistenceError(f"cannot snapshot SOR to {destination}: {e}")
        logger.info(f"📸 SOR snapshot {snapshot_id} taken")
        return snapshot_id

    def restore_sor(self, snapshot_id: str) -> None:
        """Replace the SOR area with a snapshot, byte-for-byte."""
        source = self.snapshot_dir(snapshot_id) / SOR_AREA
        if not source.is_dir():
            raise SnapshotNotFound(f"snapshot {snapshot_id!r} not found")
        with self._cache_lock:
            try:
                if self.sor_dir.exists():
                    shutil.rmtree(self.sor_dir)
                shutil.copytree(source, self.sor_dir)
            except OSError as e:
                raise PersistenceError(f"cannot restore snapshot {snapshot_id}: {e}")
            self._drop_sor_cache()
        logger.info(f"📸 SOR restored from snapshot {snapshot_id}")

    def has_snapshot(self, snapshot_id: str) -> bool:
        return (self.snapshot_dir(snapshot_id) / SOR_AREA).is_dir()

    # --- Invariant walk ---

    def verify(self) -> List[Violation]:
        """Check every table against its record invariants."""
        violations: List[Violation] = []

        def add(code: str, location: str, message: str) -> None:
            violations.append(Violation(code, location, message))

        for target in self.cfg.targets:
            table = target.target_name
            static = self._static_rows(table)
            history = self._history_rows(table)

            seen_bk: Dict[BusinessKey, int] = {}
            for rec in static.values():
                if not rec.af and rec.bk in seen_bk:
                    add("DUPLICATE_BK", f"sor/{table}_static", f"bk {format_bk(rec.bk)} on sk {seen_bk[rec.bk]} and {rec.sk}")
                if not rec.af:
                    seen_bk[rec.bk] = rec.sk
                if rec.af and rec.static_attrs:
                    add("AUGMENT_NOT_BLANK", f"sor/{table}_static", f"augment sk {rec.sk} has attributes {sorted(rec.static_attrs)}")

            for sk, versions in history.items():
                location = f"sor/{table}_history"
                if sk not in static:
                    add("ORPHAN_HISTORY", location, f"history sk {sk} has no static row")
                ordered = sorted(versions.values(), key=lambda r: r.bd)
                open_count = sum(1 for r in ordered if r.ed == OPEN_END_DATE)
                if open_count > 1:
                    add("MULTIPLE_OPEN", location, f"sk {sk} has {open_count} open versions")
                for rec in ordered:
                    if rec.bd > rec.ed:
                        add("BAD_INTERVAL", location, f"sk {sk} version bd={rec.bd} > ed={rec.ed}")
                for earlier, later in zip(ordered, ordered[1:]):
                    if later.bd <= earlier.ed:
                        add("OVERLAP", location, f"sk {sk} versions {earlier.bd}-{earlier.ed} and {later.bd}-{later.ed} overlap")
                for rec in ordered:
                    for fk in target.fk_defs:
                        key = rec.resolved_keys.get(fk.fk_column)
                        if key is not None and self.static_by_sk(fk.referenced_target, key) is None:
                            add("DANGLING_KEY", location, f"sk {sk} bd={rec.bd} {fk.fk_column}_sk={key} not in {fk.referenced_target}")

            seen_sk: Dict[int, BusinessKey] = {}
            for rec in self._lv2_rows(table)[0].values():
                location = f"ssa2/{table}"
                try:
                    rec.check()
                except InvariantViolation as e:
                    add("LV2_INVARIANT", location, str(e))
                if rec.sk in seen_sk:
                    add("LV2_DUPLICATE_SK", location, f"sk {rec.sk} used by {format_bk(seen_sk[rec.sk])} and {format_bk(rec.bk)}")
                seen_sk[rec.sk] = rec.bk
                static_row = self.lookup_sor_static_by_bk(table, rec.bk)
                if static_row is not None and static_row.sk != rec.sk and rec.op is not OperationCode.AUGMENT:
                    add("LV2_SK_MISMATCH", location, f"bk {format_bk(rec.bk)} staged as sk {rec.sk} but SOR has {static_row.sk}")

        return violations
