"""
SOR loading (SSA Lv2 -> SOR static + history).

Applies each staged row according to its operation code:

    B   new static row + open history version
    EB  static attributes updated, open version closed at ed, new version opened
    E   static marked deleted, open version closed at ed
    DA  augment (or deleted) row filled and reactivated, new version opened
    A   blank placeholder static row, no history
"""

import logging
from collections import Counter
from dataclasses import replace
from typing import Dict

from pydantic import BaseModel, Field

from stagex.config import OPEN_END_DATE
from stagex.etl.errors import HistoryRowNotFound, StoreCorruption
from stagex.etl.records import (
    OperationCode,
    SorHistoryRecord,
    SorStaticRecord,
    StagingRecord,
    TxType,
    format_bk,
)
from stagex.etl.schema import TargetMapping
from stagex.etl.storage import FileStore

logger = logging.getLogger(__name__)


class LoadStats(BaseModel):
    target: str
    rows_loaded: int = 0
    op_counts: Dict[str, int] = Field(default_factory=dict)
    archive: str = ""


def _split(rec: StagingRecord, target: TargetMapping):
    static = {c: rec.data[c] for c in target.static_attrs if c in rec.data}
    dynamic = {c: rec.data[c] for c in target.dynamic_attrs if c in rec.data}
    return static, dynamic


def _existing_static(store: FileStore, table: str, rec: StagingRecord) -> SorStaticRecord:
    row = store.static_by_sk(table, rec.sk)
    if row is None:
        raise StoreCorruption(f"SOR {table}: no static row for sk {rec.sk} ({rec.op.value} bk={format_bk(rec.bk)})")
    return row


def _close_version(store: FileStore, table: str, rec: StagingRecord) -> SorHistoryRecord:
    version = store.find_history(table, rec.sk, rec.sor_bd)
    if version is None:
        raise HistoryRowNotFound(f"SOR {table}: no history row (sk={rec.sk}, bd={rec.sor_bd})")
    closed = replace(version, ed=rec.ed)
    store.put_history(table, closed)
    return closed


def load_record(rec: StagingRecord, target: TargetMapping, store: FileStore, batch_date: int) -> OperationCode:
    """Apply one Lv2 row to the target's SOR tables; returns the applied op."""
    table = target.target_name
    rec.check()
    static_values, dynamic_values = _split(rec, target)
    op = rec.op

    if op is OperationCode.BEGIN:
        store.insert_static(table, SorStaticRecord(
            sk=rec.sk, bk=rec.bk, static_attrs=static_values,
            last_tx_type=TxType.INSERT, last_tx_date=batch_date, af=False,
        ))
        store.put_history(table, SorHistoryRecord(
            sk=rec.sk, bk=rec.bk, bd=rec.new_bd, ed=OPEN_END_DATE,
            dynamic_attrs=dynamic_values, resolved_keys=dict(rec.resolved_keys),
        ))

    elif op is OperationCode.END_BEGIN:
        current = _existing_static(store, table, rec)
        store.update_static(table, replace(
            current,
            static_attrs={**current.static_attrs, **static_values},
            last_tx_type=TxType.UPDATE,
            last_tx_date=batch_date,
        ))
        closed = _close_version(store, table, rec)
        store.put_history(table, SorHistoryRecord(
            sk=rec.sk, bk=rec.bk, bd=rec.new_bd, ed=OPEN_END_DATE,
            dynamic_attrs={**closed.dynamic_attrs, **dynamic_values},
            resolved_keys={**closed.resolved_keys, **rec.resolved_keys},
        ))

    elif op is OperationCode.END:
        current = _existing_static(store, table, rec)
        store.update_static(table, replace(current, last_tx_type=TxType.DELETE, last_tx_date=batch_date))
        if rec.sor_bd is not None:
            _close_version(store, table, rec)

    elif op is OperationCode.DEACTIVATE_AUGMENT:
        current = _existing_static(store, table, rec)
        store.update_static(table, replace(
            current,
            static_attrs={**current.static_attrs, **static_values},
            last_tx_type=TxType.INSERT,
            last_tx_date=batch_date,
            af=False,
        ))
        store.put_history(table, SorHistoryRecord(
            sk=rec.sk, bk=rec.bk, bd=rec.new_bd, ed=OPEN_END_DATE,
            dynamic_attrs=dynamic_values, resolved_keys=dict(rec.resolved_keys),
        ))

    elif op is OperationCode.AUGMENT:
        store.insert_static(table, SorStaticRecord(
            sk=rec.sk, bk=rec.bk, last_tx_date=batch_date, af=True,
        ))

    return op


def load_order(records):
    """Augments first, then everything else ascending by business key."""
    return sorted(records, key=lambda r: (r.op is not OperationCode.AUGMENT, r.bk))


def load_table(target: TargetMapping, store: FileStore, batch_date: int) -> LoadStats:
    """
    Load every Lv2 row of a target into its SOR tables, then archive the Lv2 table.

    The target's SOR is put back to its pre-load state if any row fails.
    """
    table = target.target_name
    stats = LoadStats(target=table)
    counts: Counter = Counter()

    with store.table_lock(table):
        before = store.sor_state(table)
        try:
            for rec in load_order(store.lv2_records(table)):
                op = load_record(rec, target, store, batch_date)
                counts[op.value] += 1
                stats.rows_loaded += 1
        except Exception:
            store.set_sor_state(table, before)
            logger.error(f"❌ {table}: load aborted, SOR state of the table restored")
            raise
        stats.archive = str(store.archive_lv2(table, batch_date))

    stats.op_counts = dict(sorted(counts.items()))
    logger.info(f"📦 {table}: {stats.rows_loaded} rows loaded {stats.op_counts}")
    return stats
