"""
Change detection and transformation (SSA Lv1 -> SSA Lv2).

Each deduplicated Lv1 row is transposed into the target's shape, matched
against the SOR by business key and staged in Lv2 with an operation code:

    found in SOR, tx D                     -> E   (ed = tx_date - 1)
    found in SOR, augment row              -> DA  (new_bd = tx_date)
    found in SOR, open version             -> EB  (sor_bd, ed, new_bd)
    found in SOR, no open version          -> DA  (reactivation)
    not in SOR, I/U, already staged        -> B   (reuse staged sk, merge)
    not in SOR, I/U                        -> B   (fresh sk)
    not in SOR, D                          -> skipped
"""

import logging
from collections import Counter
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, Field

from stagex.etl.errors import Lv1Missing
from stagex.etl.records import (
    Lv1Record,
    OperationCode,
    StagingRecord,
    TxType,
    format_bk,
    previous_day,
)
from stagex.etl.schema import FeedSpec, SourceMapping, TargetMapping
from stagex.etl.storage import FileStore

logger = logging.getLogger(__name__)


class TransformStats(BaseModel):
    target: str
    processed: int = 0
    merged: int = 0
    skipped: int = 0
    op_counts: Dict[str, int] = Field(default_factory=dict)


def transpose(row: Lv1Record, feed: FeedSpec, mapping: SourceMapping, target: TargetMapping) -> Tuple[tuple, Dict[str, str], Dict[str, str]]:
    """Rename a source-shaped row into (bk, data, fk_values) of the target."""
    source_values = {**row.attrs, **dict(zip(feed.bk_columns, row.bk))}
    mapped = {tgt: source_values.get(src, "") for src, tgt in mapping.column_map.items()}
    bk = tuple(mapped[c] for c in target.bk_columns)
    data = {c: mapped[c] for c in target.data_columns if mapped.get(c, "") != ""}
    fk_values = {c: mapped[c] for c in target.fk_columns if mapped.get(c, "") != ""}
    return bk, data, fk_values


def transform_record(
    row: Lv1Record,
    target: TargetMapping,
    batch_date: int,
    store: FileStore,
    mapping: SourceMapping,
) -> Optional[StagingRecord]:
    """
    Stage one Lv1 row into the target's Lv2 table.

    Returns:
        The stored (possibly merged) Lv2 row, or None when the row is skipped
    """
    name = target.target_name
    bk, data, fk_values = transpose(row, store.cfg.feed(mapping.feed_id), mapping, target)
    sor_row = store.lookup_sor_static_by_bk(name, bk)

    if sor_row is not None:
        open_version = store.open_version(name, sor_row.sk)
        if row.tx_type is TxType.DELETE:
            rec = StagingRecord(
                op=OperationCode.END,
                sk=sor_row.sk,
                bk=bk,
                sor_bd=open_version.bd if open_version else None,
                ed=previous_day(row.tx_date),
            )
        elif sor_row.af or open_version is None:
            rec = StagingRecord(
                op=OperationCode.DEACTIVATE_AUGMENT,
                sk=sor_row.sk,
                bk=bk,
                new_bd=row.tx_date,
                data=data,
                fk_values=fk_values,
            )
        else:
            rec = StagingRecord(
                op=OperationCode.END_BEGIN,
                sk=sor_row.sk,
                bk=bk,
                sor_bd=open_version.bd,
                ed=previous_day(row.tx_date),
                new_bd=row.tx_date,
                data=data,
                fk_values=fk_values,
            )
        return store.upsert_lv2(name, rec)

    if row.tx_type is TxType.DELETE:
        logger.warning(f"⚠️ {name}: delete of unknown bk {format_bk(bk)} from feed {mapping.feed_id} skipped")
        return None

    staged = store.lookup_lv2_by_bk(name, bk)
    sk = staged.sk if staged is not None else store.next_surrogate_key(name)
    rec = StagingRecord(
        op=OperationCode.BEGIN,
        sk=sk,
        bk=bk,
        new_bd=row.tx_date,
        data=data,
        fk_values=fk_values,
    )
    return store.upsert_lv2(name, rec)


def transform_table(target: TargetMapping, batch_date: int, store: FileStore) -> TransformStats:
    """
    Run change detection for every Lv1 row feeding one target.

    Feeds are processed in mapping order, rows ascending by business key.
    On any error the target's Lv2 table is put back to its pre-job state.
    """
    name = target.target_name
    stats = TransformStats(target=name)

    with store.table_lock(name):
        before = store.lv2_state(name)
        try:
            for mapping in target.source_mappings:
                if store.lv1_batch(mapping.feed_id) != batch_date:
                    raise Lv1Missing(f"Lv1 table {mapping.feed_id} does not hold batch {batch_date}")
                rows = store.read_lv1(mapping.feed_id)
                feed = store.cfg.feed(mapping.feed_id)
                rows.sort(key=lambda r: transpose(r, feed, mapping, target)[0])
                for row in rows:
                    stats.processed += 1
                    bk = transpose(row, feed, mapping, target)[0]
                    was_staged = store.lookup_lv2_by_bk(name, bk) is not None
                    result = transform_record(row, target, batch_date, store, mapping)
                    if result is None:
                        stats.skipped += 1
                    elif was_staged:
                        stats.merged += 1
        except Exception:
            store.set_lv2_state(name, before)
            raise

        counts = Counter(rec.op.value for rec in store.lv2_records(name) if rec.op is not OperationCode.AUGMENT)
        stats.op_counts = dict(sorted(counts.items()))

    logger.info(
        f"🔄 {name}: {stats.processed} rows -> {sum(stats.op_counts.values())} staged "
        f"{stats.op_counts} ({stats.merged} merged, {stats.skipped} skipped)"
    )
    return stats
