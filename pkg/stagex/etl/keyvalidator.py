"""
Key validation: resolves FK business values on staged rows to surrogate keys.

Lookup order per FK is the referenced target's SOR static table, then its
Lv2 table; when both miss, an augment placeholder (op=A, af=1) is staged in
the referenced target's Lv2 with a freshly drawn surrogate key.
"""

import logging
from dataclasses import replace
from typing import List, Optional, Tuple

from pydantic import BaseModel

from stagex.etl.errors import MissingFkValue, ParseError
from stagex.etl.records import OperationCode, StagingRecord, format_bk, parse_bk
from stagex.etl.schema import TargetMapping
from stagex.etl.storage import FileStore

logger = logging.getLogger(__name__)

# E rows carry no FK data; A rows are placeholders
SKIPPED_OPS = (OperationCode.END, OperationCode.AUGMENT)


class ValidationStats(BaseModel):
    target: str
    rows_validated: int = 0
    from_sor: int = 0
    from_lv2: int = 0
    augments: int = 0


def resolve_reference(store: FileStore, referenced_target: str, value: str) -> Tuple[int, str, Optional[StagingRecord]]:
    """
    Resolve one FK business value against a referenced target.

    Returns:
        (surrogate key, source, created augment) where source is
        "sor", "lv2" or "augment"
    """
    ref = store.target(referenced_target)
    try:
        ref_bk = parse_bk(value, len(ref.bk_columns))
    except ValueError as e:
        raise ParseError(f"FK value for {referenced_target}: {e}")

    found = store.lookup_sor_static_by_bk(referenced_target, ref_bk)
    if found is not None:
        return found.sk, "sor", None

    with store.table_lock(referenced_target):
        staged = store.lookup_lv2_by_bk(referenced_target, ref_bk)
        if staged is not None:
            return staged.sk, "lv2", None
        augment = StagingRecord(
            op=OperationCode.AUGMENT,
            sk=store.next_surrogate_key(referenced_target),
            bk=ref_bk,
            af=True,
        )
        store.upsert_lv2(referenced_target, augment)
    logger.info(f"🔑 {referenced_target}: augment sk={augment.sk} staged for early-arriving bk {value}")
    return augment.sk, "augment", augment


def validate_keys_record(
    rec: StagingRecord,
    target: TargetMapping,
    store: FileStore,
    stats: Optional[ValidationStats] = None,
) -> Tuple[StagingRecord, List[StagingRecord]]:
    """
    Resolve every configured FK of one staged row.

    Returns:
        (row with resolved_keys filled, augment rows created for it)

    Raises:
        MissingFkValue: a B/EB/DA row lacks a configured FK business value
    """
    if rec.op in SKIPPED_OPS or not target.fk_defs:
        return rec, []

    resolved = dict(rec.resolved_keys)
    augments: List[StagingRecord] = []
    for fk in target.fk_defs:
        value = rec.fk_values.get(fk.fk_column)
        if not value:
            raise MissingFkValue(
                f"{target.target_name} sk={rec.sk} bk={format_bk(rec.bk)}: no value for {fk.fk_column}"
            )
        sk, source, augment = resolve_reference(store, fk.referenced_target, value)
        resolved[fk.fk_column] = sk
        if augment is not None:
            augments.append(augment)
        if stats is not None:
            if source == "sor":
                stats.from_sor += 1
            elif source == "lv2":
                stats.from_lv2 += 1
            else:
                stats.augments += 1

    return replace(rec, resolved_keys=resolved), augments


def validate_keys_table(target: TargetMapping, store: FileStore) -> ValidationStats:
    """Resolve FKs of every eligible Lv2 row of a target, ascending by sk."""
    name = target.target_name
    stats = ValidationStats(target=name)

    for rec in store.lv2_records(name):
        if rec.op in SKIPPED_OPS:
            continue
        updated, _ = validate_keys_record(rec, target, store, stats)
        store.upsert_lv2(name, updated)
        stats.rows_validated += 1

    logger.info(
        f"🔑 {name}: {stats.rows_validated} rows validated "
        f"({stats.from_sor} from SOR, {stats.from_lv2} from Lv2, {stats.augments} augments)"
    )
    return stats
