"""
DDS extraction: dimension and fact record sets pulled from the SOR for
downstream marts. Results are returned as string DataFrames and written to
``dds/`` as CSV.
"""

import logging
from pathlib import Path
from typing import Optional

import pandas as pd

from stagex.config import DDS_AREA, OPEN_END_DATE, SOR_AREA
from stagex.etl.errors import UnknownColumn
from stagex.etl.records import history_columns
from stagex.etl.storage import FileStore, write_csv_table

logger = logging.getLogger(__name__)


def _sor_frames(store: FileStore, target: str):
    static = store.frame(SOR_AREA, f"{target}_static")
    history = store.frame(SOR_AREA, f"{target}_history")
    return static, history


def _ordered(frame: pd.DataFrame) -> pd.DataFrame:
    if frame.empty:
        return frame.reset_index(drop=True)
    ordered = frame.assign(_sk=frame["sk"].astype(int)).sort_values(["_sk", "bd"], kind="stable")
    return ordered.drop(columns="_sk").reset_index(drop=True)


def _write(store: FileStore, frame: pd.DataFrame, name: str) -> Path:
    path = store.data_dir / DDS_AREA / f"{name}.csv"
    write_csv_table(path, list(frame.columns), frame.to_dict("records"))
    return path


def extract_dimension(store: FileStore, target: str, job_start_date: int, scd: bool = False,
                      write: bool = True) -> pd.DataFrame:
    """
    Select dimension rows whose last transaction date is on or after ``job_start_date``.

    Static dimensions (scd=False) drop deleted rows and carry the open
    version only; SCD dimensions keep deleted rows and every version.
    """
    target_cfg = store.target(target)
    static, history = _sor_frames(store, target)

    stamped = pd.to_numeric(static["last_tx_date"], errors="coerce")
    selected = static[stamped >= job_start_date]
    if not scd:
        selected = selected[selected["last_tx_type"] != "D"]
        history = history[history["ed"] == str(OPEN_END_DATE)]

    versions = history.drop(columns=list(target_cfg.bk_columns))
    result = selected.merge(versions, on="sk", how="left").fillna("")
    result = _ordered(result)

    if write:
        kind = "scd" if scd else "dim"
        path = _write(store, result, f"{kind}_{target}_{job_start_date}")
        logger.info(f"📊 {target}: {len(result)} dimension rows since {job_start_date} -> {path}")
    return result


def extract_fact(store: FileStore, target: str, affected_date_column: str, earliest_affected: int,
                 rebuild: bool = False, write: bool = True) -> pd.DataFrame:
    """
    Select fact rows by their actual affected date.

    Incremental extraction (rebuild=False) takes every history row, open or
    closed, whose affected date is on or after ``earliest_affected``. A
    rebuild takes all versions of each sk that has such a row, so the mart
    can recompute it from its first version. Blank or non-date affected
    values never qualify.

    Raises:
        UnknownColumn: ``affected_date_column`` is not a history column
    """
    target_cfg = store.target(target)
    if affected_date_column not in history_columns(target_cfg):
        raise UnknownColumn(f"{affected_date_column!r} is not a history column of {target}")

    static, history = _sor_frames(store, target)
    affected = pd.to_numeric(history[affected_date_column], errors="coerce")
    selected = history[affected >= earliest_affected]
    if rebuild:
        selected = history[history["sk"].isin(selected["sk"])]

    attributes = static.drop(columns=list(target_cfg.bk_columns) + ["af"])
    result = _ordered(selected.merge(attributes, on="sk", how="left").fillna(""))

    if write:
        kind = "fact_rebuild" if rebuild else "fact"
        path = _write(store, result, f"{kind}_{target}_{earliest_affected}")
        logger.info(f"📊 {target}: {len(result)} fact rows with {affected_date_column} >= {earliest_affected} -> {path}")
    return result


def extraction_window(store: FileStore, batch_date: Optional[int] = None) -> int:
    """Start date of the current job: the given batch date or the last successful batch."""
    if batch_date is not None:
        return batch_date
    done = [date for date, info in store.batches().items() if info.get("status") == "success"]
    return max(done) if done else 0
