"""
Change-feed extraction into SSA Lv1.

A feed is a UTF-8 CSV with ``tx_type``, ``tx_date`` and the FeedSpec columns.
Only the latest action per source business key survives: greatest
``(tx_date, line)``, so the last line wins among same-day actions.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from pydantic import BaseModel

from stagex.etl.errors import FeedMissing, FutureDate, ParseError, UnknownFeed
from stagex.etl.records import BusinessKey, Lv1Record, lv1_columns
from stagex.etl.schema import FeedSpec, MappingConfig
from stagex.etl.storage import FileStore

logger = logging.getLogger(__name__)


class IngestStats(BaseModel):
    feed_id: str
    rows_read: int = 0
    rows_kept: int = 0
    rows_superseded: int = 0


def _identify_feed(feed_path: Path, cfg: MappingConfig, data_dir: Path, batch_date: int) -> FeedSpec:
    """Match a feed file to its FeedSpec by resolved path, then by file stem."""
    for feed in cfg.source_feeds:
        if feed.resolve_path(data_dir, batch_date).resolve() == feed_path.resolve():
            return feed
    for feed in cfg.source_feeds:
        if feed.feed_id == feed_path.stem:
            return feed
    raise UnknownFeed(f"{feed_path} does not belong to any configured feed")


def read_feed(feed_path: Path, feed: FeedSpec) -> pd.DataFrame:
    """Read a raw feed file as strings; checks the header against the FeedSpec."""
    if not feed_path.exists():
        raise FeedMissing(f"feed {feed.feed_id}: {feed_path} not found")
    try:
        frame = pd.read_csv(feed_path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(f"feed {feed.feed_id}: {feed_path} has no header row", line=1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"feed {feed.feed_id}: {e}")

    missing = [c for c in lv1_columns(feed) if c not in frame.columns]
    if missing:
        raise ParseError(f"feed {feed.feed_id} is missing columns {missing}", line=1)
    return frame


def ingest_change_feed(
    feed_path: Path,
    cfg: MappingConfig,
    batch_date: int,
    store: FileStore,
    feed_id: Optional[str] = None,
) -> IngestStats:
    """
    Ingest one change feed into its SSA Lv1 table, replacing the table.

    Args:
        feed_path: CSV feed file
        cfg: mapping config the feed belongs to
        batch_date: YYYYMMDD; no row may be dated after it
        store: target store
        feed_id: optional explicit feed id (otherwise matched from the path)

    Returns:
        IngestStats with rows read, kept and superseded

    Raises:
        UnknownFeed, FeedMissing, ParseError (with line), FutureDate
    """
    feed_path = Path(feed_path)
    feed = cfg.feed(feed_id) if feed_id else _identify_feed(feed_path, cfg, store.data_dir, batch_date)
    frame = read_feed(feed_path, feed)
    fk_sources = store.fk_sources(feed.feed_id)

    latest: Dict[BusinessKey, Lv1Record] = {}
    for offset, row in enumerate(frame.to_dict("records")):
        line = offset + 2
        rec = Lv1Record.from_row(row, feed, fk_sources, line=line)
        if rec.tx_date > batch_date:
            raise FutureDate(f"line {line}: tx_date {rec.tx_date} is after batch date {batch_date}")
        held = latest.get(rec.bk)
        if held is None or (rec.tx_date, rec.line) >= (held.tx_date, held.line):
            latest[rec.bk] = rec

    kept = [latest[bk] for bk in sorted(latest)]
    store.write_lv1(feed.feed_id, kept, batch_date)

    stats = IngestStats(
        feed_id=feed.feed_id,
        rows_read=len(frame),
        rows_kept=len(kept),
        rows_superseded=len(frame) - len(kept),
    )
    logger.info(f"📥 {feed.feed_id}: {stats.rows_read} read, {stats.rows_kept} kept, {stats.rows_superseded} superseded")
    return stats


def ingest_all(cfg: MappingConfig, batch_date: int, store: FileStore) -> Dict[str, IngestStats]:
    """Ingest every configured feed for a batch date, in config order."""
    missing = [
        str(feed.resolve_path(store.data_dir, batch_date))
        for feed in cfg.source_feeds
        if not feed.resolve_path(store.data_dir, batch_date).exists()
    ]
    if missing:
        raise FeedMissing(f"batch {batch_date}: missing feed files {missing}")
    return {
        feed.feed_id: ingest_change_feed(
            feed.resolve_path(store.data_dir, batch_date), cfg, batch_date, store, feed_id=feed.feed_id
        )
        for feed in cfg.source_feeds
    }
