"""
Randomized Workload Generator

Builds synthetic daily change feeds for a three-level FK chain
(region <- customer <- order) where customer is fed by two source feeds
(many-to-one). Used by the property tests and ``etl oracle --random`` to
run the pipeline and the naive replay side by side.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from dateutil.rrule import DAILY, rrule

from stagex.etl.orchestrator import BatchReport, run_batch
from stagex.etl.records import Lv1Record, from_datetime, to_datetime
from stagex.etl.schema import FeedSpec, FkDef, MappingConfig, SourceMapping, TargetMapping, write_config
from stagex.etl.storage import FileStore, write_csv_table

logger = logging.getLogger(__name__)

TX_TYPES = ("I", "U", "D")
DEFAULT_WEIGHTS = (0.50, 0.35, 0.15)
FEED_IDS = ("region_feed", "customer_main", "customer_contact", "orders")


def chain_config() -> MappingConfig:
    """Mapping config of the region <- customer <- order chain."""
    feeds = (
        FeedSpec(feed_id="region_feed", path_pattern="feeds/{batch_date}/region_feed.csv",
                 columns=("region_code", "region_name", "manager"), bk_columns=("region_code",)),
        FeedSpec(feed_id="customer_main", path_pattern="feeds/{batch_date}/customer_main.csv",
                 columns=("cust_id", "name", "segment", "region_code"), bk_columns=("cust_id",)),
        FeedSpec(feed_id="customer_contact", path_pattern="feeds/{batch_date}/customer_contact.csv",
                 columns=("cust_id", "email", "phone"), bk_columns=("cust_id",)),
        FeedSpec(feed_id="orders", path_pattern="feeds/{batch_date}/orders.csv",
                 columns=("order_id", "status", "amount", "cust_id"), bk_columns=("order_id",)),
    )
    targets = (
        TargetMapping(
            target_name="region", bk_columns=("region_code",),
            static_attrs=("region_name",), dynamic_attrs=("manager",),
            source_mappings=(SourceMapping(feed_id="region_feed", column_map={
                "region_code": "region_code", "region_name": "region_name", "manager": "manager"}),),
        ),
        TargetMapping(
            target_name="customer", bk_columns=("customer_id",),
            static_attrs=("name", "email"), dynamic_attrs=("segment", "phone"),
            fk_defs=(FkDef(fk_column="region", referenced_target="region"),),
            source_mappings=(
                SourceMapping(feed_id="customer_main", column_map={
                    "cust_id": "customer_id", "name": "name", "segment": "segment", "region_code": "region"}),
                SourceMapping(feed_id="customer_contact", column_map={
                    "cust_id": "customer_id", "email": "email", "phone": "phone"}),
            ),
        ),
        TargetMapping(
            target_name="order", bk_columns=("order_id",),
            static_attrs=("amount",), dynamic_attrs=("status",),
            fk_defs=(FkDef(fk_column="customer", referenced_target="customer"),),
            source_mappings=(SourceMapping(feed_id="orders", column_map={
                "order_id": "order_id", "status": "status", "amount": "amount", "cust_id": "customer"}),),
        ),
    )
    return MappingConfig(source_feeds=feeds, targets=targets)


@dataclass
class Workload:
    cfg: MappingConfig
    batch_dates: List[int]
    feeds: Dict[int, Dict[str, List[Dict[str, str]]]] = field(default_factory=dict)

    @property
    def history(self) -> List[Tuple[str, Lv1Record]]:
        """Every feed row as (feed id, record), in batch then file order."""
        result = []
        for batch_date in self.batch_dates:
            for feed in self.cfg.source_feeds:
                for offset, row in enumerate(self.feeds[batch_date][feed.feed_id]):
                    result.append((feed.feed_id, Lv1Record.from_row(row, feed, line=offset + 2)))
        return result

    def write_feeds(self, data_dir: Path) -> None:
        for batch_date in self.batch_dates:
            for feed in self.cfg.source_feeds:
                write_csv_table(
                    feed.resolve_path(data_dir, batch_date),
                    ["tx_type", "tx_date", *feed.columns],
                    self.feeds[batch_date][feed.feed_id],
                )

    def row_count(self) -> int:
        return sum(len(rows) for day in self.feeds.values() for rows in day.values())


class _Generator:
    def __init__(self, seed: int, entities: int, weights, early_fraction: float, duplicate_fraction: float):
        self.rng = np.random.default_rng(seed)
        self.weights = np.asarray(weights, dtype=float) / np.sum(weights)
        self.early_fraction = early_fraction
        self.duplicate_fraction = duplicate_fraction
        self.pools = {
            "region": [f"R{i:02d}" for i in range(1, max(3, entities // 5) + 1)],
            "customer": [f"C{i:03d}" for i in range(1, entities + 1)],
            "order": [f"O{i:04d}" for i in range(1, entities + 1)],
        }
        self.arrived: Dict[str, set] = {name: set() for name in self.pools}

    def value(self, label: str) -> str:
        return f"{label}{int(self.rng.integers(0, 1000)):03d}"

    def reference(self, target: str) -> str:
        """Pick an FK value; early-arriving picks point at entities not seen yet."""
        pool = self.pools[target]
        pending = [bk for bk in pool if bk not in self.arrived[target]]
        arrived = sorted(self.arrived[target])
        if pending and (not arrived or self.rng.random() < self.early_fraction):
            return str(self.rng.choice(pending))
        return str(self.rng.choice(arrived))

    def actions(self, target: str) -> List[Tuple[str, str]]:
        pool = self.pools[target]
        size = max(1, len(pool) // 4)
        keys = sorted(self.rng.choice(pool, size=size, replace=False).tolist())
        return [(bk, str(self.rng.choice(TX_TYPES, p=self.weights))) for bk in keys]

    def day(self, batch_date: int) -> Dict[str, List[Dict[str, str]]]:
        rows: Dict[str, List[Dict[str, str]]] = {feed: [] for feed in FEED_IDS}
        date = str(batch_date)

        def emit(feed_id: str, key_column: str, tx: str, values: Dict[str, str]) -> None:
            if self.rng.random() < self.duplicate_fraction:
                # earlier same-day action for the key, superseded by the one below
                stale = {k: (v if k == key_column else self.value("x")) for k, v in values.items()}
                rows[feed_id].append({"tx_type": "I", "tx_date": date, **stale})
            rows[feed_id].append({"tx_type": tx, "tx_date": date, **values})

        for code, tx in self.actions("region"):
            emit("region_feed", "region_code", tx, {
                "region_code": code, "region_name": self.value("rn"), "manager": self.value("mg")})
            if tx != "D":
                self.arrived["region"].add(code)

        for cust, tx in self.actions("customer"):
            emit("customer_main", "cust_id", tx, {
                "cust_id": cust, "name": self.value("nm"), "segment": self.value("sg"),
                "region_code": self.reference("region")})
            # deletes travel on the primary feed only
            if tx != "D":
                rows["customer_contact"].append({"tx_type": tx, "tx_date": date, "cust_id": cust,
                                                 "email": self.value("em"), "phone": self.value("ph")})
                self.arrived["customer"].add(cust)

        for order, tx in self.actions("order"):
            emit("orders", "order_id", tx, {
                "order_id": order, "status": self.value("st"), "amount": self.value("am"),
                "cust_id": self.reference("customer")})
            if tx != "D":
                self.arrived["order"].add(order)

        return rows


def generate_workload(
    seed: int,
    entities: int = 50,
    days: int = 10,
    start_date: int = 20140101,
    weights=DEFAULT_WEIGHTS,
    early_fraction: float = 0.2,
    duplicate_fraction: float = 0.1,
) -> Workload:
    """
    Generate a reproducible multi-day workload.

    Args:
        seed: numpy seed; equal seeds give identical workloads
        entities: business keys per customer/order pool
        days: number of consecutive daily batches
        start_date: first batch date (YYYYMMDD)
        weights: I/U/D draw weights
        early_fraction: share of FK references pointing at not-yet-arrived entities
        duplicate_fraction: share of primary rows preceded by a superseded same-day row
    """
    batch_dates = [from_datetime(d) for d in rrule(DAILY, dtstart=to_datetime(start_date), count=days)]
    generator = _Generator(seed, entities, weights, early_fraction, duplicate_fraction)
    workload = Workload(cfg=chain_config(), batch_dates=batch_dates)
    for batch_date in batch_dates:
        workload.feeds[batch_date] = generator.day(batch_date)
    logger.debug(f"🎲 workload seed={seed}: {len(batch_dates)} batches, {workload.row_count()} feed rows")
    return workload


def run_workload(
    workload: Workload,
    data_dir: Path,
    parallelism: int = 1,
    job_order_seed: Optional[int] = None,
    job_hook: Optional[Callable[[str, str], None]] = None,
) -> Tuple[FileStore, List[BatchReport]]:
    """Write config + feeds under ``data_dir`` and run every batch in order."""
    data_dir = Path(data_dir)
    write_config(workload.cfg, data_dir / "mapping.json")
    workload.write_feeds(data_dir)
    store = FileStore(data_dir, workload.cfg)
    reports = []
    for index, batch_date in enumerate(workload.batch_dates):
        seed = None if job_order_seed is None else job_order_seed + index
        reports.append(run_batch(batch_date, workload.cfg, store, parallelism, seed, job_hook))
    return store, reports
