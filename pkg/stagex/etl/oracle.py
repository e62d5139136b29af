"""
Brute-force reference replay.

Applies every source transaction straight to an in-memory SOR model, day by
day, without any staging tables, operation codes or surrogate-key sequences
of the pipeline. Agreement between this replay and a pipeline run (modulo
surrogate-key numbering) is the end-to-end correctness check.

Replay contract per day:
  - last action per (feed, source key) wins
  - entity transactions apply target by target, feeds in mapping order,
    business keys ascending; the case (new / placeholder / deleted / live) is
    judged against the entity's state at the start of the day
  - FK values of every version written that day are resolved against the
    end-of-day state; unknown keys become blank placeholder rows
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from stagex.config import FK_KEY_SEPARATOR, OPEN_END_DATE
from stagex.etl.errors import ParseError, TargetSetMismatch
from stagex.etl.records import Lv1Record
from stagex.etl.schema import MappingConfig, TargetMapping

logger = logging.getLogger(__name__)

OPEN = str(OPEN_END_DATE)


@dataclass
class TableState:
    """CSV-shaped rows of one target's SOR tables plus what is needed to canonicalize them."""
    bk_columns: Tuple[str, ...]
    fk_refs: Dict[str, str]
    static: List[Dict[str, str]] = field(default_factory=list)
    history: List[Dict[str, str]] = field(default_factory=list)


SorState = Dict[str, TableState]


@dataclass(frozen=True)
class Difference:
    target: str
    table: str
    key: str
    left: Optional[Dict[str, str]]
    right: Optional[Dict[str, str]]

    def __str__(self) -> str:
        if self.left is None:
            return f"{self.target}.{self.table} {self.key}: only in right"
        if self.right is None:
            return f"{self.target}.{self.table} {self.key}: only in left"
        changed = sorted(k for k in self.left if self.left.get(k) != self.right.get(k))
        return f"{self.target}.{self.table} {self.key}: differs in {changed}"


def _day_before(date: int) -> int:
    return int((datetime.strptime(str(date), "%Y%m%d") - timedelta(days=1)).strftime("%Y%m%d"))


class _Entity:
    """Mutable model of one business entity in the reference SOR."""

    def __init__(self, sk: int, bk: Tuple[str, ...], placeholder: bool = False):
        self.sk = sk
        self.bk = bk
        self.attrs: Dict[str, str] = {}
        self.placeholder = placeholder
        self.last = ""
        self.stamp = ""
        self.versions: List[dict] = []

    def open_version(self) -> Optional[dict]:
        return next((v for v in self.versions if v["ed"] == OPEN_END_DATE), None)


class NaiveReplay:
    """In-memory reference SOR driven one transaction at a time."""

    def __init__(self, cfg: MappingConfig):
        self.cfg = cfg
        self.entities: Dict[str, Dict[Tuple[str, ...], _Entity]] = {t.target_name: {} for t in cfg.targets}
        self._next_sk = 1

    def _new_entity(self, target: str, bk: Tuple[str, ...], placeholder: bool = False) -> _Entity:
        entity = _Entity(self._next_sk, bk, placeholder)
        self._next_sk += 1
        self.entities[target][bk] = entity
        return entity

    def apply_day(self, day: int, transactions: List[Tuple[str, Lv1Record]]) -> None:
        latest: "OrderedDict[Tuple[str, Tuple[str, ...]], Lv1Record]" = OrderedDict()
        for feed_id, rec in transactions:
            latest[(feed_id, rec.bk)] = rec

        existed = {t: set(entities) for t, entities in self.entities.items()}
        touched: List[Tuple[str, dict]] = []

        for target in self.cfg.targets:
            for mapping in target.source_mappings:
                feed = self.cfg.feed(mapping.feed_id)
                rows = []
                for (feed_id, _), rec in latest.items():
                    if feed_id != mapping.feed_id:
                        continue
                    source = dict(rec.attrs)
                    source.update(zip(feed.bk_columns, rec.bk))
                    values = {dst: source.get(src, "") for src, dst in mapping.column_map.items()}
                    rows.append((tuple(values[c] for c in target.bk_columns), rec.tx_type.value, values))
                for bk, tx, values in sorted(rows, key=lambda r: r[0]):
                    version = self._apply(target, day, bk, tx, values, bk in existed[target.target_name])
                    if version is not None:
                        touched.append((target.target_name, version))

        for target_name, version in touched:
            target = self.cfg.target(target_name)
            for fk in target.fk_defs:
                raw = version["fk_raw"].get(fk.fk_column)
                if raw:
                    version["keys"][fk.fk_column] = self._resolve(fk.referenced_target, raw, day)

    def _resolve(self, ref_target: str, raw: str, day: int) -> int:
        width = len(self.cfg.target(ref_target).bk_columns)
        bk = tuple(raw.split(FK_KEY_SEPARATOR)) if width > 1 else (raw,)
        entity = self.entities[ref_target].get(bk)
        if entity is None:
            entity = self._new_entity(ref_target, bk, placeholder=True)
            entity.stamp = str(day)
        return entity.sk

    def _apply(self, target: TargetMapping, day: int, bk, tx: str, values: Dict[str, str], existed: bool) -> Optional[dict]:
        name = target.target_name
        static = {c: values[c] for c in target.static_attrs if values.get(c)}
        dynamic = {c: values[c] for c in target.dynamic_attrs if values.get(c)}
        fk_raw = {c: values[c] for c in target.fk_columns if values.get(c)}
        entity = self.entities[name].get(bk)

        if tx == "D":
            if entity is None or not existed:
                return None
            current = entity.open_version()
            if current is not None:
                if current["bd"] == day:
                    entity.versions.remove(current)
                    current = entity.open_version()
                if current is not None:
                    current["ed"] = _day_before(day)
            entity.last = "D"
            entity.stamp = str(day)
            return None

        if entity is None:
            entity = self._new_entity(name, bk)
            entity.attrs = static
            entity.last = "I"
            entity.stamp = str(day)
            version = {"bd": day, "ed": OPEN_END_DATE, "dyn": dynamic, "fk_raw": fk_raw, "keys": {}}
            entity.versions.append(version)
            return version

        current = entity.open_version()
        if current is not None and current["bd"] == day:
            entity.attrs.update(static)
            current["dyn"].update(dynamic)
            current["fk_raw"].update(fk_raw)
            entity.stamp = str(day)
            return current

        entity.attrs.update(static)
        entity.stamp = str(day)
        if entity.placeholder or current is None:
            entity.placeholder = False
            entity.last = "I"
            version = {"bd": day, "ed": OPEN_END_DATE, "dyn": dynamic, "fk_raw": fk_raw, "keys": {}}
        else:
            current["ed"] = _day_before(day)
            entity.last = "U"
            version = {
                "bd": day, "ed": OPEN_END_DATE,
                "dyn": {**current["dyn"], **dynamic},
                "fk_raw": {**current["fk_raw"], **fk_raw},
                "keys": dict(current["keys"]),
            }
        entity.versions.append(version)
        return version

    def state(self) -> SorState:
        result: SorState = {}
        for target in self.cfg.targets:
            table = TableState(
                bk_columns=target.bk_columns,
                fk_refs={fk.fk_column: fk.referenced_target for fk in target.fk_defs},
            )
            for entity in sorted(self.entities[target.target_name].values(), key=lambda e: e.sk):
                row = {"sk": str(entity.sk), **dict(zip(target.bk_columns, entity.bk))}
                row.update({c: entity.attrs.get(c, "") for c in target.static_attrs})
                row.update({"last_tx_type": entity.last, "last_tx_date": entity.stamp,
                            "af": "1" if entity.placeholder else "0"})
                table.static.append(row)
                for version in sorted(entity.versions, key=lambda v: v["bd"]):
                    hist = {"sk": str(entity.sk), **dict(zip(target.bk_columns, entity.bk)),
                            "bd": str(version["bd"]), "ed": str(version["ed"])}
                    hist.update({c: version["dyn"].get(c, "") for c in target.dynamic_attrs})
                    hist.update({f"{c}_sk": str(version["keys"][c]) if c in version["keys"] else ""
                                 for c in target.fk_columns})
                    table.history.append(hist)
            result[target.target_name] = table
        return result


def replay_naive(history: Iterable[Tuple[str, Lv1Record]], cfg: MappingConfig) -> SorState:
    """
    Replay a full feed history against an empty reference SOR.

    Args:
        history: (feed id, record) pairs ordered by (tx_date, global sequence)
        cfg: mapping config

    Returns:
        Reference SOR state
    """
    replay = NaiveReplay(cfg)
    by_day: Dict[int, List[Tuple[str, Lv1Record]]] = {}
    for feed_id, rec in history:
        by_day.setdefault(rec.tx_date, []).append((feed_id, rec))
    for day in sorted(by_day):
        replay.apply_day(day, by_day[day])
    return replay.state()


def state_from_store(store) -> SorState:
    """Read the persisted SOR of a store into comparable CSV-shaped rows."""
    store.flush()
    result: SorState = {}
    for target in store.cfg.targets:
        name = target.target_name
        result[name] = TableState(
            bk_columns=target.bk_columns,
            fk_refs={fk.fk_column: fk.referenced_target for fk in target.fk_defs},
            static=store.frame("sor", f"{name}_static").to_dict("records"),
            history=store.frame("sor", f"{name}_history").to_dict("records"),
        )
    return result


def _canonical_ids(state: SorState) -> Dict[str, Dict[str, str]]:
    """sk -> position of the row in business-key order, per target."""
    ids = {}
    for name, table in state.items():
        ordered = sorted(table.static, key=lambda r: tuple(r[c] for c in table.bk_columns))
        ids[name] = {row["sk"]: str(i + 1) for i, row in enumerate(ordered)}
    return ids


def _canonical_rows(state: SorState) -> Dict[str, Dict[str, Dict[str, Dict[str, str]]]]:
    ids = _canonical_ids(state)
    rows: Dict[str, Dict[str, Dict[str, Dict[str, str]]]] = {}
    for name, table in state.items():
        static, history = {}, {}
        for row in table.static:
            key = FK_KEY_SEPARATOR.join(row[c] for c in table.bk_columns)
            canon = {k: v for k, v in row.items() if k not in ("last_tx_date",)}
            canon["sk"] = ids[name].get(row["sk"], "?" + row["sk"])
            static[key] = canon
        for row in table.history:
            key = FK_KEY_SEPARATOR.join(row[c] for c in table.bk_columns) + f"@{row['bd']}"
            canon = dict(row)
            canon["sk"] = ids[name].get(row["sk"], "?" + row["sk"])
            for fk_column, ref in table.fk_refs.items():
                value = row.get(f"{fk_column}_sk", "")
                if value:
                    canon[f"{fk_column}_sk"] = ids.get(ref, {}).get(value, "?" + value)
            history[key] = canon
        rows[name] = {"static": static, "history": history}
    return rows


def compare_states(a: SorState, b: SorState) -> List[Difference]:
    """
    Compare two SOR states modulo surrogate-key numbering.

    Returns:
        Row-level differences; empty iff the states are equivalent

    Raises:
        TargetSetMismatch: the states cover different targets
    """
    if set(a) != set(b):
        raise TargetSetMismatch(f"target sets differ: {sorted(set(a) ^ set(b))}")

    left, right = _canonical_rows(a), _canonical_rows(b)
    differences: List[Difference] = []
    for name in sorted(left):
        for table in ("static", "history"):
            lrows, rrows = left[name][table], right[name][table]
            for key in sorted(set(lrows) | set(rrows)):
                if lrows.get(key) != rrows.get(key):
                    differences.append(Difference(name, table, key, lrows.get(key), rrows.get(key)))
    return differences


def read_history(path: Path, cfg: MappingConfig) -> List[Tuple[str, Lv1Record]]:
    """
    Read a JSON-lines feed history: one object per transaction with
    ``feed_id``, ``tx_type``, ``tx_date`` and the feed's columns.
    """
    history = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: {e.msg}", line=number)
            feed = cfg.feed(raw.get("feed_id", ""))
            row = {c: str(raw.get(c, "")) for c in ["tx_type", "tx_date", *feed.columns]}
            history.append((feed.feed_id, Lv1Record.from_row(row, feed, line=number)))
    history.sort(key=lambda item: item[1].tx_date)
    return history


def write_history(history: Iterable[Tuple[str, Lv1Record]], cfg: MappingConfig, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for feed_id, rec in history:
            feed = cfg.feed(feed_id)
            f.write(json.dumps({"feed_id": feed_id, **rec.to_row(feed)}) + "\n")
