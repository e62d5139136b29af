"""
Record Types

Value objects flowing between the staging areas and the SOR, plus the
operation/transaction code enums and the YYYYMMDD date helpers. Each record
knows how to render itself as a CSV row for a given target mapping and how
to read itself back.

Blank values are never stored in attribute maps: an empty CSV field and a
missing key mean the same thing ("absent").
"""

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Dict, List, Optional, Tuple

from stagex.config import FK_KEY_SEPARATOR, OPEN_END_DATE
from stagex.etl.errors import InvariantViolation, ParseError
from stagex.etl.schema import FeedSpec, TargetMapping

BusinessKey = Tuple[str, ...]


class TxType(str, Enum):
    """Source-side action marker."""
    INSERT = "I"
    UPDATE = "U"
    DELETE = "D"


class OperationCode(str, Enum):
    """Warehouse-side action derived by change detection."""
    BEGIN = "B"
    END_BEGIN = "EB"
    END = "E"
    AUGMENT = "A"
    DEACTIVATE_AUGMENT = "DA"


# --- Dates ---

def parse_date(value) -> int:
    """Parse a YYYYMMDD value (str or int) into an int, checking the calendar."""
    text = str(value).strip()
    if len(text) != 8 or not text.isdigit():
        raise ValueError(f"{value!r} is not a YYYYMMDD date")
    if int(text) != OPEN_END_DATE:
        datetime.strptime(text, "%Y%m%d")
    return int(text)


def to_datetime(value: int) -> datetime:
    return datetime.strptime(str(value), "%Y%m%d")


def from_datetime(value: datetime) -> int:
    return int(value.strftime("%Y%m%d"))


def previous_day(value: int) -> int:
    """Calendar-correct 'one day ahead of' for a YYYYMMDD date."""
    return from_datetime(to_datetime(value) - timedelta(days=1))


def _opt_int(value: str) -> Optional[int]:
    return int(value) if value not in ("", None) else None


def _fmt(value) -> str:
    return "" if value is None else str(value)


def _non_blank(values: Dict[str, str]) -> Dict[str, str]:
    return {k: v for k, v in values.items() if v not in ("", None)}


def format_bk(bk: BusinessKey) -> str:
    return FK_KEY_SEPARATOR.join(bk)


def parse_bk(value: str, width: int) -> BusinessKey:
    """Split an FK business value into the referenced target's key parts."""
    parts = tuple(value.split(FK_KEY_SEPARATOR)) if width > 1 else (value,)
    if len(parts) != width:
        raise ValueError(f"{value!r} does not have {width} key parts")
    return parts


# --- Column layouts ---

def lv1_columns(feed: FeedSpec) -> List[str]:
    return ["tx_type", "tx_date", *feed.columns]


def lv2_columns(target: TargetMapping) -> List[str]:
    return [
        "op", "sk", *target.bk_columns, "sor_bd", "ed", "new_bd", "af",
        *target.static_attrs, *target.dynamic_attrs,
        *target.fk_columns, *(f"{fk}_sk" for fk in target.fk_columns),
    ]


def static_columns(target: TargetMapping) -> List[str]:
    return ["sk", *target.bk_columns, *target.static_attrs, "last_tx_type", "last_tx_date", "af"]


def history_columns(target: TargetMapping) -> List[str]:
    return [
        "sk", *target.bk_columns, "bd", "ed",
        *target.dynamic_attrs, *(f"{fk}_sk" for fk in target.fk_columns),
    ]


# --- Records ---

@dataclass(frozen=True)
class Lv1Record:
    bk: BusinessKey
    tx_type: TxType
    tx_date: int
    attrs: Dict[str, str] = field(default_factory=dict)
    fk_values: Dict[str, str] = field(default_factory=dict)
    line: int = 0

    @classmethod
    def from_row(cls, row: Dict[str, str], feed: FeedSpec, fk_sources: Tuple[str, ...] = (), line: int = 0) -> "Lv1Record":
        """Build a record from a source-shaped row; ``fk_sources`` names feed columns carrying FK values."""
        try:
            tx_type = TxType(row["tx_type"].strip())
        except (KeyError, ValueError):
            raise ParseError(f"invalid tx_type {row.get('tx_type')!r}", line=line)
        try:
            tx_date = parse_date(row["tx_date"])
        except (KeyError, ValueError):
            raise ParseError(f"invalid tx_date {row.get('tx_date')!r}", line=line)
        bk = tuple(row[c] for c in feed.bk_columns)
        if any(part == "" for part in bk):
            raise ParseError(f"blank business key in feed {feed.feed_id}", line=line)
        attrs = {c: row[c] for c in feed.columns if c not in feed.bk_columns}
        fk_values = _non_blank({c: row[c] for c in fk_sources})
        return cls(bk, tx_type, tx_date, attrs, fk_values, line)

    def to_row(self, feed: FeedSpec) -> Dict[str, str]:
        row = {"tx_type": self.tx_type.value, "tx_date": str(self.tx_date)}
        row.update(dict(zip(feed.bk_columns, self.bk)))
        row.update(self.attrs)
        return {c: row.get(c, "") for c in lv1_columns(feed)}


@dataclass(frozen=True)
class StagingRecord:
    op: OperationCode
    sk: int
    bk: BusinessKey
    sor_bd: Optional[int] = None
    ed: Optional[int] = None
    new_bd: Optional[int] = None
    af: bool = False
    data: Dict[str, str] = field(default_factory=dict)
    fk_values: Dict[str, str] = field(default_factory=dict)
    resolved_keys: Dict[str, int] = field(default_factory=dict)

    def check(self) -> None:
        """Raise InvariantViolation if the op-dependent field rules are broken."""
        where = f"Lv2 row sk={self.sk} bk={format_bk(self.bk)} op={self.op.value}"
        if self.sk <= 0:
            raise InvariantViolation(f"{where}: surrogate key must be positive")
        op = self.op
        if op is OperationCode.END_BEGIN:
            if None in (self.sor_bd, self.ed, self.new_bd) or not (self.sor_bd <= self.ed < self.new_bd):
                raise InvariantViolation(f"{where}: needs sor_bd <= ed < new_bd")
        elif op is OperationCode.END:
            # sor_bd is absent only when the SOR row has no open version to end
            if self.ed is None or self.new_bd is not None:
                raise InvariantViolation(f"{where}: needs ed and no new_bd")
            if self.sor_bd is not None and self.sor_bd > self.ed:
                raise InvariantViolation(f"{where}: sor_bd after ed")
        elif op in (OperationCode.BEGIN, OperationCode.DEACTIVATE_AUGMENT):
            if self.new_bd is None:
                raise InvariantViolation(f"{where}: needs new_bd")
        elif op is OperationCode.AUGMENT:
            if not self.af or self.data or self.fk_values or self.resolved_keys:
                raise InvariantViolation(f"{where}: augment rows carry only sk, bk and af=1")

    def merged_with(self, incoming: "StagingRecord") -> "StagingRecord":
        """
        Upsert merge of ``incoming`` onto this stored row (same business key).

        Non-absent fields of ``incoming`` win; the stored surrogate key is kept.
        An augment placeholder never overrides a real row, and a merged END
        row drops begin/data fields.
        """
        if incoming.sk != self.sk:
            raise InvariantViolation(
                f"Lv2 merge for bk={format_bk(self.bk)}: sk {incoming.sk} != stored {self.sk}"
            )
        if incoming.op is OperationCode.AUGMENT and self.op is not OperationCode.AUGMENT:
            return self

        merged = replace(
            self,
            op=incoming.op,
            sor_bd=incoming.sor_bd if incoming.sor_bd is not None else self.sor_bd,
            ed=incoming.ed if incoming.ed is not None else self.ed,
            new_bd=incoming.new_bd if incoming.new_bd is not None else self.new_bd,
            af=incoming.af,
            data={**self.data, **_non_blank(incoming.data)},
            fk_values={**self.fk_values, **_non_blank(incoming.fk_values)},
            resolved_keys={**self.resolved_keys, **incoming.resolved_keys},
        )
        if merged.op is OperationCode.END:
            merged = replace(merged, new_bd=None, data={}, fk_values={}, resolved_keys={})
        return merged

    def to_row(self, target: TargetMapping) -> Dict[str, str]:
        row = {
            "op": self.op.value,
            "sk": str(self.sk),
            **dict(zip(target.bk_columns, self.bk)),
            "sor_bd": _fmt(self.sor_bd),
            "ed": _fmt(self.ed),
            "new_bd": _fmt(self.new_bd),
            "af": "1" if self.af else "0",
        }
        for column in target.data_columns:
            row[column] = self.data.get(column, "")
        for column in target.fk_columns:
            row[column] = self.fk_values.get(column, "")
            row[f"{column}_sk"] = _fmt(self.resolved_keys.get(column))
        return row

    @classmethod
    def from_row(cls, row: Dict[str, str], target: TargetMapping) -> "StagingRecord":
        return cls(
            op=OperationCode(row["op"]),
            sk=int(row["sk"]),
            bk=tuple(row[c] for c in target.bk_columns),
            sor_bd=_opt_int(row["sor_bd"]),
            ed=_opt_int(row["ed"]),
            new_bd=_opt_int(row["new_bd"]),
            af=row["af"] == "1",
            data=_non_blank({c: row[c] for c in target.data_columns}),
            fk_values=_non_blank({c: row[c] for c in target.fk_columns}),
            resolved_keys={
                c: int(row[f"{c}_sk"]) for c in target.fk_columns if row[f"{c}_sk"] != ""
            },
        )


@dataclass(frozen=True)
class SorStaticRecord:
    sk: int
    bk: BusinessKey
    static_attrs: Dict[str, str] = field(default_factory=dict)
    last_tx_type: Optional[TxType] = None
    last_tx_date: Optional[int] = None
    af: bool = False

    def to_row(self, target: TargetMapping) -> Dict[str, str]:
        row = {"sk": str(self.sk), **dict(zip(target.bk_columns, self.bk))}
        for column in target.static_attrs:
            row[column] = self.static_attrs.get(column, "")
        row["last_tx_type"] = self.last_tx_type.value if self.last_tx_type else ""
        row["last_tx_date"] = _fmt(self.last_tx_date)
        row["af"] = "1" if self.af else "0"
        return row

    @classmethod
    def from_row(cls, row: Dict[str, str], target: TargetMapping) -> "SorStaticRecord":
        return cls(
            sk=int(row["sk"]),
            bk=tuple(row[c] for c in target.bk_columns),
            static_attrs=_non_blank({c: row[c] for c in target.static_attrs}),
            last_tx_type=TxType(row["last_tx_type"]) if row["last_tx_type"] else None,
            last_tx_date=_opt_int(row["last_tx_date"]),
            af=row["af"] == "1",
        )


@dataclass(frozen=True)
class SorHistoryRecord:
    sk: int
    bk: BusinessKey
    bd: int
    ed: int = OPEN_END_DATE
    dynamic_attrs: Dict[str, str] = field(default_factory=dict)
    resolved_keys: Dict[str, int] = field(default_factory=dict)

    @property
    def is_open(self) -> bool:
        return self.ed == OPEN_END_DATE

    def to_row(self, target: TargetMapping) -> Dict[str, str]:
        row = {"sk": str(self.sk), **dict(zip(target.bk_columns, self.bk)), "bd": str(self.bd), "ed": str(self.ed)}
        for column in target.dynamic_attrs:
            row[column] = self.dynamic_attrs.get(column, "")
        for column in target.fk_columns:
            row[f"{column}_sk"] = _fmt(self.resolved_keys.get(column))
        return row

    @classmethod
    def from_row(cls, row: Dict[str, str], target: TargetMapping) -> "SorHistoryRecord":
        return cls(
            sk=int(row["sk"]),
            bk=tuple(row[c] for c in target.bk_columns),
            bd=int(row["bd"]),
            ed=int(row["ed"]),
            dynamic_attrs=_non_blank({c: row[c] for c in target.dynamic_attrs}),
            resolved_keys={
                c: int(row[f"{c}_sk"]) for c in target.fk_columns if row[f"{c}_sk"] != ""
            },
        )
