"""
Mapping Configuration

Loads and validates the declarative JSON document that drives every other
module: source feeds, target tables, business/foreign keys and the
static-vs-dynamic attribute classification of each target.
"""

import json
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, PositiveInt
from pydantic import ValidationError as PydanticValidationError

from stagex.etl.errors import ConfigValidationError, ParseError, TableNotFound, UnknownFeed

logger = logging.getLogger(__name__)

# Control columns owned by the engine; configured columns may not reuse them
RESERVED_COLUMNS = frozenset({
    "op", "sk", "sor_bd", "ed", "new_bd", "af", "bd",
    "last_tx_type", "last_tx_date", "tx_type", "tx_date",
})


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FeedSpec(_Frozen):
    feed_id: str
    path_pattern: str
    columns: Tuple[str, ...]
    bk_columns: Tuple[str, ...]

    def resolve_path(self, data_dir: Path, batch_date: int) -> Path:
        path = Path(self.path_pattern.format(batch_date=batch_date))
        return path if path.is_absolute() else Path(data_dir) / path


class FkDef(_Frozen):
    fk_column: str
    referenced_target: str


class SourceMapping(_Frozen):
    feed_id: str
    column_map: Dict[str, str]


class TargetMapping(_Frozen):
    target_name: str
    bk_columns: Tuple[str, ...]
    static_attrs: Tuple[str, ...] = ()
    dynamic_attrs: Tuple[str, ...] = ()
    fk_defs: Tuple[FkDef, ...] = ()
    source_mappings: Tuple[SourceMapping, ...] = ()
    sequence_start: PositiveInt = 1

    @property
    def fk_columns(self) -> Tuple[str, ...]:
        return tuple(fk.fk_column for fk in self.fk_defs)

    @property
    def data_columns(self) -> Tuple[str, ...]:
        return self.static_attrs + self.dynamic_attrs

    @property
    def referenced_targets(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(fk.referenced_target for fk in self.fk_defs))


class MappingConfig(_Frozen):
    batch_frequency: Literal["daily"] = "daily"
    source_feeds: Tuple[FeedSpec, ...] = ()
    targets: Tuple[TargetMapping, ...] = ()

    @property
    def target_names(self) -> List[str]:
        return [t.target_name for t in self.targets]

    def target(self, name: str) -> TargetMapping:
        for target in self.targets:
            if target.target_name == name:
                return target
        raise TableNotFound(f"target {name!r} is not configured")

    def feed(self, feed_id: str) -> FeedSpec:
        for feed in self.source_feeds:
            if feed.feed_id == feed_id:
                return feed
        raise UnknownFeed(f"feed {feed_id!r} is not configured")

    def mappings_for_feed(self, feed_id: str) -> List[Tuple[TargetMapping, SourceMapping]]:
        return [
            (target, mapping)
            for target in self.targets
            for mapping in target.source_mappings
            if mapping.feed_id == feed_id
        ]


@dataclass(frozen=True)
class Violation:
    code: str
    location: str
    message: str


def validate_config(cfg: MappingConfig) -> List[Violation]:
    """
    Check every cross-reference rule of a parsed config.

    Returns:
        Violations in a deterministic order; empty iff the config is valid.
    """
    violations: List[Violation] = []

    def add(code: str, location: str, message: str) -> None:
        violations.append(Violation(code, location, message))

    if not cfg.targets:
        add("NO_TARGETS", "targets", "no targets")

    feeds: Dict[str, FeedSpec] = {}
    for feed in cfg.source_feeds:
        if feed.feed_id in feeds:
            add("DUPLICATE_FEED", feed.feed_id, f"feed {feed.feed_id} defined twice")
        feeds[feed.feed_id] = feed
        if not feed.bk_columns or not set(feed.bk_columns) <= set(feed.columns):
            add("FEED_BK_INVALID", feed.feed_id, f"{feed.feed_id} bk_columns must be a non-empty subset of its columns")
        for column in feed.columns:
            if column in RESERVED_COLUMNS:
                add("RESERVED_COLUMN", f"{feed.feed_id}.{column}", f"{feed.feed_id}.{column} is a reserved column name")

    names = [t.target_name for t in cfg.targets]
    seen = set()
    for target in cfg.targets:
        name = target.target_name
        if name in seen:
            add("DUPLICATE_TARGET", name, f"target {name} defined twice")
        seen.add(name)

        if not target.bk_columns:
            add("EMPTY_BK", f"{name}.bk_columns", f"{name} has an empty business key")

        classes = {
            "bk_columns": target.bk_columns,
            "static_attrs": target.static_attrs,
            "dynamic_attrs": target.dynamic_attrs,
            "fk_columns": target.fk_columns,
        }
        for (left, left_cols), (right, right_cols) in combinations(classes.items(), 2):
            for column in sorted(set(left_cols) & set(right_cols)):
                add("OVERLAP", f"{name}.{column}", f"{name}.{column} listed in both {left} and {right}")

        all_columns = set(target.bk_columns) | set(target.data_columns) | set(target.fk_columns)
        for column in sorted(all_columns):
            if column in RESERVED_COLUMNS or (column.endswith("_sk") and column[:-3] in target.fk_columns):
                add("RESERVED_COLUMN", f"{name}.{column}", f"{name}.{column} is a reserved column name")

        for fk in target.fk_defs:
            if fk.referenced_target not in names:
                add("DANGLING_FK", f"{name}.{fk.fk_column}", f"{name}.{fk.fk_column} → {fk.referenced_target} undefined")

        for mapping in target.source_mappings:
            location = f"{name}<-{mapping.feed_id}"
            feed = feeds.get(mapping.feed_id)
            if feed is None:
                add("UNKNOWN_FEED_REF", location, f"{location}: feed {mapping.feed_id} undefined")
                continue
            mapped_targets = set(mapping.column_map.values())
            if not set(target.bk_columns) <= mapped_targets:
                add("BK_NOT_COVERED", location, f"{location} does not map every bk column of {name}")
            for source_col, target_col in mapping.column_map.items():
                if source_col not in feed.columns:
                    add("UNKNOWN_SOURCE_COLUMN", f"{location}.{source_col}", f"{source_col} is not a column of feed {feed.feed_id}")
                if target_col not in all_columns:
                    add("UNKNOWN_TARGET_COLUMN", f"{location}.{target_col}", f"{target_col} is not a column of {name}")
            bk_sources = {src for src, tgt in mapping.column_map.items() if tgt in target.bk_columns}
            if bk_sources and bk_sources != set(feed.bk_columns):
                add("BK_MISMATCH", location, f"{location}: bk must come from feed key {list(feed.bk_columns)}")

    return violations


def load_config(path: Path) -> MappingConfig:
    """
    Load, parse and cross-check a mapping config.

    Raises:
        ParseError: file missing, not JSON, or not the documented shape
        ConfigValidationError: dangling FK, overlapping classes, empty BK, ...
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read config {path}: {e}")

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e.msg}", line=e.lineno)

    try:
        cfg = MappingConfig.model_validate(raw)
    except PydanticValidationError as e:
        raise ParseError(f"{path} does not match the config format: {e}")

    violations = validate_config(cfg)
    if violations:
        raise ConfigValidationError("; ".join(v.message for v in violations), violations)

    logger.debug(f"✅ Config loaded: {len(cfg.targets)} targets, {len(cfg.source_feeds)} feeds")
    return cfg


def write_config(cfg: MappingConfig, path: Path) -> None:
    """Write the canonical JSON form of a config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.model_dump(mode="json"), f, indent=2, ensure_ascii=False)
        f.write("\n")
