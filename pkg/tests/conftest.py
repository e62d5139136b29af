"""
Shared fixtures for the StageX tests.

The running example is a store holding targets T, RefA and RefB right
before batch 20141008, with that day's feed files in place.
"""

import shutil
import sys
from pathlib import Path

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from stagex.etl.schema import (
    FeedSpec,
    FkDef,
    MappingConfig,
    SourceMapping,
    TargetMapping,
    load_config,
)
from stagex.etl.storage import FileStore

FIXTURES = Path(__file__).parent / "fixtures"
RUNNING_EXAMPLE = FIXTURES / "running_example"
BATCH_DATE = 20141008


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale randomized runs (deselect with -m 'not slow')")


@pytest.fixture
def example_dir(tmp_path) -> Path:
    """Writable copy of the running example (expected outputs left behind)."""
    data_dir = tmp_path / "data"
    shutil.copytree(RUNNING_EXAMPLE, data_dir, ignore=shutil.ignore_patterns("expected"))
    return data_dir


@pytest.fixture
def example_cfg(example_dir) -> MappingConfig:
    return load_config(example_dir / "mapping.json")


@pytest.fixture
def example_store(example_dir, example_cfg) -> FileStore:
    return FileStore(example_dir, example_cfg)


def expected_file(*parts: str) -> str:
    return (RUNNING_EXAMPLE / "expected").joinpath(*parts).read_text(encoding="utf-8")


def simple_config(fk: bool = False, sequence_start: int = 1) -> MappingConfig:
    """One feed, one ``item`` target (static name, dynamic price), optional FK to ``brand``."""
    feed_columns = ("item_id", "name", "price") + (("brand_code",) if fk else ())
    feeds = [FeedSpec(
        feed_id="items",
        path_pattern="feeds/{batch_date}/items.csv",
        columns=feed_columns,
        bk_columns=("item_id",),
    )]
    column_map = {"item_id": "item_id", "name": "name", "price": "price"}
    targets = []
    if fk:
        column_map["brand_code"] = "brand"
        targets.append(TargetMapping(target_name="brand", bk_columns=("code",), static_attrs=("label",),
                                     sequence_start=500))
    targets.insert(0, TargetMapping(
        target_name="item",
        bk_columns=("item_id",),
        static_attrs=("name",),
        dynamic_attrs=("price",),
        fk_defs=(FkDef(fk_column="brand", referenced_target="brand"),) if fk else (),
        source_mappings=(SourceMapping(feed_id="items", column_map=column_map),),
        sequence_start=sequence_start,
    ))
    return MappingConfig(source_feeds=tuple(feeds), targets=tuple(targets))


def write_feed(data_dir: Path, feed: FeedSpec, batch_date: int, lines) -> Path:
    """Write a feed file from header-less CSV lines."""
    path = feed.resolve_path(data_dir, batch_date)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(["tx_type", "tx_date", *feed.columns])
    path.write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")
    return path
