#!/usr/bin/env python3
"""
Shared constants and environment settings for StageX.
Centralizes storage layout names, sentinel dates and CLI status indicators.
"""

import os
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

# --- Environment Settings ---
DATA_DIR = Path(os.environ.get("STAGEX_DATA_DIR", "data"))
CONFIG_PATH = Path(os.environ.get("STAGEX_CONFIG", "config/mapping.json"))
PARALLELISM = int(os.environ.get("STAGEX_PARALLELISM", "1"))
LOG_LEVEL = os.environ.get("STAGEX_LOG_LEVEL", "INFO")

# Surrogate keys reserved per meta.json write
SEQUENCE_BLOCK = int(os.environ.get("STAGEX_SEQUENCE_BLOCK", "100"))

# --- Dates ---
OPEN_END_DATE = 99991231
MIN_DATE = 10000101

# --- Storage Layout ---
SSA1_AREA = "ssa1"
SSA2_AREA = "ssa2"
SOR_AREA = "sor"
DDS_AREA = "dds"
SNAPSHOTS_DIR = "snapshots"
ARCHIVE_DIR = "archive"
META_FILE = "meta.json"
AREAS = (SSA1_AREA, SSA2_AREA, SOR_AREA, DDS_AREA)

# Composite business keys referenced from an FK column
FK_KEY_SEPARATOR = "|"

STATUS_INDICATORS = {
    "emojis": {
        "success": "✅",
        "aborted": "❌",
        "warning": "⚠️",
        "ingest": "📥",
        "transform": "🔄",
        "keys": "🔑",
        "load": "📦",
        "dds": "📊",
        "snapshot": "📸",
        "verify": "🔍",
    }
}
