"""
StageX - Two-level data staging ETL for transaction data
Package initialization for the stagex batch engine.
"""

__version__ = "1.0.0"
__author__ = "StageX Data Platform"

# Make key entry points easily accessible
from stagex.etl.schema import load_config, validate_config
from stagex.etl.storage import FileStore
from stagex.etl.orchestrator import run_batch, rerun_batch

__all__ = [
    "load_config",
    "validate_config",
    "FileStore",
    "run_batch",
    "rerun_batch",
]
