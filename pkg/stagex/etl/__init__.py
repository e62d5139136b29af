"""
StageX ETL engine: extraction, change detection, key validation, SOR loading,
DDS extraction and batch orchestration over a CSV file store.
"""

from stagex.etl.dds import extract_dimension, extract_fact
from stagex.etl.errors import EtlError, PhaseFailure, ValidationError
from stagex.etl.extractor import ingest_change_feed
from stagex.etl.keyvalidator import validate_keys_record, validate_keys_table
from stagex.etl.loader import load_record, load_table
from stagex.etl.oracle import compare_states, replay_naive
from stagex.etl.orchestrator import BatchReport, rerun_batch, run_batch
from stagex.etl.records import Lv1Record, OperationCode, StagingRecord, TxType
from stagex.etl.schema import MappingConfig, load_config, validate_config
from stagex.etl.storage import FileStore
from stagex.etl.transformer import transform_record, transform_table

__all__ = [
    "BatchReport",
    "EtlError",
    "FileStore",
    "Lv1Record",
    "MappingConfig",
    "OperationCode",
    "PhaseFailure",
    "StagingRecord",
    "TxType",
    "ValidationError",
    "compare_states",
    "extract_dimension",
    "extract_fact",
    "ingest_change_feed",
    "load_config",
    "load_record",
    "load_table",
    "replay_naive",
    "rerun_batch",
    "run_batch",
    "transform_record",
    "transform_table",
    "validate_config",
    "validate_keys_record",
    "validate_keys_table",
]
