"""Entity linking between text mentions and relational tuples."""

from ._entlink import (
    Error,
    FormatError,
    HashingEncoder,
    ParseError,
    RpForest,
    ValidationError,
    corpus_stats,
    default_config,
    dense_rank,
    report_table,
    run_pipeline,
    synth_xml,
)

__all__ = [
    "Error",
    "FormatError",
    "HashingEncoder",
    "ParseError",
    "RpForest",
    "ValidationError",
    "corpus_stats",
    "default_config",
    "dense_rank",
    "report_table",
    "run_pipeline",
    "synth_xml",
]
