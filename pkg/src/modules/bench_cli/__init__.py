"""
Bench CLI
Verification suites, work-counter benchmarks, dynamic-k sweeps and
attention heatmaps behind the command line.
"""
from .bench import CSV_HEADER, BenchRow, dense_bytes, run_dense, run_sea
from .pgm import decode_pgm, encode_pgm, to_grey, write_pgm
from .suite_log import SuiteLog
from .suites import SUITES, SuiteResult, run_suites

__all__ = [
    "SuiteLog",
    "SuiteResult",
    "SUITES",
    "run_suites",
    "BenchRow",
    "CSV_HEADER",
    "dense_bytes",
    "run_sea",
    "run_dense",
    "to_grey",
    "encode_pgm",
    "decode_pgm",
    "write_pgm",
]
