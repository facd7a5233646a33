"""Experiment harness: sweeps, trace decoding and the command line."""
from .config import ExperimentConfig, UsageError
from .trace import TraceError, TraceFile, read_trace, write_trace

__all__ = ["ExperimentConfig", "UsageError", "TraceError", "TraceFile", "read_trace",
           "write_trace"]
