"""Temporal link prediction by prompting chat-completion LLMs."""

__version__ = "0.1.0"

from .graph import (  # noqa: E402
    DatasetStats,
    Edge,
    EdgeStream,
    NodeIdMap,
    StreamError,
    chronological_split,
    compute_stats,
    from_rows,
    ingest_csv,
    surprise_index,
)
from .neighbors import NeighborIndex, khop_bruteforce  # noqa: E402
from .negatives import NegativeSampler, NegativeSet, load_fixed_negatives  # noqa: E402
from .prompts import PromptBundle, PromptConfig  # noqa: E402
from .parsing import ParsedPrediction, parse_prediction  # noqa: E402
from .edgebank import EdgeBank, edgebank_rank  # noqa: E402
from .evaluate import EvalConfig, PredictionRecord, reciprocal_rank, run_edgebank, run_eval  # noqa: E402
from .explain import Category, ExplanationRecord, aggregate_report  # noqa: E402

__all__ = [
    "Category",
    "DatasetStats",
    "Edge",
    "EdgeBank",
    "EdgeStream",
    "EvalConfig",
    "ExplanationRecord",
    "NegativeSampler",
    "NegativeSet",
    "NeighborIndex",
    "NodeIdMap",
    "ParsedPrediction",
    "PredictionRecord",
    "PromptBundle",
    "PromptConfig",
    "StreamError",
    "aggregate_report",
    "chronological_split",
    "compute_stats",
    "edgebank_rank",
    "from_rows",
    "ingest_csv",
    "khop_bruteforce",
    "load_fixed_negatives",
    "parse_prediction",
    "reciprocal_rank",
    "run_edgebank",
    "run_eval",
    "surprise_index",
]
