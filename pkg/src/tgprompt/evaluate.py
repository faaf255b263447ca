"""Streaming evaluation over the test split.

Test edges are processed in fixed-size batches.  For each batch the
prompts (or EdgeBank scores) only see state built from edges before the
batch start; the batch's own edges are inserted after scoring.  Every
edge before the test split is replayed into state first.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

from .client import BaseClient
from .edgebank import EdgeBank, edgebank_rank
from .graph import Edge, EdgeStream, StreamError
from .negatives import NegativeSampler, NegativeSet
from .neighbors import NeighborIndex
from .parsing import ParsedPrediction, parse_prediction
from .prompts import SYSTEM_PROMPT, BatchContext, PromptBundle, PromptConfig


@dataclass
class EvalConfig:
    prompt: PromptConfig = field(default_factory=PromptConfig)
    num_negatives: int = 20
    seed: int = 0
    negative_pool: str = "source"
    directed: bool = False
    strict: bool = False
    max_queries: int | None = None


@dataclass
class PredictionRecord:
    query_id: int
    src: int
    true_dst: int
    ts: int
    ranked: list[int]
    parse_status: str | None
    candidates: list[int]
    historical_count: int
    reciprocal_rank: float
    method: str
    answer: str = ""
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        return cls(**d)


@dataclass
class EvalResult:
    method: str
    records: list[PredictionRecord]
    negatives: list[NegativeSet]

    @property
    def mrr(self) -> float:
        return mean_rr(self.records)

    def summary(self) -> dict:
        n = len(self.records)
        return {
            "method": self.method,
            "num_queries": n,
            "mrr": self.mrr,
            "hits@1": sum(r.reciprocal_rank == 1.0 for r in self.records) / n if n else 0.0,
            "num_errors": sum(r.error is not None for r in self.records),
            "num_unparseable": sum(r.parse_status == "unparseable" for r in self.records),
            "parse_rate": (
                sum(bool(r.ranked) for r in self.records) / n if n else 0.0
            ),
        }


def mean_rr(records: Sequence[PredictionRecord]) -> float:
    if not records:
        return 0.0
    return math.fsum(r.reciprocal_rank for r in records) / len(records)


def reciprocal_rank(ranked: Sequence[int], true_dst: int, candidates: Sequence[int]) -> float:
    """1/k where k is the true destination's position among pool members of ``ranked``.

    The pool is the true destination plus its negatives; ids outside it are
    skipped.  A true destination missing from ``ranked`` scores 0.
    """
    pool = set(candidates)
    pool.add(true_dst)
    k = 0
    for node in ranked:
        if node in pool:
            k += 1
            if node == true_dst:
                return 1.0 / k
    return 0.0


def hits_at_1(ranked: Sequence[int], true_dst: int) -> float:
    return 1.0 if ranked and ranked[0] == true_dst else 0.0


@dataclass
class Batch:
    start: int  # index of the first test query
    edges: tuple[Edge, ...]

    @property
    def t_start(self) -> int:
        return self.edges[0].ts


class StreamState:
    """Mutable state advanced by the loop: neighbor index plus any EdgeBanks."""

    def __init__(self, stream: EdgeStream, directed: bool = False, banks: Sequence[EdgeBank] = ()):
        self.index = NeighborIndex(directed=directed)
        self.banks = list(banks)
        self.advance(stream.edges[: stream.val_end])

    def advance(self, edges: Sequence[Edge]) -> None:
        self.index.update_many(edges)
        for bank in self.banks:
            bank.update_many(edges)


def split_batches(stream: EdgeStream, batch_size: int, max_queries: int | None = None) -> Iterator[Batch]:
    if not stream.has_split:
        raise StreamError("stream has no split")
    test = stream.test
    if max_queries is not None:
        test = test[:max_queries]
    if not test:
        raise StreamError("empty test split")
    for i in range(0, len(test), batch_size):
        yield Batch(i, test[i : i + batch_size])


def iter_bundles(
    stream: EdgeStream,
    config: EvalConfig,
    system: str = SYSTEM_PROMPT,
    extra_state: Sequence[EdgeBank] = (),
) -> Iterator[tuple[Batch, list[PromptBundle], StreamState]]:
    """Replay the stream, yielding each batch with its prompts.

    State is advanced with a batch's edges only after the consumer has
    finished with it (when the generator resumes).
    """
    state = StreamState(stream, config.directed, extra_state)
    for batch in split_batches(stream, config.prompt.batch_size, config.max_queries):
        ctx = BatchContext(config.prompt, stream, state.index, batch.t_start, system)
        bundles = [ctx.bundle(batch.start + j, e.src, e.ts) for j, e in enumerate(batch.edges)]
        yield batch, bundles, state
        state.advance(batch.edges)


def _negatives(
    sampler: NegativeSampler, fixed: Mapping[int, NegativeSet] | None, qid: int, edge: Edge
) -> NegativeSet:
    if fixed is not None and qid in fixed:
        return fixed[qid]
    return sampler.generate(qid, edge.src, edge.dst)


def run_eval(
    stream: EdgeStream,
    config: EvalConfig,
    client: BaseClient,
    sampler: NegativeSampler | None = None,
    parser: Callable[..., ParsedPrediction] = parse_prediction,
    fixed_negatives: Mapping[int, NegativeSet] | None = None,
    on_batch: Callable[[int, list[PredictionRecord]], None] | None = None,
) -> EvalResult:
    """Prompt the client for every test edge and score its answers."""
    if sampler is None:
        sampler = NegativeSampler(stream, config.num_negatives, config.seed, config.negative_pool)
    valid = stream.destination_range()
    method = client.name
    records: list[PredictionRecord] = []
    negatives: list[NegativeSet] = []
    for batch, bundles, _ in iter_bundles(stream, config):
        completions = client.complete_batch(bundles)
        batch_records = []
        for j, (edge, comp) in enumerate(zip(batch.edges, completions)):
            qid = batch.start + j
            neg = _negatives(sampler, fixed_negatives, qid, edge)
            parsed = parser(comp.text, valid, query_id=qid)
            if comp.error is not None:
                rr = 0.0
            elif config.strict:
                rr = hits_at_1(parsed.ranked, edge.dst)
            else:
                rr = reciprocal_rank(parsed.ranked, edge.dst, neg.candidates)
            batch_records.append(
                PredictionRecord(
                    query_id=qid,
                    src=edge.src,
                    true_dst=edge.dst,
                    ts=edge.ts,
                    ranked=parsed.ranked,
                    parse_status=parsed.parse_status,
                    candidates=neg.candidates,
                    historical_count=neg.historical_count,
                    reciprocal_rank=rr,
                    method=method,
                    answer=comp.text,
                    error=comp.error,
                )
            )
            negatives.append(neg)
        records.extend(batch_records)
        if on_batch is not None:
            on_batch(batch.start, batch_records)
    return EvalResult(method, records, negatives)


def default_window(stream: EdgeStream) -> int:
    """Train-split duration, at least 1."""
    train = stream.train
    if not train:
        return 1
    return max(1, train[-1].ts - train[0].ts)


def run_edgebank(
    stream: EdgeStream,
    config: EvalConfig,
    window: float | None = None,
    sampler: NegativeSampler | None = None,
    fixed_negatives: Mapping[int, NegativeSet] | None = None,
) -> EvalResult:
    """EdgeBank baseline over the same batches and negatives as :func:`run_eval`.

    ``window=None`` is the unlimited variant.
    """
    if sampler is None:
        sampler = NegativeSampler(stream, config.num_negatives, config.seed, config.negative_pool)
    bank = EdgeBank(window)
    state = StreamState(stream, config.directed, [bank])
    records: list[PredictionRecord] = []
    negatives: list[NegativeSet] = []
    for batch in split_batches(stream, config.prompt.batch_size, config.max_queries):
        bank.prune(batch.t_start)
        for j, edge in enumerate(batch.edges):
            qid = batch.start + j
            neg = _negatives(sampler, fixed_negatives, qid, edge)
            rr = edgebank_rank(bank, edge.src, edge.dst, neg.candidates, edge.ts, cutoff=batch.t_start)
            records.append(
                PredictionRecord(
                    query_id=qid,
                    src=edge.src,
                    true_dst=edge.dst,
                    ts=edge.ts,
                    ranked=[],
                    parse_status=None,
                    candidates=neg.candidates,
                    historical_count=neg.historical_count,
                    reciprocal_rank=rr,
                    method=bank.variant,
                )
            )
            negatives.append(neg)
        state.advance(batch.edges)
    return EvalResult(bank.variant, records, negatives)


def write_records(records: Sequence[PredictionRecord], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path: str | Path) -> list[PredictionRecord]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                out.append(PredictionRecord.from_dict(json.loads(line)))
    return out
