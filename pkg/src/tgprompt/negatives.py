"""Negative destination candidates: half historical, half random.

Historical negatives are destinations the query source already linked to
during training.  Random negatives come from the destination space.  Each
query draws from its own generator seeded by ``(seed, query_id)``, so a set
does not depend on which other queries were evaluated before it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .graph import EdgeStream


class NegativeSetError(ValueError):
    pass


@dataclass
class NegativeSet:
    query_id: int
    candidates: list[int]
    historical_count: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def query_rng(seed: int, query_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, query_id])


class NegativeSampler:
    """Generates negatives for the test queries of one stream.

    ``pool="source"`` draws historical negatives from the query source's own
    training destinations; ``pool="global"`` from every training destination.
    """

    def __init__(self, stream: EdgeStream, n: int = 20, seed: int = 0, pool: str = "source"):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if pool not in ("source", "global"):
            raise ValueError(f"unknown historical pool {pool!r}")
        self.n = n
        self.seed = seed
        self.pool = pool
        self.dst_space = stream.destination_range()
        if len(self.dst_space) < n + 1:
            raise NegativeSetError(
                f"destination space has {len(self.dst_space)} nodes, need at least {n + 1}"
            )
        # first-appearance order keeps draws reproducible
        by_src: dict[int, dict[int, None]] = {}
        everyone: dict[int, None] = {}
        for e in stream.train:
            by_src.setdefault(e.src, {})[e.dst] = None
            everyone[e.dst] = None
        self._by_src = {s: list(d) for s, d in by_src.items()}
        self._global = list(everyone)

    def historical_pool(self, src: int) -> list[int]:
        if self.pool == "global":
            return self._global
        return self._by_src.get(src, [])

    def generate(self, query_id: int, src: int, true_dst: int) -> NegativeSet:
        rng = query_rng(self.seed, query_id)
        want_hist = math.ceil(self.n / 2)
        pool = [d for d in self.historical_pool(src) if d != true_dst]
        if len(pool) > want_hist:
            picks = rng.choice(len(pool), size=want_hist, replace=False)
            historical = [pool[i] for i in picks]
        else:
            historical = pool
        chosen = set(historical)
        chosen.add(true_dst)
        randoms: list[int] = []
        lo, hi = self.dst_space.start, self.dst_space.stop
        while len(historical) + len(randoms) < self.n:
            d = int(rng.integers(lo, hi))
            if d not in chosen:
                chosen.add(d)
                randoms.append(d)
        return NegativeSet(
            query_id=query_id,
            candidates=[int(d) for d in historical] + randoms,
            historical_count=len(historical),
            seed=self.seed,
        )


def generate(
    stream: EdgeStream,
    query: tuple[int, int, int],
    n: int,
    seed: int,
    query_id: int = 0,
    pool: str = "source",
) -> NegativeSet:
    """One-off generation for a ``(src, true_dst, ts)`` query."""
    src, true_dst, _ = query
    return NegativeSampler(stream, n=n, seed=seed, pool=pool).generate(query_id, src, true_dst)


def save_negatives(sets: Iterable[NegativeSet], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for ns in sets:
            fh.write(ns.to_json() + "\n")


def load_fixed_negatives(
    path: str | Path, stream: EdgeStream | None = None
) -> dict[int, NegativeSet]:
    """Load per-query negative sets from JSONL.

    With a ``stream``, query ids are checked against its test split and
    candidates against the true destination.
    """
    out: dict[int, NegativeSet] = {}
    test = stream.test if stream is not None else None
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ns = NegativeSet(
                    query_id=int(rec["query_id"]),
                    candidates=[int(c) for c in rec["candidates"]],
                    historical_count=int(rec.get("historical_count", 0)),
                    seed=int(rec.get("seed", -1)),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise NegativeSetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if len(set(ns.candidates)) != len(ns.candidates):
                raise NegativeSetError(f"{path}:{lineno}: duplicate candidates")
            if test is not None:
                if not 0 <= ns.query_id < len(test):
                    raise NegativeSetError(
                        f"{path}:{lineno}: query_id {ns.query_id} outside the test split"
                    )
                if test[ns.query_id].dst in ns.candidates:
                    raise NegativeSetError(
                        f"{path}:{lineno}: candidates contain the true destination"
                    )
            out[ns.query_id] = ns
    return out
