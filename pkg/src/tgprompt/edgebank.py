"""EdgeBank memorization baselines.

A pair scores 1 if it has been seen before (unlimited memory) or seen
within the last ``window`` time units, else 0.  Scores are binary, so the
rank of the positive among its negatives depends on a tie rule; see
:func:`tie_rank`.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from typing import Iterable, Sequence

from .graph import Edge


class EdgeBank:
    """Pair memory, unlimited (``window=None``) or time-windowed.

    A windowed bank keeps every occurrence and checks the window at query
    time, so ``window=math.inf`` runs the windowed code path with a window
    that never closes.
    """

    def __init__(self, window: float | None = None):
        if window is not None and window <= 0:
            raise ValueError("window must be positive")
        self.window = window
        # per pair: ascending timestamps of its occurrences
        self._seen: dict[tuple[int, int], list[int]] = defaultdict(list)
        self._last_ts: int | None = None

    @property
    def variant(self) -> str:
        return "edgebank_inf" if self.window is None else "edgebank_tw"

    def update(self, edge: Edge) -> None:
        if self._last_ts is not None and edge.ts < self._last_ts:
            raise ValueError(f"out-of-order insertion: ts {edge.ts} after {self._last_ts}")
        self._last_ts = edge.ts
        occ = self._seen[(edge.src, edge.dst)]
        if self.window is None and occ:
            # unlimited memory only needs the first sighting
            return
        occ.append(edge.ts)

    def update_many(self, edges: Iterable[Edge]) -> None:
        for e in edges:
            self.update(e)

    def prune(self, t: int) -> None:
        """Forget occurrences that can no longer fall inside a window ending at or after t."""
        if self.window is None or math.isinf(self.window):
            return
        horizon = t - self.window
        stale = []
        for pair, occ in self._seen.items():
            cut = bisect_right(occ, horizon)
            if cut:
                del occ[:cut]
            if not occ:
                stale.append(pair)
        for pair in stale:
            del self._seen[pair]

    def score(self, src: int, dst: int, t: int, cutoff: int | None = None) -> int:
        """1 if (src, dst) occurred in (t - window, t) and before ``cutoff``."""
        occ = self._seen.get((src, dst))
        if not occ:
            return 0
        limit = t if cutoff is None else min(t, cutoff)
        hi = bisect_left(occ, limit)
        if hi == 0:
            return 0
        if self.window is None:
            return 1
        return int(occ[hi - 1] > t - self.window)

    def pairs(self) -> set[tuple[int, int]]:
        return set(self._seen)


def tie_rank(pos_score: float, neg_scores: Sequence[float]) -> int:
    """Rank of the positive with ties split evenly, halves rounded up.

    ``1 + #higher + ceil(#tied / 2)``; with 20 tied negatives that is 11.
    """
    higher = sum(s > pos_score for s in neg_scores)
    tied = sum(s == pos_score for s in neg_scores)
    return 1 + higher + math.ceil(tied / 2)


def edgebank_rank(
    bank: EdgeBank,
    src: int,
    true_dst: int,
    candidates: Sequence[int],
    t: int,
    cutoff: int | None = None,
) -> float:
    """Reciprocal rank of the true destination under EdgeBank scoring."""
    pos = bank.score(src, true_dst, t, cutoff)
    negs = [bank.score(src, d, t, cutoff) for d in candidates]
    return 1.0 / tie_rank(pos, negs)
