"""Per-node interaction histories and recent-neighbor lookup."""

from __future__ import annotations

from bisect import bisect_left
from collections import defaultdict
from typing import Iterable

from .graph import Edge, EdgeStream


class NeighborIndex:
    """Append-only interaction history for every node.

    Each node keeps ``(neighbor, ts)`` entries in insertion order, which is
    also timestamp order because edges must arrive chronologically.  By
    default both endpoints record the interaction; ``directed=True`` keeps
    only the source side.
    """

    def __init__(self, directed: bool = False):
        self.directed = directed
        self._nbrs: dict[int, list[int]] = defaultdict(list)
        self._ts: dict[int, list[int]] = defaultdict(list)
        self._last_ts: int | None = None
        self.num_edges = 0

    def update(self, edge: Edge) -> None:
        src, dst, ts = edge
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(f"out-of-order insertion: ts {ts} after {self._last_ts}")
        self._last_ts = ts
        self._nbrs[src].append(dst)
        self._ts[src].append(ts)
        if not self.directed:
            self._nbrs[dst].append(src)
            self._ts[dst].append(ts)
        self.num_edges += 1

    def update_many(self, edges: Iterable[Edge]) -> None:
        for edge in edges:
            self.update(edge)

    def history(self, u: int) -> list[tuple[int, int]]:
        return list(zip(self._nbrs.get(u, ()), self._ts.get(u, ())))

    def recent_neighbors(self, u: int, t: int, m: int | None) -> list[tuple[int, int]]:
        """The last ``m`` interactions of ``u`` strictly before ``t``, oldest first.

        ``m=None`` returns every interaction before ``t``.
        """
        if m is not None and m < 0:
            raise ValueError(f"m must be >= 0, got {m}")
        ts = self._ts.get(u)
        if not ts or m == 0:
            return []
        hi = bisect_left(ts, t)
        lo = 0 if m is None else max(0, hi - m)
        return list(zip(self._nbrs[u][lo:hi], ts[lo:hi]))


def khop_bruteforce(
    edges: EdgeStream | Iterable[Edge], u: int, t: int, k: int
) -> set[int]:
    """Nodes reachable from ``u`` by a walk of exactly ``k`` steps.

    The walk runs over the undirected graph of all edges with ts < t.  This
    is a reference implementation for tests, not an index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if isinstance(edges, EdgeStream):
        edges = edges.edges
    adj: dict[int, set[int]] = defaultdict(set)
    for src, dst, ts in edges:
        if ts < t:
            adj[src].add(dst)
            adj[dst].add(src)
    frontier = {u}
    for _ in range(k):
        frontier = set().union(*(adj.get(v, ()) for v in frontier))
        if not frontier:
            break
    return frontier
