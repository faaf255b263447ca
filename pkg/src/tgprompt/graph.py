"""Temporal graph data model: edge streams, node ids, splits and statistics.

An edge stream is an ordered sequence of ``(src, dst, ts)`` interactions.
Raw node labels are opaque strings; integer ids are handed out in order of
first appearance, so ids themselves carry a little temporal information
that the prompts rely on.  For bipartite graphs the destination partition
is offset by the number of sources, keeping both id ranges disjoint.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence


class StreamError(ValueError):
    """Raised for malformed or inconsistent edge data."""


class Edge(NamedTuple):
    src: int
    dst: int
    ts: int


@dataclass(frozen=True)
class NodeIdMap:
    """Label-to-id mapping, kept as the label list of each partition in id order.

    ``labels[0]`` holds source labels; ``labels[1]`` destination labels when
    bipartite.  A unipartite map has a single partition.
    """

    labels: tuple[tuple[str, ...], ...]

    @property
    def bipartite(self) -> bool:
        return len(self.labels) == 2

    @property
    def partition_sizes(self) -> tuple[int, ...]:
        return tuple(len(part) for part in self.labels)

    @property
    def num_nodes(self) -> int:
        return sum(self.partition_sizes)

    @cached_property
    def _lookup(self) -> tuple[dict[str, int], ...]:
        offset = 0
        maps = []
        for part in self.labels:
            maps.append({label: offset + i for i, label in enumerate(part)})
            offset += len(part)
        return tuple(maps)

    @property
    def raw_to_id(self) -> dict[str, int]:
        """Source-side (or sole) partition mapping."""
        return self._lookup[0]

    def src_id(self, label: str) -> int:
        return self._lookup[0][label]

    def dst_id(self, label: str) -> int:
        return self._lookup[-1][label]

    def label(self, node: int) -> str:
        offset = 0
        for part in self.labels:
            if node < offset + len(part):
                return part[node - offset]
            offset += len(part)
        raise KeyError(node)

    def destination_range(self) -> range:
        """Ids a link can point to: the destination partition, or every node."""
        if self.bipartite:
            return range(self.partition_sizes[0], self.num_nodes)
        return range(self.num_nodes)


@dataclass(frozen=True)
class EdgeStream:
    edges: tuple[Edge, ...]
    node_map: NodeIdMap
    train_end: int = 0
    val_end: int = 0
    has_split: bool = False

    def __post_init__(self):
        n = len(self.edges)
        if not 0 <= self.train_end <= self.val_end <= n:
            raise StreamError(
                f"split indices out of order: {self.train_end}, {self.val_end}, {n}"
            )

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def bipartite(self) -> bool:
        return self.node_map.bipartite

    @property
    def num_nodes(self) -> int:
        return self.node_map.num_nodes

    @cached_property
    def timestamps(self) -> list[int]:
        return [e.ts for e in self.edges]

    @property
    def train(self) -> tuple[Edge, ...]:
        return self.edges[: self.train_end]

    @property
    def val(self) -> tuple[Edge, ...]:
        return self.edges[self.train_end : self.val_end]

    @property
    def test(self) -> tuple[Edge, ...]:
        return self.edges[self.val_end :]

    def before(self, t: int) -> int:
        """Number of leading edges with ts < t."""
        return bisect_left(self.timestamps, t)

    def destination_range(self) -> range:
        return self.node_map.destination_range()


@dataclass
class DatasetStats:
    num_nodes: int
    num_edges: int
    num_unique_edges: int
    num_unique_steps: int
    surprise: float | None
    duration: tuple[int, int]

    def as_row(self, name: str = "") -> dict:
        return {
            "dataset": name,
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "num_unique_edges": self.num_unique_edges,
            "num_unique_steps": self.num_unique_steps,
            "surprise": self.surprise,
            "min_ts": self.duration[0],
            "max_ts": self.duration[1],
        }


def parse_timestamp(raw: str) -> int:
    """Parse an integer timestamp; integral decimals such as ``"36.0"`` are accepted."""
    raw = raw.strip()
    try:
        value = int(raw)
    except ValueError:
        try:
            dec = Decimal(raw)
        except InvalidOperation:
            raise StreamError(f"timestamp {raw!r} is not a number") from None
        if not dec.is_finite() or dec != dec.to_integral_value():
            raise StreamError(f"fractional timestamp {raw!r} is not supported")
        value = int(dec)
    if value < 0:
        raise StreamError(f"negative timestamp {raw!r}")
    return value


def _looks_like_header(row: Sequence[str]) -> bool:
    if len(row) < 3:
        return False
    try:
        parse_timestamp(row[2])
    except StreamError:
        return True
    return False


def from_rows(
    rows: Iterable[tuple[str, str, int]],
    bipartite: bool = False,
    sort: bool = False,
) -> EdgeStream:
    """Build a stream from ``(src_label, dst_label, ts)`` rows.

    Rows must be in non-decreasing timestamp order unless ``sort`` is set,
    in which case a stable sort keeps file order among equal timestamps.
    """
    rows = [(str(s), str(d), int(t)) for s, d, t in rows]
    if sort:
        rows.sort(key=lambda r: r[2])
    for i in range(1, len(rows)):
        if rows[i][2] < rows[i - 1][2]:
            raise StreamError(
                f"row {i + 1}: timestamp {rows[i][2]} decreases "
                f"(previous {rows[i - 1][2]}); pass sort=True to reorder"
            )

    if bipartite:
        src_seen: dict[str, int] = {}
        dst_seen: dict[str, int] = {}
        for s, d, _ in rows:
            src_seen.setdefault(s, len(src_seen))
            dst_seen.setdefault(d, len(dst_seen))
        offset = len(src_seen)
        edges = tuple(Edge(src_seen[s], offset + dst_seen[d], t) for s, d, t in rows)
        node_map = NodeIdMap((tuple(src_seen), tuple(dst_seen)))
    else:
        seen: dict[str, int] = {}
        for s, d, _ in rows:
            seen.setdefault(s, len(seen))
            seen.setdefault(d, len(seen))
        edges = tuple(Edge(seen[s], seen[d], t) for s, d, t in rows)
        node_map = NodeIdMap((tuple(seen),))
    return EdgeStream(edges=edges, node_map=node_map)


def ingest_csv(
    path: str | Path,
    bipartite: bool = False,
    delimiter: str = ",",
    has_header: bool | None = None,
    sort: bool = False,
) -> EdgeStream:
    """Read a ``src,dst,ts[,extra...]`` edge list.

    ``has_header=None`` sniffs the first row: it is a header when its third
    field is not a timestamp.  Extra columns are ignored.
    """
    path = Path(path)
    rows: list[tuple[str, str, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                header = _looks_like_header(row) if has_header is None else has_header
                if header:
                    continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 3:
                raise StreamError(f"{path}:{lineno}: expected at least 3 fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[2])
            except StreamError as exc:
                raise StreamError(f"{path}:{lineno}: {exc}") from None
            rows.append((row[0].strip(), row[1].strip(), ts))
    if not rows:
        raise StreamError(f"{path}: no edges")
    try:
        return from_rows(rows, bipartite=bipartite, sort=sort)
    except StreamError as exc:
        raise StreamError(f"{path}: {exc}") from None


def write_csv(stream: EdgeStream, path: str | Path) -> None:
    """Write the id-mapped edge list with a ``src,dst,ts`` header."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "ts"])
        writer.writerows(stream.edges)


def _boundary(edges: Sequence[Edge], idx: int) -> int:
    # edges tied with the last edge before the boundary stay on the earlier side
    while 0 < idx < len(edges) and edges[idx].ts == edges[idx - 1].ts:
        idx += 1
    return idx


def chronological_split(
    stream: EdgeStream, train_frac: float = 0.70, val_frac: float = 0.15
) -> EdgeStream:
    if not (0 < train_frac and 0 <= val_frac and train_frac + val_frac < 1):
        raise StreamError(f"bad split fractions: train={train_frac}, val={val_frac}")
    n = len(stream.edges)
    train_end = _boundary(stream.edges, math.floor(train_frac * n + 1e-9))
    val_end = _boundary(stream.edges, max(train_end, math.floor((train_frac + val_frac) * n + 1e-9)))
    return replace(stream, train_end=train_end, val_end=val_end, has_split=True)


def surprise_index(stream: EdgeStream) -> float:
    """Fraction of test edges whose (src, dst) pair never occurs in training."""
    if not stream.has_split:
        raise StreamError("stream has no split")
    test = stream.test
    if not test:
        raise StreamError("empty test split")
    train_pairs = {(e.src, e.dst) for e in stream.train}
    unseen = sum((e.src, e.dst) not in train_pairs for e in test)
    return unseen / len(test)


def compute_stats(stream: EdgeStream) -> DatasetStats:
    if not stream.edges:
        raise StreamError("empty stream")
    surprise = surprise_index(stream) if stream.has_split and stream.test else None
    return DatasetStats(
        num_nodes=stream.num_nodes,
        num_edges=len(stream.edges),
        num_unique_edges=len({(e.src, e.dst) for e in stream.edges}),
        num_unique_steps=len(set(stream.timestamps)),
        surprise=surprise,
        duration=(stream.edges[0].ts, stream.edges[-1].ts),
    )


def stream_manifest(stream: EdgeStream) -> dict:
    """Sidecar record of split indices, bipartite flag and id map."""
    return {
        "num_edges": len(stream.edges),
        "bipartite": stream.bipartite,
        "split": {
            "train_end": stream.train_end,
            "val_end": stream.val_end,
            "has_split": stream.has_split,
        },
        "partition_sizes": list(stream.node_map.partition_sizes),
        "labels": [list(part) for part in stream.node_map.labels],
    }


def write_stream_manifest(stream: EdgeStream, path: str | Path) -> None:
    Path(path).write_text(json.dumps(stream_manifest(stream), indent=1) + "\n")


def apply_stream_manifest(stream: EdgeStream, manifest: dict) -> EdgeStream:
    """Check a re-ingested stream against a sidecar and restore its split."""
    if manifest["num_edges"] != len(stream.edges):
        raise StreamError("manifest edge count does not match stream")
    labels = tuple(tuple(part) for part in manifest["labels"])
    if labels != stream.node_map.labels:
        raise StreamError("manifest id map does not match stream")
    split = manifest["split"]
    return replace(
        stream,
        train_end=split["train_end"],
        val_end=split["val_end"],
        has_split=split["has_split"],
    )
