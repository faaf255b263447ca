"""Prompt assembly: system text, graph preamble, background, examples, query.

Background and example blocks are computed once per evaluation batch from
edges strictly before the batch start; the query block is per query.  All
tuples are rendered ``(src,dst,ts)`` with bare integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .graph import Edge, EdgeStream
from .neighbors import NeighborIndex

SYSTEM_PROMPT = (
    "You are an expert temporal graph learning agent. Your task is to predict the next "
    "interaction (i.e. Destination Node) given the `Source Node' and `Timestamp'."
)
TG_PREAMBLE = (
    "Description of the temporal graph is provided below, where each line is a tuple of "
    "(`Source Node`, `Destination Node`, `Timestamp`)."
)


class PromptBudgetError(ValueError):
    pass


@dataclass
class PromptConfig:
    background_size: int = 300
    neighbors: int = 2
    shots: int = 5
    batch_size: int = 200
    max_prompt_chars: int = 48000
    include_background: bool = True
    include_examples: bool = True
    include_neighbors: bool = True

    def __post_init__(self):
        if min(self.background_size, self.neighbors, self.shots) < 0:
            raise ValueError("background_size, neighbors and shots must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_prompt_chars < 1:
            raise ValueError("max_prompt_chars must be >= 1")

    @property
    def effective_neighbors(self) -> int:
        return self.neighbors if self.include_neighbors else 0


@dataclass
class PromptBundle:
    system: str
    tg_preamble: str
    background: str
    examples: str
    query: str
    query_id: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def user(self) -> str:
        """Everything after the system block, as sent in the user message."""
        return "\n".join(b for b in (self.tg_preamble, self.background, self.examples, self.query) if b)

    @property
    def assembled(self) -> str:
        return "\n".join(b for b in (self.system, self.user) if b)


def render_edge(src: int, dst: int, ts: int) -> str:
    return f"({src},{dst},{ts})"


def render_edges(edges: Sequence[tuple[int, int, int]]) -> str:
    return ", ".join(render_edge(*e) for e in edges)


def recent_edges(stream: EdgeStream, t_start: int, b: int) -> tuple[Edge, ...]:
    """The ``b`` most recent edges with ts < t_start, oldest first."""
    if b <= 0:
        return ()
    hi = stream.before(t_start)
    return stream.edges[max(0, hi - b) : hi]


def build_background(stream: EdgeStream, t_start: int, b: int) -> str:
    return render_edges(recent_edges(stream, t_start, b))


def _question(src: int, ts: int, history: list[tuple[int, int]] | None) -> str:
    if history is None:
        lead = ""
    elif history:
        lead = (
            f"`Source Node' {src} has the following past interactions: "
            f"{render_edges([(src, v, t) for v, t in history])}. "
        )
    else:
        lead = f"`Source Node' {src} has no past interactions. "
    return (
        f"{lead}Please predict the most likely `Destination Node' for "
        f"`Source Node' {src} at `Timestamp' {ts}."
    )


def encode_query(
    index: NeighborIndex, src: int, ts: int, m: int, cutoff: int | None = None
) -> str:
    """Question text for one query.

    Neighbors are drawn strictly before ``min(ts, cutoff)``; the evaluation
    loop passes the batch start as ``cutoff``.  ``m=0`` drops the
    interaction sentence entirely.
    """
    limit = ts if cutoff is None else min(ts, cutoff)
    history = index.recent_neighbors(src, limit, m) if m > 0 else None
    return _question(src, ts, history)


def build_examples(
    stream: EdgeStream, index: NeighborIndex, t_start: int, shots: int, m: int
) -> str:
    """Solved demonstrations from the ``shots`` most recent edges before t_start."""
    lines = []
    for src, dst, ts in recent_edges(stream, t_start, shots):
        q = encode_query(index, src, ts, m)
        lines.append(f"{q} Answer: `Destination Node' is {dst}.")
    return "\n".join(lines)


def _fit_background(tuples: list[str], room: int) -> str:
    # keep the longest suffix whose ", "-joined length fits in room
    used = -2
    keep = 0
    for piece in reversed(tuples):
        if used + 2 + len(piece) > room:
            break
        used += 2 + len(piece)
        keep += 1
    return ", ".join(tuples[len(tuples) - keep :])


def assemble(
    config: PromptConfig,
    system: str,
    background: str | Sequence[str],
    examples: str,
    query: str,
    query_id: int = -1,
    preamble: str = TG_PREAMBLE,
) -> PromptBundle:
    """Join blocks in fixed order, trimming the oldest background edges to fit.

    ``background`` may be the rendered text or the list of rendered tuples.
    """
    if isinstance(background, str):
        tuples = background.split(", ") if background else []
    else:
        tuples = list(background)
    if not config.include_background:
        tuples = []
    if not config.include_examples:
        examples = ""
    bundle = PromptBundle(system, preamble, ", ".join(tuples), examples, query, query_id)
    size = len(bundle.assembled)
    if size <= config.max_prompt_chars:
        return bundle
    bare = PromptBundle(system, preamble, "", examples, query, query_id)
    fixed = len(bare.assembled)
    if fixed > config.max_prompt_chars:
        raise PromptBudgetError(
            f"prompt without background needs {fixed} chars, budget is {config.max_prompt_chars}"
        )
    # one joining newline is added back when the background is non-empty
    bundle.background = _fit_background(tuples, config.max_prompt_chars - fixed - 1)
    return bundle


class BatchContext:
    """Shared background/example blocks for one batch starting at ``t_start``."""

    def __init__(
        self,
        config: PromptConfig,
        stream: EdgeStream,
        index: NeighborIndex,
        t_start: int,
        system: str = SYSTEM_PROMPT,
    ):
        self.config = config
        self.index = index
        self.t_start = t_start
        self.system = system
        if config.include_background:
            self.background = [render_edge(*e) for e in recent_edges(stream, t_start, config.background_size)]
        else:
            self.background = []
        if config.include_examples:
            self.examples = build_examples(stream, index, t_start, config.shots, config.effective_neighbors)
        else:
            self.examples = ""

    def bundle(self, query_id: int, src: int, ts: int) -> PromptBundle:
        query = encode_query(self.index, src, ts, self.config.effective_neighbors, cutoff=self.t_start)
        b = assemble(self.config, self.system, self.background, self.examples, query, query_id)
        b.meta = {"src": src, "ts": ts, "batch_start": self.t_start}
        return b
