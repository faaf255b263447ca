import random

import pytest

from tgprompt.graph import Edge, EdgeStream, NodeIdMap, chronological_split


def random_stream(
    seed: int,
    n_edges: int = 300,
    n_nodes: int = 30,
    bipartite: bool = False,
    max_step: int = 3,
    split: tuple[float, float] | None = (0.7, 0.15),
) -> EdgeStream:
    """Random stream with ties; ids are assigned directly (no ingestion)."""
    rng = random.Random(seed)
    if bipartite:
        n_src = max(1, n_nodes // 2)
        n_dst = max(1, n_nodes - n_src)
        labels = (tuple(map(str, range(n_src))), tuple(map(str, range(n_dst))))
        pick_src = lambda: rng.randrange(n_src)  # noqa: E731
        pick_dst = lambda: n_src + rng.randrange(n_dst)  # noqa: E731
    else:
        labels = (tuple(map(str, range(n_nodes))),)
        pick_src = pick_dst = lambda: rng.randrange(n_nodes)  # noqa: E731
    ts = 0
    edges = []
    for _ in range(n_edges):
        ts += rng.randrange(max_step)
        edges.append(Edge(pick_src(), pick_dst(), ts))
    stream = EdgeStream(tuple(edges), NodeIdMap(labels))
    if split is not None:
        stream = chronological_split(stream, *split)
    return stream


@pytest.fixture
def make_stream():
    return random_stream


# Expected block texts, copied from the worked prompt example.
TABLE_BACKGROUND = "(0,8227,0), (1,8228,36), (1,8228,77), (2,8229,131)"
TABLE_EXAMPLE = (
    "`Source Node' 1 has the following past interactions: (1,8228,36), (1,8228,77). "
    "Please predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 150. "
    "Answer: `Destination Node' is 8228."
)
TABLE_QUERY = (
    "`Source Node' 1 has the following past interactions: (1,8228,36), (1,8228,77). "
    "Please predict the most likely `Destination Node' for `Source Node' 1 at `Timestamp' 217."
)


def table_toy():
    """Bipartite toy graph with 8227 sources, so the first destination is 8227."""
    from tgprompt.neighbors import NeighborIndex

    labels = (tuple(map(str, range(8227))), ("a", "b", "c"))
    edges = (Edge(0, 8227, 0), Edge(1, 8228, 36), Edge(1, 8228, 77), Edge(2, 8229, 131), Edge(1, 8228, 150))
    stream = EdgeStream(edges, NodeIdMap(labels))
    index = NeighborIndex()
    index.update_many(edges)
    return stream, index


def recency_rows(seed: int = 0, n_sources: int = 300, n_edges: int = 3000) -> list[tuple[str, str, int]]:
    """Bipartite rows where every source only ever talks to one fixed partner.

    A first pass visits every source once, so each test query's true
    destination is the source's most recent neighbor.
    """
    rng = random.Random(seed)
    order = list(range(n_sources))
    rng.shuffle(order)
    order += [rng.randrange(n_sources) for _ in range(n_edges - n_sources)]
    return [(f"u{s}", f"i{s}", t) for t, s in enumerate(order)]


def write_rows(rows, path) -> str:
    with open(path, "w") as fh:
        fh.write("src,dst,ts\n")
        for s, d, t in rows:
            fh.write(f"{s},{d},{t}\n")
    return str(path)


# One PASS/FAIL/SKIP line per acceptance criterion at the end of the run.
_CRITERIA: dict[int, list] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, title = props["criterion"]
    outcomes = _CRITERIA.setdefault(number, [title, set()])[1]
    if report.failed:
        outcomes.add("FAIL")
    elif report.skipped:
        outcomes.add("SKIP")
    elif report.when == "call":
        outcomes.add("PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        verdict = next(v for v in ("FAIL", "PASS", "SKIP") if v in outcomes or v == "SKIP")
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
