"""Link explanations: generate, classify into ten fixed categories, aggregate.

An explanation request repeats the prediction context, shows the model its
own answer and asks for the reasoning.  A second request (same model by
default) labels that reasoning with one category.  The report breaks the
explained predictions down by category, with the mean reciprocal rank of
each.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .client import BaseClient, Completion, MockClient, query_interactions
from .evaluate import EvalConfig, PredictionRecord, iter_bundles
from .graph import EdgeStream
from .prompts import PromptBundle


class Category(str, Enum):
    MostRecentInteraction = "MostRecentInteraction"
    RepeatedInteractionPattern = "RepeatedInteractionPattern"
    MostFrequentPastDestination = "MostFrequentPastDestination"
    PatternContinuation = "PatternContinuation"
    SequenceOrAlternationLogic = "SequenceOrAlternationLogic"
    DefaultOrMostCommonNode = "DefaultOrMostCommonNode"
    LackOfData = "LackOfData"
    NewNode = "NewNode"
    AmbiguousCandidates = "AmbiguousCandidates"
    Others = "Others"

    @property
    def display_name(self) -> str:
        return _TABLE[self][0]

    @property
    def description(self) -> str:
        return _TABLE[self][1]


_TABLE = {
    Category.MostRecentInteraction: (
        "Most Recent Interaction",
        "the model predicts the destination node as the one with which the source node had its "
        "most recent interaction before (or closest to) the given timestamp.",
    ),
    Category.RepeatedInteractionPattern: (
        "Repeated Interaction Pattern",
        "if a source node has repeatedly interacted with the same destination node at multiple "
        "timestamps, the model predicts that this pattern will continue.",
    ),
    Category.MostFrequentPastDestination: (
        "Most Frequent Past Destination",
        "when multiple past interactions exist, the explanation chooses the destination node that "
        "appears most frequently in the interaction history.",
    ),
    Category.PatternContinuation: (
        "Pattern Continuation",
        "The model infers the next likely destination by extrapolating from observed interaction "
        "patterns, even when the exact match isn’t present.",
    ),
    Category.SequenceOrAlternationLogic: (
        "Sequence or Alternation Logic",
        "the model uses the order of interactions (e.g., alternating between nodes) to predict the "
        "next likely destination.",
    ),
    Category.DefaultOrMostCommonNode: (
        "Default or Most Common Node",
        "in the absence of a clear match, the explanation may default to the most common or "
        "logical node, or state that any node could be chosen.",
    ),
    Category.LackOfData: (
        "Lack of Data",
        "when no clear pattern or sufficient data is available, the model defaults to a plausible "
        "guess, sometimes stating the lack of information.",
    ),
    Category.NewNode: (
        "New Node",
        "the model infers that the next interaction might be with a new node that hasn’t "
        "appeared in the source node’s history, especially if all previous interactions are "
        "exhausted.",
    ),
    Category.AmbiguousCandidates: (
        "Ambiguous Candidates",
        "the explanation discusses more than one plausible destination (e.g., similar timestamps), "
        "and may use additional heuristics to select among them.",
    ),
    Category.Others: (
        "Others",
        "use this only if none of the above apply. Include a proposed new category name and brief "
        "justification in the required format.",
    ),
}

CATEGORIES: tuple[Category, ...] = tuple(Category)

EXPLAIN_INSTRUCTION = (
    "Explain the reasoning behind your answer in a few sentences, "
    "referring to the interactions you relied on."
)

CLASSIFIER_SYSTEM = (
    "You are an expert annotator of the reasoning given by temporal graph learning agents."
)


class JoinError(ValueError):
    pass


@dataclass
class ExplanationRecord:
    query_id: int
    explanation_text: str
    category: str
    proposed_new_category: str | None = None
    classifier_model: str = ""
    raw_classification: str = ""
    error: str | None = None

    def __post_init__(self):
        if self.proposed_new_category is not None and self.category != Category.Others.value:
            raise ValueError("proposed_new_category is only allowed for Others")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def explanation_bundle(bundle: PromptBundle, answer: Completion | str) -> PromptBundle:
    text = answer.text if isinstance(answer, Completion) else answer
    query = f"{bundle.query}\nYour answer: {text.strip()}\n{EXPLAIN_INSTRUCTION}"
    return PromptBundle(
        bundle.system, bundle.tg_preamble, bundle.background, bundle.examples, query,
        bundle.query_id, dict(bundle.meta, answer=text),
    )


def build_explanation_prompt(bundle: PromptBundle, answer: Completion | str) -> str:
    return explanation_bundle(bundle, answer).assembled


def classification_prompt(
    query_text: str,
    answer: str,
    explanation: str,
    categories: Sequence[Category] = CATEGORIES,
) -> str:
    lines = ["Classify the explanation below into exactly one of these categories:", ""]
    for i, cat in enumerate(categories, start=1):
        lines.append(f"{i}. {cat.value} ({cat.display_name}): {cat.description}")
    lines += [
        "",
        "Question:",
        query_text.strip(),
        "Answer:",
        answer.strip(),
        "Explanation:",
        explanation.strip(),
        "",
        "Reply with a single line of the form \"Category: <label>\" using one of the labels above. "
        "If you choose Others, reply with \"Others: <Proposed Category Name> - <brief justification>\" instead.",
    ]
    return "\n".join(lines)


def classification_bundle(query_id: int, query_text: str, answer: str, explanation: str) -> PromptBundle:
    return PromptBundle(
        CLASSIFIER_SYSTEM, "", "", "", classification_prompt(query_text, answer, explanation), query_id
    )


def _norm(s: str) -> str:
    return re.sub(r"[^a-z]", "", s.lower())


_LOOKUP = sorted(
    [(_norm(c.value), c) for c in CATEGORIES] + [(_norm(c.display_name), c) for c in CATEGORIES],
    key=lambda kv: -len(kv[0]),
)
_PREFIX = re.compile(r"^\W*(?:category\s*[:\-]\s*)?", re.IGNORECASE)


def parse_classification(text: str) -> tuple[Category, str | None, bool]:
    """Return (category, proposed name for Others, whether a label was found).

    Accepts a bare label, its spaced title, or either after ``Category:``.
    """
    for line in (text or "").splitlines():
        body = _PREFIX.sub("", line).strip().strip("*`\"' ")
        if not body:
            continue
        head, sep, rest = body.partition(":")
        key = _norm(head)
        for norm, cat in _LOOKUP:
            if key == norm or (not sep and _norm(body).startswith(norm)):
                proposed = None
                if cat is Category.Others and sep:
                    name = re.split(r"\s+[-–—]\s+", rest.strip(), maxsplit=1)[0]
                    proposed = name.strip().strip("*`\"'") or None
                return cat, proposed, True
    return Category.Others, None, False


def _record(query_id: int, explanation: str, comp: Completion, model: str) -> ExplanationRecord:
    if comp.error is not None:
        return ExplanationRecord(query_id, explanation, Category.Others.value, None, model, "", comp.error)
    cat, proposed, _ = parse_classification(comp.text)
    return ExplanationRecord(query_id, explanation, cat.value, proposed, model, comp.text)


def classify_explanation(
    client: BaseClient,
    query_id: int,
    query_text: str,
    answer: str,
    explanation_text: str,
    classifier_model: str | None = None,
) -> ExplanationRecord:
    """Label one explanation.

    Unparseable output becomes Others with the raw text kept; a failed call
    is recorded on the returned record instead of raised.
    """
    comp = client.complete_batch([classification_bundle(query_id, query_text, answer, explanation_text)])[0]
    return _record(query_id, explanation_text, comp, classifier_model or _model_name(client))


def _model_name(client: BaseClient) -> str:
    ident = client.identity()
    return ident.get("model") or ident.get("name", "unknown")


def explain_run(
    stream: EdgeStream,
    config: EvalConfig,
    records: Sequence[PredictionRecord],
    explainer: BaseClient,
    classifier: BaseClient | None = None,
    first_n: int = 5000,
) -> list[ExplanationRecord]:
    """Explain and classify the first ``first_n`` predictions of an evaluation run.

    The prediction prompts are rebuilt by replaying the stream with the
    run's configuration, so they match what the model originally saw.
    """
    classifier = classifier or explainer
    model = _model_name(classifier)
    by_qid = {r.query_id: r for r in records}
    limit = min(first_n, len(records))
    replay = replace(config, max_queries=limit)
    out: list[ExplanationRecord] = []
    for _, bundles, _ in iter_bundles(stream, replay):
        todo = [b for b in bundles if b.query_id in by_qid]
        exp_bundles = [explanation_bundle(b, by_qid[b.query_id].answer) for b in todo]
        explanations = explainer.complete_batch(exp_bundles)
        cls_bundles = []
        for b, e in zip(todo, explanations):
            cls_bundles.append(classification_bundle(b.query_id, b.query, by_qid[b.query_id].answer, e.text))
        labels = classifier.complete_batch(cls_bundles)
        for b, e, lab in zip(todo, explanations, labels):
            if e.error is not None:
                out.append(ExplanationRecord(b.query_id, "", Category.Others.value, None, model, "", e.error))
            else:
                out.append(_record(b.query_id, e.text, lab, model))
    return out


@dataclass
class CategoryReport:
    counts: dict[str, int]
    fractions: dict[str, float]
    mrr: dict[str, float | None]
    overall_mrr: float
    num_classified: int
    num_unclassified: int
    proposed_categories: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "num_classified": self.num_classified,
            "num_unclassified": self.num_unclassified,
            "overall_mrr": self.overall_mrr,
            "categories": [
                {
                    "category": c.value,
                    "title": c.display_name,
                    "count": self.counts[c.value],
                    "fraction": self.fractions[c.value],
                    "mrr": self.mrr[c.value],
                }
                for c in CATEGORIES
            ],
            "proposed_categories": self.proposed_categories,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        """Composition and per-category MRR, empty categories left out."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "title", "count", "fraction", "mrr"])
        for c in CATEGORIES:
            if self.counts[c.value]:
                writer.writerow([c.value, c.display_name, self.counts[c.value], self.fractions[c.value], self.mrr[c.value]])
        return buf.getvalue()


def aggregate_report(
    prediction_records: Iterable[PredictionRecord],
    explanation_records: Iterable[ExplanationRecord],
) -> CategoryReport:
    preds = {r.query_id: r for r in prediction_records}
    rrs: dict[str, list[float]] = {c.value: [] for c in CATEGORIES}
    proposals: Counter[str] = Counter()
    unclassified = 0
    for e in explanation_records:
        if e.query_id not in preds:
            raise JoinError(f"explanation for query {e.query_id} has no prediction record")
        if e.error is not None:
            unclassified += 1
            continue
        rrs[Category(e.category).value].append(preds[e.query_id].reciprocal_rank)
        if e.proposed_new_category:
            proposals[e.proposed_new_category] += 1
    total = sum(len(v) for v in rrs.values())
    counts = {k: len(v) for k, v in rrs.items()}
    return CategoryReport(
        counts=counts,
        fractions={k: (n / total if total else 0.0) for k, n in counts.items()},
        mrr={k: (math.fsum(v) / len(v) if v else None) for k, v in rrs.items()},
        overall_mrr=math.fsum(x for v in rrs.values() for x in v) / total if total else 0.0,
        num_classified=total,
        num_unclassified=unclassified,
        proposed_categories=dict(sorted(proposals.items())),
    )


_ANSWER = re.compile(r"Your answer: .*?(\d+)")


class HeuristicExplainer(MockClient):
    """Offline explainer that justifies the answer from the listed interactions."""

    name = "mock-explain"

    def respond(self, bundle):
        src = bundle.meta.get("src", "?")
        own = query_interactions(bundle)
        m = _ANSWER.search(bundle.query)
        if not own:
            return (
                f"No past interactions are listed for node {src}, so there is not enough data; "
                "the answer is a plausible guess."
            )
        if m is None:
            return "The answer could not be tied to any listed interaction."
        ans = int(m.group(1))
        nbrs = [v for _, v, _ in own]
        if ans == nbrs[-1] and nbrs.count(ans) >= 2:
            return f"Node {src} has repeatedly interacted with {ans}, so this pattern should continue."
        if ans == nbrs[-1]:
            return f"The most recent interaction of node {src} was with {ans}."
        if ans in nbrs:
            return f"Node {ans} appears most frequently among the past interactions of node {src}."
        return f"Node {ans} has not appeared in the history of node {src}; it is likely a new node."


KEYWORD_RULES: tuple[tuple[str, Category], ...] = (
    ("not enough data", Category.LackOfData),
    ("no past interactions", Category.LackOfData),
    ("repeatedly", Category.RepeatedInteractionPattern),
    ("most frequently", Category.MostFrequentPastDestination),
    ("most recent", Category.MostRecentInteraction),
    ("new node", Category.NewNode),
    ("alternat", Category.SequenceOrAlternationLogic),
    ("similar pattern", Category.PatternContinuation),
    ("default", Category.DefaultOrMostCommonNode),
    ("candidates", Category.AmbiguousCandidates),
)

_EXPLANATION = re.compile(r"\nExplanation:\n(.*?)\n\nReply with", re.DOTALL)


class KeywordClassifier(MockClient):
    """Offline classifier: first matching keyword rule wins."""

    name = "mock-keyword"

    def respond(self, bundle):
        m = _EXPLANATION.search(bundle.query)
        text = (m.group(1) if m else "").lower()
        for needle, cat in KEYWORD_RULES:
            if needle in text:
                return f"Category: {cat.value}"
        return "Others: Unmatched Rationale - no keyword rule applies"
