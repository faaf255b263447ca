import json
import math
import random
from collections import defaultdict
from pathlib import Path

import pytest

from tgprompt.client import Completion, ScriptedMock
from tgprompt.evaluate import EvalConfig, PredictionRecord, run_eval
from tgprompt.client import RecencyMock
from tgprompt.explain import (
    CATEGORIES,
    KEYWORD_RULES,
    Category,
    ExplanationRecord,
    HeuristicExplainer,
    JoinError,
    KeywordClassifier,
    aggregate_report,
    build_explanation_prompt,
    classification_prompt,
    classify_explanation,
    explain_run,
    explanation_bundle,
    parse_classification,
)
from tgprompt.prompts import SYSTEM_PROMPT, PromptConfig, assemble, build_background, build_examples, encode_query

from conftest import random_stream, table_toy

GOLDEN = Path(__file__).parent / "golden"


def table_bundle(config=PromptConfig()):
    stream, index = table_toy()
    bg = build_background(stream, 150, config.background_size and 4)
    ex = build_examples(stream, index, 151, 1, 2)
    q = encode_query(index, 1, 217, 2, cutoff=150)
    return assemble(config, SYSTEM_PROMPT, bg, ex, q, query_id=0)


def pred(qid, rr):
    return PredictionRecord(qid, 0, 1, qid, [], "exact", [], 0, rr, "mock")


def expl(qid, cat, error=None):
    proposed = "Something New" if cat == "Others" else None
    return ExplanationRecord(qid, "because", cat, proposed, "mock", "", error)


def test_ten_categories_with_descriptions():
    assert len(CATEGORIES) == 10
    assert [c.value for c in CATEGORIES][-1] == "Others"
    assert all(c.description and c.display_name for c in CATEGORIES)
    assert Category.LackOfData.display_name == "Lack of Data"


def test_proposed_name_only_for_others():
    ExplanationRecord(0, "x", "Others", "New Idea")
    with pytest.raises(ValueError):
        ExplanationRecord(0, "x", "NewNode", "New Idea")


def test_explanation_prompt_contains_query_and_answer():
    b = table_bundle()
    text = build_explanation_prompt(b, Completion(0, "`Destination Node' is 8228."))
    assert b.query in text and "8228" in text
    assert text.startswith(SYSTEM_PROMPT)


def test_explanation_prompt_golden():
    b = table_bundle()
    assert build_explanation_prompt(b, "`Destination Node' is 8228.") == (GOLDEN / "explanation_prompt.txt").read_text()


def test_explanation_prompt_follows_background_ablation():
    full = build_explanation_prompt(table_bundle(), "8228")
    ablated = build_explanation_prompt(table_bundle(PromptConfig(include_background=False)), "8228")
    assert "(2,8229,131)" in full
    assert "(2,8229,131)" not in ablated
    assert "8228" in ablated


def test_classification_prompt_lists_every_label():
    text = classification_prompt("q?", "8228", "because")
    for c in CATEGORIES:
        assert c.value in text and c.description in text
    assert "Others: <Proposed Category Name>" in text


@pytest.mark.parametrize(
    "reply, cat, proposed",
    [
        ("LackOfData", Category.LackOfData, None),
        ("Category: MostRecentInteraction", Category.MostRecentInteraction, None),
        ("**Most Frequent Past Destination**", Category.MostFrequentPastDestination, None),
        (
            "Others: Analogy-Based Inference from Similar Node - borrows a neighbour's partner",
            Category.Others,
            "Analogy-Based Inference from Similar Node",
        ),
        ("Others: Analogy-Based Inference from Similar Node", Category.Others, "Analogy-Based Inference from Similar Node"),
    ],
)
def test_parse_classification(reply, cat, proposed):
    assert parse_classification(reply) == (cat, proposed, True)


def test_unparseable_classification_is_others_with_raw_text():
    rec = classify_explanation(ScriptedMock({3: "no idea, sorry"}), 3, "q", "a", "because")
    assert rec.category == "Others" and rec.proposed_new_category is None
    assert rec.raw_classification == "no idea, sorry"


def test_scripted_classifier_records():
    client = ScriptedMock({0: "LackOfData", 1: "Others: Analogy-Based Inference from Similar Node"})
    a = classify_explanation(client, 0, "q", "a", "there is little data", classifier_model="m")
    b = classify_explanation(client, 1, "q", "a", "like its neighbour", classifier_model="m")
    assert (a.category, a.proposed_new_category, a.classifier_model) == ("LackOfData", None, "m")
    assert (b.category, b.proposed_new_category) == ("Others", "Analogy-Based Inference from Similar Node")


def test_classifier_transport_error_kept_per_record():
    rec = classify_explanation(ScriptedMock({}), 9, "q", "a", "because")
    assert rec.error is not None and "9" in rec.error


def keyword_oracle(text):
    low = text.lower()
    for needle, cat in KEYWORD_RULES:
        if needle in low:
            return cat
    return Category.Others


def test_keyword_classifier_matches_oracle():
    rng = random.Random(7)
    phrases = [n for n, _ in KEYWORD_RULES] + ["nothing relevant", "a hunch"]
    clf = KeywordClassifier()
    for i in range(50):
        words = rng.sample(phrases, rng.randrange(1, 3))
        text = f"Node {i}: " + " and ".join(w.upper() if rng.random() < 0.3 else w for w in words) + "."
        rec = classify_explanation(clf, i, "q", "a", text)
        assert Category(rec.category) is keyword_oracle(text)
        if rec.category == "Others":
            assert rec.proposed_new_category == "Unmatched Rationale"


def test_report_single_category():
    preds = [pred(i, rr) for i, rr in enumerate([1.0, 0.5, 0.0, 0.25])]
    rep = aggregate_report(preds, [expl(i, "NewNode") for i in range(4)])
    assert rep.fractions["NewNode"] == 1.0
    assert rep.mrr["NewNode"] == rep.overall_mrr == pytest.approx(0.4375)


def test_report_two_categories():
    preds = [pred(0, 1.0), pred(1, 0.5), pred(2, 0.0)]
    exps = [expl(0, "MostRecentInteraction"), expl(1, "MostRecentInteraction"), expl(2, "LackOfData")]
    rep = aggregate_report(preds, exps)
    assert rep.mrr["MostRecentInteraction"] == 0.75
    assert rep.mrr["LackOfData"] == 0.0
    assert rep.mrr["NewNode"] is None and rep.counts["NewNode"] == 0


def random_records(seed, n=500):
    rng = random.Random(seed)
    preds, exps = [], []
    for i in range(n):
        preds.append(pred(i, rng.choice([0.0, 1.0, 0.5, 1 / 3, 0.25, 0.1])))
        cat = rng.choice(CATEGORIES[:-1] + (Category.Others,) * 2).value
        exps.append(expl(i, cat, "boom" if rng.random() < 0.03 else None))
    return preds, exps


def test_report_matches_groupby():
    preds, exps = random_records(0)
    groups = defaultdict(list)
    for e in exps:
        if e.error is None:
            groups[e.category].append(preds[e.query_id].reciprocal_rank)
    total = sum(map(len, groups.values()))
    rep = aggregate_report(preds, exps)
    assert rep.num_classified == total and rep.num_unclassified == 500 - total
    for c in CATEGORIES:
        vals = groups.get(c.value, [])
        assert rep.counts[c.value] == len(vals)
        assert rep.fractions[c.value] == pytest.approx(len(vals) / total, abs=1e-12)
        assert rep.mrr[c.value] == (pytest.approx(sum(vals) / len(vals), abs=1e-12) if vals else None)
    assert math.fsum(rep.fractions.values()) == pytest.approx(1.0, abs=1e-9)
    recomposed = math.fsum(rep.counts[k] * (rep.mrr[k] or 0.0) for k in rep.counts) / total
    assert recomposed == pytest.approx(rep.overall_mrr, abs=1e-9)
    assert rep.proposed_categories == {"Something New": sum(1 for e in exps if e.category == "Others" and e.error is None)}


def test_report_stable_under_reordering():
    preds, exps = random_records(1)
    a = aggregate_report(preds, exps)
    rng = random.Random(2)
    rng.shuffle(preds)
    rng.shuffle(exps)
    assert aggregate_report(preds, exps).to_json() == a.to_json()


def test_report_join_error():
    with pytest.raises(JoinError):
        aggregate_report([pred(0, 1.0)], [expl(1, "NewNode")])


def test_report_csv_omits_empty_and_json_keeps_them():
    rep = aggregate_report([pred(0, 1.0)], [expl(0, "NewNode")])
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "category,title,count,fraction,mrr"
    assert len(rows) == 2 and rows[1].startswith("NewNode,")
    cats = {c["category"]: c for c in json.loads(rep.to_json())["categories"]}
    assert len(cats) == 10 and cats["LackOfData"]["count"] == 0 and cats["LackOfData"]["mrr"] is None


def test_explain_run_end_to_end():
    s = random_stream(3, n_edges=400, n_nodes=25)
    cfg = EvalConfig(prompt=PromptConfig(background_size=20, batch_size=30), num_negatives=8)
    res = run_eval(s, cfg, RecencyMock())
    exps = explain_run(s, cfg, res.records, HeuristicExplainer(), KeywordClassifier(), first_n=45)
    assert [e.query_id for e in exps] == list(range(45))
    for e in exps:
        assert Category(e.category) is keyword_oracle(e.explanation_text)
        assert e.classifier_model == "mock-keyword"
    # recency answers are explained as recency or repetition
    assert {e.category for e in exps} <= {"MostRecentInteraction", "RepeatedInteractionPattern", "LackOfData", "NewNode", "MostFrequentPastDestination"}
    every = explain_run(s, cfg, res.records, HeuristicExplainer(), KeywordClassifier(), first_n=10**6)
    assert len(every) == len(res.records)
    rep = aggregate_report(res.records, every)
    assert rep.overall_mrr == pytest.approx(res.mrr, abs=1e-12)


def test_explanation_bundle_keeps_blocks():
    b = table_bundle()
    e = explanation_bundle(b, "8228")
    assert (e.system, e.background, e.examples) == (b.system, b.background, b.examples)
    assert e.query.startswith(b.query) and e.meta["answer"] == "8228"
