import random

import pytest
from hypothesis import given, strategies as st

from tgg.graph import Event, Scenario, TemporalGraph, linear_chain
from tgg.metrics import (
    REPORT_COLUMNS,
    GEDMemo,
    ReportRow,
    ScoreCard,
    aggregate,
    jaccard,
    pairwise_consistency,
    precision_recall_f1,
    read_cards,
    report_csv,
    report_markdown,
    score_prediction,
    write_cards,
)

from conftest import chain_scenario


def g(edges, nodes="ABCD", valid=True):
    return TemporalGraph(frozenset(nodes), frozenset(edges), valid)


def test_prf_examples():
    gold = {("A", "B"), ("B", "C")}
    assert precision_recall_f1(gold, gold) == (1.0, 1.0, 1.0)
    assert precision_recall_f1(gold, {("A", "B"), ("C", "B")}) == (0.5, 0.5, 0.5)
    assert precision_recall_f1(gold, set()) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        precision_recall_f1(set(), gold)


def test_ged_example_from_hand_enumeration():
    s = Scenario("s", "t", [Event(x, x.lower()) for x in "ABC"], [("A", "B"), ("B", "C")])
    card = score_prediction(s, TemporalGraph(frozenset("ABC"), frozenset({("A", "B"), ("A", "C")})))
    assert card.ged == 2 and card.ged_exact


def test_consistency_examples():
    a = g({("A", "B"), ("B", "C")})
    assert pairwise_consistency([a, a, a]) == 1.0
    assert jaccard({("A", "B"), ("B", "C")}, {("A", "B")}) == 0.5
    assert jaccard({("A", "B")}, set()) == 0.0
    assert jaccard(set(), set()) == 0.0
    with pytest.raises(ValueError):
        pairwise_consistency([a])


edge_sets = st.sets(st.tuples(st.sampled_from("ABCDE"), st.sampled_from("ABCDE")).filter(lambda e: e[0] != e[1]), max_size=8)


@given(edge_sets.filter(bool), edge_sets)
def test_f1_bounds(gold, pred):
    p, r, f1 = precision_recall_f1(gold, pred)
    assert 0 <= f1 <= 1
    assert (f1 == 1) == (gold == pred)
    if p + r:
        assert f1 == pytest.approx(2 * p * r / (p + r))


@given(st.lists(edge_sets, min_size=2, max_size=5), st.randoms())
def test_consistency_is_permutation_invariant(sets, rnd):
    graphs = [g(s, "ABCDE") for s in sets]
    shuffled = graphs[:]
    rnd.shuffle(shuffled)
    assert pairwise_consistency(graphs) == pytest.approx(pairwise_consistency(shuffled))


def test_invalid_prediction_card():
    s = chain_scenario("c", 5)
    card = score_prediction(s, TemporalGraph(frozenset(s.event_ids), frozenset(), valid=False))
    assert (card.precision, card.recall, card.f1, card.edge_ratio, card.components) == (0, 0, 0, 0, 0)
    assert card.ged == 5 + 4
    assert not card.validity


def test_memo_returns_same_values_as_direct_search():
    rng = random.Random(5)
    s = chain_scenario("c", 7)
    memo = GEDMemo()
    for _ in range(30):
        order = s.event_ids[:]
        rng.shuffle(order)
        extra = [(order[0], order[3])] if rng.random() < 0.5 else []
        pred = TemporalGraph(frozenset(order), linear_chain(order).edges | frozenset(extra))
        assert score_prediction(s, pred, memo=memo) == score_prediction(s, pred)


def test_cards_round_trip(tmp_path):
    s = chain_scenario("c", 4)
    cards = [score_prediction(s, linear_chain(s.event_ids[::-1]), k) for k in range(3)]
    write_cards(cards, tmp_path / "cards.jsonl")
    assert read_cards(tmp_path / "cards.jsonl") == cards


def perfect_cards(sid, shuffles=3):
    return [ScoreCard(sid, k, 1.0, 1.0, 1.0, 0.0, True, 1.0, 1, True) for k in range(shuffles)]


def test_aggregate_perfect():
    s = chain_scenario("c", 3)
    gold = s.gold_graph()
    row = aggregate(perfect_cards("c"), {"c": [gold] * 3}, "toy", "oracle")
    assert row.cells() == ["100.0", "100.0", "100.0", "0.00", "1.00", "1.00", "100.0"]


def test_aggregate_rejects_missing_shuffles():
    with pytest.raises(ValueError, match="b"):
        aggregate(perfect_cards("a") + perfect_cards("b", 2), {"a": [], "b": []})


def test_consistency_modes():
    x, y = g({("A", "B")}), g({("B", "C")})
    cards = perfect_cards("p", 2) + perfect_cards("q", 2)
    preds = {"p": [x, x], "q": [x, y]}
    per = aggregate(cards, preds, shuffles=2)
    pooled = aggregate(cards, preds, shuffles=2, consistency_mode="pooled")
    assert per.consistency == pytest.approx(50.0)
    assert pooled.consistency == pytest.approx(50.0)
    preds3 = {"p": [x, x, x], "q": [x, y, y]}
    cards3 = perfect_cards("p") + perfect_cards("q")
    assert aggregate(cards3, preds3).consistency == pytest.approx(100 * (1 + 1 / 3) / 2)


def test_invalid_components_switch():
    cards = [ScoreCard("a", k, 0, 0, 0, 3.0, True, 0, 0, False) for k in range(2)]
    cards += [ScoreCard("a", 2, 1, 1, 1, 0.0, True, 1, 1, True)]
    preds = {"a": [g(set()), g(set()), g({("A", "B")})]}
    assert aggregate(cards, preds).components == pytest.approx(1 / 3)
    assert aggregate(cards, preds, invalid_components="exclude").components == 1.0


def test_report_formats():
    row = ReportRow("schema11", "random", 19.44, 20.0, 19.4, 3.914, 0.963, 1.0, 12.34)
    md = report_markdown([row])
    assert md.splitlines()[0] == "| Dataset | Method | " + " | ".join(REPORT_COLUMNS) + " |"
    assert "| schema11 | random | 19.4 | 20.0 | 19.4 | 3.91 | 0.96 | 1.00 | 12.3 |" in md
    csv_text = report_csv([row])
    assert csv_text.splitlines()[1] == "schema11,random,19.4,20.0,19.4,3.91,0.96,1.00,12.3"
