"""Semantic and structural scores for predicted temporal graphs, and their aggregation."""
from __future__ import annotations

import csv
import io
import itertools
import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .ged import DEFAULT_BUDGET, GEDResult, graph_edit_distance
from .graph import Scenario, TemporalGraph, weak_components

REPORT_COLUMNS = ("P", "R", "F1", "GED", "|E'|/|E|", "k(G)", "Cons.")


def precision_recall_f1(gold: Iterable, pred: Iterable) -> tuple[float, float, float]:
    gold, pred = set(gold), set(pred)
    if not gold:
        raise ValueError("gold edge set is empty")
    hit = len(gold & pred)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def jaccard(x: Iterable, y: Iterable) -> float:
    x, y = set(x), set(y)
    union = x | y
    # two empty predictions do not count as agreement
    return len(x & y) / len(union) if union else 0.0


def pairwise_consistency(preds: Sequence[TemporalGraph]) -> float:
    """Mean Jaccard overlap of edge sets over all unordered pairs."""
    if len(preds) < 2:
        raise ValueError("pairwise consistency needs at least two graphs")
    pairs = list(itertools.combinations(preds, 2))
    return sum(jaccard(g.edges, h.edges) for g, h in pairs) / len(pairs)


class GEDMemo:
    """Reuses GED values for predictions isomorphic to ones already scored.

    Keys are (gold graph, WL hash of the prediction); a hit is only taken
    after an exact isomorphism check, so values are never approximated.
    """

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    def __call__(self, gold: TemporalGraph, pred: TemporalGraph, budget: float | None) -> GEDResult:
        if not pred.valid:
            return graph_edit_distance(gold, pred, budget)
        h = pred.to_networkx()
        key = (gold.nodes, gold.edges, len(pred.nodes), nx.weisfeiler_lehman_graph_hash(h))
        with self._lock:
            bucket = list(self._store.get(key, ()))
        for seen, result in bucket:
            if nx.is_isomorphic(seen, h):
                return result
        result = graph_edit_distance(gold, pred, budget)
        if result.exact:
            with self._lock:
                self._store.setdefault(key, []).append((h, result))
        return result


@dataclass(frozen=True)
class ScoreCard:
    scenario_id: str
    shuffle: int
    precision: float
    recall: float
    f1: float
    ged: float
    ged_exact: bool
    edge_ratio: float
    components: int
    validity: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "ScoreCard":
        return cls(**json.loads(line))


def score_prediction(
    scenario: Scenario,
    pred: TemporalGraph,
    shuffle: int = 0,
    budget: float | None = DEFAULT_BUDGET,
    memo: GEDMemo | None = None,
) -> ScoreCard:
    gold = scenario.gold_graph()
    ged = memo(gold, pred, budget) if memo is not None else graph_edit_distance(gold, pred, budget)
    if pred.valid:
        p, r, f1 = precision_recall_f1(gold.edges, pred.edges)
        ratio = len(pred.edges) / len(gold.edges)
    else:
        p = r = f1 = ratio = 0.0
    return ScoreCard(
        scenario_id=scenario.id,
        shuffle=shuffle,
        precision=p,
        recall=r,
        f1=f1,
        ged=float(ged.value),
        ged_exact=ged.exact,
        edge_ratio=ratio,
        components=weak_components(pred),
        validity=pred.valid,
    )


def write_cards(cards: Iterable[ScoreCard], path: Path) -> None:
    with open(path, "w") as f:
        for card in cards:
            f.write(card.to_json() + "\n")


def read_cards(path: Path) -> list[ScoreCard]:
    with open(path) as f:
        return [ScoreCard.from_json(line) for line in f if line.strip()]


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    method: str
    precision: float  # percent
    recall: float
    f1: float
    ged: float
    edge_ratio: float
    components: float
    consistency: float  # percent

    def cells(self) -> list[str]:
        return [
            f"{self.precision:.1f}",
            f"{self.recall:.1f}",
            f"{self.f1:.1f}",
            f"{self.ged:.2f}",
            f"{self.edge_ratio:.2f}",
            f"{self.components:.2f}",
            f"{self.consistency:.1f}",
        ]


def aggregate(
    cards: Sequence[ScoreCard],
    preds: Mapping[str, Sequence[TemporalGraph]],
    dataset: str = "",
    method: str = "",
    shuffles: int = 3,
    consistency_mode: str = "per_scenario",
    invalid_components: str = "zero",
) -> ReportRow:
    """Macro-average cards into one report row.

    ``consistency_mode`` is ``per_scenario`` (mean of per-scenario means) or
    ``pooled`` (mean over all pairs). ``invalid_components`` decides whether
    a failed generation enters the k(G) mean as 0 (``zero``) or is left out
    (``exclude``).
    """
    if not cards:
        raise ValueError("no score cards to aggregate")
    counts: dict[str, int] = {}
    for c in cards:
        counts[c.scenario_id] = counts.get(c.scenario_id, 0) + 1
    short = sorted(sid for sid, k in counts.items() if k != shuffles)
    if short:
        raise ValueError(f"scenarios without exactly {shuffles} shuffles: {', '.join(short)}")
    missing = sorted(set(counts) - set(preds))
    if missing:
        raise ValueError(f"no predictions for scenarios: {', '.join(missing)}")

    def mean(xs) -> float:
        xs = list(xs)
        return float(np.mean(xs)) if xs else 0.0

    if invalid_components == "zero":
        k = mean(c.components for c in cards)
    elif invalid_components == "exclude":
        k = mean(c.components for c in cards if c.validity)
    else:
        raise ValueError(f"unknown invalid_components mode {invalid_components!r}")

    sids = list(dict.fromkeys(c.scenario_id for c in cards))
    if consistency_mode == "per_scenario":
        cons = mean(pairwise_consistency(preds[s]) for s in sids)
    elif consistency_mode == "pooled":
        pairs = [p for s in sids for p in itertools.combinations(preds[s], 2)]
        cons = mean(jaccard(g.edges, h.edges) for g, h in pairs)
    else:
        raise ValueError(f"unknown consistency mode {consistency_mode!r}")

    return ReportRow(
        dataset=dataset,
        method=method,
        precision=100 * mean(c.precision for c in cards),
        recall=100 * mean(c.recall for c in cards),
        f1=100 * mean(c.f1 for c in cards),
        ged=mean(c.ged for c in cards),
        edge_ratio=mean(c.edge_ratio for c in cards),
        components=k,
        consistency=100 * cons,
    )


def report_markdown(rows: Sequence[ReportRow]) -> str:
    header = ["Dataset", "Method", *REPORT_COLUMNS]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * 2 + ["---:"] * len(REPORT_COLUMNS)) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join([row.dataset, row.method, *row.cells()]) + " |")
    return "\n".join(lines) + "\n"


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "method", *REPORT_COLUMNS])
    for row in rows:
        w.writerow([row.dataset, row.method, *row.cells()])
    return buf.getvalue()
