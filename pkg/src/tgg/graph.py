"""Scenario and temporal-graph types plus the small graph analyses used by scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx

HALLUCINATED_PREFIX = "hallucinated:"

DOMAINS = ("daily", "news")
SPLITS = ("train", "eval")
INPUT_FORMATS = ("alphabetical", "descriptive")


@dataclass(frozen=True)
class Event:
    id: str
    description: str

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise ValueError(f"event {self.id!r} has an empty description")


@dataclass(frozen=True)
class Scenario:
    """A goal, its events in dataset order and the gold BEFORE edges between them."""

    id: str
    title: str
    events: tuple[Event, ...]
    gold_edges: tuple[tuple[str, str], ...]
    domain: str = "daily"
    split: str = "eval"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(
            self, "gold_edges", tuple(dict.fromkeys((str(a), str(b)) for a, b in self.gold_edges))
        )
        ids = [e.id for e in self.events]
        if len(set(ids)) != len(ids):
            raise ValueError(f"scenario {self.id!r}: duplicate event ids")
        known = set(ids)
        for a, b in self.gold_edges:
            if a not in known or b not in known:
                raise ValueError(f"scenario {self.id!r}: edge ({a}, {b}) references an unknown event")
        if self.domain not in DOMAINS:
            raise ValueError(f"scenario {self.id!r}: unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ValueError(f"scenario {self.id!r}: unknown split {self.split!r}")

    @property
    def event_ids(self) -> list[str]:
        return [e.id for e in self.events]

    def description_of(self, event_id: str) -> str:
        for e in self.events:
            if e.id == event_id:
                return e.description
        raise KeyError(event_id)

    def gold_graph(self) -> "TemporalGraph":
        return TemporalGraph(frozenset(self.event_ids), frozenset(self.gold_edges))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "events": [{"id": e.id, "description": e.description} for e in self.events],
            "edges": [[a, b] for a, b in self.gold_edges],
            "domain": self.domain,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(
            id=str(d["id"]),
            title=d["title"],
            events=tuple(Event(str(e["id"]), e["description"]) for e in d["events"]),
            gold_edges=tuple((str(a), str(b)) for a, b in d["edges"]),
            domain=d.get("domain", "daily"),
            split=d.get("split", "eval"),
        )


@dataclass(frozen=True)
class TemporalGraph:
    """Directed graph over event ids.

    ``valid`` is False when the completion it came from yielded no relations;
    ``self_loops`` keeps loops out of ``edges`` but on record.
    """

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    valid: bool = True
    self_loops: frozenset[str] = frozenset()

    def __post_init__(self):
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a}, {b}) references a node outside the graph")
            if a == b:
                raise ValueError("self-loops belong in self_loops, not edges")

    @property
    def hallucinated(self) -> frozenset[str]:
        return frozenset(n for n in self.nodes if n.startswith(HALLUCINATED_PREFIX))

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(sorted(self.nodes))
        g.add_edges_from(sorted(self.edges))
        return g


@dataclass(frozen=True)
class LabelAssignment:
    """Binding between prompt-side method names and event ids.

    ``labels`` is the primary table for ``input_format``; ``aliases`` holds the
    other format's identifiers so a completion that drifts between formats can
    still be mapped.
    """

    labels: Mapping[str, str]
    input_format: str = "alphabetical"
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.input_format not in INPUT_FORMATS:
            raise ValueError(f"unknown input format {self.input_format!r}")
        targets = list(self.labels.values())
        if len(set(targets)) != len(targets):
            raise ValueError("label assignment is not injective")

    def label_of(self, event_id: str) -> str:
        for label, eid in self.labels.items():
            if eid == event_id:
                return label
        raise KeyError(event_id)

    def inverse(self) -> dict[str, str]:
        return {eid: label for label, eid in self.labels.items()}

    def resolve(self, label: str) -> str | None:
        if label in self.labels:
            return self.labels[label]
        return self.aliases.get(label)

    def to_dict(self) -> dict:
        return {"input_format": self.input_format, "labels": dict(self.labels), "aliases": dict(self.aliases)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelAssignment":
        return cls(dict(d["labels"]), d.get("input_format", "alphabetical"), dict(d.get("aliases", {})))


def canonicalize(
    raw_relations: Iterable[tuple[str, str]],
    assignment: LabelAssignment,
    all_events: Sequence[str],
) -> TemporalGraph:
    """Map parsed ``(label, label)`` pairs onto event ids.

    Unknown labels become ``hallucinated:<label>`` nodes; duplicates collapse;
    self-loops are moved to ``self_loops``. An empty relation list yields an
    edgeless graph over all events with ``valid=False``.
    """
    raw_relations = list(raw_relations)
    nodes = set(all_events)
    edges: dict[tuple[str, str], None] = {}
    loops: set[str] = set()

    def node_for(label: str) -> str:
        eid = assignment.resolve(label)
        if eid is None:
            eid = HALLUCINATED_PREFIX + label
        nodes.add(eid)
        return eid

    for a, b in raw_relations:
        src, dst = node_for(a), node_for(b)
        if src == dst:
            loops.add(src)
        else:
            edges[(src, dst)] = None
    return TemporalGraph(frozenset(nodes), frozenset(edges), bool(raw_relations), frozenset(loops))


def relations_of(g: TemporalGraph, assignment: LabelAssignment) -> list[tuple[str, str]]:
    """Inverse of :func:`canonicalize` for the edges of ``g`` (sorted)."""
    inv = assignment.inverse()

    def label(n: str) -> str:
        if n.startswith(HALLUCINATED_PREFIX):
            return n[len(HALLUCINATED_PREFIX):]
        return inv[n]

    return sorted((label(a), label(b)) for a, b in g.edges)


def weak_components(g: TemporalGraph) -> int:
    if not g.valid:
        return 0
    return nx.number_weakly_connected_components(g.to_networkx()) if g.nodes else 0


def is_acyclic(g: TemporalGraph) -> bool:
    return nx.is_directed_acyclic_graph(g.to_networkx())


def linear_chain(order: Sequence[str]) -> TemporalGraph:
    if not order:
        raise ValueError("linear_chain needs at least one event")
    edges = frozenset(zip(order[:-1], order[1:]))
    return TemporalGraph(frozenset(order), edges)


def has_branch(edges: Iterable[tuple[str, str]]) -> bool:
    """True when some node has more than one predecessor or successor."""
    outs: dict[str, int] = {}
    ins: dict[str, int] = {}
    for a, b in edges:
        outs[a] = outs.get(a, 0) + 1
        ins[b] = ins.get(b, 0) + 1
    return any(v > 1 for v in outs.values()) or any(v > 1 for v in ins.values())
