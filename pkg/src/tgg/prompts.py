"""Rendering of scenarios as python-class prompts.

A scenario becomes a class whose ``stepX`` methods return event
descriptions. Demonstrations additionally implement ``get_relations`` (and,
for narrative prompting, ``get_narrative``); the query class ends with the
unimplemented stubs the model is asked to complete.
"""
from __future__ import annotations

import hashlib
import json
import re
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .graph import Event, LabelAssignment, Scenario, TemporalGraph, HALLUCINATED_PREFIX

METHODS = ("standard", "cot", "not")
INSTRUCTION_TYPES = ("news_report", "simple_english", "role_play", "simple_report")
GENRES = {
    "news_report": "news report",
    "simple_english": "story",
    "role_play": "story",
    "simple_report": "report",
}

INDENT = "    "
NARRATIVE_CUE = "# Let's think of a narrative to link aforementioned events in the correct temporal order."
COT_CUE = "# Let's think step by step."
TODO = "# TODO"
END = "# END"


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("tgg").joinpath("templates", name).read_text(encoding="utf-8")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def camel_identifier(text: str, upper_first: bool = False) -> str:
    """``"push pedal"`` -> ``"pushPedal"``."""
    words = re.findall(r"[A-Za-z0-9]+", text)
    if not words:
        return "Step" if upper_first else "step"
    head = words[0].capitalize() if upper_first else words[0].lower()
    ident = head + "".join(w.capitalize() for w in words[1:])
    if ident[0].isdigit():
        ident = ("Step" if upper_first else "step") + ident
    return ident


def descriptive_labels(events: Sequence[Event]) -> dict[str, str]:
    """Camel-cased identifiers for events, numbered on collision (``x``, ``x2``, ...)."""
    out: dict[str, str] = {}
    seen: dict[str, int] = {}
    for e in events:
        base = camel_identifier(e.description)
        k = seen.get(base, 0) + 1
        seen[base] = k
        ident = base if k == 1 else f"{base}{k}"
        while ident in out:
            k += 1
            seen[base] = k
            ident = f"{base}{k}"
        out[ident] = e.id
    return out


def alphabetical_labels(events: Sequence[Event], seed: int, scheme: str = "random") -> dict[str, str]:
    n = len(events)
    if n > 26:
        raise ValueError(f"{n} events do not fit step letters A-Z")
    if scheme == "random":
        idx = np.random.default_rng(seed).permutation(n)
    elif scheme == "dataset":
        idx = np.arange(n)
    else:
        raise ValueError(f"unknown label scheme {scheme!r}")
    return {f"step{string.ascii_uppercase[k]}": events[int(i)].id for k, i in enumerate(idx)}


def assign_labels(
    scenario: Scenario, seed: int, input_format: str = "alphabetical", scheme: str = "random"
) -> LabelAssignment:
    """Bind method names to the scenario's events.

    ``scheme="random"`` draws the letter permutation from ``seed``;
    ``scheme="dataset"`` assigns A, B, ... in dataset order.
    """
    if input_format == "alphabetical":
        labels = alphabetical_labels(scenario.events, seed, scheme)
        aliases = descriptive_labels(scenario.events)
    elif input_format == "descriptive":
        labels = descriptive_labels(scenario.events)
        aliases = alphabetical_labels(scenario.events, seed, scheme) if len(scenario.events) <= 26 else {}
    else:
        raise ValueError(f"unknown input format {input_format!r}")
    return LabelAssignment(labels, input_format, aliases)


def shuffled_orders(scenario: Scenario, seed: int, count: int) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    ids = scenario.event_ids
    return [[ids[int(i)] for i in rng.permutation(len(ids))] for _ in range(count)]


def py_string(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def class_name(title: str) -> str:
    return camel_identifier(title, upper_first=True)


def relation_lines(edges: Sequence[tuple[str, str]], assignment: LabelAssignment) -> list[str]:
    inv = assignment.inverse()

    def label(n: str) -> str:
        return n[len(HALLUCINATED_PREFIX):] if n.startswith(HALLUCINATED_PREFIX) else inv[n]

    return [f"{label(a)} -> {label(b)}" for a, b in edges]


def render_class(
    scenario: Scenario,
    assignment: LabelAssignment,
    presentation_order: Sequence[str],
    *,
    relations: bool = False,
    narrative: str | None = None,
    tail: str = "",
) -> str:
    """Render one scenario as a python class.

    ``relations`` implements ``get_relations`` with the gold edges,
    ``narrative`` implements ``get_narrative``; ``tail`` is appended verbatim
    (the query stubs).
    """
    if sorted(presentation_order) != sorted(scenario.event_ids):
        raise ValueError("presentation order must permute the scenario's events")
    inv = assignment.inverse()
    lines = [
        f"class {class_name(scenario.title)}:",
        "",
        f"{INDENT}title = {py_string(scenario.title)}",
        f"{INDENT}steps = {len(scenario.events)}",
        "",
    ]
    for eid in presentation_order:
        lines += [
            f"{INDENT}def {inv[eid]}(self):",
            f"{INDENT * 2}return {py_string(scenario.description_of(eid))}",
            "",
        ]
    if narrative is not None:
        lines += [
            f"{INDENT}{NARRATIVE_CUE}",
            f"{INDENT}def get_narrative(self):",
            f"{INDENT * 2}return {py_string(narrative)}",
            "",
        ]
    if relations:
        lines += [f"{INDENT}def get_relations(self):", f"{INDENT * 2}return ["]
        lines += [f"{INDENT * 3}{py_string(r)}," for r in relation_lines(scenario.gold_edges, assignment)]
        lines += [f"{INDENT * 2}]", ""]
    text = "\n".join(lines).rstrip("\n") + "\n"
    if tail:
        text += "\n" + tail
    return text


def query_tail(method: str) -> str:
    relations_stub = [f"{INDENT}def get_relations(self):", f"{INDENT * 2}{TODO}", f"{INDENT * 2}{END}"]
    if method == "standard":
        return "\n".join(relations_stub)
    if method == "cot":
        return "\n".join([f"{INDENT}{COT_CUE}", *relations_stub])
    if method == "not":
        return "\n".join(
            [
                f"{INDENT}{NARRATIVE_CUE}",
                f"{INDENT}def get_narrative(self):",
                f"{INDENT * 2}{TODO}",
                "",
                *relations_stub,
            ]
        )
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class Demonstration:
    scenario: Scenario
    reference_narrative: str | None = None
    meta: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MetaPromptSpec:
    instruction_type: str = "simple_report"
    input_format: str = "alphabetical"

    def __post_init__(self):
        if self.instruction_type not in INSTRUCTION_TYPES:
            raise ValueError(f"unknown instruction type {self.instruction_type!r}")
        if self.input_format not in ("alphabetical", "descriptive"):
            raise ValueError(f"unknown input format {self.input_format!r}")


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[tuple[str, str], ...]
    method: str
    shots: int
    input_format: str
    assignment: LabelAssignment
    shuffle_seed: int = 0
    presentation_order: tuple[str, ...] = ()
    scenario_id: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a prompt bundle needs at least one message")

    def chat_messages(self) -> list[dict]:
        return [{"role": role, "content": text} for role, text in self.messages]


def demo_layout(scenario: Scenario, input_format: str = "alphabetical") -> tuple[LabelAssignment, list[str]]:
    """Fixed labels and method order for a demonstration (seeded by its id)."""
    seed = derive_seed("demo", scenario.id)
    assignment = assign_labels(scenario, derive_seed(seed, "labels"), input_format)
    order = shuffled_orders(scenario, derive_seed(seed, "order"), 1)[0]
    return assignment, order


def build_prompt(
    method: str,
    demos: Sequence[Demonstration],
    query: Scenario,
    assignment: LabelAssignment,
    presentation_order: Sequence[str],
    shots: int,
    *,
    with_reference: bool = True,
    shuffle_seed: int = 0,
) -> PromptBundle:
    """Few-shot prompt: ``shots`` demonstrations in bank order, then the query."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if shots > len(demos):
        raise ValueError(f"{shots} shots requested but only {len(demos)} demonstrations given")
    blocks = []
    for demo in demos[:shots]:
        narrative = None
        if method == "not" and with_reference:
            if not demo.reference_narrative:
                raise ValueError(f"demonstration {demo.scenario.id!r} has no reference narrative")
            narrative = demo.reference_narrative
        d_assign, d_order = demo_layout(demo.scenario, assignment.input_format)
        blocks.append(render_class(demo.scenario, d_assign, d_order, relations=True, narrative=narrative))
    blocks.append(render_class(query, assignment, presentation_order, tail=query_tail(method)))
    preamble = load_template("preamble_not.txt" if method == "not" else "preamble_standard.txt")
    return PromptBundle(
        messages=(("system", preamble.rstrip("\n")), ("user", "\n\n".join(blocks))),
        method=method,
        shots=shots,
        input_format=assignment.input_format,
        assignment=assignment,
        shuffle_seed=shuffle_seed,
        presentation_order=tuple(presentation_order),
        scenario_id=query.id,
    )


def build_meta_prompt(demo: Scenario, spec: MetaPromptSpec) -> PromptBundle:
    """Prompt asking a generator model for a reference narrative of ``demo``."""
    if not demo.gold_edges:
        raise ValueError(f"demonstration {demo.id!r} has no gold edges")
    assignment, order = demo_layout(demo, spec.input_format)
    instruction = load_template(f"meta_{spec.instruction_type}.txt")
    suffix = load_template("meta_suffix.txt").replace("[GENRE]", GENRES[spec.instruction_type])
    text = instruction + "\n" + render_class(demo, assignment, order, relations=True) + "\n" + suffix
    return PromptBundle(
        messages=(("user", text.rstrip("\n")),),
        method="meta",
        shots=0,
        input_format=spec.input_format,
        assignment=assignment,
        presentation_order=tuple(order),
        scenario_id=demo.id,
    )


_JUDGE_SLOTS = re.compile(r"\[(SCENARIO|EVENTS|NARRATIVE|TEMPORAL GRAPH)\]")


def serialize_graph(scenario: Scenario, graph: TemporalGraph) -> str:
    position = {eid: i for i, eid in enumerate(scenario.event_ids)}

    def name(n: str) -> str:
        if n.startswith(HALLUCINATED_PREFIX):
            return n[len(HALLUCINATED_PREFIX):]
        return scenario.description_of(n)

    edges = sorted(graph.edges, key=lambda e: (position.get(e[0], len(position)), position.get(e[1], len(position)), e))
    return "[" + ", ".join(f"({name(a)} -> {name(b)})" for a, b in edges) + "]"


def build_judge_prompt(scenario: Scenario, narrative: str, graph: TemporalGraph) -> PromptBundle:
    if not narrative or not narrative.strip():
        raise ValueError("judge prompt needs a non-empty narrative")
    values = {
        "SCENARIO": scenario.title,
        "EVENTS": json.dumps([e.description for e in scenario.events], ensure_ascii=False),
        "NARRATIVE": narrative,
        "TEMPORAL GRAPH": serialize_graph(scenario, graph),
    }
    # single pass, so placeholder-like text inside the narrative stays literal
    text = _JUDGE_SLOTS.sub(lambda m: values[m.group(1)], load_template("judge.txt"))
    return PromptBundle(
        messages=(("user", text.rstrip("\n")),),
        method="judge",
        shots=0,
        input_format="descriptive",
        assignment=LabelAssignment({}, "descriptive"),
        scenario_id=scenario.id,
    )
