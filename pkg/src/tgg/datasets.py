"""Corpus converters, normalized scenario files, manifests and the demonstration bank.

Every corpus is normalized to one JSON object per line::

    {"id", "title", "events": [{"id", "description"}], "edges": [[src, dst]], "domain", "split"}
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .graph import Event, Scenario, has_branch, is_acyclic
from .prompts import Demonstration, derive_seed

log = logging.getLogger(__name__)

# Reference statistics of the three evaluation corpora.
REFERENCE_STATS = {
    "proscript": dict(scenarios=2077, mean_events=7.46, max_events=9, mean_edges=6.95, mean_event_length=4.64, pct_nonlinear=39.0),
    "schema11": dict(scenarios=11, mean_events=7.91, max_events=11, mean_edges=7.18, mean_event_length=3.48, pct_nonlinear=27.0),
    "wikihow": dict(scenarios=2991, mean_events=8.37, max_events=20, mean_edges=7.37, mean_event_length=9.63, pct_nonlinear=0.0),
}
WIKIHOW_MAX_STEPS = 20
DEMO_BANK_SIZE = 15


def read_jsonl(path: Path) -> list[Scenario]:
    with open(path, encoding="utf-8") as f:
        return [Scenario.from_dict(json.loads(line)) for line in f if line.strip()]


def write_jsonl(scenarios: Iterable[Scenario], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for s in scenarios:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def _records(path: Path) -> Iterator[tuple[Path, int, dict]]:
    """Yield (file, line number, record) from a JSON/JSONL file or a directory of them."""
    path = Path(path)
    files = sorted(p for p in path.rglob("*") if p.suffix in (".json", ".jsonl")) if path.is_dir() else [path]
    for file in files:
        text = file.read_text(encoding="utf-8")
        stripped = text.lstrip()
        if file.suffix == ".json" and stripped.startswith("["):
            for i, rec in enumerate(json.loads(text)):
                yield file, i, rec
        elif file.suffix == ".json" and stripped.startswith("{") and "\n{" not in stripped:
            yield file, 0, json.loads(text)
        else:
            for i, line in enumerate(text.splitlines()):
                if line.strip():
                    yield file, i, json.loads(line)


def _split_of(file: Path) -> str:
    return "train" if "train" in file.stem.lower() else "eval"


@dataclass
class LoadReport:
    rejected: list[tuple[str, str]] = field(default_factory=list)
    filtered: int = 0
    notes: list[str] = field(default_factory=list)


# ---- ProScript -------------------------------------------------------------

_EDGE_TOKEN = re.compile(r"([A-Za-z]*\d+|[A-Za-z_]\w*)\s*->\s*([A-Za-z]*\d+|[A-Za-z_]\w*)")


def _proscript_events(rec: Mapping) -> list[Event]:
    ev = rec["events"]
    if isinstance(ev, Mapping):
        return [Event(str(k), str(v).strip()) for k, v in ev.items()]
    out = []
    for i, e in enumerate(ev):
        if isinstance(e, Mapping):
            out.append(Event(str(e["id"]), str(e["description"]).strip()))
        else:
            out.append(Event(str(i), str(e).strip()))
    return out


def _proscript_edges(rec: Mapping, ids: set[str]) -> list[tuple[str, str]]:
    if "edges" in rec:
        raw = [(str(a), str(b)) for a, b in rec["edges"]]
    elif "gold_edges_for_prediction" in rec:
        raw = [m.groups() for e in rec["gold_edges_for_prediction"] for m in _EDGE_TOKEN.finditer(str(e))]
    elif "flatten_output_for_edge_prediction" in rec:
        raw = [m.groups() for m in _EDGE_TOKEN.finditer(rec["flatten_output_for_edge_prediction"])]
    else:
        raise KeyError("no edge field in record")

    def resolve(tok: str) -> str:
        if tok in ids:
            return tok
        bare = re.sub(r"^[A-Za-z_]+", "", tok)
        if bare in ids:
            return bare
        raise KeyError(f"edge endpoint {tok!r} matches no event")

    return [(resolve(a), resolve(b)) for a, b in raw]


def load_proscript(path: Path, report: LoadReport | None = None) -> list[Scenario]:
    """Load ProScript records (a JSONL file or a directory of split files).

    Events come from ``events`` (dict or list); edges from ``edges``,
    ``gold_edges_for_prediction`` or ``flatten_output_for_edge_prediction``.
    Records with a cyclic gold graph are rejected and listed in ``report``.
    """
    report = report if report is not None else LoadReport()
    out = []
    for file, i, rec in _records(path):
        sid = str(rec.get("id", f"{file.stem}-{i:05d}"))
        try:
            events = _proscript_events(rec)
            edges = _proscript_edges(rec, {e.id for e in events})
            split = rec.get("split") or _split_of(file)
            s = Scenario(sid, str(rec.get("scenario", rec.get("title", ""))).strip(), tuple(events), tuple(edges), "daily", split)
        except (KeyError, ValueError, TypeError) as err:
            report.rejected.append((sid, str(err)))
            continue
        if not is_acyclic(s.gold_graph()):
            report.rejected.append((sid, "cyclic gold graph"))
            continue
        out.append(s)
    for sid, why in report.rejected:
        log.warning("proscript: rejected %s (%s)", sid, why)
    return out


# ---- Schema-11 -------------------------------------------------------------

def load_schema11(path: Path) -> list[Scenario]:
    """Load the 11 news schemas from their reviewed, normalized data file."""
    scenarios = []
    for _, _, rec in _records(path):
        rec = dict(rec)
        rec.setdefault("domain", "news")
        rec.setdefault("split", "eval")
        scenarios.append(Scenario.from_dict(rec))
    if len(scenarios) != 11:
        raise ValueError(f"expected 11 Schema-11 scenarios, found {len(scenarios)}")
    for s in scenarios:
        if not is_acyclic(s.gold_graph()):
            raise ValueError(f"schema {s.id!r} has a cyclic gold graph")
    return scenarios


# ---- WikiHow ---------------------------------------------------------------

def _wikihow_steps(rec: Mapping) -> list[str]:
    def text_of(step) -> str:
        if isinstance(step, Mapping):
            for key in ("headline", "step", "text", "description"):
                if step.get(key):
                    return str(step[key])
            return ""
        return str(step)

    if "steps" in rec:
        steps = rec["steps"]
    elif "sections" in rec:
        steps = [st for sec in rec["sections"] for st in (sec.get("steps", []) if isinstance(sec, Mapping) else sec)]
    else:
        raise KeyError("no steps field in record")
    return [t.strip() for t in map(text_of, steps) if t.strip()]


def _wikihow_ordered(rec: Mapping) -> bool:
    for key in ("ordered", "is_ordered"):
        if key in rec:
            v = rec[key]
            return v in (1, True) or str(v).lower() in ("1", "true", "yes", "ordered")
    return False


def load_wikihow(path: Path, report: LoadReport | None = None, max_steps: int = WIKIHOW_MAX_STEPS) -> list[Scenario]:
    """Keep English, ordered how-to articles with at most ``max_steps`` steps as linear chains."""
    report = report if report is not None else LoadReport()
    report.notes.append(WIKIHOW_COUNT_NOTE)
    out = []
    for file, i, rec in _records(path):
        lang = str(rec.get("lang", rec.get("language", "en"))).lower()
        if lang not in ("en", "english"):
            report.filtered += 1
            continue
        if not _wikihow_ordered(rec):
            report.filtered += 1
            continue
        try:
            steps = _wikihow_steps(rec)
        except KeyError as err:
            report.rejected.append((str(rec.get("id", i)), str(err)))
            continue
        if not 2 <= len(steps) <= max_steps:
            report.filtered += 1
            continue
        events = tuple(Event(str(k), d) for k, d in enumerate(steps))
        edges = tuple((str(k), str(k + 1)) for k in range(len(steps) - 1))
        title = str(rec.get("title", rec.get("goal", ""))).strip()
        sid = str(rec.get("id", f"{file.stem}-{i:05d}"))
        out.append(Scenario(sid, title, events, edges, "daily", "eval"))
    return out


# ---- manifests -------------------------------------------------------------

@dataclass(frozen=True)
class CorpusManifest:
    dataset: str
    source: str
    scenarios: int
    mean_events: float
    mean_edges: float
    max_events: int
    pct_nonlinear: float
    mean_event_length: float
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notes"] = list(self.notes)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusManifest":
        d = dict(d)
        d["notes"] = tuple(d.get("notes", ()))
        return cls(**d)


def compute_manifest(dataset: str, scenarios: Sequence[Scenario], source: str = "", notes: Sequence[str] = ()) -> CorpusManifest:
    if not scenarios:
        raise ValueError(f"{dataset}: no scenarios")
    n_events = np.array([len(s.events) for s in scenarios])
    n_edges = np.array([len(s.gold_edges) for s in scenarios])
    lengths = [len(e.description.split()) for s in scenarios for e in s.events]
    nonlinear = sum(has_branch(s.gold_edges) for s in scenarios)
    return CorpusManifest(
        dataset=dataset,
        source=str(source),
        scenarios=len(scenarios),
        mean_events=float(n_events.mean()),
        mean_edges=float(n_edges.mean()),
        max_events=int(n_events.max()),
        pct_nonlinear=100.0 * nonlinear / len(scenarios),
        mean_event_length=float(np.mean(lengths)),
        notes=tuple(notes),
    )


def reference_manifest(dataset: str) -> CorpusManifest:
    ref = REFERENCE_STATS[dataset]
    return CorpusManifest(
        dataset=dataset,
        source="reference statistics",
        scenarios=ref["scenarios"],
        mean_events=ref["mean_events"],
        mean_edges=ref["mean_edges"],
        max_events=ref["max_events"],
        pct_nonlinear=ref["pct_nonlinear"],
        mean_event_length=ref["mean_event_length"],
    )


def compare_manifest(m: CorpusManifest, mean_tol: float = 0.01, pct_tol: float = 0.5) -> list[str]:
    """Differences between a computed manifest and the reference statistics."""
    ref = REFERENCE_STATS[m.dataset]
    problems = []
    if m.scenarios != ref["scenarios"]:
        problems.append(f"scenarios {m.scenarios} != {ref['scenarios']}")
    if m.max_events != ref["max_events"]:
        problems.append(f"max events {m.max_events} != {ref['max_events']}")
    for key in ("mean_events", "mean_edges"):
        if abs(getattr(m, key) - ref[key]) > mean_tol:
            problems.append(f"{key} {getattr(m, key):.3f} vs {ref[key]}")
    if abs(m.pct_nonlinear - ref["pct_nonlinear"]) > pct_tol:
        problems.append(f"non-linear {m.pct_nonlinear:.1f}% vs {ref['pct_nonlinear']}%")
    return problems


def random_chain_edge_ratio(m: CorpusManifest) -> float:
    """Edge ratio a presentation-order chain gets from corpus averages: (events - 1) / edges."""
    return (m.mean_events - 1) / m.mean_edges


WIKIHOW_COUNT_NOTE = (
    "the WikiHow filtering description quotes a post-filter size of 2,077 while the "
    "statistics table lists 2,991; the table value is used as the reference"
)


# ---- demonstration bank ----------------------------------------------------

def narrative_key(generator: str, instruction_type: str, input_format: str) -> str:
    return f"{generator}/{instruction_type}/{input_format}"


@dataclass
class DemoBank:
    scenarios: list[Scenario]
    narratives: dict[str, dict[str, str]] = field(default_factory=dict)  # scenario id -> key -> text
    unusable: dict[str, list[str]] = field(default_factory=dict)  # key -> scenario ids

    def __post_init__(self):
        if len(self.scenarios) != DEMO_BANK_SIZE:
            raise ValueError(f"demo bank must hold {DEMO_BANK_SIZE} demonstrations, got {len(self.scenarios)}")
        if not any(has_branch(s.gold_edges) for s in self.scenarios):
            raise ValueError("demo bank must include at least one non-linear gold graph")

    def narrative(self, scenario_id: str, key: str) -> str | None:
        return self.narratives.get(scenario_id, {}).get(key)

    def set_narrative(self, scenario_id: str, key: str, text: str) -> None:
        self.narratives.setdefault(scenario_id, {})[key] = text

    def mark_unusable(self, scenario_id: str, key: str) -> None:
        ids = self.unusable.setdefault(key, [])
        if scenario_id not in ids:
            ids.append(scenario_id)

    def to_dict(self) -> dict:
        return {
            "demos": [
                {"scenario": s.to_dict(), "narratives": dict(sorted(self.narratives.get(s.id, {}).items()))}
                for s in self.scenarios
            ],
            "unusable": {k: list(v) for k, v in sorted(self.unusable.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DemoBank":
        scenarios = [Scenario.from_dict(x["scenario"]) for x in d["demos"]]
        narratives = {s.id: dict(x.get("narratives", {})) for s, x in zip(scenarios, d["demos"]) if x.get("narratives")}
        return cls(scenarios, narratives, {k: list(v) for k, v in d.get("unusable", {}).items()})

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "DemoBank":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_demo_bank(train: Sequence[Scenario], seed: int = 0, size: int = DEMO_BANK_SIZE) -> DemoBank:
    """Draw ``size`` training scenarios (seeded), guaranteeing a non-linear one."""
    pool = sorted((s for s in train if s.split == "train"), key=lambda s: s.id)
    if len(pool) < size:
        raise ValueError(f"need {size} training scenarios, found {len(pool)}")
    order = np.random.default_rng(derive_seed("demo-bank", seed)).permutation(len(pool))
    chosen = [pool[int(i)] for i in order[:size]]
    if not any(has_branch(s.gold_edges) for s in chosen):
        extra = next((pool[int(i)] for i in order[size:] if has_branch(pool[int(i)].gold_edges)), None)
        if extra is None:
            raise ValueError("no non-linear training scenario available for the demo bank")
        chosen[-1] = extra
    return DemoBank(chosen)


def select_demos(bank: DemoBank, shots: int, narrative_key: str | None = None) -> list[Demonstration]:
    """First ``shots`` bank entries, with reference narratives for ``narrative_key`` attached."""
    if not 0 <= shots <= len(bank.scenarios):
        raise ValueError(f"shots must be within 0..{len(bank.scenarios)}")
    demos = []
    for s in bank.scenarios[:shots]:
        if narrative_key is None:
            demos.append(Demonstration(s))
            continue
        text = bank.narrative(s.id, narrative_key)
        if not text or s.id in bank.unusable.get(narrative_key, ()):
            raise ValueError(f"demonstration {s.id!r} has no usable narrative for {narrative_key!r}")
        generator, instruction_type, input_format = narrative_key.split("/")
        meta = {"generator": generator, "instruction_type": instruction_type, "input_format": input_format}
        demos.append(Demonstration(s, text, meta))
    return demos
