"""Experiment orchestration: shuffles, prompting, scoring, narratives and judging."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .datasets import DemoBank, narrative_key, read_jsonl, select_demos
from .ged import DEFAULT_BUDGET
from .graph import LabelAssignment, Scenario, TemporalGraph, canonicalize, linear_chain
from .llm import (
    CompletionError,
    GenerationParams,
    LLMClient,
    MockBackend,
    OpenAIBackend,
    ResponseCache,
    request_key,
)
from .metrics import GEDMemo, ReportRow, ScoreCard, aggregate, report_csv, report_markdown, score_prediction, write_cards
from .parsing import JudgeParseError, ModelOutput, extract_relations, parse_judge
from .prompts import (
    MetaPromptSpec,
    assign_labels,
    build_judge_prompt,
    build_meta_prompt,
    build_prompt,
    derive_seed,
    shuffled_orders,
)

log = logging.getLogger(__name__)

RUN_METHODS = ("standard", "cot", "not", "random")
VERDICT_ORDER = ("yes", "largely_yes", "ambivalent", "largely_no", "no")


@dataclass
class ExperimentConfig:
    dataset: str
    data_path: str
    method: str = "standard"
    shots: int = 5
    input_format: str = "alphabetical"
    narrative_key: str | None = "gpt-4/simple_report/alphabetical"
    demo_bank: str | None = None
    shuffles: int = 3
    master_seed: int = 0
    label_scheme: str = "random"
    model: str = ""
    base_url: str = "http://localhost:8000/v1"
    mock: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    ged_budget: float = DEFAULT_BUDGET
    workers: int = 4
    max_in_flight: int = 8
    limit: int | None = None
    consistency_mode: str = "per_scenario"
    invalid_components: str = "zero"
    output_dir: str = "results/run"
    cache_dir: str = "cache"

    def __post_init__(self):
        if self.method not in RUN_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.shuffles < 2:
            raise ValueError("at least two shuffles are needed for consistency")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        return cls.from_mapping(yaml.safe_load(Path(path).read_text()) or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def generation_params(self) -> GenerationParams:
        model = self.model or (f"mock-{self.mock}" if self.mock else "")
        return GenerationParams(model=model, temperature=self.temperature, max_tokens=self.max_tokens)


def random_baseline(scenario: Scenario, presentation_order: Sequence[str]) -> TemporalGraph:
    """Events chained in the order the prompt presents them."""
    return linear_chain(list(presentation_order))


def scenario_layout(config: ExperimentConfig, scenario: Scenario) -> tuple[LabelAssignment, list[list[str]]]:
    """Labels (fixed for the scenario) and the shuffled method orders, both seeded by scenario id."""
    seed = derive_seed(config.master_seed, scenario.id)
    assignment = assign_labels(scenario, derive_seed(seed, "labels"), config.input_format, config.label_scheme)
    orders = shuffled_orders(scenario, derive_seed(seed, "shuffles"), config.shuffles)
    return assignment, orders


def make_backend(config: ExperimentConfig, scenarios: Sequence[Scenario] = ()):
    if config.mock:
        return MockBackend(config.mock, {s.id: s for s in scenarios})
    return OpenAIBackend(config.base_url)


def _link_name(scenario_id: str, shuffle: int) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", scenario_id)[:80]
    return f"{safe}-{derive_seed(scenario_id) % 16**8:08x}__{shuffle}.json"


@dataclass
class _Outcome:
    scenario: Scenario
    cards: list[ScoreCard] = field(default_factory=list)
    preds: list[TemporalGraph] = field(default_factory=list)
    links: list[dict] = field(default_factory=list)
    error: str | None = None


def _score_text(scenario, assignment, order, text, k, budget, memo) -> tuple[ScoreCard, TemporalGraph, ModelOutput]:
    out = extract_relations(text)
    pred = canonicalize(out.relations, assignment, scenario.event_ids)
    return score_prediction(scenario, pred, k, budget, memo), pred, out


def _run_scenario(config, scenario, demos, client, params, memo) -> _Outcome:
    assignment, orders = scenario_layout(config, scenario)
    res = _Outcome(scenario)
    for k, order in enumerate(orders):
        link = {"scenario_id": scenario.id, "shuffle": k, "presentation_order": order, "assignment": assignment.to_dict()}
        if config.method == "random":
            pred = random_baseline(scenario, order)
            card = score_prediction(scenario, pred, k, config.ged_budget, memo)
            link["cache_key"] = None
        else:
            bundle = build_prompt(
                config.method,
                demos,
                scenario,
                assignment,
                order,
                config.shots,
                with_reference=config.narrative_key is not None,
                shuffle_seed=k,
            )
            try:
                text = client.complete(bundle, params)
            except CompletionError as err:
                res.error = str(err)
                return res
            link["cache_key"] = request_key(params, bundle.chat_messages())
            card, pred, _ = _score_text(scenario, assignment, order, text, k, config.ged_budget, memo)
        res.cards.append(card)
        res.preds.append(pred)
        res.links.append(link)
    return res


def _load_demos(config: ExperimentConfig) -> list:
    if config.method == "random" or config.shots == 0:
        return []
    if not config.demo_bank:
        raise ValueError("a demo bank is required for few-shot runs")
    bank = DemoBank.load(Path(config.demo_bank))
    key = config.narrative_key if config.method == "not" else None
    return select_demos(bank, config.shots, key)


def _finish(config: ExperimentConfig, out_dir: Path, outcomes: list[_Outcome], extra: Mapping) -> ReportRow | None:
    cards = [c for o in outcomes for c in o.cards]
    preds = {o.scenario.id: o.preds for o in outcomes if o.cards}
    write_cards(cards, out_dir / "cards.jsonl")
    row = None
    if cards:
        row = aggregate(
            cards,
            preds,
            dataset=config.dataset,
            method=config.method,
            shuffles=config.shuffles,
            consistency_mode=config.consistency_mode,
            invalid_components=config.invalid_components,
        )
        (out_dir / "report.md").write_text(report_markdown([row]))
        (out_dir / "report.csv").write_text(report_csv([row]))
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "scenarios": [o.scenario.id for o in outcomes if o.cards],
        "failures": [{"scenario_id": o.scenario.id, "error": o.error} for o in outcomes if o.error],
        "cards": len(cards),
        "ged_inexact": sum(not c.ged_exact for c in cards),
        "invalid_outputs": sum(not c.validity for c in cards),
        "report": asdict(row) if row else None,
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return row


def run_experiment(config: ExperimentConfig, backend=None, client: LLMClient | None = None) -> Path:
    """Run one configuration end to end and write the results directory.

    Layout: ``manifest.json``, ``cards.jsonl``, ``raw/`` (one link file per
    scenario shuffle pointing at its cached completion), ``report.md`` and
    ``report.csv``.
    """
    scenarios = read_jsonl(Path(config.data_path))
    if config.limit is not None:
        scenarios = scenarios[: config.limit]
    demos = _load_demos(config)
    if client is None and config.method != "random":
        if backend is None:
            backend = make_backend(config, scenarios)
        client = LLMClient(backend, ResponseCache(Path(config.cache_dir)), config.max_in_flight)
    params = config.generation_params()
    memo = GEDMemo()

    def work(s: Scenario) -> _Outcome:
        return _run_scenario(config, s, demos, client, params, memo)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(work, scenarios))
    else:
        outcomes = [work(s) for s in scenarios]

    out_dir = Path(config.output_dir)
    raw_dir = out_dir / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    for o in outcomes:
        for link in o.links:
            (raw_dir / _link_name(link["scenario_id"], link["shuffle"])).write_text(json.dumps(link, ensure_ascii=False) + "\n")
        if o.error:
            log.error("scenario %s failed: %s", o.scenario.id, o.error)
    _finish(config, out_dir, outcomes, {})
    return out_dir


class MissingCompletions(LookupError):
    def __init__(self, missing: Sequence[tuple[str, int]]):
        self.missing = list(missing)
        listed = ", ".join(f"{sid}#{k}" for sid, k in self.missing)
        super().__init__(f"cached completions missing for: {listed}")


def _load_run(results_dir: Path):
    manifest = json.loads((Path(results_dir) / "manifest.json").read_text())
    config = ExperimentConfig.from_mapping(manifest["config"])
    by_id = {s.id: s for s in read_jsonl(Path(config.data_path))}
    links: dict[str, list[dict]] = {}
    for p in sorted((Path(results_dir) / "raw").glob("*.json")):
        link = json.loads(p.read_text())
        links.setdefault(link["scenario_id"], []).append(link)
    for v in links.values():
        v.sort(key=lambda x: x["shuffle"])
    return manifest, config, by_id, links


def _cached_texts(config, manifest, links) -> dict[tuple[str, int], str | None]:
    cache = ResponseCache(Path(config.cache_dir))
    texts: dict[tuple[str, int], str | None] = {}
    missing = []
    for sid in manifest["scenarios"]:
        for link in links.get(sid, []):
            key = link["cache_key"]
            if key is None:
                texts[(sid, link["shuffle"])] = None
                continue
            entry = cache.get(key)
            if entry is None:
                missing.append((sid, link["shuffle"]))
            else:
                texts[(sid, link["shuffle"])] = entry["completion"]
    if missing:
        raise MissingCompletions(missing)
    return texts


def score_offline(results_dir: Path, ged_budget: float | None = None, write: bool = True) -> tuple[list[ScoreCard], ReportRow]:
    """Re-parse and re-score a finished run from its cached completions only."""
    results_dir = Path(results_dir)
    manifest, config, by_id, links = _load_run(results_dir)
    if ged_budget is not None:
        config = replace(config, ged_budget=ged_budget)
    texts = _cached_texts(config, manifest, links)
    memo = GEDMemo()
    outcomes = []
    for sid in manifest["scenarios"]:
        scenario = by_id[sid]
        o = _Outcome(scenario)
        for link in links[sid]:
            assignment = LabelAssignment.from_dict(link["assignment"])
            order = link["presentation_order"]
            k = link["shuffle"]
            text = texts[(sid, k)]
            if text is None:
                pred = random_baseline(scenario, order)
                card = score_prediction(scenario, pred, k, config.ged_budget, memo)
            else:
                card, pred, _ = _score_text(scenario, assignment, order, text, k, config.ged_budget, memo)
            o.cards.append(card)
            o.preds.append(pred)
        outcomes.append(o)
    cards = [c for o in outcomes for c in o.cards]
    row = aggregate(
        cards,
        {o.scenario.id: o.preds for o in outcomes},
        dataset=config.dataset,
        method=config.method,
        shuffles=config.shuffles,
        consistency_mode=config.consistency_mode,
        invalid_components=config.invalid_components,
    )
    if write:
        write_cards(cards, results_dir / "cards.jsonl")
        (results_dir / "report.md").write_text(report_markdown([row]))
        (results_dir / "report.csv").write_text(report_csv([row]))
    return cards, row


def shot_sweep(config: ExperimentConfig, shots: Sequence[int] = (0, 1, 3, 5, 10), backend=None) -> list[ReportRow]:
    """Same pipeline at each shot count; results go to ``<output_dir>/shots-<k>``."""
    rows = []
    for k in shots:
        cfg = replace(config, shots=k, output_dir=str(Path(config.output_dir) / f"shots-{k}"))
        out = run_experiment(cfg, backend=backend)
        rows.append(ReportRow(**json.loads((out / "manifest.json").read_text())["report"]))
    return rows


def random_baseline_sweep(
    scenarios: Sequence[Scenario],
    master_seeds: Sequence[int],
    dataset: str = "",
    shuffles: int = 3,
    ged_budget: float | None = DEFAULT_BUDGET,
) -> list[ReportRow]:
    """Random-baseline report rows for each master seed, without writing results.

    One GED memo serves all seeds: chains of equal length are isomorphic,
    so each scenario costs a single search.
    """
    memo = GEDMemo()
    rows = []
    for seed in master_seeds:
        cfg = ExperimentConfig(dataset=dataset, data_path="", method="random", shuffles=shuffles, master_seed=seed)
        cards, preds = [], {}
        for s in scenarios:
            _, orders = scenario_layout(cfg, s)
            preds[s.id] = [random_baseline(s, o) for o in orders]
            cards += [score_prediction(s, g, k, ged_budget, memo) for k, g in enumerate(preds[s.id])]
        rows.append(aggregate(cards, preds, dataset=dataset, method="random", shuffles=shuffles))
    return rows


# ---- reference narratives --------------------------------------------------

_REFUSAL = re.compile(r"^\s*(?:I'm sorry|I am sorry|I cannot|I can't|I can not|As an AI|Sorry)", re.IGNORECASE)


def is_refusal(text: str) -> bool:
    return not text.strip() or bool(_REFUSAL.match(text))


def generate_reference_narratives(
    bank: DemoBank,
    specs: Sequence[MetaPromptSpec],
    client: LLMClient,
    params: GenerationParams,
    generator: str,
) -> DemoBank:
    """Fill in one narrative per (demonstration, spec) for ``generator``; existing ones are kept."""
    params = replace(params, stop=())
    for spec in specs:
        key = narrative_key(generator, spec.instruction_type, spec.input_format)
        for s in bank.scenarios:
            if bank.narrative(s.id, key):
                continue
            text = client.complete(build_meta_prompt(s, spec), params)
            if is_refusal(text):
                log.warning("generator refused demo %s for %s", s.id, key)
                bank.mark_unusable(s.id, key)
            else:
                bank.set_narrative(s.id, key, text.strip())
    return bank


# ---- faithfulness ------------------------------------------------------------

def alignment(distribution: Mapping[str, int]) -> float:
    """Share of judged outputs rated ``yes`` or ``largely_yes``."""
    total = sum(distribution.get(v, 0) for v in VERDICT_ORDER)
    if total == 0:
        raise ValueError("no verdicts to compute alignment from")
    return (distribution.get("yes", 0) + distribution.get("largely_yes", 0)) / total


def judge_faithfulness(
    results_dir: Path,
    client: LLMClient,
    params: GenerationParams,
    sample_size: int = 600,
    write: bool = True,
) -> dict:
    """Ask a judge model whether each sampled graph honours its own narrative.

    Samples (seeded by the run's master seed) among outputs carrying both a
    narrative and a valid graph. Verdicts with zero correct links, or with
    the counts missing, are routed to a manual review queue.
    """
    results_dir = Path(results_dir)
    manifest, config, by_id, links = _load_run(results_dir)
    texts = _cached_texts(config, manifest, links)
    candidates = []
    for sid in manifest["scenarios"]:
        for link in links[sid]:
            text = texts[(sid, link["shuffle"])]
            if text is None:
                continue
            out = extract_relations(text)
            if out.narrative and out.relations:
                assignment = LabelAssignment.from_dict(link["assignment"])
                graph = canonicalize(out.relations, assignment, by_id[sid].event_ids)
                candidates.append((sid, link["shuffle"], out.narrative, graph))
    rng = np.random.default_rng(derive_seed(config.master_seed, "judge"))
    n = min(sample_size, len(candidates))
    picked = sorted(rng.choice(len(candidates), n, replace=False).tolist()) if n else []
    params = replace(params, stop=())
    distribution = {v: 0 for v in VERDICT_ORDER}
    unparseable = []
    review = []
    for idx in picked:
        sid, k, narrative, graph = candidates[idx]
        raw = client.complete(build_judge_prompt(by_id[sid], narrative, graph), params)
        try:
            v = parse_judge(raw)
        except JudgeParseError as err:
            unparseable.append({"scenario_id": sid, "shuffle": k, "error": str(err)})
            continue
        distribution[v.verdict] += 1
        if v.correct_links == 0 or v.correct_links is None or v.total_links is None:
            review.append({"scenario_id": sid, "shuffle": k, "verdict": v.verdict, "rationale": v.rationale,
                           "total_links": v.total_links, "correct_links": v.correct_links})
    judged = sum(distribution.values())
    report = {
        "judge_model": params.model,
        "candidates": len(candidates),
        "sampled": n,
        "distribution": distribution,
        "alignment": alignment(distribution) if judged else None,
        "unparseable": unparseable,
        "review_queue": review,
    }
    if write:
        (results_dir / "judge.json").write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n")
    return report
