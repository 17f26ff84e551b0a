"""End-to-end run against the offline mock backend.

Builds a toy corpus, a demonstration bank with generated narratives, runs
three prompting methods plus the random baseline, replays scoring from the
cache and asks the mock judge for verdicts. Everything is written under a
temporary directory.

Run with ``python3 walkthroughs/mock_pipeline.py``.
"""
import random
import tempfile
from pathlib import Path

from tgg.datasets import build_demo_bank, write_jsonl
from tgg.graph import Event, Scenario
from tgg.llm import GenerationParams, LLMClient, MockBackend, ResponseCache
from tgg.metrics import report_markdown
from tgg.prompts import MetaPromptSpec
from tgg.runner import (
    ExperimentConfig,
    generate_reference_narratives,
    judge_faithfulness,
    random_baseline_sweep,
    run_experiment,
    score_offline,
)


def toy_scenario(sid, rng, split):
    n = rng.randint(4, 8)
    events = [Event(f"{sid}-{i}", f"activity {i} of {sid}") for i in range(n)]
    edges = {(events[rng.randrange(j)].id, events[j].id) for j in range(1, n)}
    rng.shuffle(events)
    return Scenario(sid, f"toy goal {sid}", events, sorted(edges), split=split)


rng = random.Random(3)
train = [toy_scenario(f"train{i}", rng, "train") for i in range(30)]
evaluation = [toy_scenario(f"eval{i}", rng, "eval") for i in range(15)]

work = Path(tempfile.mkdtemp(prefix="tgg-walkthrough-"))
data = work / "eval.jsonl"
write_jsonl(evaluation, data)
cache = work / "cache"

bank = build_demo_bank(train, seed=0)
generator = LLMClient(MockBackend("gold", {s.id: s for s in bank.scenarios}), ResponseCache(cache))
generate_reference_narratives(bank, [MetaPromptSpec()], generator, GenerationParams("mock-generator"), "gpt-4")
bank.save(work / "bank.json")

rows = []
for method, mock in (("standard", "random_chain"), ("cot", "random_chain"), ("not", "gold"), ("random", None)):
    cfg = ExperimentConfig(
        dataset="toy",
        data_path=str(data),
        method=method,
        shots=5,
        demo_bank=str(work / "bank.json"),
        mock=mock,
        output_dir=str(work / "results" / method),
        cache_dir=str(cache),
    )
    out = run_experiment(cfg)
    cards, row = score_offline(out, write=False)
    rows.append(row)
print(report_markdown(rows))

# Seed spread of the random baseline, computed in memory.
f1 = [round(r.f1, 1) for r in random_baseline_sweep(evaluation, range(5), "toy")]
print("random baseline F1 over five master seeds:", f1)

judge = LLMClient(MockBackend("gold", {s.id: s for s in evaluation}), ResponseCache(cache))
verdicts = judge_faithfulness(work / "results" / "not", judge, GenerationParams("mock-judge"), sample_size=20)
print("judge distribution:", verdicts["distribution"], "alignment:", verdicts["alignment"])
print("artifacts in", work)
