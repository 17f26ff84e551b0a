"""Command line entry point: ``tgg <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .datasets import (
    DemoBank,
    LoadReport,
    build_demo_bank,
    compute_manifest,
    load_proscript,
    load_schema11,
    load_wikihow,
    read_jsonl,
    write_jsonl,
)
from .llm import GenerationParams, LLMClient, MockBackend, OpenAIBackend, ResponseCache
from .metrics import ReportRow, report_csv, report_markdown
from .prompts import INSTRUCTION_TYPES, MetaPromptSpec
from .runner import (
    ExperimentConfig,
    MissingCompletions,
    generate_reference_narratives,
    judge_faithfulness,
    run_experiment,
    score_offline,
)

LOADERS = {"proscript": load_proscript, "schema11": load_schema11, "wikihow": load_wikihow}


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, yaml.safe_load(value)


def _client(args, scenarios) -> LLMClient:
    backend = MockBackend(args.mock, {s.id: s for s in scenarios}) if args.mock else OpenAIBackend(args.base_url)
    return LLMClient(backend, ResponseCache(Path(args.cache_dir)))


def cmd_convert(args) -> int:
    report = LoadReport()
    if args.dataset == "schema11":
        scenarios = load_schema11(args.input)
    else:
        scenarios = LOADERS[args.dataset](args.input, report)
    write_jsonl(scenarios, args.output)
    manifest = compute_manifest(args.dataset, scenarios, source=str(args.input), notes=report.notes)
    manifest_path = args.manifest or args.output.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    print(f"{len(scenarios)} scenarios -> {args.output}")
    for sid, reason in report.rejected:
        print(f"rejected {sid}: {reason}", file=sys.stderr)
    if report.filtered:
        print(f"filtered {report.filtered} records", file=sys.stderr)
    return 0


def cmd_build_bank(args) -> int:
    bank = build_demo_bank(read_jsonl(args.train), seed=args.seed)
    bank.save(args.output)
    print(f"demo bank with {len(bank.scenarios)} demonstrations -> {args.output}")
    return 0


def cmd_gen_narratives(args) -> int:
    bank = DemoBank.load(args.bank)
    specs = [MetaPromptSpec(t, f) for t in args.instruction_type for f in args.input_format]
    client = _client(args, bank.scenarios)
    params = GenerationParams(model=args.model, max_tokens=args.max_tokens)
    generate_reference_narratives(bank, specs, client, params, generator=args.generator or args.model)
    bank.save(args.bank)
    flagged = sum(len(v) for v in bank.unusable.values())
    print(f"{client.network_calls} requests sent, {flagged} demo/key pairs flagged unusable")
    return 0


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.set:
        config = ExperimentConfig.from_mapping({**config.to_dict(), **dict(args.set)})
    out = run_experiment(config)
    manifest = json.loads((out / "manifest.json").read_text())
    if manifest["report"]:
        print(report_markdown([ReportRow(**manifest["report"])]), end="")
    for fail in manifest["failures"]:
        print(f"failed {fail['scenario_id']}: {fail['error']}", file=sys.stderr)
    print(f"results -> {out}")
    return 1 if manifest["failures"] else 0


def cmd_score(args) -> int:
    try:
        _, row = score_offline(args.results, ged_budget=args.ged_budget)
    except MissingCompletions as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(report_markdown([row]), end="")
    return 0


def cmd_judge(args) -> int:
    manifest = json.loads((args.results / "manifest.json").read_text())
    config = ExperimentConfig.from_mapping(manifest["config"])
    if args.cache_dir is None:
        args.cache_dir = config.cache_dir
    client = _client(args, read_jsonl(Path(config.data_path)))
    params = GenerationParams(model=args.model or (f"mock-{args.mock}" if args.mock else ""), max_tokens=args.max_tokens)
    report = judge_faithfulness(args.results, client, params, sample_size=args.sample_size)
    summary = {k: report[k] for k in ("sampled", "distribution", "alignment")}
    summary["review_queue"] = len(report["review_queue"])
    summary["unparseable"] = len(report["unparseable"])
    print(json.dumps(summary, indent=2))
    return 0


def cmd_report(args) -> int:
    rows = []
    for d in args.results:
        manifest = json.loads((d / "manifest.json").read_text())
        if manifest["report"]:
            rows.append(ReportRow(**manifest["report"]))
    text = report_csv(rows) if args.format == "csv" else report_markdown(rows)
    if args.output:
        args.output.write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgg", description="Temporal graph generation evaluation harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="normalize a raw corpus into JSONL")
    c.add_argument("dataset", choices=sorted(LOADERS))
    c.add_argument("input", type=Path)
    c.add_argument("output", type=Path)
    c.add_argument("--manifest", type=Path)
    c.set_defaults(func=cmd_convert)

    b = sub.add_parser("build-bank", help="draw the demonstration bank from training scenarios")
    b.add_argument("train", type=Path)
    b.add_argument("output", type=Path)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_build_bank)

    def endpoint(q, cache_default):
        q.add_argument("--model", default="")
        q.add_argument("--base-url", default="http://localhost:8000/v1")
        q.add_argument("--cache-dir", default=cache_default)
        q.add_argument("--mock", choices=["gold", "random_chain", "refusal"])
        q.add_argument("--max-tokens", type=int, default=1024)

    g = sub.add_parser("gen-narratives", help="generate reference narratives for the demo bank")
    g.add_argument("bank", type=Path)
    g.add_argument("--generator", help="tag used in narrative keys (defaults to --model)")
    g.add_argument("--instruction-type", nargs="+", choices=INSTRUCTION_TYPES, default=["simple_report"])
    g.add_argument("--input-format", nargs="+", choices=["alphabetical", "descriptive"], default=["alphabetical"])
    endpoint(g, "cache")
    g.set_defaults(func=cmd_gen_narratives)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("config", type=Path)
    r.add_argument("--set", action="append", type=_parse_override, metavar="KEY=VALUE")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="re-score a finished run from cache only")
    s.add_argument("results", type=Path)
    s.add_argument("--ged-budget", type=float)
    s.set_defaults(func=cmd_score)

    j = sub.add_parser("judge", help="faithfulness judging of narrative outputs")
    j.add_argument("results", type=Path)
    j.add_argument("--sample-size", type=int, default=600)
    endpoint(j, None)
    j.set_defaults(func=cmd_judge)

    rp = sub.add_parser("report", help="collect report rows from result directories")
    rp.add_argument("results", type=Path, nargs="+")
    rp.add_argument("--format", choices=["md", "csv"], default="md")
    rp.add_argument("--output", type=Path)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
