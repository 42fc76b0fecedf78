"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 provider error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigError, GateRAGError, ProviderError
from .evaluation import gate_ab_test, load_qa, write_ab_csv, write_quality_csv
from .pipeline import answer_query, build_graph, evaluate_answers, make_providers, run_gates
from .storage import EXPORT_FORMATS, export_edgelist, load_graph, save_graph

log = logging.getLogger("gaterag")

EXIT_OK, EXIT_CONFIG, EXIT_PROVIDER, EXIT_DATA = 0, 2, 3, 4


def _dump(obj, path: str | Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _sidecar(path: str | Path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def resolve_config(args) -> PipelineConfig:
    config = load_config(args.config)
    p = config.provider
    if args.provider:
        p.mode = args.provider
    if args.script:
        p.script = args.script
    if args.transcript:
        p.transcript = args.transcript
    return config.validate()


def cmd_build(args, config: PipelineConfig) -> int:
    providers = make_providers(config)
    graph, report = build_graph(args.corpus, config, providers)
    save_graph(graph, args.out)
    _dump(report, _sidecar(args.out, ".stats.json"))
    _dump(report["stats"], None)
    return EXIT_OK


def cmd_gates(args, config: PipelineConfig) -> int:
    graph = load_graph(args.graph)
    providers = make_providers(config)
    new_graph, report = run_gates(graph, config, providers)
    out = args.out or args.graph
    save_graph(new_graph, out)
    _dump(report, args.report or _sidecar(out, ".gates.json"))
    print(f"{len(new_graph.gates)} gates from {report['call_count']} verification calls "
          f"(exhaustive: {report['exhaustive_count']})")
    return EXIT_OK


def cmd_query(args, config: PipelineConfig) -> int:
    graph = load_graph(args.graph)
    providers = make_providers(config)
    audit = answer_query(graph, args.question, config, providers, use_gates=not args.no_gates, mode=args.mode)
    if args.audit:
        _dump(audit, args.audit)
    if args.json:
        _dump(audit, None)
    else:
        print(audit["answer"])
    return EXIT_OK


def cmd_ab_test(args, config: PipelineConfig) -> int:
    graph = load_graph(args.graph)
    providers = make_providers(config)
    examples = load_qa(args.qa)
    ev = config.evaluation
    report = gate_ab_test(
        graph,
        examples,
        providers.embedder,
        config.retrieval.expansion(),
        config.retrieval.scoring(),
        ev.bootstrap_resamples,
        ev.bootstrap_seed,
        config.provider.max_inflight,
    )
    report["config"] = config.to_dict()
    _dump(report, args.out)
    write_ab_csv(report, _sidecar(args.out, ".csv"))
    for metric in ("reachability", "dwr", "coverage", "min_hops"):
        off, on = report["off"][metric], report["on"][metric]
        print(f"{metric:13s} off={off['mean']} on={on['mean']}")
    return EXIT_OK


def cmd_evaluate(args, config: PipelineConfig) -> int:
    graph = load_graph(args.graph)
    providers = make_providers(config)
    report = evaluate_answers(graph, load_qa(args.qa), config, providers, name=Path(args.qa).stem)
    _dump(report, args.out)
    write_quality_csv(report["table"], _sidecar(args.out, ".csv"))
    print(json.dumps(report["table"]))
    return EXIT_OK


def cmd_export(args, config: PipelineConfig) -> int:
    graph = load_graph(args.graph)
    data = export_edgelist(graph, args.gate_sample, config.evaluation.gate_sample_seed)
    data["config"] = config.to_dict()
    _dump(data, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaterag", description="Hierarchical graph RAG with causal gates.")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--provider", choices=("mock", "replay", "live"), help="override provider.mode")
    parser.add_argument("--script", help="mock chat script JSON (mock mode)")
    parser.add_argument("--transcript", help="transcript JSONL (replay source, or record target)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="corpus to hierarchical graph")
    p.add_argument("--corpus", required=True, help="directory of .txt files or JSONL of {doc_id, text}")
    p.add_argument("--out", required=True, help="graph JSON to write")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("gates", help="verify and install causal gates")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", help="write the gated graph here instead of in place")
    p.add_argument("--report", help="gate report JSON (default: <graph>.gates.json)")
    p.set_defaults(func=cmd_gates)

    p = sub.add_parser("query", help="answer one question")
    p.add_argument("--graph", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--no-gates", action="store_true", help="exclude causal gates from traversal")
    p.add_argument("--mode", choices=("spurious", "standard"))
    p.add_argument("--audit", help="write the audit bundle JSON here")
    p.add_argument("--json", action="store_true", help="print the audit bundle instead of the answer")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("ab-test", help="gate off/on structural comparison")
    p.add_argument("--graph", required=True)
    p.add_argument("--qa", required=True, help="QA JSONL")
    p.add_argument("--out", default="ab_report.json", help="report JSON; a CSV is written next to it")
    p.set_defaults(func=cmd_ab_test)

    p = sub.add_parser("evaluate", help="answer a QA file and report token F1")
    p.add_argument("--graph", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", default="eval_report.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="node/edge list for external viewers")
    p.add_argument("--graph", required=True)
    p.add_argument("--format", choices=EXPORT_FORMATS, default="edgelist")
    p.add_argument("--gate-sample", type=float, metavar="R", help="export ceil(R * |gates|) gates")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error [{getattr(exc, 'stage', '-')}]: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except GateRAGError as exc:
        print(f"data error [{getattr(exc, 'stage', '-')}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
