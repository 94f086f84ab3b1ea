"""
CLI Commands

One function per subcommand. Each reads its inputs, calls the services
and writes its outputs; errors propagate as QgnnError subclasses and are
mapped to exit codes by qgnn.main.
"""

from argparse import ArgumentParser, Namespace
from pathlib import Path
import json
import logging

from qgnn.cli import deps
from qgnn.core.config import TaskConfig, load_task_config
from qgnn.core.errors import ConfigurationError, StorageIOError
from qgnn.services.bench import run_bench
from qgnn.services.encoding import build_encodings, encode_full_graph
from qgnn.services.inference import evaluate, run_query, write_predictions, write_trace
from qgnn.services.kg_store import SUPPORTED_FORMATS, compute_schema_stats, read_graph_file, read_schema_stats
from qgnn.services.model_store import decompose, load_model, save_model
from qgnn.services.query_template import load_template
from qgnn.services.template_service import TaskSpec, generate_template
from qgnn.services.trainer import LinkPredictionTask, NodeClassificationTask, TrainingConfig, train

logger = logging.getLogger(__name__)

PREDICTIONS_FILE = "predictions.jsonl"
TRACE_FILE = "trace.json"
METRICS_FILE = "metrics.json"
BENCH_FILE = "bench.json"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise StorageIOError(f"Cannot write {path}: {e}") from e


def _config(args: Namespace) -> TaskConfig:
    overrides = {name: getattr(args, name, None) for name in TaskConfig.model_fields}
    return load_task_config(Path(args.config) if args.config else None, overrides)


def _output_dir(cfg: TaskConfig) -> Path:
    return Path(cfg.output_dir) if cfg.output_dir else cfg.task_dir / "output"


def cmd_ingest(args: Namespace) -> int:
    """Snapshot a triple file and write its schema statistics."""
    g = read_graph_file(Path(args.kg_file), args.format)
    if not len(g):
        logger.warning(f"{args.kg_file} holds no triples; statistics are empty")
    out = Path(args.out)
    _write_text(out / "graph.tsv", g.to_tsv())
    _write_text(out / "stats.tsv", compute_schema_stats(g).to_tsv())
    print(f"Ingested {len(g)} triples, {len(g.nodes)} nodes -> {out}")
    return 0


def cmd_stats(args: Namespace) -> int:
    """Print statistics as TSV, computed from a graph or replayed from a listing."""
    if args.replay:
        stats = read_schema_stats(Path(args.replay))
    elif args.kg_file:
        stats = compute_schema_stats(read_graph_file(Path(args.kg_file), args.format))
    else:
        raise ConfigurationError("stats needs a triple file or --replay <listing>")
    text = stats.to_tsv()
    if args.out:
        _write_text(Path(args.out), text)
    else:
        print(text, end="")
    return 0


def cmd_gen_template(args: Namespace) -> int:
    """Run template generation once and save the template with its provenance."""
    cfg = _config(args)
    template_path = cfg.require_path("template_path")
    spec = TaskSpec(
        task_kind=cfg.kind, instruction=cfg.instruction, target_type=cfg.target_type,
        hops=cfg.hops, kg_name=cfg.kg_name, task=cfg.task,
    )
    example = ""
    if cfg.example_path:
        try:
            example = Path(cfg.example_path).read_text(encoding="utf-8")
        except OSError as e:
            raise StorageIOError(f"Cannot read SPARQL example {cfg.example_path}: {e}") from e

    llm = deps.build_transport(cfg)
    template = generate_template(spec, deps.load_stats(cfg), llm, example, cfg.top_k)
    template.save(template_path)
    print(f"Template written to {template_path} ({llm.calls} LLM call(s))")
    return 0


def cmd_train(args: Namespace) -> int:
    """Train on the task graph and save the model in decomposed form."""
    cfg = _config(args)
    g = deps.load_graph(cfg)
    pairs = deps.read_pairs(cfg.require_path("labels_path"))
    hyper = TrainingConfig.from_task(cfg)

    if cfg.kind == "node-classification":
        enc = build_encodings(g, cfg.target_type, [label for _, label in pairs])
        known = [(node, label) for node, label in pairs if node in enc.node_enc]
        if len(known) < len(pairs):
            logger.warning(f"{len(pairs) - len(known)} labelled node(s) are not in the graph")
        task = NodeClassificationTask([enc.node_enc[n] for n, _ in known], [enc.label_enc[l] for _, l in known])
    else:
        enc = build_encodings(g, cfg.target_type)
        relation = enc.relation_id(cfg.link_predicate)
        positives = [
            (enc.node_enc[h], relation, enc.node_enc[t]) for h, t in pairs
            if h in enc.node_enc and t in enc.node_enc
        ]
        task = LinkPredictionTask(positives, [enc.node_enc[c] for c in deps.candidates_of(cfg, enc)])

    full = encode_full_graph(g, enc)
    model = train(full.graph, enc, task, hyper, cfg.link_predicate)
    out = deps.trained_dir(cfg)
    save_model(model, out)
    enc.save(out)
    print(f"Trained {cfg.kind} model on {full.graph.num_nodes} nodes -> {out}")
    return 0


def cmd_decompose(args: Namespace) -> int:
    """Split the trained model into the chunked embedding store and the parameter store."""
    cfg = _config(args)
    source = deps.trained_dir(cfg)
    model = load_model(source)
    enc = deps.EncodingMaps.load(source)
    embeddings, _ = decompose(model, cfg.chunk_rows, cfg.task_dir)
    enc.save(cfg.task_dir)
    chunks = sum(m.chunk_count for m in embeddings.manifests.values())
    print(f"Decomposed into {cfg.task_dir}: {len(embeddings.manifests)} type(s), {chunks} chunk(s)")
    return 0


def cmd_infer(args: Namespace) -> int:
    """Answer one query for the targets file; write predictions, trace and metrics."""
    cfg = _config(args)
    targets = deps.read_targets(cfg.require_path("targets_path"))
    template = load_template(cfg.require_path("template_path"))
    g = deps.load_graph(cfg)
    enc = deps.load_task_encodings(cfg)

    sg, result = run_query(
        template, targets, g, enc, deps.open_stores(cfg), deps.load_model_def(cfg),
        batch_size=cfg.batch_size, parallel=cfg.parallel, mode=cfg.mode,
        density_threshold=cfg.density_threshold, candidates=deps.candidates_of(cfg, enc),
    )

    out = _output_dir(cfg)
    write_predictions(out / PREDICTIONS_FILE, result.predictions, cfg.top_k)
    write_trace(out / TRACE_FILE, result.trace)
    if cfg.labels_path and result.predictions:
        truth = (
            deps.read_labels(Path(cfg.labels_path)) if cfg.kind == "node-classification"
            else deps.read_link_truth(Path(cfg.labels_path))
        )
        metrics = evaluate(result.predictions, truth, cfg.kind, cfg.top_k)
        _write_text(out / METRICS_FILE, json.dumps(metrics, indent=2, sort_keys=True))
        print(json.dumps({k: v for k, v in metrics.items() if k != "per_class"}, sort_keys=True))
    print(f"{len(result.predictions)} prediction(s) -> {out / PREDICTIONS_FILE}")
    return 0


def cmd_bench(args: Namespace) -> int:
    """Compare partial loading against full loading on one workload."""
    cfg = _config(args)
    workload = Path(args.workload) if args.workload else cfg.require_path("targets_path")
    enc = deps.load_task_encodings(cfg)
    report = run_bench(
        load_template(cfg.require_path("template_path")), deps.read_targets(workload),
        deps.load_graph(cfg), enc, deps.open_stores(cfg), deps.load_model_def(cfg),
        batch_size=cfg.batch_size, parallel=cfg.parallel, mode=cfg.mode,
        density_threshold=cfg.density_threshold, candidates=deps.candidates_of(cfg, enc),
        full_graph=not args.skip_full_graph,
    )
    _write_text(_output_dir(cfg) / BENCH_FILE, json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(report.to_table())
    return 0


def _add_config_flags(parser: ArgumentParser) -> None:
    parser.add_argument("--config", help="Task config JSON")
    for name in TaskConfig.model_fields:
        flags = [f"--{name.replace('_', '-')}"]
        if name == "targets_path":
            flags.append("--targets")
        parser.add_argument(*flags, dest=name, default=None, help=TaskConfig.model_fields[name].description)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="qgnn", description="Query-aware RGCN inference over knowledge graphs")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="Snapshot a triple file and write schema statistics")
    ingest.add_argument("kg_file")
    ingest.add_argument("--format", choices=SUPPORTED_FORMATS, default="tsv")
    ingest.add_argument("--out", required=True, help="Output directory")
    ingest.set_defaults(handler=cmd_ingest)

    stats = sub.add_parser("stats", help="Print schema statistics as TSV")
    stats.add_argument("kg_file", nargs="?")
    stats.add_argument("--format", choices=SUPPORTED_FORMATS, default="tsv")
    stats.add_argument("--replay", help="Statistics listing to normalise instead of a triple file")
    stats.add_argument("--out", help="Write to this file instead of stdout")
    stats.set_defaults(handler=cmd_stats)

    for name, handler, text in (
            ("gen-template", cmd_gen_template, "Generate the task's query template"),
            ("train", cmd_train, "Train the task model"),
            ("decompose", cmd_decompose, "Decompose the trained model into stores"),
            ("infer", cmd_infer, "Answer an inference query"),
            ("bench", cmd_bench, "Compare partial and full loading"),
    ):
        command = sub.add_parser(name, help=text)
        _add_config_flags(command)
        if name == "bench":
            command.add_argument("--workload", help="Targets file to benchmark (defaults to targets_path)")
            command.add_argument("--skip-full-graph", action="store_true", help="Omit the whole-graph baseline")
        command.set_defaults(handler=handler)
    return parser
