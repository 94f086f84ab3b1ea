"""
Partial-load vs full-load comparison.

Runs one workload three ways and reports time, bytes and multiply-adds:

    partial     extract -> instantiate (covering chunks only) -> predict
    full-load   same subgraph, every embedding matrix loaded in full
    full-graph  whole encoded graph, every matrix loaded (optional)

Every column comes from an executed run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Sequence, Union
import logging
import time

import numpy as np

from qgnn.services.encoding import EncodingMaps, encode_full_graph
from qgnn.services.inference import (
    DEFAULT_DENSITY_THRESHOLD, PredictionResult, Stores, full_forward, full_graph_forward, run_query,
)
from qgnn.services.kg_store import TripleGraph
from qgnn.services.model_store import StorageReport, storage_report
from qgnn.services.query_template import QueryTemplate
from qgnn.services.sparql_parser import QueryAst
from qgnn.services.trace import QueryTrace

logger = logging.getLogger(__name__)


@dataclass
class BenchRow:
    path: str
    ms: float
    bytes_loaded: int
    weight_bytes: int
    chunks_loaded: int
    chunks_total: int
    multiply_adds: int

    @classmethod
    def from_trace(cls, path: str, ms: float, trace: QueryTrace, chunks_total: int) -> "BenchRow":
        return cls(path, ms, trace.bytes_loaded, trace.weight_bytes, trace.chunks_loaded, chunks_total, trace.multiply_adds)

    @property
    def chunk_fraction(self) -> float:
        return self.chunks_loaded / self.chunks_total if self.chunks_total else 0.0

    def to_dict(self) -> dict:
        return {
            "path": self.path, "ms": round(self.ms, 3), "bytes_loaded": self.bytes_loaded,
            "weight_bytes": self.weight_bytes, "chunks_loaded": self.chunks_loaded,
            "chunks_total": self.chunks_total, "chunk_fraction": self.chunk_fraction,
            "multiply_adds": self.multiply_adds,
        }


@dataclass
class BenchReport:
    rows: List[BenchRow]
    storage: StorageReport
    max_abs_diff: float
    labels_agree: bool

    def row(self, path: str) -> BenchRow:
        return next(r for r in self.rows if r.path == path)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "storage": self.storage.to_dict(),
            "max_abs_diff": self.max_abs_diff,
            "labels_agree": self.labels_agree,
        }

    def to_table(self) -> str:
        header = f"{'path':<11} {'ms':>10} {'bytes':>12} {'chunks':>13} {'fraction':>9} {'multiply-adds':>14}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            chunks = f"{r.chunks_loaded}/{r.chunks_total}"
            lines.append(
                f"{r.path:<11} {r.ms:>10.2f} {r.bytes_loaded:>12} {chunks:>13} "
                f"{r.chunk_fraction:>9.3f} {r.multiply_adds:>14}"
            )
        lines.append(f"model bytes read by partial path: {self.storage.model_fraction:.3f} of total")
        lines.append(f"partial vs full-load: max |diff| = {self.max_abs_diff:.3e}, labels agree = {self.labels_agree}")
        return "\n".join(lines)


def _compare(partial: PredictionResult, full: PredictionResult) -> tuple:
    if partial.scores.size == 0 and full.scores.size == 0:
        return 0.0, True
    diff = float(np.max(np.abs(np.asarray(partial.scores) - np.asarray(full.scores))))
    if partial.kind == "node-classification":
        agree = [p.label for p in partial.predictions] == [p.label for p in full.predictions]
    else:
        agree = [p.ranked(1) for p in partial.predictions] == [p.ranked(1) for p in full.predictions]
    return diff, agree


def run_bench(
        template: Union[QueryTemplate, QueryAst],
        targets: Sequence[str],
        g: TripleGraph,
        enc: EncodingMaps,
        stores: Stores,
        model_def: Mapping,
        batch_size: int = 256,
        parallel: int = 1,
        mode: str = "sparse",
        density_threshold: float = DEFAULT_DENSITY_THRESHOLD,
        candidates: Sequence[str] = (),
        full_graph: bool = True
) -> BenchReport:
    """Execute the workload along every path and tabulate the costs."""
    embedding_store = stores[0]
    chunks_total = sum(m.chunk_count for m in embedding_store.manifests.values())

    started = time.perf_counter()
    sg, partial = run_query(template, targets, g, enc, stores, model_def, batch_size, parallel,
                            mode, density_threshold, candidates)
    partial_ms = (time.perf_counter() - started) * 1000.0
    extract_ms = next((s.ms for s in partial.trace.stages if s.name == "extract"), 0.0)

    started = time.perf_counter()
    full = full_forward(sg, stores, model_def, partial.mode, density_threshold)
    full_ms = (time.perf_counter() - started) * 1000.0 + extract_ms

    rows = [
        BenchRow.from_trace("partial", partial_ms, partial.trace, chunks_total),
        BenchRow.from_trace("full-load", full_ms, full.trace, chunks_total),
    ]
    if full_graph:
        started = time.perf_counter()
        encoded = encode_full_graph(g, enc)
        whole = full_graph_forward(encoded, enc, stores, model_def, targets, candidates, mode="sparse")
        rows.append(BenchRow.from_trace("full-graph", (time.perf_counter() - started) * 1000.0, whole.trace, chunks_total))

    diff, agree = _compare(partial, full)
    report = BenchReport(rows, storage_report(embedding_store, partial.trace), diff, agree)
    logger.info(
        f"Bench: partial read {report.row('partial').chunks_loaded}/{chunks_total} chunks, "
        f"max |diff| vs full-load {diff:.3e}"
    )
    return report
