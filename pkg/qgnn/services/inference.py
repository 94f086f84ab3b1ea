"""
Query-aware Inference

Answers one inference query with a compact model:

1. extract_subgraph: instantiate the template with the targets, execute it
   in batches, deduplicate, and encode the resulting triples into a local
   graph whose nodes keep their training-time encodings.
2. instantiate: load all layer weights, fetch only the embedding chunks
   that cover the subgraph's non-target nodes, and initialise the targets.
3. predict: run the RGCN over the subgraph only and decode the targets.

full_forward runs the same computation from fully loaded embedding
matrices and is the reference the compact path must agree with;
full_graph_forward is conventional whole-graph inference.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
import json
import logging

import numpy as np

from qgnn.core.errors import ConfigurationError, DataMismatchError, StorageIOError, VerificationError
from qgnn.services.encoding import LITERAL_TYPE_ID, EncodingMaps, FullGraphEncoding, target_vector
from qgnn.services.kg_store import RDF_TYPE, Literal, Term, Triple, TripleGraph, term_key
from qgnn.services.model_store import ChunkedEmbeddingStore, LoadedWeights, ParameterStore
from qgnn.services.query_template import QueryTemplate
from qgnn.services.rgcn_core import (
    EncodedGraph, OpCounter, classify, forward, rank_hits_at_k, score_links,
)
from qgnn.services.sparql_engine import execute_batched
from qgnn.services.sparql_parser import QueryAst, bound_predicate
from qgnn.services.trace import QueryTrace

logger = logging.getLogger(__name__)

TARGET = "target"
COLD = "cold"
RESIDENT = "resident"
LITERAL = "literal"
UNSEEN = "unseen"

DEFAULT_DENSITY_THRESHOLD = 0.01
Stores = Tuple[ChunkedEmbeddingStore, ParameterStore]


class StaleStoreError(DataMismatchError):
    """Raised when the subgraph references rows the embedding store does not hold."""


class MissingLabelsError(DataMismatchError):
    """Raised when ground truth does not cover every predicted target."""

    def __init__(self, targets: Sequence[str]):
        self.targets = tuple(targets)
        shown = ", ".join(self.targets[:10]) + (" ..." if len(self.targets) > 10 else "")
        super().__init__(f"No ground truth for {len(self.targets)} target(s): {shown}")


class TemplateShapeError(VerificationError):
    """Raised when a template does not project (subject, predicate, object)."""


@dataclass(frozen=True)
class SubgraphNode:
    """One local node: its term, role, and (for resident nodes) its embedding row."""

    term: Term
    kind: str
    node_type: Optional[str] = None
    row: Optional[int] = None


@dataclass(frozen=True)
class InferenceSubgraph:
    """
    Encoded subgraph of one query.

    Local ids 0..num_targets-1 are the targets, in request order; the rest
    follow in term order. Edge relation ids are the training-time relation
    encodings.
    """

    graph: EncodedGraph
    nodes: Tuple[SubgraphNode, ...]
    num_targets: int
    triples: Tuple[Triple, ...] = ()
    candidates: Tuple[int, ...] = ()

    @property
    def targets(self) -> Tuple[str, ...]:
        return tuple(node.term for node in self.nodes[:self.num_targets])

    @property
    def cold_targets(self) -> Tuple[str, ...]:
        return tuple(node.term for node in self.nodes[:self.num_targets] if node.kind == COLD)

    def resident_rows(self) -> Dict[str, FrozenSet[int]]:
        """Embedding rows per type of the non-target nodes that need stored vectors."""
        grouped: Dict[str, set] = {}
        for node in self.nodes:
            if node.kind == RESIDENT:
                grouped.setdefault(node.node_type, set()).add(node.row)
        return {node_type: frozenset(rows) for node_type, rows in sorted(grouped.items())}

    @property
    def num_resident(self) -> int:
        return sum(1 for node in self.nodes if node.kind == RESIDENT)


def _empty_subgraph(enc: EncodingMaps) -> InferenceSubgraph:
    graph = EncodedGraph.from_edges(0, [], enc.num_relations, [])
    return InferenceSubgraph(graph, (), 0)


def _projected_names(ast: QueryAst) -> Tuple[str, str, str]:
    names = tuple(v.name for v in ast.output_variables)
    if len(names) != 3:
        raise TemplateShapeError(
            f"Template projects {len(names)} variable(s); inference needs (subject, predicate, object)"
        )
    return names


def extract_subgraph(
        template: Union[QueryTemplate, QueryAst],
        targets: Sequence[str],
        g: TripleGraph,
        enc: EncodingMaps,
        batch_size: int = 256,
        parallel: int = 1,
        candidates: Sequence[str] = ()
) -> InferenceSubgraph:
    """
    Extract and encode the inference subgraph of a set of targets.

    The template's three projected variables are read as subject,
    predicate and object of the extracted triples. A predicate bound by
    `BIND("prefix:local" AS ?p)` is expanded against the template's
    prefixes. rdf:type triples carry no messages and are dropped.

    Args:
        template: Verified template with the `<VT-List>` placeholder
        targets: Target IRIs (duplicates ignored)
        g: Graph to extract from
        enc: Training-time encodings
        batch_size: Targets per instantiated query
        parallel: Concurrent query batches
        candidates: Link-prediction candidate tails, added as subgraph nodes

    Raises:
        UnknownPredicateError: If an extracted predicate has no relation encoding
        TemplateShapeError: If the template does not project three variables
    """
    targets = list(dict.fromkeys(targets))
    if not targets:
        return _empty_subgraph(enc)

    ast = template.parsed if isinstance(template, QueryTemplate) else template
    s_name, p_name, o_name = _projected_names(ast)
    bindings = execute_batched(g, ast, targets, batch_size, parallel)

    prefixes = ast.prefix_map
    triples = set()
    for binding in bindings:
        s, p, o = binding[s_name], binding[p_name], binding[o_name]
        if isinstance(p, Literal):
            p = bound_predicate(p.value, prefixes)
        if isinstance(s, Literal):
            logger.debug(f"Skipping binding with a literal subject: {binding}")
            continue
        if p == RDF_TYPE:
            continue
        triples.add(Triple(s, p, o))
    extracted = tuple(sorted(triples, key=Triple.sort_key))

    local: Dict[Term, int] = {iri: i for i, iri in enumerate(targets)}
    others = {t.subject for t in extracted} | {t.object for t in extracted} | set(candidates)
    for term in sorted(others - set(local), key=term_key):
        local[term] = len(local)

    nodes: List[SubgraphNode] = []
    type_ids: List[int] = []
    target_type_id = enc.type_names.index(enc.target_type) if enc.target_type in enc.type_names else LITERAL_TYPE_ID
    unseen = 0
    for term in sorted(local, key=local.get):
        if local[term] < len(targets):
            kind = TARGET if term in enc.node_enc else COLD
            nodes.append(SubgraphNode(term, kind))
            type_ids.append(target_type_id)
        elif isinstance(term, Literal):
            nodes.append(SubgraphNode(term, LITERAL))
            type_ids.append(LITERAL_TYPE_ID)
        elif term in enc.node_enc:
            node_type, row = enc.row_of(enc.node_enc[term])
            nodes.append(SubgraphNode(term, RESIDENT, node_type, row))
            type_ids.append(enc.type_index(node_type))
        else:
            unseen += 1
            nodes.append(SubgraphNode(term, UNSEEN))
            type_ids.append(LITERAL_TYPE_ID)

    edges = []
    for t in extracted:
        forward_id = enc.relation_id(t.predicate)
        inverse_id = enc.relation_id(t.predicate, inverse=True)
        s, o = local[t.subject], local[t.object]
        edges.append((s, forward_id, o))
        edges.append((o, inverse_id, s))

    graph = EncodedGraph.from_edges(len(nodes), edges, enc.num_relations, type_ids)
    sg = InferenceSubgraph(graph, tuple(nodes), len(targets), extracted, tuple(local[c] for c in candidates))

    if sg.cold_targets:
        logger.warning(f"{len(sg.cold_targets)} target(s) unseen at training time; using fresh target vectors")
    if unseen:
        logger.warning(f"{unseen} non-target node(s) unseen at training time; treated as feature-less")
    logger.info(
        f"Extracted subgraph: {len(targets)} target(s), {graph.num_nodes} nodes, "
        f"{len(extracted)} triples, {graph.num_edges} edges"
    )
    return sg


@dataclass
class CompactModel:
    """
    Query-specific model: every weight, but only the subgraph's embeddings.

    Attributes:
        weights: Layer weights and task head, loaded in full
        sparse_embeddings: type -> row -> vector, only for resident subgraph nodes
        target_init: target IRI -> input vector
        meta: Model definition
    """

    weights: LoadedWeights
    sparse_embeddings: Dict[str, Dict[int, np.ndarray]]
    target_init: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        return self.weights.layers[0].dim_in

    @property
    def num_sparse_rows(self) -> int:
        return sum(len(rows) for rows in self.sparse_embeddings.values())

    def lookup(self, node_type: str, row: int) -> Optional[np.ndarray]:
        """Stored vector of a resident node; None for rows outside the subgraph."""
        return self.sparse_embeddings.get(node_type, {}).get(row)

    @property
    def resident_nbytes(self) -> int:
        return sum(v.nbytes for rows in self.sparse_embeddings.values() for v in rows.values())


def _check_rows(store: ChunkedEmbeddingStore, node_type: str, rows: Iterable[int], dim: int) -> None:
    if node_type not in store.manifests:
        raise StaleStoreError(f"Embedding store has no type {node_type}")
    manifest = store.manifests[node_type]
    if manifest.dim != dim:
        raise StaleStoreError(f"Embeddings of {node_type} have width {manifest.dim}, the layers expect {dim}")
    beyond = sorted(r for r in rows if r >= manifest.num_rows)
    if beyond:
        raise StaleStoreError(
            f"Subgraph references row {beyond[0]} of {node_type} but the store holds {manifest.num_rows} rows"
        )


def instantiate(
        sg: InferenceSubgraph,
        stores: Stores,
        model_def: Mapping,
        parallel: int = 1,
        trace: Optional[QueryTrace] = None
) -> Tuple[CompactModel, QueryTrace]:
    """
    Build the compact model of a subgraph with partial embedding loading.

    Raises:
        StaleStoreError: If a subgraph row lies beyond the store's manifest
        CorruptStoreError: If store files disagree with their manifests
    """
    if parallel < 1:
        raise ConfigurationError(f"parallel must be >= 1, got {parallel}")
    embedding_store, parameter_store = stores
    trace = trace if trace is not None else QueryTrace()

    with trace.stage("load_weights"):
        weights = parameter_store.load_weights()
    trace.weight_bytes = weights.nbytes
    dim = weights.layers[0].dim_in

    resident = sg.resident_rows()
    for node_type, rows in resident.items():
        _check_rows(embedding_store, node_type, rows, dim)

    def fetch(item):
        node_type, rows = item
        vectors, chunks = embedding_store.fetch_embeddings(node_type, rows)
        manifest = embedding_store.manifests[node_type]
        trace.record_fetch(
            node_type, chunks, manifest.chunk_count,
            sum(manifest.chunk_nbytes(k) for k in chunks), len(rows),
        )
        return node_type, vectors

    with trace.stage("fetch_embeddings"):
        if parallel > 1 and len(resident) > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                fetched = dict(pool.map(fetch, resident.items()))
        else:
            fetched = dict(fetch(item) for item in resident.items())

    seed = int(model_def.get("seed", 0))
    with trace.stage("init_targets"):
        target_init = {iri: target_vector(iri, dim, seed) for iri in sg.targets}

    cm = CompactModel(weights, {t: fetched[t] for t in sorted(fetched)}, target_init, dict(model_def))
    trace.note_resident(cm.resident_nbytes)
    logger.info(
        f"Instantiated compact model: {cm.num_sparse_rows} resident row(s), "
        f"{trace.chunks_loaded} chunk(s), {trace.bytes_loaded} embedding bytes, {weights.nbytes} weight bytes"
    )
    return cm, trace


@dataclass(frozen=True)
class Prediction:
    """
    One target's answer.

    NC: `label` and per-class `scores`. LP: `candidates` with aligned `scores`.
    """

    target: str
    label: Optional[str] = None
    scores: Tuple[float, ...] = ()
    candidates: Tuple[str, ...] = ()

    def ranked(self, k: Optional[int] = None) -> List[Tuple[str, float]]:
        """Candidates by descending score; equal scores keep candidate order."""
        order = sorted(range(len(self.candidates)), key=lambda i: (-self.scores[i], i))
        return [(self.candidates[i], self.scores[i]) for i in order[:k]]

    def to_dict(self, top_k: int = 10) -> dict:
        if self.label is not None or not self.candidates:
            return {"target": self.target, "label": self.label, "scores": list(self.scores)}
        ranked = self.ranked(top_k)
        return {"target": self.target, "ranked": [c for c, _ in ranked], "scores": [s for _, s in ranked]}


@dataclass
class PredictionResult:
    kind: str
    predictions: List[Prediction]
    scores: np.ndarray
    mode: str
    trace: QueryTrace


def choose_mode(graph: EncodedGraph, mode: str = "auto", density_threshold: float = DEFAULT_DENSITY_THRESHOLD) -> str:
    """Resolve 'auto' to 'sparse' below the density threshold and 'dense' otherwise."""
    if mode == "auto":
        return "sparse" if graph.density < density_threshold else "dense"
    if mode not in ("sparse", "dense"):
        raise ConfigurationError(f"Unknown mode '{mode}' (expected auto, sparse or dense)")
    return mode


def _input_matrix(
        sg: InferenceSubgraph,
        dim: int,
        target_of: Callable[[str], np.ndarray],
        vector_of: Callable[[str, int], Optional[np.ndarray]]
) -> np.ndarray:
    h0 = np.zeros((len(sg.nodes), dim), dtype=np.float64)
    for i, node in enumerate(sg.nodes):
        if i < sg.num_targets:
            h0[i] = target_of(node.term)
        elif node.kind == RESIDENT:
            vector = vector_of(node.node_type, node.row)
            if vector is None:
                raise DataMismatchError(f"Model holds no embedding for {node.term} ({node.node_type} row {node.row})")
            h0[i] = vector
    return h0


def _link_relation(meta: Mapping) -> int:
    predicate = meta.get("link_predicate")
    keys = list(meta.get("relation_keys") or [])
    if not predicate or predicate not in keys:
        raise ConfigurationError(f"Model definition has no scorable link predicate ({predicate!r})")
    return keys.index(predicate)


def _decode(
        out,
        sg: InferenceSubgraph,
        weights: LoadedWeights,
        meta: Mapping
) -> Tuple[List[Prediction], np.ndarray]:
    targets = sg.targets
    if weights.head_kind == "classifier":
        scores, labels = classify(out[:sg.num_targets], weights.classifier)
        names = list(meta.get("labels") or [])
        predictions = [
            Prediction(t, names[int(l)] if int(l) < len(names) else str(int(l)), tuple(float(x) for x in row))
            for t, row, l in zip(targets, scores, labels)
        ]
        return predictions, scores

    rel = _link_relation(meta)
    candidate_terms = tuple(str(sg.nodes[c].term) for c in sg.candidates)
    rows = []
    for t_local in range(sg.num_targets):
        rows.append(score_links(out, weights.distmult, [(t_local, rel, c) for c in sg.candidates]))
    scores = np.stack(rows) if rows else np.zeros((0, len(sg.candidates)))
    predictions = [
        Prediction(t, scores=tuple(float(x) for x in row), candidates=candidate_terms)
        for t, row in zip(targets, scores)
    ]
    return predictions, scores


def _run(
        sg: InferenceSubgraph,
        weights: LoadedWeights,
        h0: np.ndarray,
        meta: Mapping,
        mode: str,
        density_threshold: float,
        trace: QueryTrace
) -> PredictionResult:
    resolved = choose_mode(sg.graph, mode, density_threshold)
    counter = OpCounter()
    with trace.stage("forward"):
        out = forward(sg.graph, h0, weights.layers, mode=resolved, counter=counter)
    trace.multiply_adds += counter.multiply_adds
    with trace.stage("decode"):
        predictions, scores = _decode(out, sg, weights, meta)
    kind = "node-classification" if weights.head_kind == "classifier" else "link-prediction"
    return PredictionResult(kind, predictions, scores, resolved, trace)


def predict(
        cm: CompactModel,
        sg: InferenceSubgraph,
        mode: str = "auto",
        density_threshold: float = DEFAULT_DENSITY_THRESHOLD,
        trace: Optional[QueryTrace] = None
) -> PredictionResult:
    """
    Run the compact model over the subgraph and decode the targets.

    Node classification returns a label per target; link prediction scores
    every candidate tail per target.
    """
    trace = trace if trace is not None else QueryTrace()
    h0 = _input_matrix(sg, cm.embedding_dim, cm.target_init.__getitem__, cm.lookup)
    result = _run(sg, cm.weights, h0, cm.meta, mode, density_threshold, trace)
    logger.info(f"Predicted {len(result.predictions)} target(s) in {result.mode} mode ({trace.multiply_adds} multiply-adds)")
    return result


def _load_everything(embedding_store: ChunkedEmbeddingStore, trace: QueryTrace) -> Dict[str, np.ndarray]:
    matrices = {}
    for node_type, manifest in sorted(embedding_store.manifests.items()):
        matrices[node_type] = embedding_store.load_all(node_type)
        trace.record_fetch(node_type, set(range(manifest.chunk_count)), manifest.chunk_count,
                           manifest.total_nbytes, manifest.num_rows)
    trace.note_resident(sum(m.nbytes for m in matrices.values()))
    return matrices


def full_forward(
        sg: InferenceSubgraph,
        stores: Stores,
        model_def: Mapping,
        mode: str = "sparse",
        density_threshold: float = DEFAULT_DENSITY_THRESHOLD
) -> PredictionResult:
    """The subgraph forward pass with every embedding matrix loaded in full."""
    embedding_store, parameter_store = stores
    trace = QueryTrace()
    with trace.stage("load_weights"):
        weights = parameter_store.load_weights()
    trace.weight_bytes = weights.nbytes
    with trace.stage("fetch_embeddings"):
        matrices = _load_everything(embedding_store, trace)
    dim = weights.layers[0].dim_in
    seed = int(model_def.get("seed", 0))

    def vector_of(node_type: str, row: int) -> Optional[np.ndarray]:
        matrix = matrices.get(node_type)
        if matrix is None or row >= matrix.shape[0]:
            raise StaleStoreError(f"Full store holds no row {row} of {node_type}")
        return matrix[row]

    h0 = _input_matrix(sg, dim, lambda iri: target_vector(iri, dim, seed), vector_of)
    return _run(sg, weights, h0, model_def, mode, density_threshold, trace)


def full_graph_forward(
        full: FullGraphEncoding,
        enc: EncodingMaps,
        stores: Stores,
        model_def: Mapping,
        targets: Sequence[str],
        candidates: Sequence[str] = (),
        mode: str = "sparse"
) -> PredictionResult:
    """
    Conventional inference: forward over the whole encoded graph, then read the targets.

    Targets without a training encoding are skipped.
    """
    embedding_store, parameter_store = stores
    trace = QueryTrace()
    with trace.stage("load_weights"):
        weights = parameter_store.load_weights()
    trace.weight_bytes = weights.nbytes
    with trace.stage("fetch_embeddings"):
        matrices = _load_everything(embedding_store, trace)

    dim = weights.layers[0].dim_in
    blocks = []
    for type_name, count in zip(enc.type_names, enc.type_counts):
        matrix = matrices.get(type_name)
        if matrix is None or matrix.shape != (count, dim):
            raise StaleStoreError(f"Store matrix of {type_name} does not match {count} encoded rows of width {dim}")
        blocks.append(matrix.astype(np.float64))
    blocks.append(np.zeros((len(full.literals), dim)))
    h0 = np.concatenate(blocks, axis=0)

    counter = OpCounter()
    with trace.stage("forward"):
        out = forward(full.graph, h0, weights.layers, mode=mode, counter=counter)
    trace.multiply_adds += counter.multiply_adds

    known = [t for t in dict.fromkeys(targets) if t in enc.node_enc]
    if len(known) < len(set(targets)):
        logger.warning(f"Full-graph inference skips {len(set(targets)) - len(known)} unencoded target(s)")
    gids = [enc.node_enc[t] for t in known]
    cand = [c for c in candidates if c in enc.node_enc]

    with trace.stage("decode"):
        if weights.head_kind == "classifier":
            scores, labels = classify(out[gids] if gids else out[:0], weights.classifier)
            names = list(model_def.get("labels") or [])
            predictions = [
                Prediction(t, names[int(l)] if int(l) < len(names) else str(int(l)), tuple(float(x) for x in row))
                for t, row, l in zip(known, scores, labels)
            ]
        else:
            rel = _link_relation(model_def)
            cand_ids = [enc.node_enc[c] for c in cand]
            rows = [score_links(out, weights.distmult, [(g, rel, c) for c in cand_ids]) for g in gids]
            scores = np.stack(rows) if rows else np.zeros((0, len(cand)))
            predictions = [
                Prediction(t, scores=tuple(float(x) for x in row), candidates=tuple(cand))
                for t, row in zip(known, scores)
            ]
    kind = "node-classification" if weights.head_kind == "classifier" else "link-prediction"
    return PredictionResult(kind, predictions, scores, mode, trace)


def evaluate(
        predictions: Sequence[Prediction],
        ground_truth: Mapping[str, Union[str, Iterable[str]]],
        kind: str,
        k: int = 10
) -> dict:
    """
    Accuracy (with a per-class breakdown) for NC, Hits@k for LP.

    LP ground truth maps each target to its true tails; a true tail outside
    the candidate list counts as a miss.

    Raises:
        MissingLabelsError: If a predicted target has no ground truth
    """
    missing = [p.target for p in predictions if p.target not in ground_truth]
    if missing:
        raise MissingLabelsError(missing)

    if kind == "node-classification":
        per_class: Dict[str, Dict[str, float]] = {}
        correct = 0
        for p in predictions:
            truth = ground_truth[p.target]
            entry = per_class.setdefault(truth, {"support": 0, "correct": 0})
            entry["support"] += 1
            if p.label == truth:
                entry["correct"] += 1
                correct += 1
        for entry in per_class.values():
            entry["accuracy"] = entry["correct"] / entry["support"]
        accuracy = correct / len(predictions) if predictions else 0.0
        return {"accuracy": accuracy, "count": len(predictions), "per_class": dict(sorted(per_class.items()))}

    if kind == "link-prediction":
        if k < 1:
            raise ConfigurationError(f"k must be >= 1, got {k}")
        scores, positives, found, total = [], [], 0, 0
        for p in predictions:
            truth = ground_truth[p.target]
            tails = {truth} if isinstance(truth, str) else set(truth)
            index = {c: i for i, c in enumerate(p.candidates)}
            present = [index[t] for t in sorted(tails) if t in index]
            total += len(tails)
            found += len(present)
            scores.append(list(p.scores))
            positives.append(present)
        hits = rank_hits_at_k(scores, positives, k) * found
        return {f"hits@{k}": hits / total if total else 0.0, "count": len(predictions), "positives": total}

    raise ConfigurationError(f"Unknown task kind '{kind}'")


def run_query(
        template: Union[QueryTemplate, QueryAst],
        targets: Sequence[str],
        g: TripleGraph,
        enc: EncodingMaps,
        stores: Stores,
        model_def: Mapping,
        batch_size: int = 256,
        parallel: int = 1,
        mode: str = "auto",
        density_threshold: float = DEFAULT_DENSITY_THRESHOLD,
        candidates: Sequence[str] = ()
) -> Tuple[InferenceSubgraph, PredictionResult]:
    """extract_subgraph, instantiate and predict under one trace."""
    trace = QueryTrace()
    with trace.stage("extract"):
        sg = extract_subgraph(template, targets, g, enc, batch_size, parallel, candidates)
    cm, trace = instantiate(sg, stores, model_def, parallel, trace)
    return sg, predict(cm, sg, mode, density_threshold, trace)


def write_predictions(path: Path, predictions: Sequence[Prediction], top_k: int = 10) -> Path:
    """JSON lines, one record per target, keys sorted."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for p in predictions:
                f.write(json.dumps(p.to_dict(top_k), sort_keys=True) + "\n")
    except OSError as e:
        logger.error(f"Cannot write predictions {path}: {e}")
        raise StorageIOError(f"Cannot write predictions {path}: {e}") from e
    return path


def write_trace(path: Path, trace: QueryTrace) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(trace.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise StorageIOError(f"Cannot write trace {path}: {e}") from e
    return path
