"""
RGCN Core

Relational graph convolution layers, task heads and operation counting.

A layer computes, for every node i,

    h'_i = act( sum_r sum_{j in N_i^r} (1 / |N_i^r|) h_j W_r  +  h_i W_0 )

with row-vector embeddings, W_r and W_0 of shape (dim_in, dim_out), ReLU on
hidden layers and identity on the last. Messages flow from an edge's source
to its destination; relations whose neighbour set is empty contribute
nothing. Everything runs in float64 on the CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np
import torch

from qgnn.core.errors import ConfigurationError, DataMismatchError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MODES = ("dense", "sparse")


class DimensionMismatchError(DataMismatchError):
    """Raised when tensors, weights and graphs disagree on shapes."""


@dataclass(frozen=True)
class EncodedGraph:
    """
    Integer-encoded multi-relational graph.

    Attributes:
        num_nodes: Node count; ids are 0..num_nodes-1
        src, rel, dst: Parallel int64 edge arrays (deduplicated, sorted)
        num_relations: Relation count; relation ids are 0..num_relations-1
        node_type_of: Type id per node (-1 for literal nodes)
    """

    num_nodes: int
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    num_relations: int
    node_type_of: np.ndarray

    @classmethod
    def from_edges(
            cls,
            num_nodes: int,
            edges: Iterable[Tuple[int, int, int]],
            num_relations: int,
            node_type_of: Optional[Sequence[int]] = None
    ) -> "EncodedGraph":
        """Build a graph from (src, relation, dst) triples, dropping duplicates."""
        unique = sorted(set((int(s), int(r), int(d)) for s, r, d in edges))
        arr = np.asarray(unique, dtype=np.int64).reshape(-1, 3)
        if len(arr):
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= num_nodes:
                raise DimensionMismatchError(f"edge endpoint outside [0, {num_nodes})")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= num_relations:
                raise DimensionMismatchError(f"relation id outside [0, {num_relations})")
        types = np.zeros(num_nodes, dtype=np.int64) if node_type_of is None else np.asarray(node_type_of, np.int64)
        if types.shape != (num_nodes,):
            raise DimensionMismatchError(f"node_type_of has {types.shape[0]} entries for {num_nodes} nodes")
        return cls(num_nodes, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), num_relations, types)

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def edges(self) -> List[Tuple[int, int, int]]:
        return list(zip(self.src.tolist(), self.rel.tolist(), self.dst.tolist()))

    @property
    def density(self) -> float:
        """|E| / |N|^2 (0 for an empty graph)."""
        return self.num_edges / (self.num_nodes ** 2) if self.num_nodes else 0.0


@dataclass
class OpCounter:
    """
    Multiply-adds of the matrix products of a forward pass.

    Sparse aggregation costs (|E| + |N|) * dim_in * dim_out per layer; dense
    aggregation adds |N|^2 * dim_out per relation with edges.
    """

    multiply_adds: int = 0

    def reset(self) -> None:
        self.multiply_adds = 0

    def add(self, count: int) -> None:
        self.multiply_adds += int(count)

    @property
    def flops(self) -> int:
        return 2 * self.multiply_adds


@dataclass
class LayerWeights:
    """One layer: relation stack (R, dim_in, dim_out) and self-loop (dim_in, dim_out)."""

    relation: torch.Tensor
    self_loop: torch.Tensor

    def __post_init__(self):
        if self.relation.dim() != 3 or self.self_loop.dim() != 2:
            raise DimensionMismatchError("relation weights must be 3-D and self-loop weights 2-D")
        if self.relation.shape[1:] != self.self_loop.shape and self.relation.shape[0] > 0:
            raise DimensionMismatchError(
                f"relation weights {tuple(self.relation.shape[1:])} disagree with self-loop {tuple(self.self_loop.shape)}"
            )

    @property
    def dim_in(self) -> int:
        return int(self.self_loop.shape[0])

    @property
    def dim_out(self) -> int:
        return int(self.self_loop.shape[1])

    @property
    def num_relations(self) -> int:
        return int(self.relation.shape[0])


@dataclass
class ClassifierHead:
    weight: torch.Tensor
    bias: torch.Tensor


@dataclass
class DistMultHead:
    """Per-relation diagonal vectors, shape (num_predicates, dim)."""

    relation: torch.Tensor


def _as_tensor(h) -> torch.Tensor:
    return h.to(DTYPE) if isinstance(h, torch.Tensor) else torch.as_tensor(np.asarray(h), dtype=DTYPE)


def edge_norm(g: EncodedGraph) -> torch.Tensor:
    """1 / |N_i^r| for every edge (i = destination, r = relation)."""
    if g.num_edges == 0:
        return torch.zeros(0, dtype=DTYPE)
    key = torch.as_tensor(g.dst * g.num_relations + g.rel)
    counts = torch.bincount(key, minlength=g.num_nodes * g.num_relations).to(DTYPE)
    return 1.0 / counts[key]


def _check_dims(g: EncodedGraph, h: torch.Tensor, layer: LayerWeights) -> None:
    if h.dim() != 2 or h.shape[0] != g.num_nodes:
        raise DimensionMismatchError(f"embeddings have shape {tuple(h.shape)} for {g.num_nodes} nodes")
    if h.shape[1] != layer.dim_in:
        raise DimensionMismatchError(f"embedding width {h.shape[1]} != layer input width {layer.dim_in}")
    if g.num_edges and int(g.rel.max()) >= layer.num_relations:
        raise DimensionMismatchError(
            f"graph uses relation {int(g.rel.max())} but the layer holds {layer.num_relations} relations"
        )


def _aggregate_sparse(g: EncodedGraph, h: torch.Tensor, layer: LayerWeights, counter: OpCounter) -> torch.Tensor:
    out = torch.zeros(g.num_nodes, layer.dim_out, dtype=DTYPE)
    if g.num_edges == 0:
        return out
    norm = edge_norm(g)
    src, rel, dst = (torch.as_tensor(a) for a in (g.src, g.rel, g.dst))
    for r in torch.unique(rel).tolist():
        mask = rel == r
        messages = h[src[mask]] @ layer.relation[r].to(DTYPE)
        out.index_add_(0, dst[mask], messages * norm[mask].unsqueeze(1))
        counter.add(int(mask.sum()) * layer.dim_in * layer.dim_out)
    return out


def _aggregate_dense(g: EncodedGraph, h: torch.Tensor, layer: LayerWeights, counter: OpCounter) -> torch.Tensor:
    out = torch.zeros(g.num_nodes, layer.dim_out, dtype=DTYPE)
    if g.num_edges == 0:
        return out
    norm = edge_norm(g)
    src, rel, dst = (torch.as_tensor(a) for a in (g.src, g.rel, g.dst))
    for r in torch.unique(rel).tolist():
        mask = rel == r
        adjacency = torch.zeros(g.num_nodes, g.num_nodes, dtype=DTYPE)
        adjacency[dst[mask], src[mask]] = norm[mask]
        transformed = h @ layer.relation[r].to(DTYPE)
        out = out + adjacency @ transformed
        counter.add(g.num_nodes * layer.dim_in * layer.dim_out + g.num_nodes * g.num_nodes * layer.dim_out)
    return out


def rgcn_layer_forward(
        g: EncodedGraph,
        h,
        layer: LayerWeights,
        counter: Optional[OpCounter] = None,
        activation: bool = True,
        mode: str = "sparse"
) -> torch.Tensor:
    """
    One relational convolution over all nodes of g.

    Args:
        g: Graph the messages travel on
        h: (num_nodes, dim_in) input embeddings
        layer: Weights of this layer
        counter: Accumulates multiply-adds
        activation: Apply ReLU (hidden layers) or not (last layer)
        mode: 'sparse' (per-relation edge lists) or 'dense' (per-relation adjacency)

    Raises:
        DimensionMismatchError: If shapes disagree
    """
    if mode not in MODES:
        raise ConfigurationError(f"Unknown aggregation mode '{mode}' (expected one of {MODES})")
    counter = counter if counter is not None else OpCounter()
    h = _as_tensor(h)
    _check_dims(g, h, layer)

    aggregate = _aggregate_sparse if mode == "sparse" else _aggregate_dense
    out = aggregate(g, h, layer, counter)
    out = out + h @ layer.self_loop.to(DTYPE)
    counter.add(g.num_nodes * layer.dim_in * layer.dim_out)
    return torch.relu(out) if activation else out


def forward(
        g: EncodedGraph,
        h0,
        layers: Sequence[LayerWeights],
        mode: str = "sparse",
        counter: Optional[OpCounter] = None
) -> torch.Tensor:
    """
    L stacked layers; ReLU between layers, identity after the last.

    The counter is reset on entry and holds this pass's multiply-adds on return.
    """
    if not layers:
        raise ConfigurationError("A model needs at least one layer")
    counter = counter if counter is not None else OpCounter()
    counter.reset()
    h = _as_tensor(h0)
    for index, layer in enumerate(layers):
        h = rgcn_layer_forward(g, h, layer, counter, activation=index < len(layers) - 1, mode=mode)
    return h


def classify(outputs, head: ClassifierHead) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class scores and labels; argmax ties go to the lowest class index.

    Returns:
        (scores of shape (n, classes), labels of shape (n,))
    """
    outputs = _as_tensor(outputs)
    if outputs.dim() != 2 or outputs.shape[1] != head.weight.shape[0]:
        raise DimensionMismatchError(
            f"outputs of shape {tuple(outputs.shape)} do not fit a head expecting width {head.weight.shape[0]}"
        )
    scores = (outputs @ head.weight.to(DTYPE) + head.bias.to(DTYPE)).detach().numpy()
    labels = np.argmax(scores, axis=1) if scores.shape[0] else np.zeros(0, dtype=np.int64)
    return scores, labels


def score_links(outputs, decoder: DistMultHead, triples: Sequence[Tuple[int, int, int]]) -> np.ndarray:
    """DistMult score sum_d h_d * r_d * t_d for each (head, relation, tail)."""
    outputs = _as_tensor(outputs)
    if not len(triples):
        return np.zeros(0, dtype=np.float64)
    arr = torch.as_tensor(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
    if arr[:, [0, 2]].max() >= outputs.shape[0] or arr[:, 1].max() >= decoder.relation.shape[0] or arr.min() < 0:
        raise DimensionMismatchError("link candidate index outside the outputs or relation range")
    if outputs.shape[1] != decoder.relation.shape[1]:
        raise DimensionMismatchError(
            f"output width {outputs.shape[1]} != decoder width {decoder.relation.shape[1]}"
        )
    heads = outputs[arr[:, 0]]
    tails = outputs[arr[:, 2]]
    rels = decoder.relation.to(DTYPE)[arr[:, 1]]
    return (heads * rels * tails).sum(dim=1).detach().numpy()


def rank_of(scores: Sequence[float], index: int) -> int:
    """0-based rank of one candidate; equal scores rank the lower index first."""
    scores = np.asarray(scores, dtype=np.float64)
    target = scores[index]
    better = int(np.sum(scores > target))
    tied_before = int(np.sum(scores[:index] == target))
    return better + tied_before


def rank_hits_at_k(scores: Sequence[Sequence[float]], positives: Sequence[Iterable[int]], k: int) -> float:
    """
    Fraction of positives ranked within the top k of their candidate list.

    Args:
        scores: One score list per query
        positives: Candidate indices of the true links, one collection per query
        k: Cut-off

    Raises:
        ConfigurationError: If k < 1
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    hits = total = 0
    for query_scores, query_positives in zip(scores, positives):
        for index in query_positives:
            total += 1
            hits += rank_of(query_scores, index) < k
    return hits / total if total else 0.0


@dataclass
class RgcnModel:
    """
    A trained model in the decomposed shape the stores persist.

    Attributes:
        layers: Per-layer weights (relation stack covers forward and inverse relations)
        embeddings: Type name -> (num_rows, embedding_dim) input matrix
        head_kind: 'classifier' or 'distmult'
        classifier / distmult: The task head
        meta: Model definition (relation keys, type names, labels, hyperparameters)
    """

    layers: List[LayerWeights]
    embeddings: dict
    head_kind: str
    classifier: Optional[ClassifierHead] = None
    distmult: Optional[DistMultHead] = None
    meta: dict = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def embedding_dim(self) -> int:
        return self.layers[0].dim_in
