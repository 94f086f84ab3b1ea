"""
Node, relation and label encodings.

Encodings are fixed at training time and reused verbatim at inference, so
a node's global id is also its embedding row. Global ids are assigned in
contiguous blocks, one block per node type (types sorted, IRIs sorted
within a type), which makes `row = global id - block offset`.

Every predicate r has a forward relation id i and an inverse relation
`^r` with id i + num_predicates; messages travel along both.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple
import hashlib
import json
import logging
import math

import numpy as np

from qgnn.core.errors import DataMismatchError, StorageIOError
from qgnn.services.kg_store import RDF_TYPE, Literal, TripleGraph
from qgnn.services.rgcn_core import EncodedGraph

logger = logging.getLogger(__name__)

ENCODINGS_FILE = "encodings.json"
INVERSE_MARK = "^"
LITERAL_TYPE_ID = -1


class UnknownPredicateError(DataMismatchError):
    """Raised when a predicate has no relation encoding."""


def target_vector(iri: str, dim: int, seed: int) -> np.ndarray:
    """
    Deterministic Xavier-uniform input vector for a target node.

    The same (iri, dim, seed) always yields the same float32 vector, at
    training time and for cold targets at inference.
    """
    digest = hashlib.sha256(f"{seed}\x00{iri}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    bound = math.sqrt(6.0 / (1 + dim))
    return rng.uniform(-bound, bound, dim).astype(np.float32)


@dataclass(frozen=True)
class EncodingMaps:
    """
    Training-time encodings of one task.

    Attributes:
        type_names: Node types in block order
        type_counts: Rows per type block
        node_enc: IRI -> global node id
        predicates: Forward predicate IRIs; position = relation id
        label_enc: Label -> class id
        target_type: Type of the task's target nodes
    """

    type_names: Tuple[str, ...]
    type_counts: Tuple[int, ...]
    node_enc: Mapping[str, int]
    predicates: Tuple[str, ...]
    label_enc: Mapping[str, int] = field(default_factory=dict)
    target_type: str = ""

    def __post_init__(self):
        if len(self.type_names) != len(self.type_counts):
            raise DataMismatchError("type_names and type_counts differ in length")
        if sum(self.type_counts) != len(self.node_enc):
            raise DataMismatchError("type block sizes do not add up to the node count")
        if sorted(self.node_enc.values()) != list(range(len(self.node_enc))):
            raise DataMismatchError("node encodings are not a bijection onto 0..N-1")
        if sorted(self.label_enc.values()) != list(range(len(self.label_enc))):
            raise DataMismatchError("label encodings are not a bijection onto 0..C-1")

    @cached_property
    def type_offsets(self) -> Tuple[int, ...]:
        offsets, running = [], 0
        for count in self.type_counts:
            offsets.append(running)
            running += count
        return tuple(offsets)

    @property
    def num_nodes(self) -> int:
        return len(self.node_enc)

    @property
    def num_predicates(self) -> int:
        return len(self.predicates)

    @property
    def num_relations(self) -> int:
        return 2 * len(self.predicates)

    @property
    def relation_keys(self) -> Tuple[str, ...]:
        """Relation key per relation id: forward IRIs, then `^IRI` inverses."""
        return self.predicates + tuple(INVERSE_MARK + p for p in self.predicates)

    @cached_property
    def rel_enc(self) -> Mapping[str, int]:
        return {key: index for index, key in enumerate(self.relation_keys)}

    @cached_property
    def node_dec(self) -> Tuple[str, ...]:
        decoded = [""] * self.num_nodes
        for iri, gid in self.node_enc.items():
            decoded[gid] = iri
        return tuple(decoded)

    @property
    def label_dec(self) -> List[str]:
        decoded = [""] * len(self.label_enc)
        for label, index in self.label_enc.items():
            decoded[index] = label
        return decoded

    @cached_property
    def _type_positions(self) -> Mapping[str, int]:
        return {name: index for index, name in enumerate(self.type_names)}

    def type_index(self, type_name: str) -> int:
        index = self._type_positions.get(type_name)
        if index is None:
            raise DataMismatchError(f"Type {type_name} has no encoding block")
        return index

    def type_of_id(self, gid: int) -> str:
        if not 0 <= gid < self.num_nodes:
            raise DataMismatchError(f"Global node id {gid} outside [0, {self.num_nodes})")
        position = bisect_right(self.type_offsets, gid) - 1
        while self.type_counts[position] == 0:
            position -= 1
        return self.type_names[position]

    def row_of(self, gid: int) -> Tuple[str, int]:
        """(type, embedding row) of a global id."""
        type_name = self.type_of_id(gid)
        return type_name, gid - self.type_offsets[self.type_index(type_name)]

    def global_id(self, type_name: str, row: int) -> int:
        return self.type_offsets[self.type_index(type_name)] + row

    def relation_id(self, predicate: str, inverse: bool = False) -> int:
        """
        Relation id of a predicate IRI.

        Raises:
            UnknownPredicateError: If the predicate was not seen at training time
        """
        index = self.rel_enc.get(predicate)
        if index is None or index >= self.num_predicates:
            raise UnknownPredicateError(f"Predicate {predicate} has no relation encoding")
        return index + self.num_predicates if inverse else index

    def to_dict(self) -> dict:
        return {
            "target_type": self.target_type,
            "types": [{"name": n, "count": c} for n, c in zip(self.type_names, self.type_counts)],
            "nodes": list(self.node_dec),
            "predicates": list(self.predicates),
            "labels": self.label_dec,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncodingMaps":
        try:
            nodes = data["nodes"]
            return cls(
                type_names=tuple(t["name"] for t in data["types"]),
                type_counts=tuple(int(t["count"]) for t in data["types"]),
                node_enc={iri: gid for gid, iri in enumerate(nodes)},
                predicates=tuple(data["predicates"]),
                label_enc={label: i for i, label in enumerate(data.get("labels", []))},
                target_type=data.get("target_type", ""),
            )
        except (KeyError, TypeError) as e:
            raise DataMismatchError(f"Malformed encodings document: {e}") from e

    def save(self, directory: Path) -> Path:
        path = Path(directory) / ENCODINGS_FILE
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
        except OSError as e:
            raise StorageIOError(f"Cannot write encodings {path}: {e}") from e
        return path

    @classmethod
    def load(cls, directory: Path) -> "EncodingMaps":
        path = Path(directory) / ENCODINGS_FILE
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except OSError as e:
            raise StorageIOError(f"Cannot read encodings {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataMismatchError(f"Encodings file {path} is not valid JSON: {e}") from e


def build_encodings(
        g: TripleGraph,
        target_type: str,
        labels: Iterable[str] = ()
) -> EncodingMaps:
    """Encode every non-literal node of g (type blocks) and every non-type predicate."""
    by_type: Dict[str, List[str]] = {}
    for node in g.nodes:
        by_type.setdefault(g.type_of(node), []).append(node)

    type_names = tuple(sorted(by_type))
    node_enc: Dict[str, int] = {}
    for type_name in type_names:
        for iri in sorted(by_type[type_name]):
            node_enc[iri] = len(node_enc)

    predicates = tuple(sorted(p for p in g.predicates() if p != RDF_TYPE))
    label_enc = {label: i for i, label in enumerate(sorted(set(labels)))}
    enc = EncodingMaps(
        type_names=type_names,
        type_counts=tuple(len(by_type[t]) for t in type_names),
        node_enc=node_enc,
        predicates=predicates,
        label_enc=label_enc,
        target_type=target_type,
    )
    logger.info(
        f"Encoded {enc.num_nodes} nodes in {len(type_names)} type blocks, "
        f"{enc.num_predicates} predicates ({enc.num_relations} relations), {len(label_enc)} labels"
    )
    return enc


@dataclass(frozen=True)
class FullGraphEncoding:
    """A whole TripleGraph in encoded form; literal nodes follow the global ids."""

    graph: EncodedGraph
    literals: Tuple[Literal, ...]


def encode_full_graph(g: TripleGraph, enc: EncodingMaps) -> FullGraphEncoding:
    """
    Encode every non-type triple of g with forward and inverse edges.

    Each distinct literal object becomes one feature-less node appended
    after the encoded nodes.

    Raises:
        DataMismatchError: If g holds nodes or predicates the encodings lack
    """
    literal_ids: Dict[Literal, int] = {}
    edges: List[Tuple[int, int, int]] = []

    def node_id(term) -> int:
        if isinstance(term, Literal):
            if term not in literal_ids:
                literal_ids[term] = enc.num_nodes + len(literal_ids)
            return literal_ids[term]
        try:
            return enc.node_enc[term]
        except KeyError:
            raise DataMismatchError(f"Node {term} has no training encoding") from None

    for t in g.triples:
        if t.predicate == RDF_TYPE:
            continue
        s, o = node_id(t.subject), node_id(t.object)
        edges.append((s, enc.relation_id(t.predicate), o))
        edges.append((o, enc.relation_id(t.predicate, inverse=True), s))

    types = [enc.type_index(name) for name, count in zip(enc.type_names, enc.type_counts) for _ in range(count)]
    types.extend([LITERAL_TYPE_ID] * len(literal_ids))
    graph = EncodedGraph.from_edges(enc.num_nodes + len(literal_ids), edges, enc.num_relations, types)
    literals = tuple(sorted(literal_ids, key=literal_ids.get))
    return FullGraphEncoding(graph, literals)


def type_rows(enc: EncodingMaps, gids: Sequence[int]) -> Dict[str, List[int]]:
    """Group global ids into per-type embedding rows."""
    grouped: Dict[str, List[int]] = {}
    for gid in gids:
        type_name, row = enc.row_of(gid)
        grouped.setdefault(type_name, []).append(row)
    return grouped
