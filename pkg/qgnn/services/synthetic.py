"""
Synthetic typed knowledge graphs.

make_typed_kg builds a small typed KG with a node-classification signal:
every target links through `about` to exactly one node, and the target's
label is that node's type. A matching one-hop template, labels and
link-prediction positives come with it. The construction is a pure
function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from qgnn.core.errors import ConfigurationError
from qgnn.services.kg_store import DEFAULT_PREFIXES, RDF_TYPE, Literal, Triple, TripleGraph

NAMESPACE = "http://example.org/synthetic/"
TYPE_NAMES = ("Paper", "Author", "Venue", "Topic", "Org")
TARGET_TYPE = NAMESPACE + "Paper"
ABOUT = NAMESPACE + "about"
TITLE = NAMESPACE + "title"


def _curie(iri: str) -> str:
    return "ex:" + iri[len(NAMESPACE):]


def synthetic_template(target_predicates: Sequence[str], hop_predicates: Sequence[str] = ()) -> str:
    """
    One UNION branch per predicate, each binding ?p to the predicate it matches.

    `target_predicates` are read off the targets; `hop_predicates` off the
    nodes the targets are `about`, projected as the subject.
    """
    branches = []
    for iri in target_predicates:
        name = _curie(iri)
        branches.append(
            f"  {{ SELECT ?s ?p ?o WHERE {{ ?s {name} ?o . BIND(\"{name}\" AS ?p) . VALUES ?s {{<VT-List>}} . }} }}"
        )
    for iri in hop_predicates:
        name = _curie(iri)
        branches.append(
            f"  {{ SELECT (?m AS ?s) ?p ?o WHERE {{ ?t ex:about ?m . ?m {name} ?o . "
            f"BIND(\"{name}\" AS ?p) . VALUES ?t {{<VT-List>}} . }} }}"
        )
    body = "\n  UNION\n".join(branches)
    return f"PREFIX ex: <{NAMESPACE}>\nSELECT ?s ?p ?o WHERE {{\n{body}\n}}\n"


@dataclass(frozen=True)
class SyntheticKg:
    graph: TripleGraph
    labels: Dict[str, str]
    targets: Tuple[str, ...]
    template: str
    target_type: str = TARGET_TYPE

    @property
    def link_positives(self) -> List[Tuple[str, str]]:
        """(target, about-neighbour) pairs; the LP ground truth of the `about` predicate."""
        return sorted(
            (t.subject, t.object) for t in self.graph.match(predicate=ABOUT)
            if t.subject in self.labels
        )

    def labels_tsv(self) -> str:
        return "".join(f"{iri}\t{label}\n" for iri, label in sorted(self.labels.items()))


def _iri(type_name: str, index: int, prefix: str = "") -> str:
    return f"{NAMESPACE}{type_name.lower()}/{prefix}{index:05d}"


def make_typed_kg(
        seed: int,
        num_targets: int = 40,
        nodes_per_type: int = 8,
        num_types: int = 4,
        num_predicates: int = 4,
        extra_nodes: int = 0,
        two_hop: bool = False
) -> SyntheticKg:
    """
    Build a deterministic typed KG.

    Args:
        seed: Seed of every random choice
        num_targets: Number of Paper (target-type) nodes
        nodes_per_type: Nodes of each non-target type
        num_types: Node types including Paper (2..5)
        num_predicates: Non-type predicates including `about` and `title` (2..8)
        extra_nodes: Additional nodes per non-target type, linked only among
            themselves and sorting after every regular node, so a target's
            neighbourhood and every regular node's row are unchanged
        two_hop: Ship the two-hop template instead of the one-hop one

    Raises:
        ConfigurationError: If a count is outside its range
    """
    if not 2 <= num_types <= len(TYPE_NAMES):
        raise ConfigurationError(f"num_types must be in [2, {len(TYPE_NAMES)}], got {num_types}")
    if not 2 <= num_predicates <= 8:
        raise ConfigurationError(f"num_predicates must be in [2, 8], got {num_predicates}")
    if num_targets < 1 or nodes_per_type < 1 or extra_nodes < 0:
        raise ConfigurationError("num_targets and nodes_per_type must be positive, extra_nodes non-negative")

    rng = np.random.default_rng(seed)
    others = TYPE_NAMES[1:num_types]
    classes = others[:3]
    noise = [NAMESPACE + f"rel{k}" for k in range(num_predicates - 2)]
    triples: List[Triple] = []

    members = {name: [_iri(name, i) for i in range(nodes_per_type)] for name in others}
    for name, iris in members.items():
        triples.extend(Triple(iri, RDF_TYPE, NAMESPACE + name) for iri in iris)

    labels: Dict[str, str] = {}
    targets = tuple(_iri("Paper", i) for i in range(num_targets))
    for i, paper in enumerate(targets):
        triples.append(Triple(paper, RDF_TYPE, TARGET_TYPE))
        triples.append(Triple(paper, TITLE, Literal(f"paper {i}")))
        cls = classes[int(rng.integers(len(classes)))]
        neighbour = members[cls][int(rng.integers(nodes_per_type))]
        triples.append(Triple(paper, ABOUT, neighbour))
        labels[paper] = NAMESPACE + cls
        for k in range(0, len(noise), 2):
            for _ in range(int(rng.integers(0, 3))):
                obj_type = others[int(rng.integers(len(others)))]
                triples.append(Triple(paper, noise[k], members[obj_type][int(rng.integers(nodes_per_type))]))

    # odd noise predicates connect non-target nodes among themselves
    for k in range(1, len(noise), 2):
        for name in others:
            for iri in members[name]:
                obj_type = others[int(rng.integers(len(others)))]
                triples.append(Triple(iri, noise[k], members[obj_type][int(rng.integers(nodes_per_type))]))

    if extra_nodes:
        extras = {name: [_iri(name, i, prefix="zz") for i in range(extra_nodes)] for name in others}
        linking = noise[1::2] or [ABOUT]
        for name, iris in extras.items():
            for iri in iris:
                triples.append(Triple(iri, RDF_TYPE, NAMESPACE + name))
                obj_type = others[int(rng.integers(len(others)))]
                partner = extras[obj_type][int(rng.integers(extra_nodes))]
                triples.append(Triple(iri, linking[int(rng.integers(len(linking)))], partner))

    graph = TripleGraph(triples, prefixes={**DEFAULT_PREFIXES, "ex": NAMESPACE})
    template = synthetic_template([TITLE, ABOUT] + noise[0::2], noise[1::2] if two_hop else ())
    return SyntheticKg(graph, labels, targets, template)
