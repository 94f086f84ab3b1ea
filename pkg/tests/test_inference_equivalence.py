"""
Compact model vs full-load model over a sweep of generated pipelines.

Both paths run the same subgraph with the same resolved mode, so their
scores must be bitwise equal, not merely close.
"""
import random

import numpy as np
import pytest

from qgnn.services.inference import full_forward, run_query
from qgnn.services.synthetic import NAMESPACE

MODES = ("auto", "sparse", "dense")
CHUNK_ROWS = (1, 3, 4, 16)


def _case(i):
    link_prediction = i % 6 == 5
    kg_args = {
        "two_hop": i % 2 == 0,
        "num_types": 2 if link_prediction else 2 + i % 4,
        "num_predicates": 2 + i % 7,
        "num_targets": 10 + i % 13,
        "nodes_per_type": 3 + i % 9,
    }
    return {
        "seed": i,
        "chunk_rows": CHUNK_ROWS[i % 4],
        "epochs": 5 if (i % 9 == 0 and not link_prediction) else 0,
        "kind": "link-prediction" if link_prediction else "node-classification",
        "num_layers": 1 + i % 3,
        **kg_args,
    }, MODES[i % 3]


@pytest.mark.slow
@pytest.mark.parametrize("i", range(54))
def test_compact_model_equals_full_model(build_pipeline, i):
    args, mode = _case(i)
    p = build_pipeline(**args)
    rng = random.Random(i)
    targets = rng.sample(list(p.kg.targets), rng.randint(1, len(p.kg.targets)))
    if i % 4 == 1:
        targets.append(NAMESPACE + f"paper/cold{i}")

    candidates = ()
    if args["kind"] == "link-prediction":
        index = p.enc.type_index(NAMESPACE + "Author")
        start = p.enc.type_offsets[index]
        candidates = p.enc.node_dec[start:start + p.enc.type_counts[index]]

    sg, compact = run_query(p.template, targets, p.kg.graph, p.enc, p.stores, p.meta,
                            batch_size=1 + i % 5, parallel=1 + i % 2, mode=mode, candidates=candidates)
    full = full_forward(sg, p.stores, p.meta, compact.mode)

    assert compact.mode == full.mode
    assert compact.scores.shape == full.scores.shape
    assert np.array_equal(compact.scores, full.scores)
    assert [x.label for x in compact.predictions] == [x.label for x in full.predictions]
    assert compact.trace.chunks_loaded <= full.trace.chunks_loaded
    assert compact.trace.multiply_adds == full.trace.multiply_adds
