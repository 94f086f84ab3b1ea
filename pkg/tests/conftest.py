"""
PyTest setup:
- Integration tests must be marked with @pytest.mark.integration (they need a live LLM endpoint)
- Randomized acceptance sweeps are marked with @pytest.mark.slow
- Unit tests are unmarked; run them with: pytest -m "not integration and not slow"
"""


import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import requests
import torch

from qgnn.services.encoding import EncodingMaps, build_encodings, encode_full_graph
from qgnn.services.kg_store import read_schema_stats
from qgnn.services.llm_client import FixtureTransport
from qgnn.services.model_store import decompose, read_model_meta
from qgnn.services.query_template import QueryTemplate
from qgnn.services.rgcn_core import ClassifierHead, DistMultHead, LayerWeights, RgcnModel
from qgnn.services.synthetic import ABOUT, make_typed_kg
from qgnn.services.trainer import NodeClassificationTask, TrainingConfig, model_meta, train

FIXTURES = Path(__file__).parent / "fixtures"
DBLP = FIXTURES / "dblp"


# ---------- Shared fixtures ----------

@pytest.fixture(scope="session")
def dblp_dir():
    """Schema listing and replayable LLM responses for the DBLP paper-venue task."""
    return DBLP


@pytest.fixture(scope="session")
def dblp_stats():
    return read_schema_stats(DBLP / "schema_stats.txt")


@pytest.fixture
def mock_llm():
    """Fixture-replaying transport with the DBLP responses; `.calls` counts sends."""
    return FixtureTransport(DBLP / "llm")


@pytest.fixture
def write_fixtures(tmp_path):
    """
    Create a fixture directory from a {stage: response} mapping.
    Usage:
        llm = FixtureTransport(write_fixtures({"bgps_to_sparql": "SELECT ..."}))
    """
    def _write(responses, name="llm"):
        root = tmp_path / name
        root.mkdir(exist_ok=True)
        for stage, text in responses.items():
            (root / f"{stage}.txt").write_text(text, encoding="utf-8")
        return root
    return _write


@pytest.fixture(scope="session")
def small_kg():
    """40 papers, 3 classes, one-hop template."""
    return make_typed_kg(seed=7)


def random_model(enc: EncodingMaps, embedding_dim=8, hidden_dim=8, num_layers=2, seed=0,
                 head_kind="classifier", link_predicate=None) -> RgcnModel:
    """A model with random float32 parameters shaped for the given encodings."""
    rng = np.random.default_rng(seed)
    dims = [embedding_dim] + [hidden_dim] * num_layers
    layers = [
        LayerWeights(
            torch.from_numpy(rng.standard_normal((enc.num_relations, a, b)).astype(np.float32) * 0.5),
            torch.from_numpy(rng.standard_normal((a, b)).astype(np.float32) * 0.5),
        )
        for a, b in zip(dims, dims[1:])
    ]
    embeddings = {
        t: rng.standard_normal((c, embedding_dim)).astype(np.float32)
        for t, c in zip(enc.type_names, enc.type_counts)
    }
    hyper = TrainingConfig(embedding_dim=embedding_dim, hidden_dim=hidden_dim, num_layers=num_layers, seed=seed)
    extra = {"link_predicate": link_predicate} if link_predicate else {}
    model = RgcnModel(layers, embeddings, head_kind, meta=model_meta(enc, hyper, head_kind, **extra))
    if head_kind == "classifier":
        classes = max(len(enc.label_enc), 1)
        model.classifier = ClassifierHead(
            torch.from_numpy(rng.standard_normal((hidden_dim, classes)).astype(np.float32)),
            torch.from_numpy(rng.standard_normal(classes).astype(np.float32)),
        )
    else:
        model.distmult = DistMultHead(
            torch.from_numpy(rng.standard_normal((enc.num_predicates, hidden_dim)).astype(np.float32))
        )
    return model


@pytest.fixture(scope="session")
def make_random_model():
    return random_model


@pytest.fixture
def build_pipeline(tmp_path):
    """
    Synthetic KG -> encodings -> model -> decomposed store, in one call.
    Usage:
        p = build_pipeline(seed=3, chunk_rows=4)
        sg, result = run_query(p.template, p.kg.targets, p.kg.graph, p.enc, p.stores, p.meta)
    Pass epochs=0 to skip training and use a random model instead.
    """
    counter = {"n": 0}

    def _build(seed=0, chunk_rows=4, epochs=0, kind="node-classification", hidden_dim=8,
               embedding_dim=8, num_layers=2, **kg_args):
        counter["n"] += 1
        root = tmp_path / f"pipeline_{counter['n']}"
        kg = make_typed_kg(seed, **kg_args)
        if kind == "node-classification":
            enc = build_encodings(kg.graph, kg.target_type, kg.labels.values())
            link_predicate, head_kind = None, "classifier"
        else:
            enc = build_encodings(kg.graph, kg.target_type)
            link_predicate, head_kind = ABOUT, "distmult"

        if epochs:
            nodes = sorted(kg.labels)
            task = NodeClassificationTask(
                [enc.node_enc[n] for n in nodes], [enc.label_enc[kg.labels[n]] for n in nodes]
            )
            hyper = TrainingConfig(epochs=epochs, lr=0.05, num_layers=num_layers, hidden_dim=hidden_dim,
                                   embedding_dim=embedding_dim, seed=seed)
            model = train(encode_full_graph(kg.graph, enc).graph, enc, task, hyper)
        else:
            model = random_model(enc, embedding_dim, hidden_dim, num_layers, seed, head_kind, link_predicate)

        stores = decompose(model, chunk_rows, root)
        enc.save(root)
        return SimpleNamespace(
            kg=kg, enc=enc, model=model, stores=stores, meta=read_model_meta(root), root=root,
            template=QueryTemplate.from_text(kg.template),
        )
    return _build


# ---------- Helpers for the HTTP layer (llm_client) ----------

class _DummyResp:
    """
    A requests.Response stand-in that is enough for our transport tests.
    """
    def __init__(self, status=200, data=None):
        self.status_code = status
        self._data = data or {}
        self.ok = (status == 200)

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"HTTP {self.status_code}", response=self)

    def json(self):
        return self._data


@pytest.fixture(scope="session")
def DummyResp():
    """
    Returns the DummyResp class so every test can build fake responses.

    Usage:
        def test_something(DummyResp, monkeypatch):
            def fake_post(*a, **k): return DummyResp(200, {"x": 1})
            monkeypatch.setattr(lc.requests, "post", fake_post)
    """
    return _DummyResp


@pytest.fixture
def exp(request):
    """
    Usage:
        exp.expect("exit code 2 with the violation listed")
        exp.actual(f"code={code}")
    """
    class _Exp:
        def expect(self, msg: str):
            request.node._expected = msg
        def actual(self, msg: str):
            request.node._actual = msg
    return _Exp()

# ---------- hook: output format: file -> tests -> status + EXPECTED/ACTUAL + file summary ----------

_last_file = None
_current_failed = False
_current_count = 0

def _normalize_path(item):
    p = str(item.fspath)
    try:
        rel = os.path.relpath(p, start=os.getcwd())
    except Exception:
        rel = p
    return rel.replace("\\", "/")

def _flush_file_status():
    """Print 'ALL PASSED' at the end of a file when none of its tests failed."""
    global _last_file, _current_failed, _current_count
    if _last_file is not None and _current_count > 0 and not _current_failed:
        print("  >>> FILE STATUS: ALL PASSED")
        sys.stdout.flush()

def pytest_runtest_makereport(item, call):
    global _last_file, _current_failed, _current_count
    if call.when != "call":
        return

    file_path = _normalize_path(item)
    test_name = item.name

    if file_path != _last_file:
        _flush_file_status()
        print(f"\n{file_path}")
        sys.stdout.flush()
        _last_file = file_path
        _current_failed = False
        _current_count = 0

    expected = getattr(item, "_expected", None)
    actual = getattr(item, "_actual", None)
    passed = (call.excinfo is None)

    _current_count += 1
    if not passed:
        _current_failed = True

    status_str = "PASSED" if passed else "FAILED"
    print(f"  {test_name} ... {status_str}")
    if expected:
        print(f"    EXPECTED: {expected}")
    if not passed and actual:
        print(f"    ACTUAL:   {actual}")
    sys.stdout.flush()

def pytest_sessionfinish(session, exitstatus):
    _flush_file_status()
    sys.stdout.flush()
