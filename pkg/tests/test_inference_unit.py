import dataclasses
import json

import numpy as np
import pytest

from qgnn.core.errors import ConfigurationError
from qgnn.services.bench import run_bench
from qgnn.services.encoding import UnknownPredicateError, build_encodings
from qgnn.services.inference import (
    COLD, LITERAL, RESIDENT, TARGET, UNSEEN, MissingLabelsError, Prediction, StaleStoreError, TemplateShapeError,
    choose_mode, evaluate, extract_subgraph, full_forward, instantiate, predict, run_query, write_predictions,
)
from qgnn.services.kg_store import RDF_TYPE, RDFS, Literal, Triple, TripleGraph
from qgnn.services.model_store import (
    ChunkedEmbeddingStore, ParameterStore, decompose, read_model_meta, storage_report,
)
from qgnn.services.query_template import QueryTemplate
from qgnn.services.rgcn_core import EncodedGraph
from qgnn.services.synthetic import ABOUT, NAMESPACE

COLD_IRI = NAMESPACE + "paper/cold"
DBLP_SCHEMA = "https://dblp.org/rdf/schema#"
RDFS_LABEL = RDFS + "label"


def _author_candidates(enc):
    index = enc.type_index(NAMESPACE + "Author")
    start = enc.type_offsets[index]
    return enc.node_dec[start:start + enc.type_counts[index]]


def _assert_same(compact, full):
    assert compact.mode == full.mode
    assert np.array_equal(compact.scores, full.scores)
    assert [p.label for p in compact.predictions] == [p.label for p in full.predictions]
    assert [p.ranked() for p in compact.predictions] == [p.ranked() for p in full.predictions]


def test_compact_equals_full_load(build_pipeline, exp):
    p = build_pipeline(seed=1, chunk_rows=3)
    targets = list(p.kg.targets[:6])
    sg, compact = run_query(p.template, targets, p.kg.graph, p.enc, p.stores, p.meta)
    full = full_forward(sg, p.stores, p.meta, compact.mode)
    exp.expect("compact and full-load scores are identical, compact reads fewer chunks")
    exp.actual(f"compact chunks={compact.trace.chunks_loaded} full chunks={full.trace.chunks_loaded}")
    _assert_same(compact, full)
    assert compact.trace.chunks_loaded < full.trace.chunks_loaded
    assert [pr.target for pr in compact.predictions] == targets


def test_trained_model_compact_equals_full(build_pipeline):
    p = build_pipeline(seed=2, epochs=20, two_hop=True)
    sg, compact = run_query(p.template, p.kg.targets, p.kg.graph, p.enc, p.stores, p.meta, batch_size=7)
    _assert_same(compact, full_forward(sg, p.stores, p.meta, compact.mode))


def test_link_prediction_compact_equals_full(build_pipeline):
    p = build_pipeline(seed=3, kind="link-prediction", num_types=2)
    cands = _author_candidates(p.enc)
    sg, compact = run_query(p.template, p.kg.targets[:4], p.kg.graph, p.enc, p.stores, p.meta, candidates=cands)
    full = full_forward(sg, p.stores, p.meta, compact.mode)
    _assert_same(compact, full)
    assert compact.kind == "link-prediction"
    assert compact.predictions[0].candidates == tuple(cands)
    assert compact.scores.shape == (4, len(cands))


def test_node_kinds_and_local_order(build_pipeline, exp):
    p = build_pipeline(seed=4)
    first = p.kg.targets[0]
    stranger = NAMESPACE + "author/never-trained"
    g = TripleGraph(list(p.kg.graph.triples) + [Triple(first, ABOUT, stranger)], p.kg.graph.prefixes)
    sg = extract_subgraph(p.template, [first, COLD_IRI, first], g, p.enc)
    kinds = {node.term: node.kind for node in sg.nodes}
    exp.expect("targets first in request order; cold, unseen and literal nodes classified")
    exp.actual(f"targets={sg.targets} kinds={sorted(set(kinds.values()))}")
    assert sg.targets == (first, COLD_IRI)
    assert kinds[first] == TARGET and kinds[COLD_IRI] == COLD
    assert kinds[stranger] == UNSEEN
    assert kinds[Literal("paper 0")] == LITERAL
    assert RESIDENT in kinds.values()
    assert sg.cold_targets == (COLD_IRI,)
    assert all(t.predicate != "http://www.w3.org/1999/02/22-rdf-syntax-ns#type" for t in sg.triples)

    cm, trace = instantiate(sg, p.stores, p.meta)
    compact = predict(cm, sg, trace=trace)
    _assert_same(compact, full_forward(sg, p.stores, p.meta, compact.mode))
    assert cm.num_sparse_rows == sg.num_resident


def test_unknown_predicate_is_a_data_mismatch(build_pipeline):
    p = build_pipeline(seed=5)
    first = p.kg.targets[0]
    g = TripleGraph(list(p.kg.graph.triples) + [Triple(first, NAMESPACE + "novel", first)], p.kg.graph.prefixes)
    novel = QueryTemplate.from_text(
        f"PREFIX ex: <{NAMESPACE}>\n"
        "SELECT ?s ?p ?o WHERE { ?s ex:novel ?o . BIND(\"ex:novel\" AS ?p) . VALUES ?s {<VT-List>} . }\n"
    )
    with pytest.raises(UnknownPredicateError):
        extract_subgraph(novel, [first], g, p.enc)

    misnamed = QueryTemplate.from_text(
        f"PREFIX ex: <{NAMESPACE}>\n"
        "SELECT ?s ?p ?o WHERE { ?s ex:about ?o . BIND(\"ex:aboot\" AS ?p) . VALUES ?s {<VT-List>} . }\n"
    )
    with pytest.raises(UnknownPredicateError):
        extract_subgraph(misnamed, [first], p.kg.graph, p.enc)


def test_bound_predicate_names_are_expanded(exp):
    ex = "http://example.org/"
    g = TripleGraph([
        Triple(ex + "p1", RDF_TYPE, ex + "Paper"),
        Triple(ex + "p1", ex + "about", ex + "a1"),
        Triple(ex + "a1", RDF_TYPE, ex + "Author"),
        Triple(ex + "a1", ex + "affiliation", ex + "o1"),
        Triple(ex + "o1", RDF_TYPE, ex + "Org"),
    ])
    template = QueryTemplate.from_text(
        f"PREFIX ex: <{ex}>\n"
        "SELECT ?s ?p ?o WHERE {\n"
        "  { SELECT ?s ?p ?o WHERE { ?s a ex:Paper . ?s ex:about ?o . BIND(\"ex:about\" AS ?p) . "
        "VALUES ?s {<VT-List>} . } }\n"
        "  UNION\n"
        "  { SELECT (?author AS ?s) ?p ?o WHERE { ?s a ex:Paper . ?s ex:about ?author . "
        "?author ex:affiliation ?o . BIND(\"ex:affiliation\" AS ?p) . VALUES ?s {<VT-List>} . } }\n"
        "}\n"
    )
    sg = extract_subgraph(template, [ex + "p1"], g, build_encodings(g, ex + "Paper"))
    exp.expect("BIND(\"ex:about\" AS ?p) yields the about triple; the aliased branch yields the author's triple")
    exp.actual(f"triples={sg.triples} edges={sg.graph.num_edges}")
    assert set(sg.triples) == {
        Triple(ex + "p1", ex + "about", ex + "a1"),
        Triple(ex + "a1", ex + "affiliation", ex + "o1"),
    }
    assert sg.graph.num_edges == 4


def _dblp_graph():
    rec = "https://dblp.org/rec/"
    publisher = rec + "publisher/0"
    people = [rec + "pid/0", rec + "pid/1"]
    triples = [Triple(publisher, RDF_TYPE, DBLP_SCHEMA + "Publisher")]
    for i, person in enumerate(people):
        triples += [
            Triple(person, RDF_TYPE, DBLP_SCHEMA + "Person"),
            Triple(person, DBLP_SCHEMA + "primaryAffiliation", Literal(f"University {i}")),
            Triple(person, RDFS_LABEL, Literal(f"Person {i}")),
        ]
    pubs = [rec + f"conf/{i}" for i in range(4)]
    for i, pub in enumerate(pubs):
        triples += [
            Triple(pub, RDF_TYPE, DBLP_SCHEMA + "Publication"),
            Triple(pub, DBLP_SCHEMA + "title", Literal(f"Title {i}")),
            Triple(pub, DBLP_SCHEMA + "yearOfEvent", Literal(str(2010 + i), "int")),
            Triple(pub, DBLP_SCHEMA + "authoredBy", people[i % 2]),
            Triple(pub, DBLP_SCHEMA + "publishedBy", publisher),
        ]
    return TripleGraph(triples), pubs


def test_generated_dblp_template_drives_compact_inference(dblp_dir, make_random_model, tmp_path, exp):
    g, pubs = _dblp_graph()
    template = QueryTemplate.from_text((dblp_dir / "llm" / "refine_sparql.txt").read_text(encoding="utf-8"))
    enc = build_encodings(g, DBLP_SCHEMA + "Publication", ("conference", "journal"))
    stores = decompose(make_random_model(enc, embedding_dim=4, hidden_dim=3, seed=9), 1, tmp_path)
    meta = read_model_meta(tmp_path)

    sg, compact = run_query(template, pubs, g, enc, stores, meta)
    predicates = {t.predicate for t in sg.triples}
    exp.expect("the generated template extracts 16 triples over 5 predicates and compact == full")
    exp.actual(f"triples={len(sg.triples)} predicates={sorted(predicates)}")
    assert len(sg.triples) == 4 * 3 + 2 * 2
    assert predicates == {
        DBLP_SCHEMA + "title", DBLP_SCHEMA + "yearOfEvent", DBLP_SCHEMA + "publishedBy",
        DBLP_SCHEMA + "primaryAffiliation", RDFS_LABEL,
    }
    assert sg.num_resident == 3
    _assert_same(compact, full_forward(sg, stores, meta, compact.mode))


def test_template_must_project_three_variables(build_pipeline):
    p = build_pipeline(seed=5)
    template = QueryTemplate.from_text("SELECT ?s ?o WHERE { ?s ?p ?o . VALUES ?s {<VT-List>} . }")
    with pytest.raises(TemplateShapeError):
        extract_subgraph(template, p.kg.targets[:1], p.kg.graph, p.enc)


def test_empty_target_set(build_pipeline):
    p = build_pipeline(seed=6)
    sg, result = run_query(p.template, [], p.kg.graph, p.enc, p.stores, p.meta)
    assert sg.num_targets == 0
    assert result.predictions == []
    assert result.trace.chunks_loaded == 0


def test_cost_is_independent_of_graph_size(build_pipeline, exp):
    small = build_pipeline(seed=3, nodes_per_type=8)
    large = build_pipeline(seed=3, nodes_per_type=8, extra_nodes=80)
    targets = list(small.kg.targets[:5])
    _, a = run_query(small.template, targets, small.kg.graph, small.enc, small.stores, small.meta, mode="sparse")
    _, b = run_query(large.template, targets, large.kg.graph, large.enc, large.stores, large.meta, mode="sparse")
    total_small = sum(m.chunk_count for m in small.stores[0].manifests.values())
    total_large = sum(m.chunk_count for m in large.stores[0].manifests.values())
    exp.expect("same bytes, chunks and multiply-adds although the store grew")
    exp.actual(f"stores {total_small} vs {total_large} chunks; bytes {a.trace.bytes_loaded} vs {b.trace.bytes_loaded}")
    assert total_large > 4 * total_small
    assert a.trace.bytes_loaded == b.trace.bytes_loaded
    assert a.trace.counters()["chunks_loaded"] == b.trace.counters()["chunks_loaded"]
    assert a.trace.multiply_adds == b.trace.multiply_adds
    assert a.trace.weight_bytes == b.trace.weight_bytes


def test_query_reads_a_small_share_of_the_model(build_pipeline, exp):
    p = build_pipeline(seed=0, num_types=2, num_predicates=2, nodes_per_type=1000, num_targets=25,
                       embedding_dim=16, hidden_dim=4, chunk_rows=2)
    embeddings, params = p.stores
    embedding_share = embeddings.total_nbytes / (embeddings.total_nbytes + params.total_nbytes)
    _, result = run_query(p.template, p.kg.targets[:1], p.kg.graph, p.enc, p.stores, p.meta)
    report = storage_report(embeddings, result.trace)
    exp.expect("embeddings >= 95% of the model; one query reads <= 10% of it")
    exp.actual(f"embedding share={embedding_share:.3f} model fraction={report.model_fraction:.3f}")
    assert embedding_share >= 0.95
    assert report.model_fraction <= 0.10
    assert report.weight_bytes == result.trace.weight_bytes > 0


def test_single_target_reads_one_chunk_in_ten(build_pipeline, exp):
    p = build_pipeline(seed=0, num_targets=4, nodes_per_type=36, num_types=2, num_predicates=2, chunk_rows=4)
    _, result = run_query(p.template, p.kg.targets[:1], p.kg.graph, p.enc, p.stores, p.meta)
    report = storage_report(p.stores[0], result.trace)
    exp.expect("10 chunks in the store, 1 loaded, fraction 0.1")
    exp.actual(f"{report.chunks_loaded}/{report.chunks_total}")
    assert report.chunks_total == 10
    assert report.chunks_loaded == 1
    assert report.fraction == pytest.approx(0.1)


def test_stale_store_is_detected(build_pipeline, tmp_path, exp):
    p = build_pipeline(seed=2)
    truncated = dataclasses.replace(p.model, embeddings={
        name: (matrix if name == p.enc.target_type else matrix[:0]) for name, matrix in p.model.embeddings.items()
    })
    stale = decompose(truncated, 4, tmp_path / "stale")
    exp.expect("StaleStoreError before any prediction")
    with pytest.raises(StaleStoreError) as info:
        run_query(p.template, p.kg.targets[:3], p.kg.graph, p.enc, stale, p.meta)
    exp.actual(str(info.value))


def test_parallel_paths_match_sequential(build_pipeline):
    p = build_pipeline(seed=8, two_hop=True)
    targets = list(p.kg.targets[:12])
    _, sequential = run_query(p.template, targets, p.kg.graph, p.enc, p.stores, p.meta)
    _, parallel = run_query(p.template, targets, p.kg.graph, p.enc, p.stores, p.meta, batch_size=3, parallel=4)
    assert np.array_equal(sequential.scores, parallel.scores)
    assert sequential.trace.counters() == parallel.trace.counters()


def test_reopened_stores_give_the_same_answers(build_pipeline):
    p = build_pipeline(seed=9)
    reopened = (ChunkedEmbeddingStore.open(p.root), ParameterStore.open(p.root))
    targets = p.kg.targets[:5]
    _, a = run_query(p.template, targets, p.kg.graph, p.enc, p.stores, p.meta)
    _, b = run_query(p.template, targets, p.kg.graph, p.enc, reopened, p.meta)
    assert np.array_equal(a.scores, b.scores)


def test_trace_records_every_stage(build_pipeline):
    p = build_pipeline(seed=1)
    _, result = run_query(p.template, p.kg.targets[:2], p.kg.graph, p.enc, p.stores, p.meta)
    names = [s.name for s in result.trace.stages]
    assert names == ["extract", "load_weights", "fetch_embeddings", "init_targets", "forward", "decode"]
    assert result.trace.peak_resident_bytes > 0
    data = result.trace.to_dict()
    assert set(data["stage_ms"]) == set(names)


def test_choose_mode():
    sparse = EncodedGraph.from_edges(100, [(0, 0, 1)], 1)
    dense = EncodedGraph.from_edges(2, [(0, 0, 1)], 1)
    assert choose_mode(sparse) == "sparse"
    assert choose_mode(dense) == "dense"
    assert choose_mode(dense, "sparse") == "sparse"
    assert choose_mode(sparse, "auto", density_threshold=1e-5) == "dense"
    with pytest.raises(ConfigurationError):
        choose_mode(sparse, "blocked")


def test_evaluate_node_classification():
    predictions = [Prediction("a", "x"), Prediction("b", "y"), Prediction("c", "x")]
    metrics = evaluate(predictions, {"a": "x", "b": "x", "c": "x", "d": "y"}, "node-classification")
    assert metrics["accuracy"] == pytest.approx(2 / 3)
    assert metrics["per_class"]["x"] == {"support": 3, "correct": 2, "accuracy": pytest.approx(2 / 3)}
    with pytest.raises(MissingLabelsError):
        evaluate(predictions, {"a": "x"}, "node-classification")


def test_evaluate_link_prediction():
    pred = Prediction("a", scores=(0.1, 0.9, 0.5), candidates=("c1", "c2", "c3"))
    assert evaluate([pred], {"a": {"c3"}}, "link-prediction", k=1)["hits@1"] == 0.0
    assert evaluate([pred], {"a": {"c3"}}, "link-prediction", k=2)["hits@2"] == 1.0
    assert evaluate([pred], {"a": {"c3", "gone"}}, "link-prediction", k=2)["hits@2"] == 0.5
    assert pred.ranked(2) == [("c2", 0.9), ("c3", 0.5)]
    with pytest.raises(ConfigurationError):
        evaluate([pred], {"a": "c1"}, "clustering")


def test_write_predictions_is_sorted_json_lines(tmp_path):
    preds = [Prediction("a", "x", (1.0, 0.0)), Prediction("b", scores=(0.2, 0.7), candidates=("c1", "c2"))]
    path = write_predictions(tmp_path / "out" / "predictions.jsonl", preds, top_k=1)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0]) == {"target": "a", "label": "x", "scores": [1.0, 0.0]}
    assert json.loads(lines[1]) == {"target": "b", "ranked": ["c2"], "scores": [0.7]}
    assert lines[0].startswith('{"label"')


def test_bench_compares_partial_and_full_loading(build_pipeline, exp):
    p = build_pipeline(seed=2, chunk_rows=2)
    report = run_bench(p.template, p.kg.targets[:3], p.kg.graph, p.enc, p.stores, p.meta, mode="sparse")
    partial, full_load = report.row("partial"), report.row("full-load")
    exp.expect("identical scores, partial path reads fewer chunks than full-load")
    exp.actual(f"diff={report.max_abs_diff} chunks {partial.chunks_loaded} vs {full_load.chunks_loaded}")
    assert report.max_abs_diff == 0.0
    assert report.labels_agree
    assert partial.chunks_loaded < full_load.chunks_loaded == full_load.chunks_total
    assert [r.path for r in report.rows] == ["partial", "full-load", "full-graph"]
    assert "partial" in report.to_table()
    assert report.to_dict()["storage"]["chunks_loaded"] == partial.chunks_loaded
