import json
import random
import shutil

import numpy as np
import pytest

from qgnn.core.errors import ConfigurationError
from qgnn.services.encoding import EncodingMaps, UnknownPredicateError, build_encodings
from qgnn.services.model_store import (
    ChunkedEmbeddingStore, CorruptStoreError, EmbeddingBoundsError, ParameterStore, decompose, load_model,
    save_model, slug,
)


@pytest.fixture
def small_model(small_kg, make_random_model):
    enc = build_encodings(small_kg.graph, small_kg.target_type, small_kg.labels.values())
    return enc, make_random_model(enc, embedding_dim=6, hidden_dim=5)


def test_decompose_layout_and_manifests(small_model, tmp_path, exp):
    enc, model = small_model
    embeddings, params = decompose(model, 3, tmp_path)
    exp.expect("one manifest per type with ceil(rows / 3) chunks; one file per relation per layer")
    exp.actual(f"types={sorted(embeddings.manifests)}")
    assert sorted(embeddings.manifests) == sorted(enc.type_names)
    for type_name, count in zip(enc.type_names, enc.type_counts):
        manifest = embeddings.manifests[type_name]
        assert manifest.num_rows == count
        assert manifest.chunk_count == -(-count // 3)
        assert (tmp_path / "embeddings" / slug(type_name) / "chunk_0.bin").is_file()
    layer_manifest = json.loads((tmp_path / "params" / "layer_0" / "manifest.json").read_text())
    assert layer_manifest["relations"] == list(enc.relation_keys)
    assert (tmp_path / "params" / "layer_1" / f"{slug('^' + enc.predicates[0])}.bin").is_file()
    assert (tmp_path / "model.json").is_file()
    assert params.total_nbytes == sum(p.stat().st_size for p in (tmp_path / "params").rglob("*.bin"))


def test_fetch_returns_exact_rows_from_covering_chunks(small_model, tmp_path, exp):
    enc, model = small_model
    embeddings, _ = decompose(model, 4, tmp_path)
    rng = random.Random(0)
    for type_name, matrix in model.embeddings.items():
        rows = rng.sample(range(matrix.shape[0]), min(3, matrix.shape[0]))
        fetched = embeddings.fetch_embeddings(type_name, rows)
        assert fetched.chunks_loaded == {r // 4 for r in rows}
        for r in rows:
            assert np.array_equal(fetched.vectors[r], matrix[r])
            assert fetched.vectors[r].dtype == np.float32
    exp.expect("stored float32 vectors come back bit-identical")
    exp.actual("all sampled rows identical")


def test_fetch_out_of_bounds(small_model, tmp_path):
    enc, model = small_model
    embeddings, _ = decompose(model, 4, tmp_path)
    type_name = enc.type_names[0]
    with pytest.raises(EmbeddingBoundsError) as info:
        embeddings.fetch_embeddings(type_name, [enc.type_counts[0]])
    assert info.value.row == enc.type_counts[0]
    assert embeddings.fetch_embeddings(type_name, []).vectors == {}


def test_decompose_then_load_is_exact(small_model, tmp_path):
    _, model = small_model
    save_model(model, tmp_path / "trained")
    loaded = load_model(tmp_path / "trained")
    assert loaded.head_kind == "classifier"
    for a, b in zip(model.layers, loaded.layers):
        assert np.array_equal(a.relation.numpy(), b.relation.numpy())
        assert np.array_equal(a.self_loop.numpy(), b.self_loop.numpy())
    for type_name, matrix in model.embeddings.items():
        assert np.array_equal(loaded.embeddings[type_name], matrix)
    assert np.array_equal(loaded.classifier.weight.numpy(), model.classifier.weight.numpy())
    assert loaded.meta["relation_keys"] == model.meta["relation_keys"]


def test_chunk_size_does_not_change_the_vectors(small_model, tmp_path):
    _, model = small_model
    stores = {rows: decompose(model, rows, tmp_path / str(rows))[0] for rows in (1, 5, 1000)}
    for type_name, matrix in model.embeddings.items():
        for store in stores.values():
            assert np.array_equal(store.load_all(type_name), matrix)


def test_distmult_head_round_trip(small_kg, make_random_model, tmp_path):
    enc = build_encodings(small_kg.graph, small_kg.target_type)
    model = make_random_model(enc, head_kind="distmult", link_predicate=enc.predicates[0])
    decompose(model, 8, tmp_path)
    weights = ParameterStore.open(tmp_path).load_weights()
    assert weights.head_kind == "distmult"
    assert np.array_equal(weights.distmult.relation.numpy(), model.distmult.relation.numpy())


def test_truncated_weight_file_is_reported(small_model, tmp_path, exp):
    enc, model = small_model
    decompose(model, 4, tmp_path)
    victim = tmp_path / "params" / "layer_1" / f"{slug(enc.relation_keys[2])}.bin"
    victim.write_bytes(victim.read_bytes()[:-4])
    with pytest.raises(CorruptStoreError) as info:
        ParameterStore.open(tmp_path).load_weights()
    exp.expect("error names the layer and the relation")
    exp.actual(str(info.value))
    assert "layer 1" in str(info.value)
    assert enc.relation_keys[2] in str(info.value)


def test_saving_a_shallower_model_replaces_the_old_layers(small_kg, make_random_model, tmp_path, exp):
    enc = build_encodings(small_kg.graph, small_kg.target_type, small_kg.labels.values())
    save_model(make_random_model(enc, num_layers=3, seed=1), tmp_path)
    shallower = make_random_model(enc, num_layers=2, seed=2)
    save_model(shallower, tmp_path)
    loaded = load_model(tmp_path)
    exp.expect("2 layers after overwriting a 3-layer store, no layer_2 left behind")
    exp.actual(f"layers={loaded.num_layers} dirs={sorted(p.name for p in (tmp_path / 'params').iterdir())}")
    assert loaded.num_layers == 2
    assert not (tmp_path / "params" / "layer_2").exists()
    for a, b in zip(shallower.layers, loaded.layers):
        assert np.array_equal(a.relation.numpy(), b.relation.numpy())
        assert np.array_equal(a.self_loop.numpy(), b.self_loop.numpy())


def test_layer_directories_must_match_the_model_definition(small_model, tmp_path):
    _, model = small_model
    decompose(model, 4, tmp_path)
    (tmp_path / "params" / "layer_x").mkdir()
    assert len(ParameterStore.open(tmp_path).load_weights().layers) == model.num_layers

    shutil.copytree(tmp_path / "params" / "layer_1", tmp_path / "params" / "layer_2")
    with pytest.raises(CorruptStoreError) as info:
        ParameterStore.open(tmp_path).load_weights()
    assert "declares 2" in str(info.value)


def test_missing_chunk_and_bad_manifest(small_model, tmp_path):
    enc, model = small_model
    decompose(model, 4, tmp_path)
    type_name = enc.type_names[0]
    (tmp_path / "embeddings" / slug(type_name) / "chunk_0.bin").unlink()
    store = ChunkedEmbeddingStore.open(tmp_path)
    with pytest.raises(CorruptStoreError):
        store.fetch_embeddings(type_name, [0])

    manifest = tmp_path / "embeddings" / slug(type_name) / "manifest.json"
    data = json.loads(manifest.read_text())
    data["chunk_count"] += 1
    manifest.write_text(json.dumps(data))
    with pytest.raises(CorruptStoreError):
        ChunkedEmbeddingStore.open(tmp_path)


def test_invalid_chunk_rows(small_model, tmp_path):
    _, model = small_model
    with pytest.raises(ConfigurationError):
        decompose(model, 0, tmp_path)


def test_encodings_round_trip(small_model, tmp_path):
    enc, _ = small_model
    enc.save(tmp_path)
    loaded = EncodingMaps.load(tmp_path)
    assert loaded.node_enc == enc.node_enc
    assert loaded.relation_keys == enc.relation_keys
    assert loaded.label_dec == enc.label_dec
    assert loaded.target_type == enc.target_type


def test_relation_ids_follow_the_relation_keys(small_model):
    enc, _ = small_model
    for index, predicate in enumerate(enc.predicates):
        assert enc.relation_id(predicate) == index
        assert enc.relation_id(predicate, inverse=True) == index + enc.num_predicates
        assert enc.relation_keys[enc.relation_id(predicate, inverse=True)] == "^" + predicate
    with pytest.raises(UnknownPredicateError):
        enc.relation_id("^" + enc.predicates[0])
    assert enc.node_dec is enc.node_dec
    assert all(enc.node_enc[iri] == gid for gid, iri in enumerate(enc.node_dec))


def test_chunks_loaded_is_the_floor_division_cover(small_kg, make_random_model, tmp_path, exp):
    enc = build_encodings(small_kg.graph, small_kg.target_type, small_kg.labels.values())
    embeddings, _ = decompose(make_random_model(enc, embedding_dim=2, hidden_dim=2), 3, tmp_path)
    rng = random.Random(11)
    for _ in range(1000):
        type_name = rng.choice(enc.type_names)
        rows = embeddings.manifests[type_name].num_rows
        ids = rng.sample(range(rows), rng.randint(1, rows))
        assert embeddings.fetch_embeddings(type_name, ids).chunks_loaded == {i // 3 for i in ids}
    exp.expect("chunks_loaded == {id // chunk_rows} for 1000 random id sets")
    exp.actual("all sets matched")


@pytest.mark.parametrize("seed", range(20))
def test_round_trip_is_bit_exact_and_chunk_files_match_manifests(small_kg, make_random_model, tmp_path, seed):
    enc = build_encodings(small_kg.graph, small_kg.target_type, small_kg.labels.values())
    model = make_random_model(enc, embedding_dim=3 + seed % 4, hidden_dim=2 + seed % 3, seed=seed)
    chunk_rows = 1 + seed % 7
    embeddings, params = decompose(model, chunk_rows, tmp_path)
    for type_name, manifest in embeddings.manifests.items():
        assert np.array_equal(embeddings.load_all(type_name), model.embeddings[type_name])
        for k in range(manifest.chunk_count):
            assert embeddings.chunk_path(type_name, k).stat().st_size == manifest.chunk_nbytes(k)
    weights = params.load_weights()
    for stored, original in zip(weights.layers, model.layers):
        assert np.array_equal(stored.relation.numpy(), original.relation.numpy())
        assert np.array_equal(stored.self_loop.numpy(), original.self_loop.numpy())
    assert np.array_equal(weights.classifier.bias.numpy(), model.classifier.bias.numpy())
