"""
Decomposed Model Store

A trained model is split into two stores under one directory per task:

    <task>/embeddings/<type-slug>/manifest.json
    <task>/embeddings/<type-slug>/chunk_<k>.bin
    <task>/params/layer_<l>/manifest.json
    <task>/params/layer_<l>/<relation-slug>.bin
    <task>/params/layer_<l>/self_loop.bin
    <task>/params/head/manifest.json (+ tensor files)
    <task>/model.json
    <task>/encodings.json

Slugs are percent-encoded IRIs. Chunk and weight files are raw
little-endian float32, row-major, without header; the manifests are
authoritative. Row i of a type lives in chunk i // chunk_rows at offset
i % chunk_rows, so a partial fetch reads only the chunks covering the
requested rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple
from urllib.parse import quote, unquote
import json
import logging
import math
import re
import shutil

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError, model_validator

from qgnn.core.errors import ConfigurationError, DataMismatchError, StorageIOError
from qgnn.services.rgcn_core import ClassifierHead, DistMultHead, LayerWeights, RgcnModel
from qgnn.services.trace import QueryTrace

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_ROWS = 1024
FLOAT_DTYPE = "<f4"
FLOAT_BYTES = 4
MODEL_FILE = "model.json"
MANIFEST_FILE = "manifest.json"
SELF_LOOP_FILE = "self_loop.bin"
_LAYER_DIR = re.compile(r"layer_(\d+)")


class CorruptStoreError(DataMismatchError):
    """Raised when files on disk disagree with their manifest."""


class EmbeddingBoundsError(DataMismatchError):
    """Raised when a requested row lies outside a type's matrix."""

    def __init__(self, node_type: str, row: int, num_rows: int):
        self.node_type = node_type
        self.row = row
        super().__init__(f"Row {row} is outside [0, {num_rows}) for type {node_type}")


def slug(key: str) -> str:
    """Filesystem-safe, reversible name for an IRI or relation key."""
    return quote(key, safe="")


class EmbeddingManifest(BaseModel):
    node_type: str
    num_rows: int = Field(..., ge=0)
    dim: int = Field(..., ge=1)
    chunk_rows: int = Field(..., ge=1)
    dtype: str = FLOAT_DTYPE
    chunk_count: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _chunk_arithmetic(self) -> "EmbeddingManifest":
        if self.chunk_count != math.ceil(self.num_rows / self.chunk_rows):
            raise ValueError(
                f"chunk_count {self.chunk_count} != ceil({self.num_rows} / {self.chunk_rows})"
            )
        if self.dtype != FLOAT_DTYPE:
            raise ValueError(f"unsupported dtype {self.dtype}")
        return self

    def chunk_of(self, row: int) -> Tuple[int, int]:
        """(chunk index, offset inside the chunk) of a row."""
        return row // self.chunk_rows, row % self.chunk_rows

    def rows_in_chunk(self, chunk: int) -> int:
        return min(self.chunk_rows, self.num_rows - chunk * self.chunk_rows)

    def chunk_nbytes(self, chunk: int) -> int:
        return self.rows_in_chunk(chunk) * self.dim * FLOAT_BYTES

    @property
    def total_nbytes(self) -> int:
        return self.num_rows * self.dim * FLOAT_BYTES


def _write_array(path: Path, array: np.ndarray) -> None:
    np.ascontiguousarray(array, dtype=FLOAT_DTYPE).tofile(path)


def _read_array(path: Path, shape: Tuple[int, ...], what: str) -> np.ndarray:
    expected = int(np.prod(shape)) * FLOAT_BYTES
    try:
        size = path.stat().st_size
    except FileNotFoundError:
        raise CorruptStoreError(f"Missing {what}: {path}") from None
    except OSError as e:
        raise StorageIOError(f"Cannot stat {path}: {e}") from e
    if size != expected:
        raise CorruptStoreError(f"{what} {path} holds {size} bytes, manifest expects {expected}")
    try:
        return np.fromfile(path, dtype=FLOAT_DTYPE).reshape(shape)
    except OSError as e:
        raise StorageIOError(f"Cannot read {path}: {e}") from e


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")


def _read_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptStoreError(f"Missing {what}: {path}") from None
    except OSError as e:
        raise StorageIOError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CorruptStoreError(f"{what} {path} is not valid JSON: {e}") from e


class Fetch(NamedTuple):
    vectors: Dict[int, np.ndarray]
    chunks_loaded: Set[int]


class ChunkedEmbeddingStore:
    """
    Read side of the per-type, row-chunked embedding matrices.

    Immutable after decomposition; concurrent fetches are safe.
    """

    def __init__(self, root: Path, manifests: Dict[str, EmbeddingManifest]):
        self.root = Path(root)
        self.manifests = manifests

    @classmethod
    def open(cls, task_dir: Path) -> "ChunkedEmbeddingStore":
        root = Path(task_dir) / "embeddings"
        if not root.is_dir():
            raise StorageIOError(f"No embedding store at {root}")
        manifests = {}
        for type_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            data = _read_json(type_dir / MANIFEST_FILE, "embedding manifest")
            try:
                manifest = EmbeddingManifest(**data)
            except ValidationError as e:
                raise CorruptStoreError(f"Invalid embedding manifest in {type_dir}: {e}") from e
            manifests[manifest.node_type] = manifest
        return cls(root, manifests)

    def manifest(self, node_type: str) -> EmbeddingManifest:
        try:
            return self.manifests[node_type]
        except KeyError:
            raise DataMismatchError(f"Embedding store has no type {node_type}") from None

    def chunk_path(self, node_type: str, chunk: int) -> Path:
        return self.root / slug(node_type) / f"chunk_{chunk}.bin"

    def read_chunk(self, node_type: str, chunk: int) -> np.ndarray:
        manifest = self.manifest(node_type)
        shape = (manifest.rows_in_chunk(chunk), manifest.dim)
        return _read_array(self.chunk_path(node_type, chunk), shape, f"chunk {chunk} of {node_type}")

    def fetch_embeddings(self, node_type: str, ids: Iterable[int]) -> Fetch:
        """
        Exact stored vectors for the requested rows, reading only covering chunks.

        Raises:
            EmbeddingBoundsError: If a row is outside [0, num_rows)
        """
        manifest = self.manifest(node_type)
        by_chunk: Dict[int, List[int]] = {}
        for row in sorted(set(int(i) for i in ids)):
            if not 0 <= row < manifest.num_rows:
                raise EmbeddingBoundsError(node_type, row, manifest.num_rows)
            by_chunk.setdefault(row // manifest.chunk_rows, []).append(row)

        vectors: Dict[int, np.ndarray] = {}
        for chunk, rows in sorted(by_chunk.items()):
            block = self.read_chunk(node_type, chunk)
            for row in rows:
                vectors[row] = block[row % manifest.chunk_rows].copy()
        logger.debug(f"Fetched {len(vectors)} rows of {node_type} from {len(by_chunk)} chunk(s)")
        return Fetch(vectors, set(by_chunk))

    def load_all(self, node_type: str) -> np.ndarray:
        """Full (num_rows, dim) matrix of a type."""
        manifest = self.manifest(node_type)
        blocks = [self.read_chunk(node_type, k) for k in range(manifest.chunk_count)]
        if not blocks:
            return np.zeros((0, manifest.dim), dtype=np.float32)
        return np.concatenate(blocks, axis=0)

    @property
    def total_nbytes(self) -> int:
        return sum(m.total_nbytes for m in self.manifests.values())


@dataclass
class LoadedWeights:
    layers: List[LayerWeights]
    head_kind: str
    classifier: Optional[ClassifierHead] = None
    distmult: Optional[DistMultHead] = None
    nbytes: int = 0


class ParameterStore:
    """
    Read side of per-layer, per-relation weight files and the task head.

    num_layers comes from the model definition; a store opened without one
    trusts the layer directories on disk.
    """

    def __init__(self, root: Path, num_layers: Optional[int] = None):
        self.root = Path(root)
        self.num_layers = num_layers

    @classmethod
    def open(cls, task_dir: Path) -> "ParameterStore":
        root = Path(task_dir) / "params"
        if not root.is_dir():
            raise StorageIOError(f"No parameter store at {root}")
        num_layers = None
        if (Path(task_dir) / MODEL_FILE).is_file():
            num_layers = int(read_model_meta(task_dir).get("num_layers", 0)) or None
        return cls(root, num_layers)

    def layer_dirs(self) -> List[Path]:
        """
        Layer directories in layer order.

        Raises:
            CorruptStoreError: If the layers on disk are not exactly layer_0..layer_{n-1}
                for the declared number of layers
        """
        found = {}
        for p in self.root.iterdir():
            match = _LAYER_DIR.fullmatch(p.name)
            if p.is_dir() and match:
                found[int(match.group(1))] = p
        expected = self.num_layers if self.num_layers is not None else len(found)
        if sorted(found) != list(range(expected)):
            raise CorruptStoreError(
                f"Parameter store {self.root} holds layers {sorted(found)}, "
                f"but the model definition declares {expected}"
            )
        return [found[i] for i in range(expected)]

    def load_weights(self) -> LoadedWeights:
        """
        Restore every layer and the head exactly as stored.

        Raises:
            CorruptStoreError: Missing file or size disagreeing with a manifest
                (messages name the layer and relation)
        """
        layers: List[LayerWeights] = []
        nbytes = 0
        for index, layer_dir in enumerate(self.layer_dirs()):
            manifest = _read_json(layer_dir / MANIFEST_FILE, f"layer {index} manifest")
            dim_in, dim_out = int(manifest["dim_in"]), int(manifest["dim_out"])
            stack = []
            for key in manifest["relations"]:
                what = f"weights of layer {index}, relation {key}"
                stack.append(_read_array(layer_dir / f"{slug(key)}.bin", (dim_in, dim_out), what))
            self_loop = _read_array(layer_dir / SELF_LOOP_FILE, (dim_in, dim_out), f"self-loop of layer {index}")
            relation = np.stack(stack) if stack else np.zeros((0, dim_in, dim_out), dtype=np.float32)
            nbytes += relation.nbytes + self_loop.nbytes
            layers.append(LayerWeights(torch.from_numpy(relation.copy()), torch.from_numpy(self_loop.copy())))
        if not layers:
            raise CorruptStoreError(f"Parameter store {self.root} holds no layers")
        for previous, current in zip(layers, layers[1:]):
            if previous.dim_out != current.dim_in:
                raise CorruptStoreError(f"Layer widths do not chain ({previous.dim_out} -> {current.dim_in})")

        head_dir = self.root / "head"
        head = _read_json(head_dir / MANIFEST_FILE, "head manifest")
        loaded = LoadedWeights(layers, head["kind"])
        if head["kind"] == "classifier":
            weight = _read_array(head_dir / "weight.bin", (head["dim_in"], head["num_classes"]), "classifier weight")
            bias = _read_array(head_dir / "bias.bin", (head["num_classes"],), "classifier bias")
            loaded.classifier = ClassifierHead(torch.from_numpy(weight.copy()), torch.from_numpy(bias.copy()))
            nbytes += weight.nbytes + bias.nbytes
        elif head["kind"] == "distmult":
            relation = _read_array(head_dir / "relation.bin", (head["num_predicates"], head["dim"]), "decoder vectors")
            loaded.distmult = DistMultHead(torch.from_numpy(relation.copy()))
            nbytes += relation.nbytes
        else:
            raise CorruptStoreError(f"Unknown head kind {head['kind']!r}")
        loaded.nbytes = nbytes
        logger.debug(f"Loaded {len(layers)} layer(s) and a {head['kind']} head ({nbytes} bytes)")
        return loaded

    @property
    def total_nbytes(self) -> int:
        return sum(p.stat().st_size for p in self.root.rglob("*.bin"))


def load_weights(store: ParameterStore) -> LoadedWeights:
    return store.load_weights()


def _write_embeddings(root: Path, node_type: str, matrix: np.ndarray, chunk_rows: int) -> EmbeddingManifest:
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataMismatchError(f"Embeddings of {node_type} must be 2-D, got shape {matrix.shape}")
    num_rows, dim = matrix.shape
    manifest = EmbeddingManifest(
        node_type=node_type, num_rows=num_rows, dim=dim, chunk_rows=chunk_rows,
        chunk_count=math.ceil(num_rows / chunk_rows),
    )
    type_dir = root / slug(node_type)
    type_dir.mkdir(parents=True, exist_ok=True)
    for chunk in range(manifest.chunk_count):
        start = chunk * chunk_rows
        _write_array(type_dir / f"chunk_{chunk}.bin", matrix[start:start + chunk_rows])
    _write_json(type_dir / MANIFEST_FILE, manifest.model_dump())
    return manifest


def _write_params(root: Path, model: RgcnModel, relation_keys: List[str]) -> None:
    for index, layer in enumerate(model.layers):
        layer_dir = root / f"layer_{index}"
        layer_dir.mkdir(parents=True, exist_ok=True)
        keys = relation_keys[:layer.num_relations]
        if len(keys) != layer.num_relations:
            raise DataMismatchError(f"Layer {index} has {layer.num_relations} relations but {len(keys)} keys")
        for r, key in enumerate(keys):
            _write_array(layer_dir / f"{slug(key)}.bin", layer.relation[r].detach().cpu().numpy())
        _write_array(layer_dir / SELF_LOOP_FILE, layer.self_loop.detach().cpu().numpy())
        _write_json(layer_dir / MANIFEST_FILE, {
            "layer": index, "dim_in": layer.dim_in, "dim_out": layer.dim_out,
            "relations": keys, "dtype": FLOAT_DTYPE,
        })

    head_dir = root / "head"
    head_dir.mkdir(parents=True, exist_ok=True)
    if model.head_kind == "classifier" and model.classifier is not None:
        weight = model.classifier.weight.detach().cpu().numpy()
        _write_array(head_dir / "weight.bin", weight)
        _write_array(head_dir / "bias.bin", model.classifier.bias.detach().cpu().numpy())
        _write_json(head_dir / MANIFEST_FILE, {
            "kind": "classifier", "dim_in": int(weight.shape[0]), "num_classes": int(weight.shape[1]),
        })
    elif model.head_kind == "distmult" and model.distmult is not None:
        relation = model.distmult.relation.detach().cpu().numpy()
        _write_array(head_dir / "relation.bin", relation)
        _write_json(head_dir / MANIFEST_FILE, {
            "kind": "distmult", "num_predicates": int(relation.shape[0]), "dim": int(relation.shape[1]),
        })
    else:
        raise DataMismatchError(f"Model has no parameters for head kind {model.head_kind!r}")


def _clear_store(root: Path) -> None:
    """Remove a previous decomposition so no stale chunk or layer files survive."""
    for name in ("embeddings", "params"):
        target = root / name
        if target.exists():
            shutil.rmtree(target)


def decompose(model: RgcnModel, chunk_rows: int, root: Path) -> Tuple[ChunkedEmbeddingStore, ParameterStore]:
    """
    Write a model as an embedding store plus a parameter store under root.

    Embedding matrices are written row-for-row in their existing order; no
    re-encoding takes place. A previous store under root is replaced.

    Raises:
        ConfigurationError: If chunk_rows < 1
        StorageIOError: On any filesystem failure
    """
    if chunk_rows < 1:
        raise ConfigurationError(f"chunk_rows must be >= 1, got {chunk_rows}")
    root = Path(root)
    relation_keys = list(model.meta.get("relation_keys") or [f"r{i}" for i in range(model.layers[0].num_relations)])
    try:
        _clear_store(root)
        manifests = {
            node_type: _write_embeddings(root / "embeddings", node_type, matrix, chunk_rows)
            for node_type, matrix in sorted(model.embeddings.items())
        }
        _write_params(root / "params", model, relation_keys)
        meta = dict(model.meta)
        meta.update({"head_kind": model.head_kind, "num_layers": model.num_layers, "relation_keys": relation_keys})
        _write_json(root / MODEL_FILE, meta)
    except OSError as e:
        logger.error(f"Decomposition into {root} failed: {e}")
        raise StorageIOError(f"Cannot write model store {root}: {e}") from e

    chunks = sum(m.chunk_count for m in manifests.values())
    logger.info(f"Decomposed model into {root}: {len(manifests)} type(s), {chunks} chunk(s), chunk_rows={chunk_rows}")
    return ChunkedEmbeddingStore(root / "embeddings", manifests), ParameterStore(root / "params", model.num_layers)


def read_model_meta(root: Path) -> dict:
    return _read_json(Path(root) / MODEL_FILE, "model definition")


def save_model(model: RgcnModel, root: Path) -> Path:
    """Persist a trained model in the decomposed format with one chunk per type."""
    largest = max((np.asarray(m).shape[0] for m in model.embeddings.values()), default=1)
    decompose(model, max(1, largest), root)
    return Path(root)


def load_model(root: Path) -> RgcnModel:
    """Reload a model written by save_model or decompose."""
    root = Path(root)
    meta = read_model_meta(root)
    embeddings = ChunkedEmbeddingStore.open(root)
    weights = ParameterStore.open(root).load_weights()
    return RgcnModel(
        layers=weights.layers,
        embeddings={t: embeddings.load_all(t) for t in embeddings.manifests},
        head_kind=weights.head_kind,
        classifier=weights.classifier,
        distmult=weights.distmult,
        meta=meta,
    )


@dataclass
class TypeReport:
    node_type: str
    chunks_loaded: int
    chunks_total: int
    bytes_loaded: int
    bytes_total: int

    @property
    def fraction(self) -> float:
        return self.chunks_loaded / self.chunks_total if self.chunks_total else 0.0


@dataclass
class StorageReport:
    per_type: List[TypeReport]
    weight_bytes: int
    embedding_bytes_total: int

    @property
    def chunks_loaded(self) -> int:
        return sum(t.chunks_loaded for t in self.per_type)

    @property
    def chunks_total(self) -> int:
        return sum(t.chunks_total for t in self.per_type)

    @property
    def bytes_loaded(self) -> int:
        return sum(t.bytes_loaded for t in self.per_type)

    @property
    def fraction(self) -> float:
        """Loaded chunks over all chunks."""
        return self.chunks_loaded / self.chunks_total if self.chunks_total else 0.0

    @property
    def model_bytes_total(self) -> int:
        return self.embedding_bytes_total + self.weight_bytes

    @property
    def model_fraction(self) -> float:
        """Bytes read by the query (chunks plus all weights) over the whole model."""
        total = self.model_bytes_total
        return (self.bytes_loaded + self.weight_bytes) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "per_type": {
                t.node_type: {
                    "chunks_loaded": t.chunks_loaded, "chunks_total": t.chunks_total,
                    "bytes_loaded": t.bytes_loaded, "fraction": t.fraction,
                }
                for t in self.per_type
            },
            "chunks_loaded": self.chunks_loaded,
            "chunks_total": self.chunks_total,
            "bytes_loaded": self.bytes_loaded,
            "weight_bytes": self.weight_bytes,
            "fraction": self.fraction,
            "model_fraction": self.model_fraction,
        }


def storage_report(store: ChunkedEmbeddingStore, query_trace: QueryTrace) -> StorageReport:
    """Chunks and bytes a query read, per type, against the store totals."""
    per_type = []
    for node_type, manifest in sorted(store.manifests.items()):
        if manifest.chunk_count == 0:
            continue
        record = query_trace.fetches.get(node_type)
        loaded = record.chunks_loaded if record else set()
        per_type.append(TypeReport(
            node_type=node_type,
            chunks_loaded=len(loaded),
            chunks_total=manifest.chunk_count,
            bytes_loaded=sum(manifest.chunk_nbytes(k) for k in loaded),
            bytes_total=manifest.total_nbytes,
        ))
    return StorageReport(per_type, query_trace.weight_bytes, store.total_nbytes)
