"""
CLI Dependencies

Factories shared by the commands: graph and label loading, the LLM
transport, and the decomposed stores of a task. Commands only wire these
together; the work happens in qgnn.services.
"""

from pathlib import Path
from typing import Dict, List, Set, Tuple
import logging

from qgnn.core.config import TaskConfig, settings
from qgnn.core.errors import ConfigurationError, StorageIOError
from qgnn.services.encoding import EncodingMaps
from qgnn.services.kg_store import SchemaStats, TripleGraph, compute_schema_stats, read_graph_file, read_schema_stats
from qgnn.services.llm_client import ChatCompletionsTransport, FixtureTransport, LlmTransport
from qgnn.services.model_store import ChunkedEmbeddingStore, ParameterStore, read_model_meta

logger = logging.getLogger(__name__)


def trained_dir(cfg: TaskConfig) -> Path:
    """Where `train` saves the model that `decompose` splits."""
    return Path(cfg.store_root) / "trained" / cfg.task


def _read_lines(path: Path, what: str) -> List[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageIOError(f"Cannot read {what} {path}: {e}") from e
    return [line.strip() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def _iri(token: str) -> str:
    token = token.strip()
    return token[1:-1] if token.startswith("<") and token.endswith(">") else token


def read_targets(path: Path) -> List[str]:
    """Target IRIs, one per line (angle brackets optional)."""
    return [_iri(line.split()[0]) for line in _read_lines(path, "targets file")]


def read_pairs(path: Path) -> List[Tuple[str, str]]:
    """Tab-separated (node, label) or (head, tail) pairs."""
    pairs = []
    for line in _read_lines(path, "labels file"):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ConfigurationError(f"Labels file {path}: expected 2 tab-separated fields in {line!r}")
        pairs.append((_iri(fields[0]), _iri(fields[1])))
    return pairs


def read_labels(path: Path) -> Dict[str, str]:
    return dict(read_pairs(path))


def read_link_truth(path: Path) -> Dict[str, Set[str]]:
    truth: Dict[str, Set[str]] = {}
    for head, tail in read_pairs(path):
        truth.setdefault(head, set()).add(tail)
    return truth


def load_graph(cfg: TaskConfig) -> TripleGraph:
    return read_graph_file(cfg.require_path("kg_path"), cfg.kg_format)


def load_stats(cfg: TaskConfig) -> SchemaStats:
    """The configured statistics listing, or statistics computed from the task graph."""
    if cfg.stats_path:
        return read_schema_stats(Path(cfg.stats_path))
    return compute_schema_stats(load_graph(cfg))


def build_transport(cfg: TaskConfig) -> LlmTransport:
    """
    Fixture replay when `mock_llm` is set, otherwise the live endpoint.

    Live settings come from the task config first, then the environment.
    """
    if cfg.mock_llm:
        logger.info(f"Using mock LLM fixtures from {cfg.mock_llm}")
        return FixtureTransport(Path(cfg.mock_llm))
    endpoint = cfg.endpoint or settings.llm_endpoint
    model = cfg.model_name or settings.llm_model
    logger.info(f"Using live LLM endpoint {endpoint} (model={model})")
    return ChatCompletionsTransport(endpoint=endpoint, model=model)


def open_stores(cfg: TaskConfig) -> Tuple[ChunkedEmbeddingStore, ParameterStore]:
    return ChunkedEmbeddingStore.open(cfg.task_dir), ParameterStore.open(cfg.task_dir)


def load_task_encodings(cfg: TaskConfig) -> EncodingMaps:
    return EncodingMaps.load(cfg.task_dir)


def load_model_def(cfg: TaskConfig) -> dict:
    return read_model_meta(cfg.task_dir)


def candidates_of(cfg: TaskConfig, enc: EncodingMaps) -> List[str]:
    """LP candidate tails: every encoded node of the configured candidate type."""
    if cfg.kind != "link-prediction":
        return []
    if not cfg.candidate_type:
        raise ConfigurationError("link-prediction tasks need candidate_type for inference")
    index = enc.type_index(cfg.candidate_type)
    start, count = enc.type_offsets[index], enc.type_counts[index]
    return list(enc.node_dec[start:start + count])
