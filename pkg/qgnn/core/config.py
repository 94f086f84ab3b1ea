"""
Configuration Management

This module loads process-wide settings from environment variables (.env
file) and per-task configuration from flat JSON documents.

"""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional
import json
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from qgnn.core.errors import ConfigurationError, StorageIOError

# Load .env file into environment variables
load_dotenv()

DEFAULT_LLM_ENDPOINT = "http://127.0.0.1:11434/v1/chat/completions"
DEFAULT_LLM_MODEL = "llama3"


def require_env(name: str) -> str:
    """
    Get required environment variable or raise error.

    Args:
        name: Environment variable name

    Returns:
        Value of the environment variable

    Raises:
        ConfigurationError: If environment variable is not set
    """
    value = os.getenv(name)
    if not value:
        raise ConfigurationError(
            f"Missing required environment variable: {name}. "
            f"Create a .env file based on .env.example and set {name}."
        )
    return value


class Settings(BaseModel):
    """
    Process settings loaded from environment variables.

    Only the live LLM transport needs these; every offline command works
    with the defaults.

    Attributes:
        llm_endpoint: Chat-completions URL of the live model server
        llm_model: Model identifier sent with every request
        llm_api_key: Optional bearer token for the endpoint
        llm_timeout: HTTP timeout in seconds
        log_level: Root logger level used by the CLI

    Example .env:
        QGNN_LLM_ENDPOINT=http://127.0.0.1:11434/v1/chat/completions
        QGNN_LLM_MODEL=llama3
        QGNN_LLM_API_KEY=
        QGNN_LOG_LEVEL=INFO
    """
    llm_endpoint: str = Field(DEFAULT_LLM_ENDPOINT, description="Chat-completions endpoint URL")
    llm_model: str = Field(DEFAULT_LLM_MODEL, description="LLM model identifier")
    llm_api_key: Optional[str] = Field(None, description="Bearer token for the endpoint")
    llm_timeout: float = Field(60.0, gt=0, description="HTTP timeout in seconds")
    log_level: str = Field("INFO", description="Logging level for the CLI")


def load_settings() -> Settings:
    """Build Settings from the current environment."""
    try:
        return Settings(
            llm_endpoint=os.getenv("QGNN_LLM_ENDPOINT") or DEFAULT_LLM_ENDPOINT,
            llm_model=os.getenv("QGNN_LLM_MODEL") or DEFAULT_LLM_MODEL,
            llm_api_key=os.getenv("QGNN_LLM_API_KEY") or None,
            llm_timeout=float(os.getenv("QGNN_LLM_TIMEOUT") or 60.0),
            log_level=(os.getenv("QGNN_LOG_LEVEL") or "INFO").upper(),
        )
    except (ValidationError, ValueError) as e:
        raise ConfigurationError(f"Invalid environment settings: {e}") from e


# Global settings instance (singleton)
settings = load_settings()


TaskKind = Literal["node-classification", "link-prediction"]
InferenceMode = Literal["auto", "dense", "sparse"]

# Fields holding filesystem paths; resolved against the config file's directory.
PATH_FIELDS = (
    "kg_path",
    "template_path",
    "example_path",
    "store_root",
    "labels_path",
    "stats_path",
    "targets_path",
    "mock_llm",
    "output_dir",
)


class TaskConfig(BaseModel):
    """
    One GNN task: where its data lives and how to train and serve it.

    Every field can be overridden from the command line by a flag of the
    same name (underscores become dashes).
    """
    task: str = Field(..., min_length=1, description="Task name; also the store sub-directory")
    kind: TaskKind = Field("node-classification", description="GNN task kind")
    instruction: str = Field("", description="Free-text task instruction for template generation")
    kg_name: str = Field("KG", description="Knowledge graph name used in prompts")
    kg_path: Optional[str] = Field(None, description="Triple file (tsv or ntriples)")
    kg_format: Literal["tsv", "ntriples"] = Field("tsv", description="Triple file format")
    target_type: str = Field(..., min_length=1, description="Type IRI of the target nodes")
    hops: int = Field(2, ge=1, le=3, description="K: schema pruning depth and GNN hop count")
    template_path: Optional[str] = Field(None, description="Query template file")
    stats_path: Optional[str] = Field(None, description="Schema statistics listing (computed from kg_path when unset)")
    example_path: Optional[str] = Field(None, description="SPARQL example shown to the LLM")
    store_root: str = Field("store", description="Root directory of the decomposed stores")
    labels_path: Optional[str] = Field(None, description="TSV of target<TAB>label (NC) or head<TAB>tail (LP)")
    targets_path: Optional[str] = Field(None, description="Inference targets, one IRI per line")
    output_dir: Optional[str] = Field(None, description="Where predictions and traces are written")
    link_predicate: Optional[str] = Field(None, description="Predicate scored by the LP decoder")
    candidate_type: Optional[str] = Field(None, description="Type IRI of LP candidate tails")
    top_k: int = Field(10, ge=1, description="Number of BGPs requested from the LLM / Hits@k cut-off")
    epochs: int = Field(200, ge=0, description="Training epochs")
    lr: float = Field(0.01, ge=0.0, description="Learning rate")
    num_layers: int = Field(2, ge=1, description="L: number of RGCN layers")
    hidden_dim: int = Field(16, ge=1, description="F: hidden width")
    embedding_dim: int = Field(16, ge=1, description="Input embedding width")
    seed: int = Field(..., description="Seed for every random choice")
    batch_size: int = Field(256, ge=1, description="Targets per SPARQL batch")
    chunk_rows: int = Field(1024, ge=1, description="Rows per embedding chunk")
    mode: InferenceMode = Field("auto", description="Aggregation mode")
    density_threshold: float = Field(0.01, gt=0.0, le=1.0, description="Sparse/dense switch for mode=auto")
    parallel: int = Field(1, ge=1, description="Concurrent query batches / chunk fetches")
    mock_llm: Optional[str] = Field(None, description="Fixture directory for the replaying LLM transport")
    endpoint: Optional[str] = Field(None, description="Live LLM endpoint override")
    model_name: Optional[str] = Field(None, description="Live LLM model override")

    @field_validator("target_type", "task")
    @classmethod
    def _strip(cls, value: str) -> str:
        return value.strip()

    @model_validator(mode="after")
    def _link_prediction_fields(self) -> "TaskConfig":
        if self.kind == "link-prediction" and not self.link_predicate:
            raise ValueError("link-prediction tasks need link_predicate")
        return self

    @property
    def task_dir(self) -> Path:
        """Directory holding this task's decomposed store."""
        return Path(self.store_root) / self.task

    def require_path(self, name: str) -> Path:
        """Return a configured path field or fail with a configuration error."""
        value = getattr(self, name)
        if not value:
            raise ConfigurationError(f"Task '{self.task}' has no {name} configured")
        return Path(value)


def _resolve_paths(data: Dict[str, Any], base: Path) -> None:
    for key in PATH_FIELDS:
        value = data.get(key)
        if value and not Path(value).is_absolute():
            data[key] = str((base / value).resolve())


def load_task_config(
        path: Optional[Path],
        overrides: Optional[Mapping[str, Any]] = None
) -> TaskConfig:
    """
    Load a task config JSON and apply command-line overrides.

    Args:
        path: JSON config file, or None to build purely from overrides
        overrides: Field values that replace those from the file (None values ignored)

    Returns:
        Validated TaskConfig with relative paths resolved against the file's directory

    Raises:
        StorageIOError: If the file cannot be read
        ConfigurationError: If the document is not valid JSON or fails validation
    """
    data: Dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise StorageIOError(f"Cannot read task config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Task config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"Task config {path} must be a JSON object")
        base = Path(path).resolve().parent

    _resolve_paths(data, base)
    cli_values = {k: v for k, v in (overrides or {}).items() if v is not None}
    _resolve_paths(cli_values, Path.cwd())
    data.update(cli_values)

    try:
        return TaskConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid task config: {e}") from e
