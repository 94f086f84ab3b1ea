"""
Query Template

A verified SPARQL-subset query carrying the `<VT-List>` target placeholder,
plus the provenance of the LLM exchange that produced it. Templates are
written once and reused by every inference query of a task.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional
import logging

from pydantic import BaseModel, Field

from qgnn.core.errors import StorageIOError
from qgnn.services.sparql_parser import QueryAst, instantiate, parse_query

logger = logging.getLogger(__name__)

PROVENANCE_SUFFIX = ".provenance.json"


class StageRecord(BaseModel):
    """One prompt/response exchange of the generation pipeline."""

    stage: str = Field(..., description="Pipeline stage name")
    attempt: int = Field(1, ge=1, description="Attempt number within the stage")
    prompt: str = Field(..., description="Rendered prompt text")
    response: str = Field(..., description="Raw LLM response")
    outcome: str = Field("ok", description="'ok' or the reason the response was rejected")


class TemplateProvenance(BaseModel):
    """How a template came to be: task inputs, exchanges and verification results."""

    task: str = ""
    target_type: str = ""
    hops: int = 2
    features: List[str] = Field(default_factory=list)
    pruned_rows: int = 0
    candidates: List[List[str]] = Field(default_factory=list)
    rejected: List[List[str]] = Field(default_factory=list)
    stages: List[StageRecord] = Field(default_factory=list)
    verification: List[str] = Field(default_factory=list)

    def record(self, stage: str, prompt: str, response: str, outcome: str = "ok", attempt: int = 1) -> None:
        self.stages.append(StageRecord(stage=stage, attempt=attempt, prompt=prompt, response=response, outcome=outcome))


@dataclass(frozen=True)
class QueryTemplate:
    """
    Parsed template text.

    Attributes:
        text: Query text containing `<VT-List>` in its VALUES clauses
        parsed: AST with the placeholder held as a sentinel IRI
        provenance: Generation record (not part of equality)
    """

    text: str
    parsed: QueryAst
    provenance: TemplateProvenance = field(default_factory=TemplateProvenance, compare=False)

    @classmethod
    def from_text(cls, text: str, provenance: Optional[TemplateProvenance] = None) -> "QueryTemplate":
        """Parse template text (raises SparqlSyntaxError and its subclasses)."""
        return cls(text, parse_query(text), provenance or TemplateProvenance())

    def instantiate(self, targets: Iterable[str]) -> QueryAst:
        return instantiate(self.parsed, targets)

    def save(self, path: Path) -> Path:
        """Write the template text and its `<path>.provenance.json` sidecar."""
        path = Path(path)
        sidecar = path.with_name(path.name + PROVENANCE_SUFFIX)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.text, encoding="utf-8")
            sidecar.write_text(self.provenance.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write template {path}: {e}")
            raise StorageIOError(f"Cannot write template {path}: {e}") from e
        logger.info(f"Template written to {path} ({len(self.parsed.branches)} branches)")
        return path


def load_template(path: Path) -> QueryTemplate:
    """
    Read a template file; the provenance sidecar is optional.

    Raises:
        StorageIOError: If the template cannot be read
        SparqlSyntaxError: If the text is not in the supported subset
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise StorageIOError(f"Cannot read template {path}: {e}") from e

    provenance = TemplateProvenance()
    sidecar = path.with_name(path.name + PROVENANCE_SUFFIX)
    if sidecar.exists():
        try:
            provenance = TemplateProvenance.model_validate_json(sidecar.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            logger.warning(f"Ignoring unreadable provenance sidecar {sidecar}: {e}")
    return QueryTemplate.from_text(text, provenance)
