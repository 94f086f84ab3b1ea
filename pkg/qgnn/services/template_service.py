"""
Template Service - Business Logic Layer

LLM-guided generation of a task's query template. The pipeline runs once
per task, before training:

1. suggest_task_features: ask the LLM which information predicts the task
2. prune_schema: keep the schema rows within K hops of the target type
3. map_to_bgps: ask the LLM to map features onto schema rows
4. verify_bgps: drop rows that do not exist in the pruned schema
5. bgps_to_sparql: ask the LLM for the query, repairing it through the
   refine prompt until verify_sparql accepts it

Every prompt, raw response and verification outcome is recorded in the
template's provenance.
"""

from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import re

from pydantic import BaseModel, Field, field_validator

from qgnn.core.errors import ConfigurationError, VerificationError
from qgnn.services.kg_store import RDF_TYPE, SchemaStats, compact_iri, is_pseudo_type
from qgnn.services.llm_client import LlmTransport
from qgnn.services.prompts import (
    DEFAULT_SPARQL_EXAMPLE,
    STAGE_BGPS_TO_SPARQL,
    STAGE_MAP_TO_BGPS,
    STAGE_REFINE_SPARQL,
    STAGE_SUGGEST_FEATURES,
    render_bgps_to_sparql,
    render_map_to_bgps,
    render_refine_sparql,
    render_suggest_features,
)
from qgnn.services.query_template import QueryTemplate, TemplateProvenance
from qgnn.services.sparql_parser import (
    QueryAst, SparqlSyntaxError, SubSelect, Var, bound_predicate, instantiate, parse_query, print_query,
)

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
MAX_REFINE_ROUNDS = 3

_NUMBERED_ITEM = re.compile(r"^\s*(\d+)\s*[.)]\s+(.+?)\s*$")
_LIST_MARKER = re.compile(r"^\s*(?:\d+\s*[.)]|[-*])\s+")
_CODE_FENCE = re.compile(r"```(?:sparql)?\s*\n(.*?)```", re.DOTALL | re.IGNORECASE)


class TemplateGenerationError(VerificationError):
    """Raised when an LLM stage yields nothing usable within its attempt budget."""

    def __init__(self, stage: str, message: str, details: Sequence[str] = ()):
        self.stage = stage
        self.details = list(details)
        text = f"{stage}: {message}"
        if self.details:
            text += "\n  - " + "\n  - ".join(self.details)
        super().__init__(text)


class TemplateVerificationError(VerificationError):
    """Raised when a query template violates the schema or the structural rules."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("Template verification failed:\n  - " + "\n  - ".join(self.violations))


class TaskSpec(BaseModel):
    """What the template must serve."""

    task_kind: str = Field("node-classification", description="node-classification or link-prediction")
    instruction: str = Field(..., description="Free-text task instruction")
    target_type: str = Field(..., min_length=1, description="Type of the target nodes (VT)")
    hops: int = Field(2, ge=1, le=3, description="K")
    kg_name: str = Field("KG", description="Graph name shown in the prompts")
    task: str = Field("", description="Task name recorded in provenance")

    @field_validator("task_kind")
    @classmethod
    def _known_kind(cls, value: str) -> str:
        if value not in ("node-classification", "link-prediction"):
            raise ValueError(f"unknown task kind '{value}'")
        return value


@dataclass(frozen=True)
class BgpCandidate:
    subject_type: str
    predicate: str
    object_type: str
    rank: int

    @property
    def triple(self) -> Tuple[str, str, str]:
        return (self.subject_type, self.predicate, self.object_type)

    def __str__(self) -> str:
        return f"{self.subject_type} , {self.predicate} , {self.object_type}"


def parse_numbered_list(response: str) -> List[str]:
    """Items of a numbered list, ordered by their stated numbers."""
    items = []
    for position, line in enumerate(response.splitlines()):
        match = _NUMBERED_ITEM.match(line.rstrip("\\").rstrip())
        if match:
            items.append((int(match.group(1)), position, match.group(2)))
    return [text for _, _, text in sorted(items)]


def suggest_task_features(
        t: TaskSpec,
        llm: LlmTransport,
        provenance: Optional[TemplateProvenance] = None
) -> List[str]:
    """
    Ask for the information needed to solve the task.

    Raises:
        ConfigurationError: If the instruction is empty
        TemplateGenerationError: If no numbered list is returned within 3 attempts
    """
    if not t.instruction.strip():
        raise ConfigurationError("Task instruction is empty; nothing to suggest features for")
    prompt = render_suggest_features(t.instruction)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        response = llm.send(prompt)
        features = parse_numbered_list(response)
        outcome = "ok" if features else "no numbered items"
        if provenance is not None:
            provenance.record(STAGE_SUGGEST_FEATURES, prompt, response, outcome, attempt)
        if features:
            logger.info(f"LLM suggested {len(features)} features")
            return features
        logger.warning(f"Feature suggestion attempt {attempt} returned no numbered items")
    raise TemplateGenerationError(STAGE_SUGGEST_FEATURES, f"no numbered list after {MAX_ATTEMPTS} attempts")


def _type_distances(stats: SchemaStats, start: str) -> Dict[str, int]:
    """Breadth-first hop distances over the undirected type graph."""
    adjacency: Dict[str, set] = {}
    for row in stats:
        if is_pseudo_type(row.subject_type) or is_pseudo_type(row.object_type):
            continue
        s, o = stats.expand(row.subject_type), stats.expand(row.object_type)
        adjacency.setdefault(s, set()).add(o)
        adjacency.setdefault(o, set()).add(s)

    distances = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for neighbour in sorted(adjacency.get(node, ())):
            if neighbour not in distances:
                distances[neighbour] = distances[node] + 1
                queue.append(neighbour)
    return distances


def prune_schema(stats: SchemaStats, t: TaskSpec) -> SchemaStats:
    """
    Keep the rows within K hops of the target type, counts unchanged.

    A row is one hop; it is kept when its subject type, or its object type
    (for type-valued objects), lies at most K-1 hops from the target type.

    Raises:
        ConfigurationError: If the target type is absent from the schema
    """
    target = stats.expand(t.target_type)
    if not stats.has_type(target):
        raise ConfigurationError(f"Target type {t.target_type} does not occur in the schema statistics")

    distances = _type_distances(stats, target)
    limit = t.hops - 1

    def within(term: str) -> bool:
        return not is_pseudo_type(term) and distances.get(stats.expand(term), limit + 1) <= limit

    kept = [row for row in stats if within(row.subject_type) or within(row.object_type)]
    logger.info(f"Pruned schema to {len(kept)}/{len(stats)} rows within {t.hops} hop(s) of {t.target_type}")
    return stats.subset(kept)


def _parse_bgp_lines(response: str, k: int) -> List[BgpCandidate]:
    candidates: List[BgpCandidate] = []
    seen = set()
    for line in response.splitlines():
        line = _LIST_MARKER.sub("", line.strip().rstrip("\\").strip())
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 3 or not all(fields[:3]) or fields[0].lower() == "subject":
            continue
        triple = tuple(fields[:3])
        if triple in seen:
            continue
        seen.add(triple)
        candidates.append(BgpCandidate(triple[0], triple[1], triple[2], rank=len(candidates) + 1))
        if len(candidates) == k:
            break
    return candidates


def map_to_bgps(
        features: Sequence[str],
        pruned: SchemaStats,
        llm: LlmTransport,
        k: int,
        kg_name: str = "KG",
        provenance: Optional[TemplateProvenance] = None
) -> List[BgpCandidate]:
    """
    Ask the LLM to pick the top-k schema rows matching the features.

    Candidates are returned as written by the LLM (ranked by order of
    appearance); membership in the schema is checked by verify_bgps.

    Raises:
        ConfigurationError: If pruned is empty or k < 1
        TemplateGenerationError: If no triple line is parseable within 3 attempts
    """
    if not len(pruned):
        raise ConfigurationError("Pruned schema is empty; nothing to map features onto")
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    prompt = render_map_to_bgps(kg_name, pruned.to_listing(), features, k)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        response = llm.send(prompt)
        candidates = _parse_bgp_lines(response, k)
        if provenance is not None:
            provenance.record(STAGE_MAP_TO_BGPS, prompt, response, "ok" if candidates else "no triples", attempt)
        if candidates:
            logger.info(f"LLM mapped features onto {len(candidates)} schema triples")
            return candidates
        logger.warning(f"BGP mapping attempt {attempt} returned no parseable triples")
    raise TemplateGenerationError(STAGE_MAP_TO_BGPS, f"no parseable triples after {MAX_ATTEMPTS} attempts")


def verify_bgps(cands: Sequence[BgpCandidate], pruned: SchemaStats) -> List[BgpCandidate]:
    """
    Keep the candidates that are rows of the pruned schema, in order.

    Raises:
        TemplateGenerationError: If every candidate is rejected
    """
    survivors = [c for c in cands if pruned.contains(*c.triple)]
    rejected = [str(c) for c in cands if not pruned.contains(*c.triple)]
    for line in rejected:
        logger.warning(f"Rejected BGP not in schema: {line}")
    if not survivors:
        raise TemplateGenerationError("verify_bgps", "every candidate was rejected", rejected)
    return survivors


def _parse_for_check(text: str) -> Tuple[Optional[QueryAst], List[str]]:
    if not text.strip():
        return None, ["syntax: query text is empty"]
    try:
        ast = parse_query(text)
        parse_query(print_query(instantiate(ast, ["urn:qgnn:check:target"])))
    except SparqlSyntaxError as e:
        return None, [f"syntax: {e}"]
    return ast, []


def _structural_violations(ast: QueryAst, pruned: SchemaStats) -> List[str]:
    violations = []
    allowed = pruned.predicates()
    for iri in ast.predicate_iris():
        if iri != RDF_TYPE and iri not in allowed:
            violations.append(f"predicate {compact_iri(iri, ast.prefix_map)} is not in the pruned schema")
    for index, branch in enumerate(ast.branches, start=1):
        if branch.values is None:
            violations.append(f"branch {index} has no VALUES clause")
        elif not branch.values.is_placeholder:
            violations.append(f"branch {index} VALUES does not hold the <VT-List> placeholder")
        elif branch.values.var not in branch.subject_variables():
            violations.append(f"branch {index} VALUES variable {branch.values.var} is not a pattern subject")
        violations.extend(_predicate_violations(ast, index, branch))
    return violations


def _predicate_violations(ast: QueryAst, index: int, branch: SubSelect) -> List[str]:
    """Every pattern names a constant predicate; the projected ?p is a BIND of one of them."""
    violations = [
        f"branch {index} pattern with predicate {pattern.predicate} is unconstrained by the schema"
        for pattern in branch.patterns if isinstance(pattern.predicate, Var)
    ]
    if len(ast.projection) != 3:
        return violations
    source = branch.source_of(ast.projection[1].source)
    bind = branch.bind_of(source) if source is not None else None
    if bind is None:
        violations.append(f"branch {index} does not BIND the predicate variable to a schema predicate")
        return violations
    named = bound_predicate(bind.literal.value, ast.prefix_map)
    if named not in branch.constant_predicates():
        violations.append(
            f"branch {index} binds {bind.var} to \"{bind.literal.value}\", which no pattern of the branch uses"
        )
    return violations


def sparql_violations(text: str, pruned: SchemaStats) -> List[str]:
    """All rule violations of a query text; empty when the template is acceptable."""
    ast, violations = _parse_for_check(text)
    if ast is None:
        return violations
    return _structural_violations(ast, pruned)


def verify_sparql(q: Union[QueryTemplate, str], pruned: SchemaStats) -> QueryTemplate:
    """
    Accept a template only if it parses, uses schema predicates only, binds
    ?p to a constant pattern predicate and carries a placeholder VALUES
    clause on a subject variable in every branch.

    Raises:
        TemplateVerificationError: Listing every violation
    """
    text = q.text if isinstance(q, QueryTemplate) else q
    violations = sparql_violations(text, pruned)
    if violations:
        raise TemplateVerificationError(violations)
    if isinstance(q, QueryTemplate):
        return q
    return QueryTemplate.from_text(text)


def extract_query_text(response: str) -> str:
    """Strip markdown fences and chatter before the first PREFIX/SELECT."""
    fenced = _CODE_FENCE.search(response)
    text = fenced.group(1) if fenced else response
    match = re.search(r"^\s*(PREFIX|SELECT)\b", text, re.IGNORECASE | re.MULTILINE)
    if match:
        text = text[match.start():]
    text = text.replace("<Answer>", "")
    return text.strip() + "\n"


def _coverage_violations(text: str, cands: Sequence[BgpCandidate], pruned: SchemaStats) -> List[str]:
    ast, _ = _parse_for_check(text)
    if ast is None:
        return []
    used = set(ast.predicate_iris())
    return [f"BGP '{c}' is not used by any branch" for c in cands if pruned.expand(c.predicate) not in used]


def bgps_to_sparql(
        cands: Sequence[BgpCandidate],
        t: TaskSpec,
        example: str,
        llm: LlmTransport,
        pruned: SchemaStats,
        provenance: Optional[TemplateProvenance] = None
) -> QueryTemplate:
    """
    Ask for the query and repair it through the refine prompt.

    The first response is verified; on violations up to 3 refine rounds
    follow, each seeing the previous query and its violations.

    Raises:
        ConfigurationError: If there are no candidates
        TemplateGenerationError: If no round yields an acceptable template
    """
    if not cands:
        raise ConfigurationError("No BGP candidates to turn into a query")
    prompt = render_bgps_to_sparql(t.kg_name, t.target_type, [str(c) for c in cands], example or DEFAULT_SPARQL_EXAMPLE)
    response = llm.send(prompt)
    text = extract_query_text(response)
    violations = sparql_violations(text, pruned) + _coverage_violations(text, cands, pruned)
    if provenance is not None:
        provenance.record(STAGE_BGPS_TO_SPARQL, prompt, response, "ok" if not violations else "; ".join(violations))

    for round_no in range(1, MAX_REFINE_ROUNDS + 1):
        if not violations:
            break
        logger.warning(f"Template round {round_no - 1} rejected ({len(violations)} violation(s)); refining")
        prompt = render_refine_sparql(text, violations)
        response = llm.send(prompt)
        text = extract_query_text(response)
        violations = sparql_violations(text, pruned) + _coverage_violations(text, cands, pruned)
        if provenance is not None:
            outcome = "ok" if not violations else "; ".join(violations)
            provenance.record(STAGE_REFINE_SPARQL, prompt, response, outcome, round_no)

    if violations:
        raise TemplateGenerationError(
            STAGE_REFINE_SPARQL, f"no acceptable template after {MAX_REFINE_ROUNDS} refine rounds", violations
        )
    template = QueryTemplate.from_text(text, provenance)
    logger.info(f"Generated template with {len(template.parsed.branches)} branch(es)")
    return template


def generate_template(
        t: TaskSpec,
        stats: SchemaStats,
        llm: LlmTransport,
        example: str = "",
        k: int = 10
) -> QueryTemplate:
    """
    Run the whole generation pipeline and return a verified template.

    Raises:
        ConfigurationError: Bad task inputs (empty instruction, unknown target type)
        TemplateGenerationError / TemplateVerificationError: The LLM never produced
            an acceptable template; the message lists the violations
    """
    provenance = TemplateProvenance(task=t.task, target_type=t.target_type, hops=t.hops)
    features = suggest_task_features(t, llm, provenance)
    provenance.features = features

    pruned = prune_schema(stats, t)
    provenance.pruned_rows = len(pruned)

    candidates = map_to_bgps(features, pruned, llm, k, kg_name=t.kg_name, provenance=provenance)
    verified = verify_bgps(candidates, pruned)
    provenance.candidates = [list(c.triple) for c in verified]
    provenance.rejected = [list(c.triple) for c in candidates if c not in verified]

    template = bgps_to_sparql(verified, t, example, llm, pruned, provenance)
    verify_sparql(template, pruned)
    provenance.verification.append(f"accepted: {len(template.parsed.branches)} branches, "
                                   f"{len(template.parsed.predicate_iris())} predicates")
    return template
