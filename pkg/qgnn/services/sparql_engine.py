"""
SPARQL Subset Executor

Evaluates a parsed query against an in-memory TripleGraph. Each UNION
branch is an index nested-loop join over its patterns in written order,
seeded by the branch's VALUES rows and extended by its BINDs; branch
results are projected and unioned into a set of bindings.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union
import logging

from qgnn.core.errors import ConfigurationError
from qgnn.services.kg_store import Literal, Term, TripleGraph
from qgnn.services.query_template import QueryTemplate
from qgnn.services.sparql_parser import IRI, PatternTerm, QueryAst, SubSelect, TriplePattern, Var, instantiate

logger = logging.getLogger(__name__)

Solution = Dict[str, Term]


@dataclass(frozen=True)
class Binding:
    """Immutable, hashable variable -> value map (variable names without '?')."""

    items: Tuple[Tuple[str, Term], ...]

    @classmethod
    def of(cls, values: Mapping[str, Term]) -> "Binding":
        return cls(tuple(sorted(values.items())))

    def __getitem__(self, name: str) -> Term:
        for key, value in self.items:
            if key == name:
                return value
        raise KeyError(name)

    def get(self, name: str, default: Optional[Term] = None) -> Optional[Term]:
        try:
            return self[name]
        except KeyError:
            return default

    def as_dict(self) -> Dict[str, Term]:
        return dict(self.items)


def _resolve(term: PatternTerm, solution: Solution) -> Optional[Term]:
    if isinstance(term, Var):
        return solution.get(term.name)
    if isinstance(term, IRI):
        return term.value
    return term


def _extend(pattern: TriplePattern, solution: Solution, graph: TripleGraph) -> Iterator[Solution]:
    subject = _resolve(pattern.subject, solution)
    predicate = _resolve(pattern.predicate, solution)
    obj = _resolve(pattern.object, solution)
    if isinstance(subject, Literal) or isinstance(predicate, Literal):
        return

    for triple in graph.match(subject, predicate, obj):
        extended = dict(solution)
        consistent = True
        for term, value in ((pattern.subject, triple.subject),
                            (pattern.predicate, triple.predicate),
                            (pattern.object, triple.object)):
            if isinstance(term, Var):
                bound = extended.setdefault(term.name, value)
                if bound != value:
                    consistent = False
                    break
        if consistent:
            yield extended


def _evaluate_branch(graph: TripleGraph, branch: SubSelect) -> List[Solution]:
    if branch.values is not None:
        solutions: List[Solution] = [{branch.values.var.name: iri} for iri in branch.values.iris]
    else:
        solutions = [{}]

    for pattern in branch.patterns:
        solutions = [extended for solution in solutions for extended in _extend(pattern, solution, graph)]
        if not solutions:
            return []

    for bind in branch.binds:
        for solution in solutions:
            solution[bind.var.name] = bind.literal
    return solutions


def execute(g: TripleGraph, q: QueryAst) -> Set[Binding]:
    """
    Evaluate a query; the result is the duplicate-free union of all branches.

    Each binding maps exactly the outer projection's variables.
    """
    results: Set[Binding] = set()
    for branch in q.branches:
        for solution in _evaluate_branch(g, branch):
            inner = {item.alias.name: solution[item.source.name] for item in branch.projection}
            results.add(Binding.of({item.alias.name: inner[item.source.name] for item in q.projection}))
    logger.debug(f"Executed {len(q.branches)} branch(es) -> {len(results)} bindings")
    return results


def _batches(targets: Sequence[str], batch_size: int) -> Iterator[Sequence[str]]:
    for start in range(0, len(targets), batch_size):
        yield targets[start:start + batch_size]


def execute_batched(
        g: TripleGraph,
        template: Union[QueryTemplate, QueryAst],
        targets: Sequence[str],
        batch_size: int,
        parallel: int = 1
) -> Set[Binding]:
    """
    Execute a template once per batch of targets and union the results.

    Args:
        g: Graph to query (read concurrently when parallel > 1)
        template: Template (or its parsed AST) with the `<VT-List>` placeholder
        targets: Target IRIs substituted into every placeholder VALUES clause
        batch_size: Targets per instantiated query
        parallel: Number of batches evaluated concurrently

    Returns:
        Same set as a single execution over all targets

    Raises:
        ConfigurationError: If batch_size or parallel is below 1
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    if parallel < 1:
        raise ConfigurationError(f"parallel must be >= 1, got {parallel}")

    ast = template.parsed if isinstance(template, QueryTemplate) else template
    targets = list(dict.fromkeys(targets))
    if not targets:
        return set()

    queries = [instantiate(ast, batch) for batch in _batches(targets, batch_size)]
    results: Set[Binding] = set()
    if parallel == 1 or len(queries) == 1:
        for query in queries:
            results |= execute(g, query)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            for partial in pool.map(lambda query: execute(g, query), queries):
                results |= partial

    logger.info(f"Executed {len(queries)} batch(es) for {len(targets)} target(s) -> {len(results)} bindings")
    return results
