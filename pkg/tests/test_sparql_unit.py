import random

import pytest

from qgnn.core.errors import ConfigurationError
from qgnn.services.kg_store import RDF_TYPE, Literal, Triple, TripleGraph
from qgnn.services.query_template import QueryTemplate
from qgnn.services.sparql_engine import Binding, execute, execute_batched
from qgnn.services.sparql_parser import (
    IRI, SparqlSyntaxError, UnboundProjectionError, UndeclaredPrefixError, Var,
    instantiate, parse_query, print_query,
)

EX = "http://example.org/"


def _random_graph(seed, nodes=30, predicates=4, edges=150):
    rng = random.Random(seed)
    triples = []
    for _ in range(edges):
        s = f"{EX}n{rng.randrange(nodes)}"
        p = f"{EX}p{rng.randrange(predicates)}"
        o = Literal(f"v{rng.randrange(5)}") if rng.random() < 0.15 else f"{EX}n{rng.randrange(nodes)}"
        triples.append(Triple(s, p, o))
    for n in range(nodes):
        triples.append(Triple(f"{EX}n{n}", RDF_TYPE, f"{EX}T{n % 2}"))
    return TripleGraph(triples)


def _chain_query(rng, predicates=4):
    """SELECT (?v0 AS ?s) (?vk AS ?o) over a chain of one to three patterns."""
    length = rng.randint(1, 3)
    lines = [f"?v{i} <{EX}p{rng.randrange(predicates)}> ?v{i + 1} ." for i in range(length)]
    body = " ".join(lines)
    text = (
        f"SELECT ?s ?o WHERE {{\n"
        f"  {{ SELECT (?v0 AS ?s) (?v{length} AS ?o) WHERE {{ {body} VALUES ?v0 {{<VT-List>}} . }} }}\n"
        f"  UNION\n"
        f"  {{ SELECT ?s ?o WHERE {{ ?s <{EX}p{rng.randrange(predicates)}> ?o . VALUES ?s {{<VT-List>}} . }} }}\n"
        f"}}\n"
    )
    return text


def _brute_force(g, ast):
    """Nested loops over every triple for every pattern, then VALUES and projection filters."""
    results = set()
    for branch in ast.branches:
        solutions = [{}]
        for pattern in branch.patterns:
            extended = []
            for solution in solutions:
                for t in g.triples:
                    candidate = dict(solution)
                    ok = True
                    pairs = zip((pattern.subject, pattern.predicate, pattern.object), (t.subject, t.predicate, t.object))
                    for term, value in pairs:
                        if isinstance(term, Var):
                            if candidate.setdefault(term.name, value) != value:
                                ok = False
                        elif isinstance(term, IRI):
                            ok = ok and term.value == value
                        else:
                            ok = ok and term == value
                    if ok:
                        extended.append(candidate)
            solutions = extended
        if branch.values is not None:
            allowed = set(branch.values.iris)
            solutions = [s for s in solutions if s.get(branch.values.var.name) in allowed]
        for solution in solutions:
            for bind in branch.binds:
                solution[bind.var.name] = bind.literal
            inner = {item.alias.name: solution[item.source.name] for item in branch.projection}
            results.add(Binding.of({item.alias.name: inner[item.source.name] for item in ast.projection}))
    return results


def test_placeholder_and_aliasing_are_parsed(exp):
    text = (
        f"PREFIX ex: <{EX}>\n"
        "SELECT ?s ?p ?o WHERE {\n"
        "  { SELECT ?s ?p ?o WHERE { ?s a ex:Paper . ?s ex:title ?o . BIND(\"ex:title\" AS ?p) . VALUES ?s {<VT-List>} . } }\n"
        "  UNION\n"
        "  { SELECT (?a AS ?s) ?p ?o WHERE { ?t ex:by ?a . ?a ex:name ?o . BIND(\"ex:name\" AS ?p) . VALUES ?t {<VT-List>} . } }\n"
        "}\n"
    )
    ast = parse_query(text)
    exp.expect("2 branches, placeholder VALUES, alias ?a -> ?s, rdf:type from 'a'")
    exp.actual(f"branches={len(ast.branches)} outputs={ast.output_variables}")
    assert len(ast.branches) == 2
    assert all(b.values.is_placeholder for b in ast.branches)
    assert ast.branches[1].projection[0].source == Var("a")
    assert ast.branches[0].output_variables() == (Var("s"), Var("p"), Var("o"))
    assert ast.predicate_iris() == (RDF_TYPE, EX + "title", EX + "by", EX + "name")
    assert parse_query(print_query(ast)) == ast


def test_syntax_errors_carry_positions():
    with pytest.raises(SparqlSyntaxError) as info:
        parse_query("SELECT ?s WHERE { ?s ?p }")
    assert info.value.position > 0

    with pytest.raises(SparqlSyntaxError):
        parse_query("SELECT ?s WHERE { ?s ?p ?o . FILTER(?s) }")

    with pytest.raises(UndeclaredPrefixError):
        parse_query("SELECT ?s WHERE { ?s ex:p ?o . }")


def test_projection_must_be_bound_in_every_branch():
    text = (
        f"SELECT ?s ?o WHERE {{ {{ SELECT ?s ?o WHERE {{ ?s <{EX}p> ?o . }} }} "
        f"UNION {{ SELECT ?x ?o WHERE {{ ?x <{EX}p> ?o . }} }} }}"
    )
    with pytest.raises(UnboundProjectionError):
        parse_query(text)

    with pytest.raises(UnboundProjectionError):
        parse_query(f"SELECT ?s ?z WHERE {{ ?s <{EX}p> ?o . }}")


def test_print_parse_is_a_fixpoint_for_generated_queries():
    rng = random.Random(4)
    for _ in range(50):
        ast = parse_query(_chain_query(rng))
        printed = print_query(ast)
        assert parse_query(printed) == ast
        assert print_query(parse_query(printed)) == printed


def test_instantiate_replaces_only_placeholders():
    text = (
        f"SELECT ?s ?o WHERE {{ {{ SELECT ?s ?o WHERE {{ ?s <{EX}p> ?o . VALUES ?s {{<VT-List>}} . }} }} "
        f"UNION {{ SELECT ?s ?o WHERE {{ ?s <{EX}q> ?o . VALUES ?s {{<{EX}fixed>}} . }} }} }}"
    )
    ast = instantiate(parse_query(text), [EX + "a", EX + "b"])
    assert ast.branches[0].values.iris == (EX + "a", EX + "b")
    assert ast.branches[1].values.iris == (EX + "fixed",)
    assert "<VT-List>" not in print_query(ast)


def test_execute_matches_brute_force(exp):
    rng = random.Random(2)
    checked = 0
    for seed in range(100):
        g = _random_graph(seed, nodes=15, edges=60)
        nodes = sorted(g.nodes)
        template = parse_query(_chain_query(rng))
        targets = rng.sample(nodes, 5)
        ast = instantiate(template, targets)
        assert execute(g, ast) == _brute_force(g, ast)
        checked += 1
    exp.expect("index nested-loop results equal the brute-force evaluation on 100 graph/query pairs")
    exp.actual(f"queries checked={checked}")


def test_bind_and_literals():
    g = TripleGraph([
        Triple(EX + "a", EX + "title", Literal("x")),
        Triple(EX + "a", EX + "year", Literal("2020", "int")),
    ])
    ast = instantiate(parse_query(
        f"SELECT ?s ?p ?o WHERE {{ ?s <{EX}title> ?o . BIND(\"title\" AS ?p) . VALUES ?s {{<VT-List>}} . }}"
    ), [EX + "a"])
    assert execute(g, ast) == {Binding.of({"s": EX + "a", "p": Literal("title"), "o": Literal("x")})}

    ast = parse_query(f"SELECT ?s WHERE {{ ?s <{EX}year> 2020 . }}")
    assert execute(g, ast) == {Binding.of({"s": EX + "a"})}


def test_batched_execution_equals_single_run(exp):
    g = _random_graph(seed=8)
    template = QueryTemplate.from_text(_chain_query(random.Random(9)))
    targets = sorted(g.nodes)[:20]
    expected = execute(g, template.instantiate(targets))
    sizes = {}
    for batch_size in (1, 7, len(targets)):
        for parallel in (1, 3):
            result = execute_batched(g, template, targets + targets[:3], batch_size, parallel)
            sizes[(batch_size, parallel)] = len(result)
            assert result == expected
    exp.expect("every batch size and worker count yields the single-query result")
    exp.actual(f"sizes={sizes} expected={len(expected)}")


def test_batched_edge_cases():
    g = _random_graph(seed=3)
    template = QueryTemplate.from_text(_chain_query(random.Random(1)))
    assert execute_batched(g, template, [], 10) == set()
    assert execute_batched(g, template, [EX + "nowhere"], 10) == set()
    with pytest.raises(ConfigurationError):
        execute_batched(g, template, [EX + "n1"], 0)
    with pytest.raises(ConfigurationError):
        execute_batched(g, template, [EX + "n1"], 1, parallel=0)
