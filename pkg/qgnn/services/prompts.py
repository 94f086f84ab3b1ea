"""
Prompt Texts for Template Generation

The four prompts of the generation pipeline, kept as fixed texts with
`<placeholder>` slots. Rendering only substitutes slots; the wording is
never altered, so fixture hashes stay stable.
"""

from typing import Optional, Sequence

SUGGEST_FEATURES_PROMPT = """-You are an expert in machine learning feature selection, specifically for the GNN graph machine tasks.
-Think about information required to accurately <task>.
- Return a numbered list of items without explanation.
- Sort the list according to item importance."""

MAP_TO_BGPS_PROMPT = """-You are an expert in machine learning feature selection for graph machine learning tasks.
- The following describes the <KG> knowledge graph schema, detailing the relationships between graph entities in a series of triples, one triple per line:
<KG-schema>
-Given the following list of key features, select the matching relations from the previous schema.
<suggested-features>
-Think carefully and refine your selected/matching items
  Return the top <K> matched schema triples sorted by importance.
-Output only one selected triple per line without any explanation."""

BGPS_TO_SPARQL_PROMPT = """-You are an expert SPARQL query writer.
- Given the following triples list from the <KG> knowledge graph schema, write a SPARQL query to select the <VT> and its associated information given in the following triples list.
- The triples are directed; make sure to fulfill the direction and relation type.
- The query must return the union of sub-select statements in the form ?s ?p ?o.
- Each triple is Subject Entity - relation - Object Entity.
- Start with the <VT> node.
<BGP-List>
<SPARQL-Example>
-----------------Rules---------------------
1- Write nested select sub-queries and Union them.
2- In single-hop nested select, make sure to start the first BGP with the variable ?s.
3- In tow-hop or more nested select:
      3.1 Start the first BGP with the variable ?s, then use other variable names for next BGPs.
      3.2 Use the last connected entity as the subject, as shown in the previous example.
4- Generate only the SPARQL query without any explanation.
5- Make sure to use each given BGP triple.
6- add the BGP:  'Values ?s {<VT-List>}.' to the end of each sub query.
7- Refine all rules and the query syntax.
8- Do invent new relations i.e, dblp:authoredBy can not be dblp:Authored, But you can start with ?o instead of ?s.
Example:
      ?s a dblp:Publication.
      ?s dblp:authoredBy ?o.
      --------- Should Be ---------
      ?o a dblp:author.
      ?s dblp:authoredBy ?o."""

REFINE_SPARQL_PROMPT = """-You are an expert SPARQL query writer.
Given the following SPARQL query, re-write it to follow the following rules.
- Rule1: Keep the nested selects and their Union statements.
- Rule2: restructure the n-hop sub-select to choose the latest BGP subject and object and as the select items.
- Example: {?s a prefix:x.
?s prefix:y ?y.
?y prefix:z ?z.}
the latest BGP is ?y prefix:z ?z, then the select items must be: 1- ?y as ?s.  2- ?p.  3- ?z as ?o
-------- SPARQL Query ----------------
<sparql-query>
-Refine The Rules and Examples Carefully.
-Return only the Query; do not return any explanation.
<Answer>"""

STAGE_SUGGEST_FEATURES = "suggest_features"
STAGE_MAP_TO_BGPS = "map_to_bgps"
STAGE_BGPS_TO_SPARQL = "bgps_to_sparql"
STAGE_REFINE_SPARQL = "refine_sparql"

# Opening of each prompt (first line, start of second line) identifies its stage.
_STAGE_HEADERS = (
    (STAGE_SUGGEST_FEATURES, "-You are an expert in machine learning feature selection, specifically", ""),
    (STAGE_MAP_TO_BGPS, "-You are an expert in machine learning feature selection for graph", ""),
    (STAGE_BGPS_TO_SPARQL, "-You are an expert SPARQL query writer.", "- Given the following triples list"),
    (STAGE_REFINE_SPARQL, "-You are an expert SPARQL query writer.", "Given the following SPARQL query"),
)


def _fill(template: str, **slots: str) -> str:
    text = template
    for name, value in slots.items():
        text = text.replace(f"<{name}>", value)
    return text


def render_suggest_features(task: str) -> str:
    return _fill(SUGGEST_FEATURES_PROMPT, task=task.strip().rstrip("."))


def render_map_to_bgps(kg_name: str, schema_listing: str, features: Sequence[str], k: int) -> str:
    numbered = "\n".join(f"{i}. {feature}" for i, feature in enumerate(features, start=1))
    return _fill(
        MAP_TO_BGPS_PROMPT,
        KG=kg_name,
        **{"KG-schema": schema_listing, "suggested-features": numbered, "K": str(k)},
    )


def render_bgps_to_sparql(kg_name: str, target_type: str, bgp_lines: Sequence[str], example: str) -> str:
    """Fill the generation prompt; `<VT-List>` in rule 6 stays literal."""
    return _fill(
        BGPS_TO_SPARQL_PROMPT,
        KG=kg_name,
        VT=target_type,
        **{"BGP-List": "\n".join(bgp_lines), "SPARQL-Example": example.strip()},
    )


def render_refine_sparql(query: str, violations: Sequence[str] = ()) -> str:
    """Fill the refine prompt; violations of the previous round follow the query as comments."""
    body = query.strip()
    if violations:
        body += "\n" + "\n".join(f"# {violation}" for violation in violations)
    return REFINE_SPARQL_PROMPT.replace("<sparql-query>", body)


def prompt_stage(prompt: str) -> Optional[str]:
    """Pipeline stage a rendered prompt belongs to, or None."""
    lines = prompt.splitlines() + ["", ""]
    for stage, first, second in _STAGE_HEADERS:
        if lines[0].startswith(first) and lines[1].startswith(second):
            return stage
    return None


# Shown in the <SPARQL-Example> slot when a task configures no example file.
DEFAULT_SPARQL_EXAMPLE = """PREFIX ex: <http://example.org/schema#>
SELECT ?s ?p ?o
WHERE {
{ SELECT ?s ?p ?o WHERE { ?s a ex:Paper. ?s ex:title ?o. BIND("ex:title" AS ?p). VALUES ?s {<VT-List>}. }}
UNION
{ SELECT (?author AS ?s) ?p ?o WHERE { ?s a ex:Paper. ?s ex:writtenBy ?author. ?author ex:affiliation ?o. BIND("ex:affiliation" AS ?p). VALUES ?s {<VT-List>}. }}
}"""
