"""
Knowledge Graph Store

Ingests triple files into an immutable, indexed TripleGraph and derives the
type-level schema statistics that feed template generation.

Supported formats:
- 'tsv': one triple per line, three tab-separated fields, literals quoted
- 'ntriples': `<iri> <iri> (<iri>|"literal") .` per line
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Tuple, Union
import logging
import re

from qgnn.core.errors import ConfigurationError, DataMismatchError, StorageIOError

logger = logging.getLogger(__name__)

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
XSD = "http://www.w3.org/2001/XMLSchema#"
RDF_TYPE = RDF + "type"

DEFAULT_PREFIXES: Dict[str, str] = {"rdf": RDF, "rdfs": RDFS, "xsd": XSD}

UNTYPED = "untyped"
LITERAL_KINDS = ("str", "int", "year")
SUPPORTED_FORMATS = ("tsv", "ntriples")

_INTEGER = re.compile(r"[+-]?\d+")
_LITERAL = re.compile(r'"((?:[^"\\]|\\.)*)"(?:\^\^(<[^>]*>|\S+)|@[A-Za-z][A-Za-z0-9\-]*)?')
_NT_TOKEN = re.compile(
    r'\s*(<[^>]*>|_:\S+?(?=\s|$)|"(?:[^"\\]|\\.)*"(?:\^\^(?:<[^>]*>|\S+?(?=\s|$))|@[A-Za-z][A-Za-z0-9\-]*)?|\.)'
)
_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t", "r": "\r"}


class TripleParseError(DataMismatchError):
    """Raised when a triple or statistics line cannot be parsed."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True, order=True)
class Literal:
    """A typed literal object value."""

    value: str
    kind: str = "str"

    def __post_init__(self):
        if self.kind not in LITERAL_KINDS:
            raise ValueError(f"Unknown literal kind '{self.kind}'")

    def __str__(self) -> str:
        return self.value


Term = Union[str, Literal]


def term_key(term: Term) -> Tuple:
    """Total order over identifiers and literals (identifiers first)."""
    if isinstance(term, Literal):
        return (1, term.kind, term.value)
    return (0, term, "")


@dataclass(frozen=True)
class Triple:
    """One subject-predicate-object statement."""

    subject: str
    predicate: str
    object: Term

    def __post_init__(self):
        if not isinstance(self.subject, str) or not self.subject:
            raise ValueError("Triple subject must be a non-empty identifier")
        if not isinstance(self.predicate, str) or not self.predicate:
            raise ValueError("Triple predicate must be a non-empty identifier")
        if isinstance(self.object, str) and not self.object:
            raise ValueError("Triple object identifier must be non-empty")
        if not isinstance(self.object, (str, Literal)):
            raise ValueError("Triple object must be an identifier or a Literal")

    def sort_key(self) -> Tuple:
        return (self.subject, self.predicate, term_key(self.object))


def expand_curie(token: str, prefixes: Mapping[str, str]) -> str:
    """Expand `prefix:local` when the prefix is declared; otherwise return the token."""
    if token.startswith("_:") or "://" in token or ":" not in token:
        return token
    prefix, local = token.split(":", 1)
    base = prefixes.get(prefix)
    return base + local if base is not None else token


def compact_iri(iri: str, prefixes: Mapping[str, str]) -> str:
    """Shorten an IRI with the first matching namespace binding."""
    for prefix, base in prefixes.items():
        if iri.startswith(base) and len(iri) > len(base):
            return f"{prefix}:{iri[len(base):]}"
    return iri


def _unescape(text: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), text)


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\").replace('"', '\\"')
        .replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    )


def literal_kind_of_datatype(datatype: str) -> str:
    """Map a datatype IRI onto one of the supported literal kinds."""
    local = datatype.rsplit("#", 1)[-1]
    if local in ("integer", "int", "long", "short", "nonNegativeInteger", "positiveInteger"):
        return "int"
    if local == "gYear":
        return "year"
    return "str"


def parse_literal(token: str, prefixes: Mapping[str, str], line_no: int = 0) -> Literal:
    """Parse `"text"`, `"text"^^datatype` or `"text"@lang` into a Literal."""
    match = _LITERAL.fullmatch(token)
    if not match:
        raise TripleParseError(line_no, f"malformed literal {token!r}")
    value = _unescape(match.group(1))
    datatype = match.group(2)
    if not datatype:
        return Literal(value, "str")
    if datatype.startswith("<"):
        datatype = datatype[1:-1]
    return Literal(value, literal_kind_of_datatype(expand_curie(datatype, prefixes)))


def format_term(term: Term) -> str:
    """Render a term in the canonical snapshot form."""
    if isinstance(term, Literal):
        text = f'"{_escape(term.value)}"'
        if term.kind == "int":
            return f"{text}^^<{XSD}integer>"
        if term.kind == "year":
            return f"{text}^^<{XSD}gYear>"
        return text
    if term.startswith("_:"):
        return term
    return f"<{term}>"


class TripleGraph:
    """
    Immutable, indexed multiset-free triple collection.

    Attributes:
        triples: Sorted, deduplicated triples
        prefixes: Namespace bindings used for expansion and display
        node_type: node id -> type IRI (from rdf:type triples)
        untyped_nodes: nodes that appear in the graph without any type
    """

    def __init__(self, triples: Iterable[Triple] = (), prefixes: Optional[Mapping[str, str]] = None):
        self._triples: Tuple[Triple, ...] = tuple(sorted(set(triples), key=Triple.sort_key))
        self._prefixes = dict(DEFAULT_PREFIXES if prefixes is None else prefixes)

        by_subject: Dict[str, List[Triple]] = defaultdict(list)
        by_predicate: Dict[str, List[Triple]] = defaultdict(list)
        by_object: Dict[Term, List[Triple]] = defaultdict(list)
        declared: Dict[str, set] = defaultdict(set)
        nodes = set()

        for t in self._triples:
            by_subject[t.subject].append(t)
            by_predicate[t.predicate].append(t)
            by_object[t.object].append(t)
            nodes.add(t.subject)
            if t.predicate == RDF_TYPE and isinstance(t.object, str):
                declared[t.subject].add(t.object)
            elif isinstance(t.object, str):
                nodes.add(t.object)

        self._node_type = {node: min(types) for node, types in declared.items()}
        self._nodes = frozenset(nodes)
        self._untyped = frozenset(n for n in nodes if n not in self._node_type)

        by_type_predicate: Dict[Tuple[str, str], List[Triple]] = defaultdict(list)
        for t in self._triples:
            if t.predicate != RDF_TYPE:
                by_type_predicate[(self.type_of(t.subject), t.predicate)].append(t)

        self._by_subject = {k: tuple(v) for k, v in by_subject.items()}
        self._by_predicate = {k: tuple(v) for k, v in by_predicate.items()}
        self._by_object = {k: tuple(v) for k, v in by_object.items()}
        self._by_type_predicate = {k: tuple(v) for k, v in by_type_predicate.items()}

    @property
    def triples(self) -> Tuple[Triple, ...]:
        return self._triples

    @property
    def prefixes(self) -> Mapping[str, str]:
        return MappingProxyType(self._prefixes)

    @property
    def node_type(self) -> Mapping[str, str]:
        return MappingProxyType(self._node_type)

    @property
    def untyped_nodes(self) -> FrozenSet[str]:
        return self._untyped

    @property
    def nodes(self) -> FrozenSet[str]:
        return self._nodes

    def predicates(self) -> FrozenSet[str]:
        return frozenset(self._by_predicate)

    def type_of(self, node: str) -> str:
        """Type IRI of a node, or UNTYPED."""
        return self._node_type.get(node, UNTYPED)

    def match(
            self,
            subject: Optional[str] = None,
            predicate: Optional[str] = None,
            object: Optional[Term] = None
    ) -> Tuple[Triple, ...]:
        """
        Return the triples matching the bound positions (None is a wildcard).

        The most selective available index is scanned, then the remaining
        bound positions are filtered.
        """
        candidates: List[Tuple[Triple, ...]] = []
        if subject is not None:
            candidates.append(self._by_subject.get(subject, ()))
        if predicate is not None:
            candidates.append(self._by_predicate.get(predicate, ()))
        if object is not None:
            candidates.append(self._by_object.get(object, ()))
        if not candidates:
            return self._triples
        pool = min(candidates, key=len)
        return tuple(
            t for t in pool
            if (subject is None or t.subject == subject)
            and (predicate is None or t.predicate == predicate)
            and (object is None or t.object == object)
        )

    def by_subject_type(self, subject_type: str, predicate: str) -> Tuple[Triple, ...]:
        """Instance triples whose subject has the given type and predicate."""
        return self._by_type_predicate.get((subject_type, predicate), ())

    def neighbors(self, node: str, relation: str, direction: str = "out") -> FrozenSet[Term]:
        """See module-level neighbors()."""
        if direction == "out":
            return frozenset(t.object for t in self._by_subject.get(node, ()) if t.predicate == relation)
        if direction == "in":
            return frozenset(t.subject for t in self._by_object.get(node, ()) if t.predicate == relation)
        raise ConfigurationError(f"Unknown direction '{direction}' (expected 'out' or 'in')")

    def to_tsv(self) -> str:
        """Canonical snapshot that re-ingests to an identical graph."""
        lines = [
            f"{format_term(t.subject)}\t{format_term(t.predicate)}\t{format_term(t.object)}"
            for t in self._triples
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TripleGraph):
            return NotImplemented
        return self._triples == other._triples and self._node_type == other._node_type

    __hash__ = None


def _parse_tsv_term(token: str, prefixes: Mapping[str, str], position: str, line_no: int) -> Term:
    token = token.strip()
    if not token:
        raise TripleParseError(line_no, f"empty {position} field")
    if token.startswith('"'):
        if position != "object":
            raise TripleParseError(line_no, f"literal not allowed as {position}")
        return parse_literal(token, prefixes, line_no)
    if token.startswith("<"):
        if not token.endswith(">") or len(token) == 2:
            raise TripleParseError(line_no, f"malformed IRI {token!r}")
        return token[1:-1]
    if position == "predicate" and token == "a":
        return RDF_TYPE
    if position == "object" and _INTEGER.fullmatch(token):
        return Literal(token, "int")
    return expand_curie(token, prefixes)


def _parse_tsv(source: str, prefixes: Mapping[str, str]) -> Iterator[Triple]:
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TripleParseError(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        s = _parse_tsv_term(fields[0], prefixes, "subject", line_no)
        p = _parse_tsv_term(fields[1], prefixes, "predicate", line_no)
        o = _parse_tsv_term(fields[2], prefixes, "object", line_no)
        yield Triple(s, p, o)


def _parse_ntriples(source: str, prefixes: Mapping[str, str]) -> Iterator[Triple]:
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens, pos = [], 0
        while pos < len(line):
            match = _NT_TOKEN.match(line, pos)
            if not match:
                raise TripleParseError(line_no, f"unexpected input at column {pos + 1}")
            tokens.append(match.group(1))
            pos = match.end()
            if line[pos:].strip() == "":
                break
        if len(tokens) != 4 or tokens[3] != ".":
            raise TripleParseError(line_no, "expected '<s> <p> <o> .'")
        s, p, o = tokens[:3]
        if s.startswith('"') or p.startswith('"') or p.startswith("_:") or "." in (s, p, o):
            raise TripleParseError(line_no, "subject and predicate must be IRIs")
        obj: Term = parse_literal(o, prefixes, line_no) if o.startswith('"') else o.strip("<>")
        subject = s.strip("<>") if s.startswith("<") else s
        yield Triple(subject, p[1:-1], obj)


def ingest_triples(
        source: str,
        format: str = "tsv",
        prefixes: Optional[Mapping[str, str]] = None
) -> TripleGraph:
    """
    Parse triple-file content into an indexed TripleGraph.

    Args:
        source: File content
        format: 'tsv' or 'ntriples'
        prefixes: Extra namespace bindings (merged over rdf/rdfs/xsd)

    Returns:
        Deduplicated TripleGraph with node types from `a` / rdf:type triples

    Raises:
        ConfigurationError: Unknown format tag
        TripleParseError: Malformed line (carries the line number)
    """
    bindings = dict(DEFAULT_PREFIXES)
    bindings.update(prefixes or {})
    if format == "tsv":
        parsed = list(_parse_tsv(source, bindings))
    elif format == "ntriples":
        parsed = list(_parse_ntriples(source, bindings))
    else:
        raise ConfigurationError(f"Unknown triple format '{format}' (supported: {', '.join(SUPPORTED_FORMATS)})")

    graph = TripleGraph(parsed, bindings)
    logger.info(
        f"Ingested {len(parsed)} lines -> {len(graph)} unique triples, "
        f"{len(graph.node_type)} typed nodes, {len(graph.untyped_nodes)} untyped"
    )
    return graph


def read_graph_file(path: Path, format: str = "tsv", prefixes: Optional[Mapping[str, str]] = None) -> TripleGraph:
    """Read and ingest a triple file, mapping OS failures onto StorageIOError."""
    try:
        source = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageIOError(f"Cannot read triple file {path}: {e}") from e
    return ingest_triples(source, format, prefixes)


def neighbors(g: TripleGraph, node: str, relation: str, direction: str = "out") -> FrozenSet[Term]:
    """
    Exact neighbour set of a node under one relation and direction.

    Unknown nodes have no neighbours; that is not an error.
    """
    return g.neighbors(node, relation, direction)


class SchemaRow(NamedTuple):
    """One type-level pattern with its instance count."""

    subject_type: str
    predicate: str
    object_type: str
    count: int


def is_pseudo_type(term: str) -> bool:
    """Literal kinds and the untyped bucket are not real type nodes."""
    return term in LITERAL_KINDS or term == UNTYPED


@dataclass(frozen=True)
class SchemaStats:
    """
    Type-level schema with frequencies.

    Row terms are kept as written (compact or full); `prefixes` normalises
    them so lookups compare full IRIs.
    """

    rows: Tuple[SchemaRow, ...]
    prefixes: Tuple[Tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.count < 0:
                raise ValueError(f"Negative count in schema row {row}")
            key = self.key(row.subject_type, row.predicate, row.object_type)
            if key in seen:
                raise ValueError(f"Duplicate schema row {row[:3]}")
            seen.add(key)

    @property
    def prefix_map(self) -> Dict[str, str]:
        return dict(self.prefixes)

    def expand(self, term: str) -> str:
        """Normalise a schema term to its full form."""
        if is_pseudo_type(term):
            return term
        if term.startswith("<") and term.endswith(">"):
            term = term[1:-1]
        if term == "a":
            return RDF_TYPE
        return expand_curie(term, self.prefix_map)

    def key(self, subject_type: str, predicate: str, object_type: str) -> Tuple[str, str, str]:
        return (self.expand(subject_type), self.expand(predicate), self.expand(object_type))

    def contains(self, subject_type: str, predicate: str, object_type: str) -> bool:
        wanted = self.key(subject_type, predicate, object_type)
        return any(self.key(*row[:3]) == wanted for row in self.rows)

    def predicates(self) -> FrozenSet[str]:
        """Full predicate IRIs present in the schema."""
        return frozenset(self.expand(row.predicate) for row in self.rows)

    def types(self) -> FrozenSet[str]:
        """Full type IRIs (literal kinds and 'untyped' excluded)."""
        found = set()
        for row in self.rows:
            for term in (row.subject_type, row.object_type):
                if not is_pseudo_type(term):
                    found.add(self.expand(term))
        return frozenset(found)

    def has_type(self, type_iri: str) -> bool:
        return self.expand(type_iri) in self.types()

    def subset(self, rows: Iterable[SchemaRow]) -> "SchemaStats":
        return SchemaStats(tuple(rows), self.prefixes)

    def to_tsv(self) -> str:
        """TSV listing: prefix comments, header, one row per pattern."""
        lines = [f"# @prefix {name}: <{base}>" for name, base in self.prefixes]
        lines.append("subject\tpredicate\tobject\tcount")
        lines.extend(f"{r.subject_type}\t{r.predicate}\t{r.object_type}\t{r.count}" for r in self.rows)
        return "\n".join(lines) + "\n"

    def to_listing(self) -> str:
        """Rows in the ` , `-separated form shown to the LLM."""
        lines = ["subject , predicate , object , count"]
        lines.extend(f"{r.subject_type} , {r.predicate} , {r.object_type} , {r.count}" for r in self.rows)
        return "\n".join(lines)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[SchemaRow]:
        return iter(self.rows)


def compute_schema_stats(g: TripleGraph) -> SchemaStats:
    """
    Count instance triples per (subject type, predicate, object type).

    Literal objects are grouped by literal kind, untyped nodes under
    'untyped'; rows are sorted by count descending then lexicographically.
    """
    prefixes = g.prefixes
    counts: Counter = Counter()
    for t in g.triples:
        if t.predicate == RDF_TYPE:
            continue
        object_type = t.object.kind if isinstance(t.object, Literal) else g.type_of(t.object)
        counts[(g.type_of(t.subject), t.predicate, object_type)] += 1

    def show(term: str) -> str:
        return term if is_pseudo_type(term) else compact_iri(term, prefixes)

    rows = [SchemaRow(show(s), show(p), show(o), n) for (s, p, o), n in counts.items()]
    rows.sort(key=lambda r: (-r.count, r.subject_type, r.predicate, r.object_type))
    logger.debug(f"Schema statistics: {len(rows)} patterns over {sum(counts.values())} instance triples")
    return SchemaStats(tuple(rows), tuple(prefixes.items()))


_PREFIX_LINE = re.compile(r"#\s*@prefix\s+([A-Za-z_][\w\-]*)?:\s*<([^>]*)>")


def load_schema_stats(text: str) -> SchemaStats:
    """
    Parse a statistics listing (TSV or ` , `-separated), preserving row order.

    Raises:
        TripleParseError: Malformed row (carries the line number)
    """
    prefixes: List[Tuple[str, str]] = []
    rows: List[SchemaRow] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = _PREFIX_LINE.match(line)
            if match:
                prefixes.append((match.group(1) or "", match.group(2)))
            continue
        fields = [f.strip() for f in (line.split("\t") if "\t" in line else line.split(","))]
        if len(fields) != 4:
            raise TripleParseError(line_no, f"expected 4 fields (subject, predicate, object, count), got {len(fields)}")
        if fields[3].lower() == "count":
            continue
        try:
            count = int(fields[3])
        except ValueError as e:
            raise TripleParseError(line_no, f"count {fields[3]!r} is not an integer") from e
        rows.append(SchemaRow(fields[0], fields[1], fields[2], count))
    try:
        return SchemaStats(tuple(rows), tuple(prefixes))
    except ValueError as e:
        raise TripleParseError(0, str(e)) from e


def read_schema_stats(path: Path) -> SchemaStats:
    """Read a statistics file, mapping OS failures onto StorageIOError."""
    try:
        return load_schema_stats(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageIOError(f"Cannot read schema statistics {path}: {e}") from e
