"""
SPARQL Subset Parser

Parses and prints the query shape produced by template generation:
PREFIX declarations, SELECT with `(?x AS ?y)` aliasing, an optional FROM,
and a WHERE clause that is either one basic group or a UNION of nested
sub-selects. Groups hold triple patterns (with the `a` shorthand), BIND of
a string literal and VALUES on one variable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union
import re

from qgnn.core.errors import VerificationError
from qgnn.services.kg_store import (
    DEFAULT_PREFIXES, RDF_TYPE, Literal, compact_iri, expand_curie, format_term, literal_kind_of_datatype,
)

PLACEHOLDER_TOKEN = "<VT-List>"
PLACEHOLDER_IRI = "urn:qgnn:placeholder:VT-List"


class SparqlSyntaxError(VerificationError):
    """Raised for text that is not in the supported SPARQL subset."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at offset {position})")


class UndeclaredPrefixError(SparqlSyntaxError):
    """Raised when a prefixed name uses a prefix without a PREFIX declaration."""


class UnboundProjectionError(SparqlSyntaxError):
    """Raised when a projected variable is not bound in some UNION branch."""


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


@dataclass(frozen=True)
class IRI:
    value: str


PatternTerm = Union[Var, IRI, Literal]


@dataclass(frozen=True)
class TriplePattern:
    subject: PatternTerm
    predicate: PatternTerm
    object: PatternTerm

    def variables(self) -> Tuple[Var, ...]:
        return tuple(t for t in (self.subject, self.predicate, self.object) if isinstance(t, Var))


@dataclass(frozen=True)
class Bind:
    literal: Literal
    var: Var


@dataclass(frozen=True)
class ValuesClause:
    var: Var
    iris: Tuple[str, ...]

    @property
    def is_placeholder(self) -> bool:
        return self.iris == (PLACEHOLDER_IRI,)


@dataclass(frozen=True)
class ProjectionItem:
    """`?v` (source == alias) or `(?source AS ?alias)`."""

    source: Var
    alias: Var


@dataclass(frozen=True)
class SubSelect:
    projection: Tuple[ProjectionItem, ...]
    patterns: Tuple[TriplePattern, ...]
    binds: Tuple[Bind, ...] = ()
    values: Optional[ValuesClause] = None

    def bound_variables(self) -> frozenset:
        bound = {v for p in self.patterns for v in p.variables()}
        bound.update(b.var for b in self.binds)
        if self.values is not None:
            bound.add(self.values.var)
        return frozenset(bound)

    def output_variables(self) -> Tuple[Var, ...]:
        return tuple(item.alias for item in self.projection)

    def subject_variables(self) -> frozenset:
        return frozenset(p.subject for p in self.patterns if isinstance(p.subject, Var))

    def source_of(self, alias: Var) -> Optional[Var]:
        """Branch variable exposed under `alias`; None when the branch does not project it."""
        for item in self.projection:
            if item.alias == alias:
                return item.source
        return None

    def bind_of(self, var: Var) -> Optional[Bind]:
        for bind in self.binds:
            if bind.var == var:
                return bind
        return None

    def constant_predicates(self) -> Tuple[str, ...]:
        return tuple(p.predicate.value for p in self.patterns if isinstance(p.predicate, IRI))


@dataclass(frozen=True)
class QueryAst:
    prefixes: Tuple[Tuple[str, str], ...]
    projection: Tuple[ProjectionItem, ...]
    branches: Tuple[SubSelect, ...]
    from_graph: Optional[str] = None

    @property
    def prefix_map(self) -> Dict[str, str]:
        return dict(self.prefixes)

    @property
    def output_variables(self) -> Tuple[Var, ...]:
        return tuple(item.alias for item in self.projection)

    def predicate_iris(self) -> Tuple[str, ...]:
        """Constant predicates used by any pattern, in first-seen order."""
        seen: List[str] = []
        for branch in self.branches:
            for pattern in branch.patterns:
                if isinstance(pattern.predicate, IRI) and pattern.predicate.value not in seen:
                    seen.append(pattern.predicate.value)
        return tuple(seen)


def bound_predicate(value: str, prefixes: Mapping[str, str]) -> str:
    """
    Predicate IRI named by a BIND literal such as `"dblp:title"`.

    Accepts `prefix:local` (query prefixes first, then rdf/rdfs/xsd), `<iri>`
    and bare IRIs; anything else is returned unchanged.
    """
    value = value.strip()
    if value.startswith("<") and value.endswith(">"):
        return value[1:-1]
    return expand_curie(value, {**DEFAULT_PREFIXES, **prefixes})


def passthrough(projection: Sequence[ProjectionItem]) -> Tuple[ProjectionItem, ...]:
    """Projection of a plain group: exposes the outer projection's source variables unchanged."""
    return tuple(ProjectionItem(item.source, item.source) for item in projection)


# ---------------------------------------------------------------- tokenizer

_TOKEN_SPEC = [
    ("WS", r"\s+"),
    ("COMMENT", r"#[^\n]*"),
    ("IRIREF", r"<[^<>\"{}|^`\\\s]*>"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("DTYPE", r"\^\^"),
    ("LANG", r"@[A-Za-z][A-Za-z0-9\-]*"),
    ("VAR", r"[?$][A-Za-z_][A-Za-z0-9_]*"),
    ("INTEGER", r"[+-]?\d+"),
    ("PNAME", r"[A-Za-z_][\w\-]*:(?:[\w\-.]*[\w\-])?|:(?:[\w\-.]*[\w\-])?"),
    ("KEYWORD", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[{}().]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))
_PNAME_FULL = re.compile(r"(?:[A-Za-z_][\w\-]*)?:(?:[\w\-.]*[\w\-])?")
_KEYWORDS = {"PREFIX", "SELECT", "DISTINCT", "FROM", "WHERE", "UNION", "BIND", "AS", "VALUES"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise SparqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        value = match.group()
        if kind == "KEYWORD":
            upper = value.upper()
            if upper in _KEYWORDS:
                tokens.append(_Token(upper, value, pos))
            elif value == "a":
                tokens.append(_Token("A", value, pos))
            else:
                raise SparqlSyntaxError(f"unsupported keyword {value!r}", pos)
        elif kind not in ("WS", "COMMENT"):
            tokens.append(_Token(kind, value, pos))
        pos = match.end()
    tokens.append(_Token("EOF", "", len(text)))
    return tokens


# ------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.index = 0
        self.prefixes: Dict[str, str] = {}

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _accept(self, kind: str, text: Optional[str] = None) -> Optional[_Token]:
        token = self.current
        if token.kind == kind and (text is None or token.text == text):
            return self._advance()
        return None

    def _expect(self, kind: str, text: Optional[str] = None) -> _Token:
        token = self._accept(kind, text)
        if token is None:
            wanted = text or kind
            found = self.current.text or self.current.kind
            raise SparqlSyntaxError(f"expected {wanted!r} but found {found!r}", self.current.pos)
        return token

    def parse(self) -> QueryAst:
        declared: List[Tuple[str, str]] = []
        while self._accept("PREFIX"):
            name_token = self._expect("PNAME")
            if not name_token.text.endswith(":"):
                raise SparqlSyntaxError("PREFIX name must end with ':'", name_token.pos)
            iri = self._expect("IRIREF").text[1:-1]
            name = name_token.text[:-1]
            self.prefixes[name] = iri
            declared = [(p, i) for p, i in declared if p != name] + [(name, iri)]

        self._expect("SELECT")
        projection = self._projection()
        from_graph = None
        if self._accept("FROM"):
            from_graph = self._iri_token(self._advance())
        self._expect("WHERE")
        open_brace = self._expect("PUNCT", "{")

        branches: List[SubSelect] = []
        if self.current.kind == "PUNCT" and self.current.text == "{":
            branches.append(self._branch(projection))
            while self._accept("UNION"):
                branches.append(self._branch(projection))
            self._expect("PUNCT", "}")
        else:
            branches.append(self._group(passthrough(projection), open_brace.pos))
        self._expect("EOF")

        ast = QueryAst(tuple(declared), projection, tuple(branches), from_graph)
        _check_projection(ast, open_brace.pos)
        return ast

    def _projection(self) -> Tuple[ProjectionItem, ...]:
        self._accept("DISTINCT")
        items: List[ProjectionItem] = []
        while True:
            if self.current.kind == "VAR":
                var = Var(self._advance().text[1:])
                items.append(ProjectionItem(var, var))
            elif self._accept("PUNCT", "("):
                source = Var(self._expect("VAR").text[1:])
                self._expect("AS")
                alias = Var(self._expect("VAR").text[1:])
                self._expect("PUNCT", ")")
                items.append(ProjectionItem(source, alias))
            else:
                break
        if not items:
            raise SparqlSyntaxError("SELECT needs at least one variable", self.current.pos)
        aliases = [item.alias for item in items]
        if len(set(aliases)) != len(aliases):
            raise SparqlSyntaxError("duplicate variable in projection", self.current.pos)
        return tuple(items)

    def _branch(self, outer: Tuple[ProjectionItem, ...]) -> SubSelect:
        start = self._expect("PUNCT", "{")
        if self._accept("SELECT"):
            projection = self._projection()
            self._expect("WHERE")
            inner = self._expect("PUNCT", "{")
            branch = self._group(projection, inner.pos)
            self._expect("PUNCT", "}")
            return branch
        return self._group(passthrough(outer), start.pos)

    def _group(self, projection: Tuple[ProjectionItem, ...], start: int) -> SubSelect:
        """Parse group content up to and including the closing brace."""
        patterns: List[TriplePattern] = []
        binds: List[Bind] = []
        values: Optional[ValuesClause] = None
        while not self._accept("PUNCT", "}"):
            token = self.current
            if token.kind == "EOF":
                raise SparqlSyntaxError("unterminated group", start)
            if self._accept("PUNCT", "."):
                continue
            if self._accept("BIND"):
                binds.append(self._bind())
            elif self._accept("VALUES"):
                if values is not None:
                    raise SparqlSyntaxError("only one VALUES clause per group", token.pos)
                values = self._values()
            else:
                patterns.append(self._pattern())

        if not patterns:
            raise SparqlSyntaxError("group has no triple patterns", start)
        in_scope = {v for p in patterns for v in p.variables()}
        for bind in binds:
            if bind.var in in_scope:
                raise SparqlSyntaxError(f"BIND target {bind.var} is already in scope", start)
            in_scope.add(bind.var)
        branch = SubSelect(projection, tuple(patterns), tuple(binds), values)
        unbound = [str(item.source) for item in projection if item.source not in branch.bound_variables()]
        if unbound:
            raise UnboundProjectionError(f"projected variable(s) {', '.join(unbound)} not bound in group", start)
        return branch

    def _bind(self) -> Bind:
        self._expect("PUNCT", "(")
        token = self._expect("STRING")
        literal = self._literal_from(token)
        self._expect("AS")
        var = Var(self._expect("VAR").text[1:])
        self._expect("PUNCT", ")")
        return Bind(literal, var)

    def _values(self) -> ValuesClause:
        var = Var(self._expect("VAR").text[1:])
        self._expect("PUNCT", "{")
        iris: List[str] = []
        while not self._accept("PUNCT", "}"):
            token = self._advance()
            if token.kind not in ("IRIREF", "PNAME"):
                raise SparqlSyntaxError(f"VALUES accepts IRIs only, found {token.text!r}", token.pos)
            iris.append(self._iri_token(token))
        return ValuesClause(var, tuple(iris))

    def _pattern(self) -> TriplePattern:
        subject = self._term("subject")
        predicate = self._term("predicate")
        obj = self._term("object")
        return TriplePattern(subject, predicate, obj)

    def _term(self, position: str) -> PatternTerm:
        token = self._advance()
        if token.kind == "VAR":
            return Var(token.text[1:])
        if token.kind in ("IRIREF", "PNAME"):
            return IRI(self._iri_token(token))
        if token.kind == "A" and position == "predicate":
            return IRI(RDF_TYPE)
        if position == "object" and token.kind == "STRING":
            return self._literal_from(token)
        if position == "object" and token.kind == "INTEGER":
            return Literal(token.text, "int")
        raise SparqlSyntaxError(f"unexpected {token.text or token.kind!r} as {position}", token.pos)

    def _literal_from(self, token: _Token) -> Literal:
        value = re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t", "r": "\r"}.get(m.group(1), m.group(1)),
                       token.text[1:-1])
        if self._accept("DTYPE"):
            dtype_token = self._advance()
            if dtype_token.kind not in ("IRIREF", "PNAME"):
                raise SparqlSyntaxError("datatype must be an IRI", dtype_token.pos)
            return Literal(value, literal_kind_of_datatype(self._iri_token(dtype_token)))
        self._accept("LANG")
        return Literal(value, "str")

    def _iri_token(self, token: _Token) -> str:
        if token.kind == "IRIREF":
            if token.text == PLACEHOLDER_TOKEN:
                return PLACEHOLDER_IRI
            return token.text[1:-1]
        if token.kind == "PNAME":
            prefix, local = token.text.split(":", 1)
            if prefix not in self.prefixes:
                raise UndeclaredPrefixError(f"undeclared prefix '{prefix}:'", token.pos)
            return self.prefixes[prefix] + local
        raise SparqlSyntaxError(f"expected an IRI, found {token.text!r}", token.pos)


def _check_projection(ast: QueryAst, position: int) -> None:
    for index, branch in enumerate(ast.branches):
        outputs = set(branch.output_variables())
        missing = [str(item.source) for item in ast.projection if item.source not in outputs]
        if missing:
            raise UnboundProjectionError(
                f"projection variable(s) {', '.join(missing)} unbound in UNION branch {index + 1}", position
            )


def parse_query(text: str) -> QueryAst:
    """
    Parse query text into a QueryAst.

    Raises:
        SparqlSyntaxError: Text outside the subset (with character offset)
        UndeclaredPrefixError: Prefixed name without a PREFIX declaration
        UnboundProjectionError: Projection variable missing from a branch
    """
    return _Parser(text).parse()


# ------------------------------------------------------------------ printer

def _print_iri(iri: str, prefixes: Dict[str, str]) -> str:
    if iri == PLACEHOLDER_IRI:
        return PLACEHOLDER_TOKEN
    short = compact_iri(iri, prefixes)
    if short != iri and _PNAME_FULL.fullmatch(short):
        return short
    return f"<{iri}>"


def _print_term(term: PatternTerm, prefixes: Dict[str, str]) -> str:
    if isinstance(term, Var):
        return str(term)
    if isinstance(term, IRI):
        if term.value == RDF_TYPE:
            return "a"
        return _print_iri(term.value, prefixes)
    return format_term(term)


def _print_projection(items: Sequence[ProjectionItem]) -> str:
    return " ".join(str(i.alias) if i.source == i.alias else f"({i.source} AS {i.alias})" for i in items)


def _print_group(branch: SubSelect, prefixes: Dict[str, str]) -> str:
    parts = [
        f"{_print_term(p.subject, prefixes)} {_print_term(p.predicate, prefixes)} {_print_term(p.object, prefixes)} ."
        for p in branch.patterns
    ]
    parts.extend(f"BIND({format_term(b.literal)} AS {b.var}) ." for b in branch.binds)
    if branch.values is not None:
        iris = " ".join(_print_iri(i, prefixes) for i in branch.values.iris)
        parts.append(f"VALUES {branch.values.var} {{{iris}}} .")
    return " ".join(parts)


def print_query(ast: QueryAst) -> str:
    """Canonical text for an AST; parse(print_query(ast)) == ast."""
    prefixes = ast.prefix_map
    lines = [f"PREFIX {name}: <{iri}>" for name, iri in ast.prefixes]
    lines.append(f"SELECT {_print_projection(ast.projection)}")
    if ast.from_graph is not None:
        lines.append(f"FROM {_print_iri(ast.from_graph, prefixes)}")
    single = len(ast.branches) == 1 and ast.branches[0].projection == passthrough(ast.projection)
    if single:
        lines.append(f"WHERE {{ {_print_group(ast.branches[0], prefixes)} }}")
    else:
        lines.append("WHERE {")
        rendered = [
            f"  {{ SELECT {_print_projection(b.projection)} WHERE {{ {_print_group(b, prefixes)} }} }}"
            for b in ast.branches
        ]
        lines.append("\n  UNION\n".join(rendered))
        lines.append("}")
    return "\n".join(lines) + "\n"


def instantiate(ast: QueryAst, targets: Iterable[str]) -> QueryAst:
    """Replace the `<VT-List>` sentinel of every VALUES clause with the targets."""
    target_tuple = tuple(targets)
    branches = tuple(
        replace(b, values=ValuesClause(b.values.var, target_tuple))
        if b.values is not None and b.values.is_placeholder else b
        for b in ast.branches
    )
    return replace(ast, branches=branches)
