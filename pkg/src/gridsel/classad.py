"""Classified advertisements: parsing, evaluation, matchmaking and ranking.

An ad is an ordered set of ``name = expression;`` statements.  Two ads match
when the ``requirement`` expression of each one evaluates to ``true`` with the
other ad bound to the ``other`` scope.  Evaluation uses three-valued logic:
references to missing attributes yield :data:`UNDEFINED`, type faults yield an
:class:`Error` value, and nothing is raised.

Operator precedence (highest to lowest)::

    unary ! -
    * /
    + -
    < <= > >= == !=
    &&
    ||

Numeric literals accept a binary unit suffix (``K``, ``M``, ``G``, ``T``) and
an optional ``/Sec`` rate marker, which is ignored numerically::

    availableSpace = 50G;            # 53687091200
    MaxRDBandwidth = 75K/Sec;        # 76800
"""

from __future__ import annotations

import json
import math
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from typing import Union

__all__ = [
    "UNDEFINED",
    "Error",
    "Value",
    "Expr",
    "Literal",
    "AttrRef",
    "Unary",
    "Binary",
    "ClassAd",
    "ClassAdError",
    "ClassAdSyntaxError",
    "MatchContext",
    "MatchResult",
    "parse_classad",
    "parse_expression",
    "parse_quantity",
    "serialize",
    "format_expression",
    "evaluate",
    "match_ads",
    "rank_candidates",
    "rank_value",
    "references",
    "is_number",
]

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

UNIT_SCALE = {"K": 2**10, "M": 2**20, "G": 2**30, "T": 2**40}


class ClassAdError(ValueError):
    """Raised for malformed ads (duplicate names, bad construction)."""


class ClassAdSyntaxError(ClassAdError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.reason = message
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEFINED"

    def __bool__(self) -> bool:
        raise TypeError("UNDEFINED has no truth value")

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


@dataclass(frozen=True)
class Error:
    """Evaluation fault, e.g. ``"a" + 1`` or division by zero."""

    message: str = ""

    def __bool__(self) -> bool:
        raise TypeError("Error has no truth value")


Value = Union[int, float, bool, str, _Undefined, Error]


def is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _same_value(a: object, b: object) -> bool:
    return type(a) is type(b) and a == b


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------


def _name_key(name: str) -> str:
    key = name.lower()
    # The two spellings of the requirements attribute are one attribute.
    return "requirements" if key == "requirement" else key


@dataclass(frozen=True, eq=False)
class Literal:
    value: int | float | bool | str

    def __eq__(self, other):
        return isinstance(other, Literal) and _same_value(self.value, other.value)

    def __hash__(self):
        return hash((type(self.value), self.value))


@dataclass(frozen=True, eq=False)
class AttrRef:
    """``name`` (scope ``None``) or ``other.name`` (scope ``"other"``)."""

    name: str
    scope: str | None = None

    @property
    def key(self) -> str:
        return _name_key(self.name)

    def __eq__(self, other):
        return (
            isinstance(other, AttrRef)
            and self.scope == other.scope
            and self.key == other.key
        )

    def __hash__(self):
        return hash((self.scope, self.key))


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Literal, AttrRef, Unary, Binary]

UNARY_OPS = ("!", "-")
BINARY_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "<": 3,
    "<=": 3,
    ">": 3,
    ">=": 3,
    "==": 3,
    "!=": 3,
    "+": 4,
    "-": 4,
    "*": 5,
    "/": 5,
}
_UNARY_PRECEDENCE = 6
_ATOM_PRECEDENCE = 7


# ---------------------------------------------------------------------------
# ClassAd container
# ---------------------------------------------------------------------------


class ClassAd(Mapping):
    """Immutable ordered mapping of attribute name to expression.

    Lookups are case-insensitive and ``requirement``/``requirements`` name the
    same attribute.  Equality ignores attribute order and name case.
    """

    __slots__ = ("_items", "_index")

    def __init__(self, attributes: Iterable[tuple[str, Expr]] | Mapping = ()):
        if isinstance(attributes, Mapping):
            attributes = attributes.items()
        items: list[tuple[str, Expr]] = []
        index: dict[str, int] = {}
        for name, expr in attributes:
            if not _IDENT_RE.fullmatch(name) or name.lower() in _KEYWORDS:
                raise ClassAdError(f"invalid attribute name {name!r}")
            if not isinstance(expr, (Literal, AttrRef, Unary, Binary)):
                raise ClassAdError(f"attribute {name!r} is not an expression")
            key = _name_key(name)
            if key in index:
                raise ClassAdError(f"duplicate attribute {name!r}")
            index[key] = len(items)
            items.append((name, expr))
        self._items = tuple(items)
        self._index = index

    @classmethod
    def from_values(cls, values: Mapping[str, int | float | bool | str]) -> "ClassAd":
        return cls((name, Literal(value)) for name, value in values.items())

    def __getitem__(self, name: str) -> Expr:
        return self._items[self._index[_name_key(name)]][1]

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and _name_key(name) in self._index

    def __iter__(self) -> Iterator[str]:
        return (name for name, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return list(self._items)

    def __eq__(self, other):
        if not isinstance(other, ClassAd):
            return NotImplemented
        if self._index.keys() != other._index.keys():
            return False
        return all(expr == other[name] for name, expr in self._items)

    def __hash__(self):
        return hash(frozenset((_name_key(n), e) for n, e in self._items))

    def __repr__(self) -> str:
        return f"ClassAd({serialize(self)!r})"

    def __str__(self) -> str:
        return serialize(self)

    @property
    def requirement(self) -> Expr | None:
        return self.get("requirements")

    @property
    def rank(self) -> Expr | None:
        return self.get("rank")

    def with_attribute(self, name: str, expr: Expr) -> "ClassAd":
        """Return a copy with ``name`` set (replaced in place if present)."""
        key = _name_key(name)
        if key in self._index:
            items = [
                (name, expr) if _name_key(n) == key else (n, e) for n, e in self._items
            ]
        else:
            items = list(self._items) + [(name, expr)]
        return ClassAd(items)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"(\d+)(\.\d+)?([eE][+-]?\d+)?")
_KEYWORDS = {"true", "false", "other"}
_PUNCT = ("&&", "||", "<=", ">=", "==", "!=", "<", ">", "!", "+", "-", "*", "/",
          "(", ")", ".", ";", "=")


@dataclass(frozen=True)
class _Token:
    kind: str  # number, string, ident, keyword, op, eof
    value: object
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)

    def err(message: str, at: int) -> ClassAdSyntaxError:
        return ClassAdSyntaxError(message, line, at - line_start + 1)

    while pos < n:
        ch = text[pos]
        if ch == "\n":
            pos += 1
            line += 1
            line_start = pos
            continue
        if ch in " \t\r":
            pos += 1
            continue
        if ch == "#":
            while pos < n and text[pos] != "\n":
                pos += 1
            continue
        col = pos - line_start + 1
        if ch.isdigit():
            m = _NUMBER_RE.match(text, pos)
            whole, frac, exp = m.groups()
            end = m.end()
            is_real = frac is not None or exp is not None
            number: int | float = float(m.group(0)) if is_real else int(whole)
            s = _IDENT_RE.match(text, end)
            if s:
                suffix = s.group(0)
                scale = UNIT_SCALE.get(suffix.upper()) if len(suffix) == 1 else None
                if scale is None:
                    raise err(f"unknown unit suffix {suffix!r}", end)
                number = number * scale
                end = s.end()
            if isinstance(number, float) and not math.isfinite(number):
                raise err("real literal out of range", pos)
            tokens.append(_Token("number", number, line, col))
            pos = end
            continue
        if ch.isalpha() or ch == "_":
            m = _IDENT_RE.match(text, pos)
            word = m.group(0)
            kind = "keyword" if word.lower() in _KEYWORDS else "ident"
            tokens.append(_Token(kind, word.lower() if kind == "keyword" else word, line, col))
            pos = m.end()
            continue
        if ch == '"':
            end = pos + 1
            while end < n and text[end] != '"':
                if text[end] == "\n":
                    raise err("unterminated string", pos)
                end += 2 if text[end] == "\\" else 1
            if end >= n:
                raise err("unterminated string", pos)
            try:
                value = json.loads(text[pos:end + 1])
            except json.JSONDecodeError:
                raise err("invalid string escape", pos) from None
            tokens.append(_Token("string", value, line, col))
            pos = end + 1
            continue
        if text.startswith("``", pos):
            # TeX-style quoting as printed in published ads: ``text''
            end = text.find("''", pos + 2)
            if end < 0 or "\n" in text[pos:end]:
                raise err("unterminated string", pos)
            tokens.append(_Token("string", text[pos + 2:end], line, col))
            pos = end + 2
            continue
        for p in _PUNCT:
            if text.startswith(p, pos):
                tokens.append(_Token("op", p, line, col))
                pos += len(p)
                break
        else:
            raise err(f"unexpected character {ch!r}", pos)
    tokens.append(_Token("eof", None, line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, offset: int = 0) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.value in ops

    def expect_op(self, op: str) -> _Token:
        if not self.at_op(op):
            raise self.error(f"expected {op!r}")
        return self.advance()

    def error(self, message: str, tok: _Token | None = None) -> ClassAdSyntaxError:
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.value)
        return ClassAdSyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def parse_ad(self) -> ClassAd:
        items: list[tuple[str, Expr]] = []
        seen: dict[str, str] = {}
        while self.peek().kind != "eof":
            tok = self.advance()
            if tok.kind != "ident":
                raise self.error("expected attribute name", tok)
            key = _name_key(tok.value)
            if key in seen:
                raise ClassAdSyntaxError(
                    f"duplicate attribute {tok.value!r} (already defined as {seen[key]!r})",
                    tok.line,
                    tok.column,
                )
            seen[key] = tok.value
            self.expect_op("=")
            expr = self.parse_expr()
            self.expect_op(";")
            items.append((tok.value, expr))
        return ClassAd(items)

    def parse_only_expr(self) -> Expr:
        expr = self.parse_expr()
        if self.at_op(";") and self.peek(1).kind == "eof":
            self.advance()
        if self.peek().kind != "eof":
            raise self.error("unexpected trailing input")
        return expr

    def parse_expr(self, min_prec: int = 1) -> Expr:
        left = self.parse_unary()
        while True:
            tok = self.peek()
            prec = BINARY_PRECEDENCE.get(tok.value) if tok.kind == "op" else None
            if prec is None or prec < min_prec:
                return left
            self.advance()
            right = self.parse_expr(prec + 1)
            left = Binary(tok.value, left, right)

    def parse_unary(self) -> Expr:
        if self.at_op("-") and self.peek(1).kind == "number":
            # Negative numeric literals fold at parse time.
            self.advance()
            return self.parse_number(negate=True)
        if self.at_op(*UNARY_OPS):
            op = self.advance().value
            return Unary(op, self.parse_unary())
        return self.parse_primary()

    def parse_number(self, negate: bool = False) -> Literal:
        tok = self.advance()
        value = -tok.value if negate else tok.value
        if isinstance(value, int) and not INT_MIN <= value <= INT_MAX:
            raise ClassAdSyntaxError("integer literal out of range", tok.line, tok.column)
        nxt = self.peek(1)
        if self.at_op("/") and nxt.kind == "ident" and nxt.value.lower() == "sec":
            self.pos += 2
        return Literal(value)

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            return self.parse_number()
        if tok.kind == "string":
            self.advance()
            return Literal(tok.value)
        if tok.kind == "keyword":
            self.advance()
            if tok.value == "true":
                return Literal(True)
            if tok.value == "false":
                return Literal(False)
            self.expect_op(".")
            name = self.advance()
            if name.kind != "ident":
                raise self.error("expected attribute name after 'other.'", name)
            return AttrRef(name.value, "other")
        if tok.kind == "ident":
            self.advance()
            return AttrRef(tok.value)
        if self.at_op("("):
            self.advance()
            expr = self.parse_expr()
            self.expect_op(")")
            return expr
        raise self.error("expected expression")


def parse_classad(text: str) -> ClassAd:
    """Parse ad source text into a :class:`ClassAd`.

    Raises :class:`ClassAdSyntaxError` (with ``line``/``column``) on syntax
    errors, duplicate attributes and unknown unit suffixes.
    """
    return _Parser(text).parse_ad()


def parse_expression(text: str) -> Expr:
    """Parse a single expression; a trailing ``;`` is tolerated."""
    return _Parser(text).parse_only_expr()


def parse_quantity(text: str) -> int | float:
    """Parse a numeric literal such as ``50G``, ``75K/Sec`` or ``-3.5``."""
    expr = parse_expression(text)
    if not isinstance(expr, Literal) or not is_number(expr.value):
        raise ClassAdError(f"not a numeric quantity: {text!r}")
    return expr.value


# ---------------------------------------------------------------------------
# Serializer
# ---------------------------------------------------------------------------


def _precedence(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return BINARY_PRECEDENCE[expr.op]
    if isinstance(expr, Unary):
        return _UNARY_PRECEDENCE
    if isinstance(expr, Literal) and is_number(expr.value) and math.copysign(1, expr.value) < 0:
        # A negative literal prints with a leading minus, i.e. like a unary.
        return _UNARY_PRECEDENCE
    return _ATOM_PRECEDENCE


def _format_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return json.dumps(value, ensure_ascii=False)


def _is_rate_marker(expr: Binary) -> bool:
    # "x / sec" would reparse as the /Sec suffix on a numeric literal.
    r = expr.right
    return expr.op == "/" and isinstance(r, AttrRef) and r.scope is None and r.key == "sec"


def format_expression(expr: Expr) -> str:
    """Render an expression with the minimal parentheses needed to reparse it."""
    if isinstance(expr, Literal):
        return _format_literal(expr.value)
    if isinstance(expr, AttrRef):
        return f"other.{expr.name}" if expr.scope == "other" else expr.name
    if isinstance(expr, Unary):
        inner = format_expression(expr.operand)
        wrap = _precedence(expr.operand) < _UNARY_PRECEDENCE
        # "-5" would fold into a literal on reparse.
        if expr.op == "-" and isinstance(expr.operand, Literal) and is_number(expr.operand.value):
            wrap = True
        return f"{expr.op}({inner})" if wrap else f"{expr.op}{inner}"
    prec = BINARY_PRECEDENCE[expr.op]
    left = format_expression(expr.left)
    if _precedence(expr.left) < prec:
        left = f"({left})"
    right = format_expression(expr.right)
    if _precedence(expr.right) <= prec or _is_rate_marker(expr):
        right = f"({right})"
    return f"{left} {expr.op} {right}"


def serialize(ad: ClassAd) -> str:
    """Canonical text: one ``name = expr;`` per line."""
    return "".join(f"{name} = {format_expression(expr)};\n" for name, expr in ad.items())


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchContext:
    """Scope for evaluation: bare names resolve in ``self_ad``, ``other.x`` in ``other_ad``."""

    self_ad: ClassAd
    other_ad: ClassAd | None = None

    def swapped(self) -> "MatchContext":
        return MatchContext(self.other_ad, self.self_ad)


def _check_int(value: int) -> Value:
    if INT_MIN <= value <= INT_MAX:
        return value
    return Error("integer overflow")


def _check_real(value: float) -> Value:
    if math.isfinite(value):
        return value
    return Error("real overflow")


def _arith(op: str, a, b) -> Value:
    if isinstance(a, int) and isinstance(b, int):
        if op == "+":
            return _check_int(a + b)
        if op == "-":
            return _check_int(a - b)
        if op == "*":
            return _check_int(a * b)
        if b == 0:
            return Error("division by zero")
        q = abs(a) // abs(b)
        return _check_int(q if (a < 0) == (b < 0) else -q)
    a, b = float(a), float(b)
    if op == "+":
        return _check_real(a + b)
    if op == "-":
        return _check_real(a - b)
    if op == "*":
        return _check_real(a * b)
    if b == 0.0:
        return Error("division by zero")
    return _check_real(a / b)


_COMPARE = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _compare(op: str, a, b) -> Value:
    if is_number(a) and is_number(b):
        return _COMPARE[op](a, b)
    if op in ("==", "!="):
        if (isinstance(a, str) and isinstance(b, str)) or (
            isinstance(a, bool) and isinstance(b, bool)
        ):
            return _COMPARE[op](a, b)
    return Error(f"cannot compare {_type_name(a)} {op} {_type_name(b)}")


def _type_name(v) -> str:
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "real"
    if isinstance(v, str):
        return "text"
    return repr(v)


class _Evaluator:
    def __init__(self):
        self.active: set[tuple[int, str]] = set()

    def eval(self, expr: Expr, ctx: MatchContext) -> Value:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, AttrRef):
            return self.resolve(expr, ctx)
        if isinstance(expr, Unary):
            return self.unary(expr.op, self.eval(expr.operand, ctx))
        if expr.op == "&&":
            return self.logical_and(expr, ctx)
        if expr.op == "||":
            return self.logical_or(expr, ctx)
        a = self.eval(expr.left, ctx)
        b = self.eval(expr.right, ctx)
        if isinstance(a, Error):
            return a
        if isinstance(b, Error):
            return b
        if a is UNDEFINED or b is UNDEFINED:
            return UNDEFINED
        if expr.op in _COMPARE:
            return _compare(expr.op, a, b)
        if is_number(a) and is_number(b):
            return _arith(expr.op, a, b)
        return Error(f"cannot apply {_type_name(a)} {expr.op} {_type_name(b)}")

    def resolve(self, ref: AttrRef, ctx: MatchContext) -> Value:
        scope = ctx.swapped() if ref.scope == "other" else ctx
        ad = scope.self_ad
        if ad is None or ref.key not in ad:
            return UNDEFINED
        marker = (id(ad), ref.key)
        if marker in self.active:
            return Error(f"circular reference to {ref.name!r}")
        self.active.add(marker)
        try:
            return self.eval(ad[ref.key], scope)
        finally:
            self.active.discard(marker)

    @staticmethod
    def unary(op: str, v: Value) -> Value:
        if isinstance(v, Error) or v is UNDEFINED:
            return v
        if op == "!":
            if isinstance(v, bool):
                return not v
            return Error(f"cannot apply ! to {_type_name(v)}")
        if is_number(v):
            return _check_int(-v) if isinstance(v, int) else -v
        return Error(f"cannot negate {_type_name(v)}")

    def logical_and(self, expr: Binary, ctx: MatchContext) -> Value:
        a = self.eval(expr.left, ctx)
        if a is False:
            return False
        if not (a is True or a is UNDEFINED):
            return a if isinstance(a, Error) else Error(f"&& on {_type_name(a)}")
        b = self.eval(expr.right, ctx)
        if b is False:
            return False
        if b is True:
            return a
        if b is UNDEFINED:
            return UNDEFINED
        return b if isinstance(b, Error) else Error(f"&& on {_type_name(b)}")

    def logical_or(self, expr: Binary, ctx: MatchContext) -> Value:
        a = self.eval(expr.left, ctx)
        if a is True:
            return True
        if not (a is False or a is UNDEFINED):
            return a if isinstance(a, Error) else Error(f"|| on {_type_name(a)}")
        b = self.eval(expr.right, ctx)
        if b is True:
            return True
        if b is False:
            return a
        if b is UNDEFINED:
            return UNDEFINED
        return b if isinstance(b, Error) else Error(f"|| on {_type_name(b)}")


def evaluate(expr: Expr, ctx: MatchContext | ClassAd | None = None) -> Value:
    """Evaluate ``expr``; never raises, faults come back as :class:`Error`."""
    if ctx is None:
        ctx = MatchContext(ClassAd())
    elif isinstance(ctx, ClassAd):
        ctx = MatchContext(ctx)
    return _Evaluator().eval(expr, ctx)


def references(expr: Expr) -> set[AttrRef]:
    """All attribute references appearing syntactically in ``expr``."""
    found: set[AttrRef] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, AttrRef):
            found.add(node)
        elif isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
    return found


# ---------------------------------------------------------------------------
# Matchmaking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    self_requirement: Value
    other_requirement: Value
    rank: Value = UNDEFINED


def _requirement_value(ad: ClassAd, other: ClassAd) -> Value:
    expr = ad.requirement
    if expr is None:
        return True
    return evaluate(expr, MatchContext(ad, other))


def match_ads(a: ClassAd, b: ClassAd) -> MatchResult:
    """Bilateral match from ``a``'s perspective; rank is ``a``'s rank of ``b``."""
    mine = _requirement_value(a, b)
    theirs = _requirement_value(b, a)
    rank = evaluate(a.rank, MatchContext(a, b)) if a.rank is not None else UNDEFINED
    return MatchResult(mine is True and theirs is True, mine, theirs, rank)


def rank_value(result: MatchResult) -> int | float:
    """Numeric sort key for a match; undefined or non-numeric ranks count as 0."""
    return result.rank if is_number(result.rank) else 0


def _text_attr(ad: ClassAd, name: str) -> str:
    value = evaluate(AttrRef(name), ad) if name in ad else UNDEFINED
    return value if isinstance(value, str) else ""


def rank_candidates(
    requester: ClassAd, candidates: Iterable[ClassAd]
) -> list[tuple[ClassAd, MatchResult]]:
    """Matched candidates best-first.

    Sorted by descending rank, then case-insensitive ``hostname`` and
    ``volume``; remaining ties keep input order.
    """
    matched = []
    for ad in candidates:
        result = match_ads(requester, ad)
        if result.matched:
            matched.append((ad, result))
    matched.sort(
        key=lambda pair: (
            -rank_value(pair[1]),
            _text_attr(pair[0], "hostname").lower(),
            _text_attr(pair[0], "volume"),
        )
    )
    return matched
