"""Aggregate queries: sums of products of UDAF factors, plus the batch DSL.

A query ``Q(F; a1, ..., al)`` is evaluated over the natural join of every
relation in the catalog. Each aggregate is a sum of products of factors.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    NotDynamic,
    SyntaxError,
    UnboundAttribute,
    UnknownAttribute,
    UnknownFunction,
)

KRONECKER_OPS = ("<", "<=", "=", ">=", ">", "in")
_OP_ALIASES = {"==": "=", "≤": "<=", "≥": ">=", "≠": None}


class ParamCell:
    """Mutable parameter holder shared by a dynamic factor and every plan using it."""

    __slots__ = ("value", "version")

    def __init__(self, value):
        self.value = value
        self.version = 0

    def set(self, value):
        self.value = value
        self.version += 1


@dataclass(frozen=True, eq=False)
class Factor:
    """One f_ijk. `kind` is constant | identity | kronecker | power | named."""

    kind: str
    attrs: tuple[str, ...] = ()
    op: str | None = None
    fn_id: str | None = None
    fn: Callable | None = field(default=None, repr=False)
    cell: ParamCell = field(default=None, repr=False)
    dynamic: bool = False

    @property
    def params(self):
        return self.cell.value

    def key(self):
        """Structural identity. Dynamic factors are identified by their cell."""
        if self.dynamic:
            return (self.kind, self.attrs, self.op, self.fn_id, "dyn", id(self.cell))
        p = self.cell.value
        if isinstance(p, frozenset):
            p = tuple(sorted(p))
        elif isinstance(p, (list, tuple, np.ndarray)):
            p = tuple(float(x) for x in p)
        return (self.kind, self.attrs, self.op, self.fn_id, p)

    def __eq__(self, other):
        return isinstance(other, Factor) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def evaluate(self, cols: Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        """Vectorized evaluation over columns holding the factor's attributes."""
        if self.kind == "constant":
            if n is None:
                n = len(next(iter(cols.values()))) if cols else 1
            return np.full(n, float(self.params))
        try:
            args = [cols[a] for a in self.attrs]
        except KeyError as exc:
            raise UnboundAttribute(f"{exc.args[0]} not bound for {self}") from None
        x = args[0] if args else None
        k = self.kind
        if k == "identity":
            return np.asarray(x, dtype=np.float64)
        if k == "power":
            return np.power(np.asarray(x, dtype=np.float64), self.params)
        if k == "kronecker":
            t, op = self.params, self.op
            if op == "in":
                return np.isin(x, np.fromiter(t, dtype=np.float64, count=len(t))).astype(np.float64)
            if op == "<":
                m = x < t
            elif op == "<=":
                m = x <= t
            elif op == "=":
                m = x == t
            elif op == ">=":
                m = x >= t
            else:
                m = x > t
            return np.asarray(m, dtype=np.float64)
        if k == "named":
            out = self.fn(self.params, *args)
            out = np.asarray(out, dtype=np.float64)
            if out.ndim == 0:
                out = np.full(len(x) if x is not None else (n or 1), float(out))
            return out
        raise ValueError(f"unknown factor kind {k}")

    def __str__(self):
        k = self.kind
        if k == "constant":
            return _fmt_num(self.params)
        if k == "identity":
            return self.attrs[0]
        if k == "power":
            return f"{self.attrs[0]}^{_fmt_num(self.params)}"
        if k == "kronecker":
            t = self.params
            if self.op == "in":
                t = "{" + ",".join(_fmt_num(v) for v in sorted(t)) + "}"
            else:
                t = _fmt_num(t)
            return f"[{self.attrs[0]} {self.op} {t}]"
        args = list(self.attrs)
        if self.params:
            args += [_fmt_num(p) for p in self.params]
        return f"{self.fn_id}({', '.join(args)})"


def _fmt_num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


# factor constructors

def constant(c: float) -> Factor:
    return Factor("constant", (), cell=ParamCell(float(c)))


def identity(attr: str) -> Factor:
    return Factor("identity", (attr,), cell=ParamCell(None))


def power(attr: str, exponent: float) -> Factor:
    if exponent < 0:
        raise ValueError("power exponent must be >= 0")
    if float(exponent).is_integer():
        exponent = int(exponent)
    return Factor("power", (attr,), cell=ParamCell(exponent))


def kronecker(attr: str, op: str, threshold, dynamic: bool = False) -> Factor:
    op = _OP_ALIASES.get(op, op)
    if op not in KRONECKER_OPS:
        raise ValueError(f"unsupported comparison {op!r}")
    if op == "in":
        threshold = frozenset(float(v) for v in threshold)
    else:
        threshold = float(threshold)
    return Factor("kronecker", (attr,), op=op, cell=ParamCell(threshold), dynamic=dynamic)


def named(fn_id: str, attrs: Sequence[str], params: Sequence[float] = (),
          registry: "FunctionRegistry | None" = None, dynamic: bool = False) -> Factor:
    reg = registry or DEFAULT_REGISTRY
    fn = reg.get(fn_id)
    return Factor("named", tuple(attrs), fn_id=fn_id, fn=fn,
                  cell=ParamCell(tuple(float(p) for p in params)), dynamic=dynamic)


def rebind(f: Factor, new_params) -> Factor:
    """Change a dynamic factor's parameters in place; returns the same factor."""
    if not f.dynamic:
        raise NotDynamic(f"factor {f} is static")
    if f.kind == "kronecker":
        new_params = frozenset(float(v) for v in new_params) if f.op == "in" else float(new_params)
    elif f.kind == "named":
        new_params = tuple(float(p) for p in new_params)
    f.cell.set(new_params)
    return f


def eval_factor(f: Factor, binding: Mapping[str, object]) -> float:
    for a in f.attrs:
        if a not in binding:
            raise UnboundAttribute(f"{a} not bound for {f}")
    cols = {a: np.asarray([binding[a]], dtype=np.float64) for a in f.attrs}
    return float(f.evaluate(cols, 1)[0])


# function registry

class FunctionRegistry:
    """Named UDAFs keyed by string id. Functions take (params, *columns)."""

    def __init__(self, base: "FunctionRegistry | None" = None):
        self._fns: dict[str, Callable] = dict(base._fns) if base else {}

    def register(self, name: str, fn: Callable | None = None):
        if fn is None:
            def deco(g):
                self._fns[name] = g
                return g
            return deco
        self._fns[name] = fn
        return fn

    def get(self, name: str) -> Callable:
        try:
            return self._fns[name]
        except KeyError:
            raise UnknownFunction(f"no function registered as {name!r}") from None

    def __contains__(self, name):
        return name in self._fns

    def names(self):
        return sorted(self._fns)


def _dot(params, *cols):
    acc = np.zeros(len(cols[0]) if cols else 1)
    for p, c in zip(params, cols):
        acc = acc + p * np.asarray(c, dtype=np.float64)
    return acc


DEFAULT_REGISTRY = FunctionRegistry()
DEFAULT_REGISTRY.register("id", lambda p, x: np.asarray(x, dtype=np.float64))
DEFAULT_REGISTRY.register("sq", lambda p, x: np.asarray(x, dtype=np.float64) ** 2)
DEFAULT_REGISTRY.register("abs", lambda p, x: np.abs(np.asarray(x, dtype=np.float64)))
DEFAULT_REGISTRY.register("sqrt", lambda p, x: np.sqrt(np.abs(np.asarray(x, dtype=np.float64))))
DEFAULT_REGISTRY.register("log1p", lambda p, x: np.log1p(np.abs(np.asarray(x, dtype=np.float64))))
DEFAULT_REGISTRY.register("exp", lambda p, x: np.exp(np.asarray(x, dtype=np.float64)))
DEFAULT_REGISTRY.register("lin", _dot)
DEFAULT_REGISTRY.register("exp_dot", lambda p, *cols: np.exp(_dot(p, *cols)))
DEFAULT_REGISTRY.register("mul", lambda p, *cols: np.prod(np.vstack(cols).astype(np.float64), axis=0))


# aggregates and queries

Term = tuple  # tuple[Factor, ...]


@dataclass(frozen=True)
class AggregateExpr:
    terms: tuple[Term, ...]

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.terms)
        if not terms:
            raise ValueError("aggregate needs at least one term")
        if any(not t for t in terms):
            raise ValueError("empty product in aggregate")
        object.__setattr__(self, "terms", terms)

    @property
    def attrs(self) -> frozenset[str]:
        return frozenset(a for t in self.terms for f in t for a in f.attrs)

    def __str__(self):
        return " + ".join("*".join(str(f) for f in t) for t in self.terms)


def agg(*terms) -> AggregateExpr:
    """Build an aggregate from terms; a bare Factor is a one-factor term."""
    out = []
    for t in terms:
        if isinstance(t, Factor):
            out.append((t,))
        else:
            out.append(tuple(t))
    return AggregateExpr(tuple(out))


def count_agg() -> AggregateExpr:
    return agg(constant(1.0))


@dataclass(frozen=True)
class AggregateQuery:
    id: str
    group_by: tuple[str, ...]
    aggregates: tuple[AggregateExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "group_by", tuple(self.group_by))
        object.__setattr__(self, "aggregates", tuple(self.aggregates))
        if len(set(self.group_by)) != len(self.group_by):
            raise ValueError(f"query {self.id} repeats a group-by attribute")

    @property
    def attrs(self) -> frozenset[str]:
        out = set(self.group_by)
        for a in self.aggregates:
            out |= a.attrs
        return frozenset(out)

    def __str__(self):
        body = ", ".join(str(a) for a in self.aggregates)
        return f"{self.id}({', '.join(self.group_by)}; {body})"


def check_query(q: AggregateQuery, catalog) -> AggregateQuery:
    for a in sorted(q.attrs):
        catalog.check_attr(a, f"query {q.id}")
    return q


# DSL

_TOKEN = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?|inf\b)
  | (?P<str>'[^']*'|"[^"]*")
  | (?P<op><=|>=|==|!=|≤|≥|<|>|=)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<punct>[()\[\]{};,*+^\-])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(line: str, offset: int) -> list[_Tok]:
    toks, i = [], 0
    while i < len(line):
        m = _TOKEN.match(line, i)
        if not m:
            raise SyntaxError(offset + i, f"unexpected character {line[i]!r}")
        kind = m.lastgroup
        if kind != "ws":
            text = m.group()
            if kind == "ident" and text == "in":
                kind = "op"
            toks.append(_Tok(kind, text, offset + i))
        i = m.end()
    toks.append(_Tok("end", "", offset + len(line)))
    return toks


class _Parser:
    def __init__(self, toks, catalog, registry, dictionaries):
        self.toks, self.i = toks, 0
        self.catalog, self.registry = catalog, registry
        self.dicts = dictionaries or {}

    def peek(self):
        return self.toks[self.i]

    def take(self, text=None, kind=None):
        t = self.toks[self.i]
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text or kind
            raise SyntaxError(t.pos, f"expected {want!r}, found {t.text or 'end of line'!r}")
        self.i += 1
        return t

    def attr(self, tok):
        if self.catalog is not None and tok.text not in self.catalog.attributes:
            raise UnknownAttribute(tok.text, f"query at position {tok.pos}")
        return tok.text

    def query(self) -> AggregateQuery:
        name = self.take(kind="ident").text
        self.take("(")
        has_semi = any(t.text == ";" for t in self.toks)
        group = []
        if has_semi:
            if self.peek().text != ";":
                group.append(self.attr(self.take(kind="ident")))
                while self.peek().text == ",":
                    self.take(",")
                    group.append(self.attr(self.take(kind="ident")))
            self.take(";")
        aggs = []
        if self.peek().text != ")":
            aggs.append(self.expr())
            while self.peek().text == ",":
                self.take(",")
                aggs.append(self.expr())
        self.take(")")
        self.take(kind="end")
        return AggregateQuery(name, tuple(group), tuple(AggregateExpr(tuple(a)) for a in aggs))

    # expressions are lists of terms; a term is a list of factors
    def expr(self):
        terms = self.term()
        while self.peek().text == "+":
            self.take("+")
            terms = terms + self.term()
        return [_fold(t) for t in terms]

    def term(self):
        terms = self.factor()
        while self.peek().text == "*":
            self.take("*")
            rhs = self.factor()
            terms = [a + b for a, b in itertools.product(terms, rhs)]
        return terms

    def number(self):
        neg = False
        if self.peek().text == "-":
            self.take("-")
            neg = True
        t = self.take(kind="num")
        v = float(t.text)
        return -v if neg else v

    def literal(self, attr):
        t = self.peek()
        if t.kind == "str":
            self.take()
            raw = t.text[1:-1]
            d = self.dicts.get(attr)
            if d is None:
                raise SyntaxError(t.pos, f"string literal for non-categorical {attr}")
            try:
                return float(d.lookup(raw))
            except KeyError:
                raise SyntaxError(t.pos, f"{raw!r} is not a value of {attr}") from None
        return self.number()

    def factor(self):
        t = self.peek()
        if t.kind == "num" or t.text == "-":
            return [[constant(self.number())]]
        if t.text == "(":
            self.take("(")
            inner = self.expr()
            self.take(")")
            return [list(x) for x in inner]
        if t.text == "[":
            self.take("[")
            a = self.attr(self.take(kind="ident"))
            op_tok = self.take(kind="op")
            op = _OP_ALIASES.get(op_tok.text, op_tok.text)
            if op is None:
                raise SyntaxError(op_tok.pos, "unsupported comparison")
            if op == "in":
                self.take("{")
                vals = [self.literal(a)]
                while self.peek().text == ",":
                    self.take(",")
                    vals.append(self.literal(a))
                self.take("}")
                f = kronecker(a, "in", vals)
            else:
                f = kronecker(a, op, self.literal(a))
            self.take("]")
            return [[f]]
        if t.kind == "ident":
            self.take()
            if self.peek().text == "(":
                return [[self.call(t)]]
            a = self.attr(t)
            if self.peek().text == "^":
                self.take("^")
                return [[power(a, self.number())]]
            return [[identity(a)]]
        raise SyntaxError(t.pos, f"unexpected {t.text or 'end of line'!r}")

    def call(self, name_tok):
        self.take("(")
        attrs, params = [], []
        if self.peek().text != ")":
            while True:
                t = self.peek()
                if t.kind == "ident":
                    attrs.append(self.attr(self.take()))
                else:
                    params.append(self.number())
                if self.peek().text != ",":
                    break
                self.take(",")
        self.take(")")
        name = name_tok.text
        if name == "pow":
            if len(attrs) != 1 or len(params) != 1:
                raise SyntaxError(name_tok.pos, "pow takes an attribute and an exponent")
            return power(attrs[0], params[0])
        if name not in self.registry:
            raise UnknownFunction(f"no function registered as {name!r} (position {name_tok.pos})")
        if not attrs:
            raise SyntaxError(name_tok.pos, f"{name} needs at least one attribute")
        return named(name, attrs, params, self.registry)


def _fold(term: list[Factor]) -> tuple[Factor, ...]:
    """Multiply numeric constants of a product into one leading constant."""
    c, rest = 1.0, []
    for f in term:
        if f.kind == "constant":
            c *= f.params
        else:
            rest.append(f)
    if not rest or c != 1.0:
        rest.insert(0, constant(c))
    return tuple(rest)


def parse_query(line: str, catalog=None, registry=None, dictionaries=None, offset=0) -> AggregateQuery:
    toks = _tokenize(line, offset)
    return _Parser(toks, catalog, registry or DEFAULT_REGISTRY, dictionaries).query()


def parse_batch(text: str, catalog=None, registry: FunctionRegistry | None = None,
                dictionaries=None) -> list[AggregateQuery]:
    """Parse one query per line. Blank lines and '#' comments are skipped."""
    out, offset = [], 0
    seen = set()
    for raw in text.splitlines(keepends=True):
        line = raw.rstrip("\r\n")
        body = line.split("#", 1)[0]
        if body.strip():
            q = parse_query(body, catalog, registry, dictionaries, offset)
            if q.id in seen:
                raise SyntaxError(offset, f"duplicate query name {q.id}")
            seen.add(q.id)
            out.append(q)
        offset += len(raw)
    return out


def term_attrs(term: Iterable[Factor]) -> frozenset[str]:
    return frozenset(a for f in term for a in f.attrs)
