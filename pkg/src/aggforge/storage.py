"""Columnar in-memory tables, CSV ingestion and trie-style range scans."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .catalog import Catalog, RelationSchema
from .errors import ArityMismatch, NotSorted, ParseError, UnknownAttribute


class Dictionary:
    """Dense integer codes for the values of one categorical attribute."""

    def __init__(self, name: str):
        self.name = name
        self.values: list[str] = []
        self.codes: dict[str, int] = {}

    def encode(self, value: str) -> int:
        code = self.codes.get(value)
        if code is None:
            code = len(self.values)
            self.codes[value] = code
            self.values.append(value)
        return code

    def decode(self, code: int) -> str:
        return self.values[int(code)]

    def lookup(self, value) -> int:
        """Code of an existing value; raises KeyError when absent."""
        return self.codes[str(value)]

    def __len__(self):
        return len(self.values)


@dataclass
class Table:
    schema: RelationSchema
    columns: dict[str, np.ndarray]
    sort_order: tuple[str, ...] = ()
    dictionaries: Mapping[str, Dictionary] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lens = {len(c) for c in self.columns.values()}
        if len(lens) > 1:
            raise ValueError(f"columns of {self.schema.name} differ in length")
        for a in self.schema.attributes:
            if a not in self.columns:
                raise UnknownAttribute(a, f"columns of {self.schema.name}")

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def __len__(self):
        return self.row_count

    def column(self, attr: str) -> np.ndarray:
        try:
            return self.columns[attr]
        except KeyError:
            raise UnknownAttribute(attr, self.name) from None

    def rows(self) -> list[tuple]:
        cols = [self.columns[a] for a in self.schema.attributes]
        return [tuple(c[i].item() for c in cols) for i in range(self.row_count)]

    def decoded(self, attr: str, values) -> list:
        d = self.dictionaries.get(attr)
        if d is None:
            return [v.item() if hasattr(v, "item") else v for v in values]
        return [d.decode(v) for v in values]

    def slice(self, lo: int, hi: int) -> "Table":
        return Table(self.schema, {a: c[lo:hi] for a, c in self.columns.items()},
                     self.sort_order, self.dictionaries)


@dataclass(frozen=True)
class TrieRange:
    attribute: str
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo


def _parse_number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_csv(path, schema: RelationSchema, catalog: Catalog | None = None,
             dictionaries: dict[str, Dictionary] | None = None,
             delimiter: str = ",", header: bool = True) -> Table:
    """Read a CSV file into a typed table.

    Categorical attributes (per `catalog`) are dictionary-encoded. Passing the
    same `dictionaries` mapping for every relation keeps codes consistent
    across relations that share an attribute.
    """
    dictionaries = {} if dictionaries is None else dictionaries
    attrs = schema.attributes
    positions = list(range(len(attrs)))
    raw: list[list[str]] = [[] for _ in attrs]
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, 1):
            if not row or all(not c.strip() for c in row):
                continue
            if header and lineno == 1:
                names = [c.strip() for c in row]
                if len(names) != len(attrs) or set(names) != set(attrs):
                    raise ArityMismatch(
                        f"{path}: header {names} does not match {schema.name}{list(attrs)}")
                positions = [names.index(a) for a in attrs]
                continue
            if len(row) != len(attrs):
                if not header and lineno == 1 and len(row) > len(attrs):
                    raise ArityMismatch(f"{path}: {len(row)} columns for {len(attrs)} attributes")
                raise ParseError(lineno, f"expected {len(attrs)} fields, got {len(row)}")
            for j, p in enumerate(positions):
                raw[j].append(row[p].strip())

    cols = {}
    for j, a in enumerate(attrs):
        values = raw[j]
        if catalog is not None and catalog.is_categorical(a):
            d = dictionaries.setdefault(a, Dictionary(a))
            cols[a] = np.fromiter((d.encode(v) for v in values), dtype=np.int64, count=len(values))
            continue
        parsed = []
        for i, v in enumerate(values):
            try:
                parsed.append(_parse_number(v))
            except ValueError:
                # line number of the offending record (header counts as line 1)
                raise ParseError(i + 1 + int(header), f"bad numeric value {v!r} for {a}") from None
        if all(isinstance(v, int) for v in parsed):
            cols[a] = np.asarray(parsed, dtype=np.int64)
        else:
            cols[a] = np.asarray(parsed, dtype=np.float64)
    return Table(schema, cols, (), dictionaries)


def table_from_columns(schema: RelationSchema, columns: Mapping[str, Sequence],
                       dictionaries: Mapping[str, Dictionary] | None = None) -> Table:
    cols = {}
    for a in schema.attributes:
        arr = np.asarray(columns[a])
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.int64)
        elif arr.dtype.kind == "f":
            arr = arr.astype(np.float64)
        else:
            raise TypeError(f"column {a} must be numeric (encode categoricals first)")
        cols[a] = arr
    return Table(schema, cols, (), dictionaries or {})


def sort_table(t: Table, order: Sequence[str]) -> Table:
    """Stable lexicographic sort on `order`."""
    order = tuple(order)
    for a in order:
        if a not in t.columns:
            raise UnknownAttribute(a, t.name)
    if t.sort_order[:len(order)] == order:
        return t
    if not order or t.row_count == 0:
        return Table(t.schema, dict(t.columns), order, t.dictionaries)
    idx = np.lexsort(tuple(t.columns[a] for a in reversed(order)))
    return Table(t.schema, {a: c[idx] for a, c in t.columns.items()}, order, t.dictionaries)


def is_sorted_by(t: Table, order: Sequence[str]) -> bool:
    n = t.row_count
    if n < 2 or not order:
        return True
    tied = np.ones(n - 1, dtype=bool)
    for a in order:
        c = t.columns[a]
        if np.any(c[1:][tied] < c[:-1][tied]):
            return False
        tied &= c[1:] == c[:-1]
    return True


def distinct_ranges(t: Table, prefix: Mapping[str, object] | Sequence, attr: str,
                    within: TrieRange | None = None) -> Iterator[tuple[object, TrieRange]]:
    """Yield (value, TrieRange) for each distinct `attr` value under `prefix`.

    `prefix` fixes the leading attributes of the table's sort order, either as a
    mapping or as a sequence of values aligned with `sort_order`.
    """
    if isinstance(prefix, Mapping):
        names = tuple(prefix)
        values = [prefix[a] for a in names]
    else:
        values = list(prefix)
        names = t.sort_order[:len(values)]
    k = len(values)
    if t.sort_order[:k] != names or len(t.sort_order) <= k or t.sort_order[k] != attr:
        raise NotSorted(f"{t.name} sorted by {list(t.sort_order)}, "
                        f"cannot scan {attr} under {list(names)}")
    lo, hi = (within.lo, within.hi) if within else (0, t.row_count)
    for a, v in zip(names, values):
        col = t.columns[a]
        lo, hi = lo + int(np.searchsorted(col[lo:hi], v, "left")), \
            lo + int(np.searchsorted(col[lo:hi], v, "right"))
        if lo >= hi:
            return
    col = t.columns[attr]
    while lo < hi:
        v = col[lo]
        end = lo + int(np.searchsorted(col[lo:hi], v, "right"))
        yield v.item(), TrieRange(attr, lo, end)
        lo = end


class Database:
    """Catalog plus one table per relation, sharing categorical dictionaries."""

    def __init__(self, catalog: Catalog, tables: Mapping[str, Table],
                 dictionaries: dict[str, Dictionary] | None = None):
        self.catalog = catalog
        self.tables = dict(tables)
        self.dictionaries = dictionaries if dictionaries is not None else {}
        for name in catalog.relations:
            if name not in self.tables:
                raise UnknownAttribute(name, "database tables")
        self._distinct: dict[tuple[str, str], int] = {}

    @classmethod
    def from_csv_dir(cls, catalog: Catalog, directory, delimiter=",", header=True) -> "Database":
        d = Path(directory)
        dicts: dict[str, Dictionary] = {}
        tables = {}
        for name, schema in catalog.relations.items():
            tables[name] = load_csv(d / f"{name}.csv", schema, catalog, dicts, delimiter, header)
        return cls(catalog, tables, dicts)

    def table(self, name: str) -> Table:
        return self.tables[name]

    def size(self, name: str) -> int:
        return self.tables[name].row_count

    def sizes(self) -> dict[str, int]:
        return {n: t.row_count for n, t in self.tables.items()}

    def distinct_count(self, rel: str, attr: str) -> int:
        hint = self.catalog.attributes[attr].domain_size_hint
        if hint is not None:
            return hint
        key = (rel, attr)
        if key not in self._distinct:
            self._distinct[key] = int(len(np.unique(self.tables[rel].columns[attr])))
        return self._distinct[key]

    def decode(self, attr: str, values) -> list:
        d = self.dictionaries.get(attr)
        if d is None:
            return [v.item() if hasattr(v, "item") else v for v in values]
        return [d.decode(v) for v in values]

    def write_csv_dir(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, t in self.tables.items():
            with open(d / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(t.schema.attributes)
                cols = [self.decode(a, t.columns[a]) for a in t.schema.attributes]
                for row in zip(*cols):
                    w.writerow(row)
