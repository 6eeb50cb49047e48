"""Data cubes: one group-by query per subset of the dimensions."""
from __future__ import annotations

import csv
import itertools
from typing import Mapping, Sequence

from ..executor import ResultTable
from ..query import AggregateExpr, AggregateQuery, constant, identity, power

ALL = "ALL"

_MEASURE = {
    "sum": lambda m: (identity(m),),
    "count": lambda m: (constant(1.0),),
    "sumsq": lambda m: (power(m, 2),),
}


def cube_subsets(dims: Sequence[str]) -> list[tuple[str, ...]]:
    dims = list(dims)
    out = []
    for r in range(len(dims), -1, -1):
        out += list(itertools.combinations(dims, r))
    return out


def data_cube_batch(dims: Sequence[str], measures: Sequence[str], aggregation: str = "sum"
                    ) -> list[AggregateQuery]:
    """2^k queries (k = len(dims)) with one aggregate per measure."""
    if not measures:
        raise ValueError("a cube needs at least one measure")
    make = _MEASURE.get(aggregation)
    if make is None:
        raise ValueError(f"unknown measure aggregation {aggregation!r}")
    out = []
    for i, subset in enumerate(cube_subsets(dims)):
        aggs = tuple(AggregateExpr((make(m),)) for m in measures)
        out.append(AggregateQuery(f"cube_{i}", subset, aggs))
    return out


def cube_rows(results: Mapping[str, ResultTable], dims: Sequence[str], decode=None) -> list[list]:
    """All cuboids in one 1NF table; rolled-up dimensions hold ALL."""
    rows = []
    for i, subset in enumerate(cube_subsets(dims)):
        t = results[f"cube_{i}"]
        cols = {a: (decode(a, t.keys[a]) if decode else t.keys[a].tolist()) for a in subset}
        for r in range(len(t)):
            key = [cols[a][r] if a in subset else ALL for a in dims]
            rows.append(key + [float(v) for v in t.values[r]])
    return rows


def write_cube_csv(path, results, dims, measures, decode=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(dims) + list(measures))
        for row in cube_rows(results, dims, decode):
            w.writerow(row[:len(dims)] + [repr(v) for v in row[len(dims):]])
