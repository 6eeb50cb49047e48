"""Pairwise mutual information from count queries, and Chow-Liu trees."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..errors import EmptyJoin
from ..executor import ResultTable
from ..query import AggregateExpr, AggregateQuery, constant


def mutual_information_batch(attrs: Sequence[str]) -> list[AggregateQuery]:
    """Counts grouped by every subset of size <= 2; marginals appear once."""
    one = (AggregateExpr(((constant(1.0),),)),)
    out = [AggregateQuery("mi_all", (), one)]
    for i, a in enumerate(attrs):
        out.append(AggregateQuery(f"mi_{i}", (a,), one))
    for i, j in itertools.combinations(range(len(attrs)), 2):
        out.append(AggregateQuery(f"mi_{i}_{j}", (attrs[i], attrs[j]), one))
    return out


def pair_query_count(batch: Sequence[AggregateQuery]) -> int:
    return sum(1 for q in batch if len(q.group_by) == 2)


@dataclass
class MiMatrix:
    attrs: list[str]
    values: dict[tuple[int, int], float]

    def __call__(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("mutual information of an attribute with itself is not stored")
        return self.values[(min(i, j), max(i, j))]

    def by_name(self, a: str, b: str) -> float:
        return self(self.attrs.index(a), self.attrs.index(b))


def mi_term(alpha: float, beta: float, gamma: float, delta: float) -> float:
    """delta/alpha * log(alpha*delta / (beta*gamma))."""
    if delta <= 0:
        return 0.0
    return delta / alpha * math.log(alpha * delta / (beta * gamma))


def mi_matrix(results: Mapping[str, ResultTable], attrs: Sequence[str]) -> MiMatrix:
    total = results["mi_all"].scalar()
    if total <= 0:
        raise EmptyJoin("the join is empty; mutual information is undefined")
    marg = [results[f"mi_{i}"].to_dict() for i in range(len(attrs))]
    vals = {}
    for i, j in itertools.combinations(range(len(attrs)), 2):
        t = results[f"mi_{i}_{j}"]
        acc = 0.0
        pos_i = t.group_by.index(attrs[i])
        pos_j = t.group_by.index(attrs[j])
        for key, (delta,) in t.to_dict().items():
            xi, xj = key[pos_i], key[pos_j]
            acc += mi_term(total, marg[i][(xi,)][0], marg[j][(xj,)][0], delta)
        vals[(i, j)] = acc
    return MiMatrix(list(attrs), vals)


def chow_liu(mi: MiMatrix) -> list[tuple[int, int]]:
    """Maximum-MI spanning tree (Kruskal; ties by lexicographic pair order)."""
    n = len(mi.attrs)
    if n < 2:
        raise ValueError("Chow-Liu needs at least two attributes")
    cand = sorted(((-mi(i, j), i, j) for i, j in itertools.combinations(range(n), 2)))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    return edges


def tree_weight(mi: MiMatrix, edges) -> float:
    return sum(mi(i, j) for i, j in edges)
