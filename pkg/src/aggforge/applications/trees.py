"""Regression and classification trees (CART) driven by aggregate batches.

Every node of the tree evaluates the same compiled batch; only the dynamic
path-condition factors are rebound between nodes.
"""
from __future__ import annotations

import math
from functools import cmp_to_key
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..query import AggregateExpr, AggregateQuery, Factor, constant, identity, kronecker, power, \
    rebind, count_agg

TIE = 1e-9


# costs

def variance_cost(n: float, s: float, ss: float) -> float:
    """Sum of squared deviations: sum y^2 - (sum y)^2 / n."""
    if n <= 0:
        return 0.0
    return max(ss - s * s / n, 0.0)


def gini(counts: Sequence[float]) -> float:
    n = float(sum(counts))
    if n <= 0:
        return 0.0
    return 1.0 - sum((c / n) ** 2 for c in counts)


def entropy(counts: Sequence[float]) -> float:
    n = float(sum(counts))
    if n <= 0:
        return 0.0
    return -sum((c / n) * math.log(c / n) for c in counts if c > 0)


def class_cost(counts: Sequence[float], kind: str) -> float:
    n = float(sum(counts))
    return n * (gini(counts) if kind == "gini" else entropy(counts))


# thresholds

def equi_depth_thresholds(values: Sequence[float], counts: Sequence[float], c: int) -> list[float]:
    """c thresholds; threshold b is the smallest value whose cumulative count reaches b/c."""
    order = np.argsort(np.asarray(values, dtype=float), kind="stable")
    vals = np.asarray(values, dtype=float)[order]
    cnt = np.rint(np.asarray(counts, dtype=float)[order]).astype(np.int64)
    cum = np.cumsum(cnt)
    N = int(cum[-1]) if len(cum) else 0
    out = []
    for b in range(1, c + 1):
        idx = int(np.searchsorted(cum * c, b * N, "left"))
        out.append(float(vals[min(idx, len(vals) - 1)]))
    return out


# node batches

@dataclass
class PathFactors:
    """Dynamic Kronecker factors encoding the conditions on a root-to-node path."""

    lower: dict[str, Factor] = field(default_factory=dict)    # x > lo
    upper: dict[str, Factor] = field(default_factory=dict)    # x <= hi
    member: dict[str, Factor] = field(default_factory=dict)   # x in set

    @classmethod
    def build(cls, continuous: Sequence[str], categorical: dict[str, Sequence]) -> "PathFactors":
        p = cls()
        for a in continuous:
            p.lower[a] = kronecker(a, ">", -math.inf, dynamic=True)
            p.upper[a] = kronecker(a, "<=", math.inf, dynamic=True)
        for a, cats in categorical.items():
            p.member[a] = kronecker(a, "in", cats, dynamic=True)
        return p

    def factors(self) -> tuple[Factor, ...]:
        out = []
        for a in self.lower:
            out += [self.lower[a], self.upper[a]]
        out += list(self.member.values())
        return tuple(out)

    def bind(self, state: "NodeState") -> None:
        for a in self.lower:
            rebind(self.lower[a], state.lo.get(a, -math.inf))
            rebind(self.upper[a], state.hi.get(a, math.inf))
        for a, f in self.member.items():
            rebind(f, state.cats[a])


@dataclass
class NodeState:
    lo: dict[str, float]
    hi: dict[str, float]
    cats: dict[str, frozenset]


def _label_parts(label: str, classes: Sequence | None):
    if classes is None:
        return [(constant(1.0),), (identity(label),), (power(label, 2),)]
    return [(kronecker(label, "=", k),) for k in classes] + [(constant(1.0),)]


def rt_node_batch(continuous: Sequence[str], categorical: Sequence[str], label: str,
                  thresholds: dict[str, Sequence[float]], alpha: Sequence[Factor]
                  ) -> list[AggregateQuery]:
    """COUNT, SUM(y), SUM(y^2) under alpha and each candidate condition."""
    return _node_batch(continuous, categorical, label, thresholds, alpha, None)


def ct_node_batch(continuous: Sequence[str], categorical: Sequence[str], label: str,
                  thresholds: dict[str, Sequence[float]], alpha: Sequence[Factor],
                  classes: Sequence) -> list[AggregateQuery]:
    """Per-class counts and the total count under alpha and each candidate condition."""
    return _node_batch(continuous, categorical, label, thresholds, alpha, list(classes))


def _node_batch(continuous, categorical, label, thresholds, alpha, classes):
    parts = _label_parts(label, classes)
    alpha = tuple(alpha)
    out = []
    if continuous:
        aggs = []
        for a in continuous:
            for t in thresholds[a]:
                cond = kronecker(a, "<=", t)
                for p in parts:
                    aggs.append(AggregateExpr(((cond,) + alpha + p,)))
        out.append(AggregateQuery("tree_node", (), tuple(aggs)))
    for i, a in enumerate(categorical):
        aggs = tuple(AggregateExpr((alpha + p,)) for p in parts)
        out.append(AggregateQuery(f"tree_cat_{i}", (a,), aggs))
    return out


def tree_aggregate_count(nodes: int, n: int, p: int, c: int) -> int:
    return nodes * n * (p + 1) * c


# trees

@dataclass
class DecisionTreeNode:
    depth: int
    count: float
    prediction: float
    cost: float
    condition: tuple | None = None          # (attr, op, threshold or frozenset)
    left: "DecisionTreeNode | None" = None
    right: "DecisionTreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.condition is None

    def structure(self, digits: int = 9):
        """Comparable nested tuples: conditions, counts and rounded predictions."""
        pred = round(self.prediction, digits)
        if self.is_leaf:
            return ("leaf", self.count, pred)
        a, op, t = self.condition
        t = tuple(sorted(t)) if isinstance(t, frozenset) else t
        return ((a, op, t), self.count, pred, self.left.structure(digits),
                self.right.structure(digits))

    def predict(self, row) -> float:
        node = self
        while not node.is_leaf:
            a, op, t = node.condition
            go_left = row[a] <= t if op == "<=" else row[a] in t
            node = node.left if go_left else node.right
        return node.prediction

    def nodes(self) -> int:
        return 1 if self.is_leaf else 1 + self.left.nodes() + self.right.nodes()

    def render(self, decode=None, label: str | None = None) -> str:
        """Indented if/else text; pass label to decode class predictions."""
        lines = []

        def go(n, pad):
            if n.is_leaf:
                pred = f"{n.prediction:.6g}"
                if decode and label is not None:
                    pred = str(decode(label, [int(n.prediction)])[0])
                lines.append(f"{pad}predict {pred} (n={n.count:g})")
                return
            a, op, t = n.condition
            if isinstance(t, frozenset):
                vals = sorted(t)
                if decode:
                    vals = decode(a, vals)
                t = "{" + ", ".join(str(v) for v in vals) + "}"
            lines.append(f"{pad}if {a} {op} {t}:  (n={n.count:g})")
            go(n.left, pad + "  ")
            lines.append(f"{pad}else:")
            go(n.right, pad + "  ")

        go(self, "")
        return "\n".join(lines) + "\n"


@dataclass
class _Split:
    cost: float
    attr_index: int
    rank: int
    condition: tuple
    left: object
    right: object


def _rank_cmp(x, y) -> int:
    # near-equal costs count as ties and fall back to the category code
    if abs(x[0] - y[0]) > TIE * max(abs(x[0]), abs(y[0]), 1.0):
        return -1 if x[0] < y[0] else 1
    return (x[1] > y[1]) - (x[1] < y[1])


def _better(cand_cost, best: _Split | None) -> bool:
    if best is None:
        return True
    return cand_cost < best.cost - TIE * max(abs(best.cost), 1.0)


class _Stats:
    """Node statistics: (count, sum, sumsq) for regression or class counts."""

    def __init__(self, vec, classes):
        self.vec = np.asarray(vec, dtype=float)
        self.classes = classes

    @property
    def count(self) -> float:
        return float(self.vec[-1] if self.classes is not None else self.vec[0])

    def cost(self, kind) -> float:
        if self.classes is None:
            return variance_cost(*self.vec)
        return class_cost(self.vec[:-1], kind)

    def prediction(self) -> float:
        if self.classes is None:
            return float(self.vec[1] / self.vec[0]) if self.vec[0] > 0 else 0.0
        counts = self.vec[:-1]
        return float(self.classes[int(np.argmax(counts))])   # first max = lowest class

    def __sub__(self, other):
        return _Stats(self.vec - other.vec, self.classes)


def cart_train(engine, label: str, features: Sequence[str], max_depth: int = 4,
               min_split: int = 2, buckets: int = 20, cost: str = "variance",
               threads: int | None = None) -> DecisionTreeNode:
    """Greedy CART. Regression when cost is "variance", classification otherwise."""
    if cost not in ("variance", "gini", "entropy"):
        raise ValueError(f"unknown cost {cost!r}")
    catalog = engine.db.catalog
    features = [f for f in features if f != label]
    continuous = [f for f in features if not catalog.is_categorical(f)]
    categorical = [f for f in features if catalog.is_categorical(f)]

    # value distributions over the full join: thresholds, categories, classes
    probes = [AggregateQuery(f"dist_{i}", (a,), (count_agg(),))
              for i, a in enumerate(features + [label])]
    probes.append(AggregateQuery("dist_total", (), (count_agg(),)))
    dist = engine.run(probes).results
    thresholds, cats = {}, {}
    for i, a in enumerate(features):
        t = dist[f"dist_{i}"]
        if a in continuous:
            thresholds[a] = equi_depth_thresholds(t.keys[a], t.column(0), buckets) if len(t) else []
        else:
            cats[a] = frozenset(float(v) for v in t.keys[a])
    classes = None
    if cost != "variance":
        lt = dist[f"dist_{len(features)}"]
        classes = [v.item() for v in lt.keys[label]]
    continuous = [a for a in continuous if thresholds[a]]

    path = PathFactors.build(continuous, cats)
    batch = _node_batch(continuous, categorical, label, thresholds, path.factors(), classes)
    if not continuous:
        parts = _label_parts(label, classes)
        batch.append(AggregateQuery("tree_total", (),
                                    tuple(AggregateExpr((path.factors() + p,)) for p in parts)))
    compiled = engine.compile(batch)
    width = 3 if classes is None else len(classes) + 1

    def evaluate(state: NodeState, depth: int) -> DecisionTreeNode:
        path.bind(state)
        res = compiled.run(threads).results
        if continuous:
            row = res["tree_node"].values[0] if len(res["tree_node"]) else np.zeros(
                len(continuous) * buckets * width)
            per_attr = row.reshape(len(continuous), buckets, width)
            total = _Stats(per_attr[0, -1], classes)
        else:
            per_attr = None
            total = _Stats(res["tree_total"].values[0], classes)
        node = DecisionTreeNode(depth, total.count, total.prediction(), total.cost(cost))
        if total.count < min_split or depth >= max_depth or \
                node.cost <= TIE * max(1.0, abs(total.vec).max()):
            return node
        best = None
        index = {a: i for i, a in enumerate(features)}
        for a in features:
            ai = index[a]
            if a in continuous:
                k = continuous.index(a)
                for b, t in enumerate(thresholds[a]):
                    left = _Stats(per_attr[k, b], classes)
                    right = total - left
                    if left.count < 0.5 or right.count < 0.5:
                        continue
                    c = left.cost(cost) + right.cost(cost)
                    if _better(c, best):
                        best = _Split(c, ai, b, (a, "<=", t), left, right)
            elif a in cats:
                t = res[f"tree_cat_{categorical.index(a)}"]
                per = [(float(t.keys[a][r]), _Stats(t.values[r], classes)) for r in range(len(t))]
                per = [(v, s) for v, s in per if s.count > 0]
                if len(per) < 2:
                    continue
                single = []
                for v, s in per:
                    single.append(((s.cost(cost) + (total - s).cost(cost)), v, s))
                single.sort(key=cmp_to_key(_rank_cmp))
                acc = None
                chosen = []
                for k in range(len(single) - 1):
                    _, v, s = single[k]
                    acc = s if acc is None else _Stats(acc.vec + s.vec, classes)
                    chosen.append(v)
                    right = total - acc
                    c = acc.cost(cost) + right.cost(cost)
                    if _better(c, best):
                        best = _Split(c, ai, k, (a, "in", frozenset(chosen)), acc, right)
        if best is None:
            return node
        node.condition = best.condition
        a, op, t = best.condition
        if op == "<=":
            ls = NodeState(dict(state.lo), {**state.hi, a: min(state.hi.get(a, math.inf), t)},
                           state.cats)
            rs = NodeState({**state.lo, a: max(state.lo.get(a, -math.inf), t)}, dict(state.hi),
                           state.cats)
        else:
            ls = NodeState(state.lo, state.hi, {**state.cats, a: state.cats[a] & t})
            rs = NodeState(state.lo, state.hi, {**state.cats, a: state.cats[a] - t})
        node.left = evaluate(ls, depth + 1)
        node.right = evaluate(rs, depth + 1)
        return node

    root_state = NodeState({}, {}, dict(cats))
    return evaluate(root_state, 0)
