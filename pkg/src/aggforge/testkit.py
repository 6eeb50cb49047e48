"""Random acyclic databases and reference learners for tests and benchmarks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import AttrKind, AttributeInfo, Catalog, JoinTree, RelationSchema, load_config, \
    favorita_config_path
from .storage import Database, Dictionary, Table, table_from_columns


@dataclass
class RandomDbSpec:
    seed: int = 0
    relations: int = 4            # 1..5
    max_rows: int = 200
    min_rows: int = 5
    own_attrs: tuple[int, int] = (1, 3)   # non-key attributes per relation
    key_domain: int = 4           # values per join attribute (small => non-empty joins)
    value_domain: int = 6
    categorical_share: float = 0.4
    pattern: str = "random"       # random | star | chain
    float_values: bool = True


def generate_db(spec: RandomDbSpec) -> Database:
    """A random database over a random join tree.

    Each new relation hangs off an existing one and copies one or two of its
    attributes, so the running-intersection property holds by construction.
    """
    rng = np.random.default_rng(spec.seed)
    m = max(1, min(spec.relations, 8))
    names = [f"R{i}" for i in range(m)]
    attrs: dict[str, list[str]] = {}
    edges = []
    counter = 0
    kinds: dict[str, AttrKind] = {}

    def fresh(prefix="a"):
        nonlocal counter
        counter += 1
        return f"{prefix}{counter}"

    for i, r in enumerate(names):
        mine = []
        if i > 0:
            if spec.pattern == "star":
                parent = names[0]
            elif spec.pattern == "chain":
                parent = names[i - 1]
            else:
                parent = names[int(rng.integers(0, i))]
            edges.append((parent, r))
            pa = attrs[parent]
            k = int(rng.integers(1, min(2, len(pa)) + 1))
            mine += [pa[j] for j in sorted(rng.choice(len(pa), size=k, replace=False))]
        lo, hi = spec.own_attrs
        n_own = int(rng.integers(lo, hi + 1))
        if i == 0:
            n_own = max(n_own, 2)
        for _ in range(n_own):
            a = fresh()
            kinds[a] = (AttrKind.CATEGORICAL if rng.random() < spec.categorical_share
                        else AttrKind.CONTINUOUS)
            mine.append(a)
        attrs[r] = mine

    schemas = [RelationSchema(r, tuple(attrs[r])) for r in names]
    infos = [AttributeInfo(a, kinds[a]) for a in dict.fromkeys(x for r in names for x in attrs[r])]
    tree = JoinTree.from_edges(names, edges)
    catalog = Catalog(schemas, infos, tree)
    shared = {a for s in schemas for a in s.attributes
              if sum(a in t.attributes for t in schemas) > 1}

    dicts: dict[str, Dictionary] = {}
    tables = {}
    for s in schemas:
        n = int(rng.integers(spec.min_rows, spec.max_rows + 1))
        cols = {}
        for a in s.attributes:
            if a in shared:
                cols[a] = rng.integers(0, spec.key_domain, size=n)
            elif kinds[a] is AttrKind.CATEGORICAL:
                d = dicts.setdefault(a, Dictionary(a))
                for v in range(spec.value_domain):
                    d.encode(f"{a}_{v}")
                cols[a] = rng.integers(0, min(spec.value_domain, 4), size=n)
            elif spec.float_values:
                cols[a] = np.round(rng.normal(0, 2, size=n), 3)
            else:
                cols[a] = rng.integers(0, spec.value_domain, size=n)
        tables[s.name] = table_from_columns(s, cols, dicts)
    return Database(catalog, tables, dicts)


def random_databases(count: int, base_seed: int = 0, **kw) -> list[Database]:
    out = []
    for i in range(count):
        rng = np.random.default_rng(base_seed * 100003 + i)
        rel = int(rng.integers(1, 6))
        spec = RandomDbSpec(seed=base_seed * 100003 + i, relations=rel,
                            max_rows=int(rng.integers(10, 200)), **kw)
        out.append(generate_db(spec))
    return out


def favorita_db(fact_rows: int = 100_000, seed: int = 0, dates: int = 120, stores: int = 40,
                items: int = 300) -> Database:
    """Synthetic data over the bundled Favorita-shaped schema."""
    catalog = load_config(favorita_config_path())
    rng = np.random.default_rng(seed)
    dicts: dict[str, Dictionary] = {}

    def cat(name, k, n):
        d = dicts.setdefault(name, Dictionary(name))
        for v in range(k):
            d.encode(f"{name}_{v}")
        return rng.integers(0, k, size=n)

    date = np.arange(dates)
    store = np.arange(stores)
    item = np.arange(items)
    cols = {
        "Sales": {
            "date": rng.integers(0, dates, size=fact_rows),
            "store": rng.integers(0, stores, size=fact_rows),
            "item": rng.integers(0, items, size=fact_rows),
            "units": np.round(rng.gamma(2.0, 3.0, size=fact_rows), 2),
            "promo": rng.integers(0, 2, size=fact_rows),
        },
        "Holidays": {"date": date, "htype": cat("htype", 4, dates),
                     "locale": cat("locale", 3, dates), "transferred": cat("transferred", 2, dates)},
        "StoRes": {"store": store, "city": cat("city", 8, stores), "state": cat("state", 5, stores),
                   "stype": cat("stype", 4, stores), "cluster": cat("cluster", 6, stores)},
        "Items": {"item": item, "family": cat("family", 10, items), "class": cat("class", 25, items),
                  "perishable": cat("perishable", 2, items)},
        "Transactions": {"date": np.repeat(date, stores), "store": np.tile(store, dates),
                         "txns": np.round(rng.normal(1500, 300, size=dates * stores), 1)},
        "Oil": {"date": date, "price": np.round(rng.normal(50, 8, size=dates), 2)},
    }
    tables = {r: table_from_columns(catalog.schema(r), cols[r], dicts) for r in catalog.relations}
    return Database(catalog, tables, dicts)


def continuous_attrs(db: Database, exclude: Sequence[str] = ()) -> list[str]:
    return [a for a, info in db.catalog.attributes.items()
            if not info.categorical and a not in exclude]


def categorical_attrs(db: Database, exclude: Sequence[str] = ()) -> list[str]:
    return [a for a, info in db.catalog.attributes.items()
            if info.categorical and a not in exclude]


def single_relation_db(name: str, columns: dict, categorical: Sequence[str] = ()) -> Database:
    schema = RelationSchema(name, tuple(columns))
    infos = [AttributeInfo(a, AttrKind.CATEGORICAL if a in categorical else AttrKind.CONTINUOUS)
             for a in columns]
    catalog = Catalog([schema], infos, JoinTree.from_edges([name], []))
    dicts = {}
    for a in categorical:
        d = dicts.setdefault(a, Dictionary(a))
        for v in sorted(set(np.asarray(columns[a]).tolist())):
            d.encode(str(v))
    return Database(catalog, {name: table_from_columns(schema, columns, dicts)}, dicts)


def random_batch(db: Database, seed: int = 0, queries: int = 10, max_group_by: int = 2,
                 max_aggs: int = 3, cross_factors: bool = True):
    """Random aggregate queries over `db` (group-bys, products, sums, UDAFs)."""
    from .query import AggregateExpr, AggregateQuery, constant, identity, kronecker, named, power

    rng = np.random.default_rng(seed)
    names = list(db.catalog.attributes)
    cont = continuous_attrs(db)
    out = []

    def factor():
        pick = rng.random()
        if cont and pick < 0.35:
            return identity(str(rng.choice(cont)))
        if cont and pick < 0.5:
            return power(str(rng.choice(cont)), 2)
        if pick < 0.75:
            a = str(rng.choice(names))
            vals = db.table(db.catalog.relations_with(a)[0]).columns[a]
            t = float(vals[int(rng.integers(0, len(vals)))]) if len(vals) else 0.0
            return kronecker(a, str(rng.choice(["<", "<=", "=", ">=", ">"])), t)
        if cross_factors and len(names) > 1 and pick < 0.9:
            a, b = rng.choice(names, size=2, replace=False)
            return named("mul", [str(a), str(b)])
        return constant(float(rng.integers(1, 4)))

    for i in range(queries):
        k = int(rng.integers(0, max_group_by + 1))
        gb = tuple(str(a) for a in rng.choice(names, size=min(k, len(names)), replace=False))
        aggs = []
        for _ in range(int(rng.integers(1, max_aggs + 1))):
            terms = []
            for _ in range(int(rng.integers(1, 3))):
                terms.append(tuple(factor() for _ in range(int(rng.integers(1, 4)))))
            aggs.append(AggregateExpr(tuple(terms)))
        out.append(AggregateQuery(f"Q{i}", gb, tuple(aggs)))
    return out


# oracles for the applications

def _oracle_thresholds(x: np.ndarray, c: int) -> list[float]:
    # walk the sorted rows: threshold b is the value at row ceil(b*N/c) (1-based)
    xs = np.sort(x)
    n = len(xs)
    out = []
    for b in range(1, c + 1):
        k = -(-b * n // c)
        out.append(float(xs[max(k, 1) - 1]))
    return out


def _oracle_cost(y: np.ndarray, classes, kind: str) -> float:
    if len(y) == 0:
        return 0.0
    if classes is None:
        return float(((y - y.mean()) ** 2).sum())
    p = np.array([(y == k).sum() for k in classes], dtype=float) / len(y)
    if kind == "gini":
        return len(y) * float(1.0 - (p ** 2).sum())
    p = p[p > 0]
    return len(y) * float(-(p * np.log(p)).sum())


def cart_oracle(db: Database, label: str, features: Sequence[str], max_depth: int = 4,
                min_split: int = 2, buckets: int = 20, cost: str = "variance",
                joined=None):
    """CART over the materialized join, one row mask per node.

    Same candidate thresholds, tie tolerance and categorical ordering as
    cart_train, but every statistic is recomputed from rows.
    """
    from functools import cmp_to_key

    from .applications.trees import TIE, DecisionTreeNode
    from .executor import materialize_join

    frame = materialize_join(db) if joined is None else joined
    features = [f for f in features if f != label]
    cat = db.catalog.is_categorical
    y = frame[label].to_numpy(dtype=float)
    cols = {a: frame[a].to_numpy(dtype=float) for a in features}
    thresholds = {a: _oracle_thresholds(cols[a], buckets) for a in features
                  if not cat(a) and len(y)}
    classes = sorted(set(y.tolist())) if cost != "variance" else None

    def tie_cmp(p, q):
        if abs(p[0] - q[0]) > TIE * max(abs(p[0]), abs(q[0]), 1.0):
            return -1 if p[0] < q[0] else 1
        return (p[1] > q[1]) - (p[1] < q[1])

    def better(c, best):
        return best is None or c < best[0] - TIE * max(abs(best[0]), 1.0)

    def grow(mask, depth):
        ys = y[mask]
        n = len(ys)
        if classes is None:
            pred = float(ys.mean()) if n else 0.0
            scale = max([1.0, float(n), abs(float(ys.sum())), float((ys ** 2).sum())])
        else:
            counts = [int((ys == k).sum()) for k in classes]
            pred = float(classes[counts.index(max(counts))]) if n else float(classes[0])
            scale = max([1.0, float(n)] + counts)
        node = DecisionTreeNode(depth, float(n), pred, _oracle_cost(ys, classes, cost))
        if n < min_split or depth >= max_depth or node.cost <= TIE * scale:
            return node
        best = None
        for a in features:
            x = cols[a][mask]
            if not cat(a):
                for t in thresholds[a]:
                    left = x <= t
                    if left.all() or not left.any():
                        continue
                    c = _oracle_cost(ys[left], classes, cost) + _oracle_cost(ys[~left], classes, cost)
                    if better(c, best):
                        best = (c, (a, "<=", t))
                continue
            present = sorted(set(x.tolist()))
            if len(present) < 2:
                continue
            ranked = [(_oracle_cost(ys[x == v], classes, cost)
                       + _oracle_cost(ys[x != v], classes, cost), v) for v in present]
            ranked.sort(key=cmp_to_key(tie_cmp))
            chosen = []
            for _, v in ranked[:-1]:
                chosen.append(v)
                left = np.isin(x, chosen)
                c = _oracle_cost(ys[left], classes, cost) + _oracle_cost(ys[~left], classes, cost)
                if better(c, best):
                    best = (c, (a, "in", frozenset(chosen)))
        if best is None:
            return node
        node.condition = best[1]
        a, op, t = best[1]
        go_left = cols[a] <= t if op == "<=" else np.isin(cols[a], list(t))
        node.left = grow(mask & go_left, depth + 1)
        node.right = grow(mask & ~go_left, depth + 1)
        return node

    return grow(np.ones(len(y), dtype=bool), 0)


def trees_match(a, b, rtol: float = 1e-6) -> str | None:
    """None when two trees have the same splits and counts; else where they differ."""
    def go(x, z, path):
        if x.count != z.count:
            return f"{path}: count {x.count} != {z.count}"
        if not np.isclose(x.prediction, z.prediction, rtol=rtol, atol=1e-9):
            return f"{path}: prediction {x.prediction} != {z.prediction}"
        if x.condition != z.condition:
            return f"{path}: split {x.condition} != {z.condition}"
        if x.is_leaf:
            return None
        return go(x.left, z.left, path + "L") or go(x.right, z.right, path + "R")
    return go(a, b, "root")


def prufer_trees(n: int):
    """Every labelled spanning tree of K_n, decoded from its Pruefer sequence."""
    import heapq
    import itertools

    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        leaves = [v for v in range(n) if degree[v] == 1]
        heapq.heapify(leaves)
        edges = []
        for v in seq:
            leaf = heapq.heappop(leaves)
            edges.append((min(leaf, v), max(leaf, v)))
            degree[v] -= 1
            if degree[v] == 1:
                heapq.heappush(leaves, v)
        u, w = heapq.heappop(leaves), heapq.heappop(leaves)
        edges.append((u, w))
        yield edges


def best_spanning_tree_weight(weight, n: int) -> float:
    """Maximum total weight over all n^(n-2) spanning trees; weight(i, j) with i < j."""
    return max(sum(weight(i, j) for i, j in t) for t in prufer_trees(n))
