import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aggforge.catalog import Catalog, JoinTree, RelationSchema, favorita_config_path, load_config
from aggforge.executor import Engine, brute_force_oracle, compare_results
from aggforge.logical import (
    DirectionalView, assign_roots, decompose_query, explain_logical, group_views, merge_views,
    optimize,
)
from aggforge.query import DEFAULT_REGISTRY, FunctionRegistry, parse_query
from aggforge.testkit import RandomDbSpec, generate_db, random_batch


@pytest.fixture(scope="module")
def cat():
    return load_config(favorita_config_path())


@pytest.fixture(scope="module")
def reg():
    r = FunctionRegistry(DEFAULT_REGISTRY)
    r.register("f", lambda p, x: np.asarray(x, float) + 1)
    r.register("g", lambda p, x: np.asarray(x, float) * 2)
    r.register("h", lambda p, x, y: np.asarray(x, float) + np.asarray(y, float))
    return r


def _chain(n):
    rels = [RelationSchema(f"S{i}", (f"X{i}", f"X{i + 1}")) for i in range(1, n)]
    tree = JoinTree.from_edges([r.name for r in rels], [(f"S{i}", f"S{i + 1}") for i in range(1, n - 1)])
    return Catalog(rels, (), tree)


def test_chain_roots_contain_group_by():
    n = 6
    cat = _chain(n)
    batch = [parse_query(f"Q{i}(X{i}; 1)", cat) for i in range(1, n + 1)]
    roots = assign_roots(batch, cat.tree, cat, {})
    for i in range(1, n + 1):
        assert f"X{i}" in cat.attrs(roots[f"Q{i}"])
    # sizes growing along the chain: the greedy pass walks right to left and
    # roots Q_i at S_i, and Q_n at S_{n-1}
    sizes = {f"S{i}": i for i in range(1, n)}
    roots = assign_roots(batch, cat.tree, cat, sizes)
    assert roots == {**{f"Q{i}": f"S{i}" for i in range(1, n)}, f"Q{n}": f"S{n - 1}"}


def test_items_only_group_by_roots_at_items(cat):
    q = parse_query("Q(family, class; 1)", cat)
    assert assign_roots([q], cat.tree, cat, {"Sales": 1000, "Items": 10}) == {"Q": "Items"}


def test_empty_group_by_ties_broken_by_size(cat):
    batch = [parse_query("A(; 1)", cat), parse_query("B(; units)", cat)]
    sizes = {r: 10 for r in cat.relations}
    sizes["Sales"] = 100
    assert assign_roots(batch, cat.tree, cat, sizes) == {"A": "Sales", "B": "Sales"}


def _views_by_edge(views):
    return {(v.source, v.target): v for v in views}


def test_first_pushdown_example(cat, reg):
    q = parse_query("Q1(; f(units)*g(price))", cat, reg)
    views, root = decompose_query(q, cat.tree, "Sales", cat)
    by = _views_by_edge(views)
    assert set(by) == {("Oil", "Transactions"), ("StoRes", "Transactions"),
                       ("Transactions", "Sales"), ("Holidays", "Sales"), ("Items", "Sales")}
    assert by[("Oil", "Transactions")].group_by == ("date",)
    assert str(by[("Oil", "Transactions")].aggregates[0][0][0]) == "g(price)"
    assert by[("StoRes", "Transactions")].group_by == ("store",)
    assert set(by[("Transactions", "Sales")].group_by) == {"date", "store"}
    assert by[("Holidays", "Sales")].group_by == ("date",)
    assert by[("Items", "Sales")].group_by == ("item",)
    # root keeps f(units) and multiplies in the three incoming views
    (term,) = root.aggregates[0]
    assert str(term[0]) == "f(units)" and len(term) == 4
    assert set(root.incoming) == {by[e].id for e in
                                  [("Transactions", "Sales"), ("Holidays", "Sales"), ("Items", "Sales")]}


def test_second_pushdown_example_shares_views(cat, reg):
    q1 = parse_query("Q1(; f(units)*g(price))", cat, reg)
    q2 = parse_query("Q2(family; g(price))", cat, reg)
    alone = optimize([q1], cat, roots="Sales", merge=False)
    both = optimize([q1, q2], cat, roots="Sales", merge=False)
    # only V'_I(family, item; 1) is new
    assert len(both.directional_views) == len(alone.directional_views) + 1
    new = [v for v in both.directional_views if set(v.group_by) == {"family", "item"}]
    assert len(new) == 1 and new[0].source == "Items"
    out2 = both.views[both.outputs["Q2"]]
    out1 = both.views[both.outputs["Q1"]]
    shared = set(out1.incoming) & set(out2.incoming)
    assert {both.views[v].source for v in shared} == {"Transactions", "Holidays"}


def test_merge_example_same_body_and_fused(cat, reg):
    batch = [parse_query(s, cat, reg) for s in
             ("Q1(; f(units)*g(price))", "Q2(family; g(price))", "Q3(family; h(txns, city))")]
    plan = optimize(batch, cat, roots="Sales")
    oil = [v for v in plan.directional_views if v.source == "Oil"]
    assert len(oil) == 1 and oil[0].group_by == ("date",)
    assert sorted(str(a[0][0]) for a in oil[0].aggregates) == ["1", "g(price)"]
    trans = [v for v in plan.directional_views if v.source == "Transactions"]
    assert len(trans) == 1 and len(trans[0].aggregates) == 2
    s = plan.merge_stats
    assert s.case2 >= 1 and s.case1 >= 1 and s.case3 >= 1
    assert s.after < s.before


def test_identical_views_kept_once(cat):
    batch = [parse_query("A(family; 1)", cat), parse_query("B(family; units)", cat)]
    plan = optimize(batch, cat, roots="Sales")
    keys = [v.signature() for v in plan.directional_views]
    assert len(keys) == len(set(keys))
    assert plan.merge_stats.case3 > 0


def test_single_relation_has_no_views():
    cat = Catalog([RelationSchema("R", ("a", "b"))], (), JoinTree.from_edges(["R"], []))
    q = parse_query("Q(a; b)", cat)
    views, root = decompose_query(q, cat.tree, "R", cat)
    assert views == [] and root.source == "R"
    plan = optimize([q], cat)
    assert len(plan.graph.groups) == 1


def _view(i, src, tgt, inc=()):
    return DirectionalView(i, src, tgt, ("k",), [((),)], tuple(inc))


def test_grouping_independent_and_dependent():
    views = {0: _view(0, "A", "X"), 1: _view(1, "B", "X")}
    g = group_views(views)
    assert len(g.groups) == 2 and not g.edges
    views = {0: _view(0, "A", "X"), 1: _view(1, "A", "Y", inc=(0,))}
    g = group_views(views)
    assert len(g.groups) == 2
    a = next(x.id for x in g.groups if 0 in x.views)
    b = next(x.id for x in g.groups if 1 in x.views)
    assert g.edges == {(a, b)}


def test_explain_is_deterministic(cat, reg):
    batch = [parse_query("Q1(; f(units)*g(price))", cat, reg), parse_query("Q2(family; g(price))", cat, reg)]
    a = explain_logical(optimize(batch, cat, roots="Sales"))
    b = explain_logical(optimize(batch, cat, roots="Sales"))
    assert a == b and "# groups" in a and "G0 @" in a


def _check_groups(plan):
    views, graph = plan.views, plan.graph
    owner = {}
    for g in graph.groups:
        assert len({views[v].source for v in g.views}) == 1
        for v in g.views:
            assert v not in owner
            owner[v] = g.id
        for v in g.views:
            # no member depends on another member, even transitively
            stack, seen = list(views[v].incoming), set()
            while stack:
                u = stack.pop()
                assert u not in g.views
                if u not in seen:
                    seen.add(u)
                    stack.extend(views[u].incoming)
    assert set(owner) == set(views)
    done = set()
    for gid in graph.topological():
        g = graph.groups[gid]
        for u in g.incoming:
            assert u in done
        done.update(g.views)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_merged_equals_unmerged_and_oracle(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 5, max_rows=40))
    batch = random_batch(db, seed=seed, queries=6)
    merged = Engine(db).run(batch)
    unmerged = Engine(db).run(batch, merge=False)
    oracle = brute_force_oracle(batch, db)
    for q in batch:
        assert compare_results(merged[q.id], unmerged[q.id]) is None
        assert compare_results(merged[q.id], oracle[q.id]) is None
    assert merged.logical.merge_stats.after <= len(unmerged.logical.directional_views)
    _check_groups(merged.logical)
    _check_groups(unmerged.logical)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_root_invariance(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=2 + seed % 4, max_rows=30))
    batch = random_batch(db, seed=seed + 1, queries=4)
    base = Engine(db).run(batch)
    for root in sorted(db.catalog.tree.nodes):
        other = Engine(db).run(batch, roots=root)
        for q in batch:
            assert compare_results(base[q.id], other[q.id]) is None


def test_overlapping_queries_share_views(cat):
    batch = [parse_query(f"Q{i}(; units*{a})", cat)
             for i, a in enumerate(["price", "txns", "units", "promo"])]
    plan = optimize(batch, cat)
    edges = len(cat.tree.edges)
    assert len(plan.directional_views) < len(batch) * edges
