import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import aggforge.executor as ex
from aggforge.catalog import Catalog, JoinTree, RelationSchema, favorita_config_path, load_config
from aggforge.errors import CycleDetected, MissingDependency
from aggforge.executor import (
    Engine, ResultTable, brute_force_oracle, compare_results, execute_group, merge_results,
)
from aggforge.logical import GroupDependencyGraph, ViewGroup, optimize
from aggforge.physical import plan_all
from aggforge.query import DEFAULT_REGISTRY, FunctionRegistry, parse_batch, parse_query
from aggforge.storage import Database, table_from_columns
from aggforge.testkit import RandomDbSpec, favorita_db, generate_db, random_batch, single_relation_db


@pytest.fixture(scope="module")
def sales_plan():
    cat = load_config(favorita_config_path())
    reg = FunctionRegistry(DEFAULT_REGISTRY)
    reg.register("f", lambda p, x: np.asarray(x, float))
    reg.register("g", lambda p, x: np.asarray(x, float))
    reg.register("h", lambda p, x, y: np.asarray(x, float) * np.asarray(y, float))
    batch = [parse_query(s, cat, reg) for s in
             ("Q4(; f(units))", "Q5(store; g(item)*h(date, family))", "Q6(item; g(item)*f(units))")]
    logical = optimize(batch, cat, roots="Sales")
    counts = {"item": 5, "date": 10, "store": 20}
    plans = plan_all(logical, lambda r, a: counts.get(a, 3))
    gid = next(g.id for g in logical.graph.groups if g.node == "Sales")
    return cat, logical, plans[gid]


def test_sales_plan_group_on_toy_sales(sales_plan):
    cat, logical, plan = sales_plan
    sales = table_from_columns(cat.schema("Sales"), {
        "date": [1, 1, 2], "store": [10, 11, 10], "item": [7, 7, 8],
        "units": [3.0, 5.0, 2.0], "promo": [0, 1, 0]})
    src = {vid: (logical.views[vid].source, logical.views[vid].group_by) for vid in plan.lookups}
    VH = {1: 2.0, 2: 3.0}
    VI = {7: 0.5, 8: 4.0}
    VIf = {(7, 1): 1.0, (7, 2): 2.0, (8, 3): 5.0}          # (item, family) -> count
    VT = {(1, 10): 1.5, (2, 10): 7.0}                       # (1, 11) is missing
    computed = {}
    for vid, (rel, gb) in src.items():
        if rel == "Holidays":
            data = VH
        elif rel == "Transactions":
            data = VT
        elif set(gb) == {"item", "family"}:
            data = VIf
        else:
            data = VI
        keys = list(data)
        cols = {a: np.array([k[i] if isinstance(k, tuple) else k for k in keys]) for i, a in enumerate(gb)}
        computed[vid] = ResultTable(gb, cols, np.array(list(data.values())).reshape(-1, 1))
    out, stats = execute_group(plan, sales, computed)
    res = {logical.views[v].query_id: t for v, t in out.items()}

    q4 = q5 = q6 = 0.0
    q5d, q6d = {}, {}
    for d, s, i, u in zip([1, 1, 2], [10, 11, 10], [7, 7, 8], [3.0, 5.0, 2.0]):
        if (d, s) not in VT:
            continue
        base = VT[(d, s)] * VH[d]
        q4 += u * base * VI[i]
        q6d[i] = q6d.get(i, 0.0) + i * u * base * VI[i]
        for (ii, fam), c in VIf.items():
            if ii == i:
                q5d[s] = q5d.get(s, 0.0) + i * d * fam * base * c
    assert res["Q4"].scalar() == pytest.approx(q4, rel=1e-12)
    assert res["Q5"].to_dict() == pytest.approx({(k,): (v,) for k, v in q5d.items()})
    assert res["Q6"].to_dict() == pytest.approx({(k,): (v,) for k, v in q6d.items()})
    assert stats.leaf_visits <= 3


def test_missing_dependency(sales_plan):
    cat, logical, plan = sales_plan
    sales = table_from_columns(cat.schema("Sales"), {a: [1] for a in cat.schema("Sales").attributes})
    with pytest.raises(MissingDependency):
        execute_group(plan, sales, {})


def test_count_seven_rows():
    db = single_relation_db("R", {"a": np.arange(7), "b": np.ones(7)})
    assert Engine(db).run([parse_query("Q(; 1)", db.catalog)])["Q"].scalar() == 7.0


def test_single_relation_identity_is_column_sum():
    x = np.array([1.5, -2.0, 4.25, 0.5])
    db = single_relation_db("R", {"k": np.array([0, 1, 0, 1]), "x": x})
    q = parse_query("Q(; x)", db.catalog)
    assert brute_force_oracle([q], db)["Q"].scalar() == x.sum()
    assert Engine(db).run([q])["Q"].scalar() == pytest.approx(x.sum(), rel=1e-12)


def _pair_db(left_keys, right_keys):
    R = RelationSchema("R", ("k", "x"))
    S = RelationSchema("S", ("k", "y"))
    cat = Catalog([R, S], (), JoinTree.from_edges("RS", [("R", "S")]))
    tables = {
        "R": table_from_columns(R, {"k": left_keys, "x": np.arange(len(left_keys), dtype=float)}),
        "S": table_from_columns(S, {"k": right_keys, "y": np.ones(len(right_keys))}),
    }
    return Database(cat, tables)


def test_unmatched_keys_contribute_nothing():
    db = _pair_db([1, 2, 3], [1, 1, 3])
    batch = parse_batch("A(; x*y)\nB(k; 1)\n", db.catalog)
    got, want = Engine(db).run(batch), brute_force_oracle(batch, db)
    assert got["A"].scalar() == want["A"].scalar() == 0.0 + 0.0 + 2.0
    assert got["B"].to_dict() == want["B"].to_dict() == {(1,): (2.0,), (3,): (1.0,)}


def test_empty_join():
    db = _pair_db([1, 2], [5, 6])
    batch = parse_batch("A(; x)\nB(k; 1)\n", db.catalog)
    for res in (Engine(db).run(batch).results, brute_force_oracle(batch, db)):
        assert res["A"].scalar() == 0.0
        assert len(res["B"]) == 0


def test_first_pushdown_query_matches_oracle():
    cat = load_config(favorita_config_path())
    db = Database.from_csv_dir(cat, favorita_config_path().parent / "favorita_toy")
    batch = [parse_query("Q1(; log1p(units)*sqrt(price))", cat)]
    assert compare_results(Engine(db).run(batch)["Q1"], brute_force_oracle(batch, db)["Q1"]) is None


def test_cycle_detected():
    g = GroupDependencyGraph([ViewGroup(0, "R", (0,), ()), ViewGroup(1, "S", (1,), ())],
                             {(0, 1), (1, 0)})
    with pytest.raises(CycleDetected):
        g.topological()


@pytest.fixture(scope="module")
def small_favorita():
    return favorita_db(3000, seed=3, dates=20, stores=6, items=30)


def _mixed_batch(db):
    cat = db.catalog
    return parse_batch("\n".join([
        "Q1(; units*price)", "Q2(family; units)", "Q3(city, family; txns)",
        "Q4(store; [promo = 1]*units)", "Q5(date; price^2)", "Q6(item; 1)",
    ]), cat, dictionaries=db.dictionaries)


def test_threads_match_single_thread(small_favorita, monkeypatch):
    db = small_favorita
    batch = _mixed_batch(db)
    one = Engine(db, 1).run(batch)
    monkeypatch.setattr(ex, "usable_cpus", lambda: 4)
    four = Engine(db, 4).run(batch)
    assert four.stats and max(s.partitions for s in four.stats) > 1
    for q in batch:
        assert compare_results(one[q.id], four[q.id]) is None


def test_domain_partitions_merge_to_unpartitioned(small_favorita):
    db = small_favorita
    batch = _mixed_batch(db)
    whole = Engine(db, partitions=1).run(batch)
    split = Engine(db, partitions=4).run(batch)
    assert any(s.partitions == 4 for s in split.stats)
    for q in batch:
        assert compare_results(whole[q.id], split[q.id]) is None


def test_single_group_runs():
    db = single_relation_db("R", {"a": np.array([1, 2, 2]), "b": np.array([1.0, 2.0, 3.0])})
    res = Engine(db, threads=4).run([parse_query("Q(a; b)", db.catalog)])
    assert len(res.logical.graph.groups) == 1
    assert res["Q"].to_dict() == {(1,): (1.0,), (2,): (5.0,)}


def test_merge_results_adds_keywise():
    a = ResultTable(("k",), {"k": np.array([1, 2])}, np.array([[1.0], [2.0]]))
    b = ResultTable(("k",), {"k": np.array([2, 3])}, np.array([[10.0], [20.0]]))
    assert merge_results([a, b]).to_dict() == {(1,): (1.0,), (2,): (12.0,), (3,): (20.0,)}


def test_csv_export_is_byte_identical(tmp_path, small_favorita):
    db = small_favorita
    batch = _mixed_batch(db)
    texts = []
    for run in range(2):
        res = Engine(db, 2).run(batch)
        d = tmp_path / str(run)
        d.mkdir()
        for qid, t in res.results.items():
            t.to_csv(d / f"{qid}.csv", db.decode)
        texts.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert texts[0] == texts[1]


@settings(max_examples=25)
@given(st.integers(0, 100_000))
def test_engine_matches_oracle_and_scans_once(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 5, max_rows=60))
    batch = random_batch(db, seed=seed, queries=6)
    res = Engine(db, partitions=1 + seed % 3).run(batch)
    oracle = brute_force_oracle(batch, db)
    for q in batch:
        assert compare_results(res[q.id], oracle[q.id]) is None
        keys = list(res[q.id].to_dict())
        assert len(keys) == len(set(keys))
    for s in res.stats:
        assert s.leaf_visits <= db.size(s.node)
