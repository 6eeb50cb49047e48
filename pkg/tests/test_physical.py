from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import aggforge.executor as ex
from aggforge.catalog import favorita_config_path, load_config
from aggforge.errors import UnjoinableView
from aggforge.executor import Engine
from aggforge.logical import ViewGroup, ViewSlot, optimize
from aggforge.physical import (
    AttributeOrder, choose_attribute_order, explain_plan, plan_all, plan_group, register,
)
from aggforge.query import DEFAULT_REGISTRY, FunctionRegistry, parse_query
from aggforge.testkit import RandomDbSpec, generate_db, random_batch, single_relation_db


def test_order_by_distinct_count():
    assert choose_attribute_order({"store", "date", "item"},
                                  {"item": 5, "date": 10, "store": 20}).attrs == ("item", "date", "store")
    assert choose_attribute_order({"x"}, {"x": 3}).attrs == ("x",)
    assert choose_attribute_order({"b", "a", "c"}, {"a": 2, "b": 2, "c": 2}).attrs == ("a", "b", "c")


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
    return logical, plans[gid]


def test_sales_plan_structure(sales_plan):
    logical, plan = sales_plan
    assert plan.order.attrs == ("item", "date", "store")
    text = explain_plan(plan, logical.views)
    lines = text.splitlines()
    loops = [ln for ln in lines if ln.strip().startswith("foreach")]
    assert [ln.strip() for ln in loops] == ["foreach item:", "foreach date:", "foreach store:",
                                            "foreach tuple:"]
    # each loop is nested one level deeper than the previous one
    assert [len(ln) - len(ln.lstrip()) for ln in loops] == [0, 2, 4, 6]

    src = {vid: logical.views[vid].source for vid in plan.lookups}
    depth = {src[v] + "/" + ",".join(lk.keys): lk.depth for v, lk in plan.lookups.items()}
    assert depth["Transactions/date,store"] == 3      # V_T(date, store) looked up at the store loop
    assert depth["Holidays/date"] == 2                # V_H(date) at the date loop
    assert depth["Items/item"] == 1                   # V_I(item) at the item loop

    outs = {o.label: o for o in plan.outputs}
    assert outs["Q4"].anchor == 0 and outs["Q4"].container == "vector"
    assert outs["Q6"].anchor == 1 and outs["Q6"].container == "vector"
    assert outs["Q5"].anchor == 3 and outs["Q5"].container == "map"

    # f(units) runs in the innermost loop; h(date, family) and V'_I(item, family)
    # form one inner loop over family at the date depth
    comps = [s for s in plan.slots if s.op == "comp"]
    f = [s for s in comps if any(str(m) == "f(units)" for m in s.members)]
    assert f and all(s.depth == 4 for s in f)
    hv = [s for s in comps if any(str(m) == "h(date, family)" for m in s.members)]
    assert len(hv) == 1 and hv[0].depth == 2
    assert {m.view is not None for m in hv[0].members} == {True, False}
    assert "sum over family of" in text


def test_sales_plan_shares_partial_products(sales_plan):
    _, plan = sales_plan
    # f(units) is registered once though Q4 and Q6 both use it
    f = [s for s in plan.slots if s.op == "comp" and any(str(m) == "f(units)" for m in s.members)]
    assert len(f) == 1


def test_single_count_view():
    db = single_relation_db("R", {"a": np.array([1, 2, 2])})
    q = parse_query("Q(; 1)", db.catalog)
    logical = optimize([q], db.catalog)
    (plan,) = plan_all(logical, db.distinct_count).values()
    (out,) = plan.outputs
    assert out.anchor == 0 and plan.order.attrs == ()
    assert plan.slots[out.aggregates[0][0]].depth == 0
    assert Engine(db).run([q])["Q"].scalar() == 3.0


def test_empty_group_and_unjoinable(sales_plan):
    logical, plan = sales_plan
    empty = register(ViewGroup(99, "Sales", (), ()), AttributeOrder(()), logical.views,
                     logical.catalog.attrs("Sales"))
    assert explain_plan(empty).splitlines()[1:] == []
    with pytest.raises(UnjoinableView):
        plan_group(logical, plan.group, {}, order=("item", "store"))


def test_explain_is_deterministic(sales_plan):
    logical, plan = sales_plan
    again = plan_group(logical, plan.group, {"item": 5, "date": 10, "store": 20})
    assert explain_plan(plan, logical.views) == explain_plan(again, logical.views)


def _members(plan, sid):
    s = plan.slots[sid]
    if s.op == "comp":
        return [m.key() for m in s.members]
    out = []
    for a in s.args:
        out += _members(plan, a)
    return out


def _expected(term):
    keys = []
    for f in term:
        if isinstance(f, ViewSlot):
            keys.append(("v", f.view, f.slot))
        elif not (f.kind == "constant" and f.params == 1.0 and len(term) > 1):
            keys.append(("f",) + tuple(f.key()))
    return keys


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_partial_products_and_anchors(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 5, max_rows=30))
    batch = random_batch(db, seed=seed, queries=5)
    logical = optimize(batch, db.catalog, db.sizes())
    plans = plan_all(logical, db.distinct_count)
    for gid, plan in plans.items():
        order = plan.order
        for lk in plan.lookups.values():
            assert lk.depth == max((order.depth(a) for a in lk.keys), default=0)
        for o in plan.outputs:
            v = logical.views[o.view]
            # every factor lands on exactly one depth of the term's slot chain
            for aggregate, slots in zip(v.aggregates, o.aggregates):
                assert len(aggregate) == len(slots)
                for term, sid in zip(aggregate, slots):
                    assert Counter(_members(plan, sid)) == Counter(_expected(term))
            # anchored at the shallowest depth fixing all bound group-by attributes
            want = max((order.depth(a) for a in o.bound), default=0)
            assert o.anchor == want
            assert set(o.bound) <= set(order.attrs[:o.anchor])
            prefix = set(order.attrs[:o.anchor])
            assert (o.container == "vector") == (set(o.bound) == prefix and not o.free)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_vector_outputs_receive_keys_in_order(seed):
    db = generate_db(RandomDbSpec(seed=seed, relations=1 + seed % 4, max_rows=40))
    batch = random_batch(db, seed=seed, queries=5)
    compiled = Engine(db, partitions=1).compile(batch)
    vectors = {}
    for plan in compiled.plans.values():
        for o in plan.outputs:
            if o.container == "vector" and o.group_by:
                vectors[o.label] = tuple(a for a in plan.order.attrs if a in o.bound)
    seen = []
    original = ex.ResultTable.sorted

    def monitor(self):
        if self.name in vectors:
            seen.append(self.name)
            cols = [self.keys[a] for a in vectors[self.name]]
            keys = list(zip(*(c.tolist() for c in cols)))
            assert all(a < b for a, b in zip(keys, keys[1:])), self.name
        return original(self)

    ex.ResultTable.sorted = monitor
    try:
        compiled.run()
    finally:
        ex.ResultTable.sorted = original
    assert set(seen) == set(vectors)
