"""Multi-output plans: one nested scan per view group.

The planner fixes an attribute order over the group's relation and turns every
product term of every outgoing view into a chain of slots:

* components: factors and incoming-view lookups that must be evaluated together
  (they share a non-order attribute), anchored at the deepest depth they need;
* partial products p_d: product of the components anchored at depth d;
* intermediate aggregates a_d = a_{d-1} * p_d, computed on the way down;
* running sums r_d = p_d * sum over children of r_{d+1}, computed on the way up.

Depth 0 is outside every loop, depth k sits inside the loop over order[k-1],
and depth D+1 (D = len(order)) is the loop over the tuples of one trie leaf.
Slots are hash-consed, so equal partial products are computed once and shared
across outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import UnjoinableView
from .logical import DirectionalView, LogicalPlan, ViewGroup, ViewSlot
from .query import Factor

ROWS = "#rows"


@dataclass(frozen=True)
class AttributeOrder:
    attrs: tuple[str, ...]

    def depth(self, attr: str) -> int:
        return self.attrs.index(attr) + 1

    def __len__(self):
        return len(self.attrs)

    def __iter__(self):
        return iter(self.attrs)


@dataclass(frozen=True)
class Member:
    """A factor or an incoming-view slot inside a component."""

    factor: Factor | None
    view: int | None
    slot: int
    depth: int
    free: tuple[str, ...]       # non-order attributes it binds or needs

    def key(self):
        if self.factor is not None:
            return ("f",) + tuple(self.factor.key())
        return ("v", self.view, self.slot)

    def __str__(self):
        if self.factor is not None:
            return str(self.factor)
        return f"V{self.view}[{self.slot}]"


@dataclass(frozen=True)
class Slot:
    """One node of the per-group evaluation DAG.

    op is one of: comp (members, keep), ones, prod (args), down (arg from
    depth-1), up (arg from depth+1).
    """

    id: int
    op: str
    depth: int
    args: tuple[int, ...] = ()
    members: tuple[Member, ...] = ()
    keep: tuple[str, ...] = ()
    role: str = ""              # p / a / r / out, for explain only


@dataclass
class Lookup:
    view: int
    depth: int
    keys: tuple[str, ...]       # key attributes fixed by the order prefix
    free: tuple[str, ...]       # attributes of the view outside the relation


@dataclass
class OutputPlan:
    view: int
    label: str
    group_by: tuple[str, ...]
    anchor: int
    bound: tuple[str, ...]      # group-by attributes of the relation
    free: tuple[str, ...]       # group-by attributes coming from incoming views
    container: str              # "vector" | "map"
    aggregates: list[list[int]]  # per aggregate: out-slot id per term
    is_query: bool = False


@dataclass
class MultiOutputPlan:
    group: ViewGroup
    node: str
    order: AttributeOrder
    lookups: dict[int, Lookup]
    slots: list[Slot]
    outputs: list[OutputPlan]

    @property
    def depth_count(self) -> int:
        return len(self.order)


# attribute order

def group_join_attributes(group: ViewGroup, views: Mapping[int, DirectionalView],
                          node_attrs: frozenset[str]) -> set[str]:
    attrs = set()
    for vid in group.incoming:
        attrs |= set(views[vid].group_by) & node_attrs
    for vid in group.views:
        attrs |= set(views[vid].group_by) & node_attrs
    return attrs


def choose_attribute_order(attrs, distinct: Mapping[str, int]) -> AttributeOrder:
    """Ascending distinct count, ties by name."""
    return AttributeOrder(tuple(sorted(attrs, key=lambda a: (distinct[a], a))))


# registration

class _UnionFind:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[max(ra, rb)] = min(ra, rb)


class _SlotTable:
    def __init__(self):
        self.slots: list[Slot] = []
        self.index: dict[tuple, int] = {}

    def get(self, op, depth, args=(), members=(), keep=(), role=""):
        key = (op, depth, args, tuple(m.key() for m in members), keep)
        hit = self.index.get(key)
        if hit is not None:
            return hit
        s = Slot(len(self.slots), op, depth, args, members, keep, role)
        self.slots.append(s)
        self.index[key] = s.id
        return s.id

    def prod(self, depth, args, role):
        args = [a for a in args if a is not None]
        if not args:
            return None
        if len(args) == 1:
            return args[0]
        return self.get("prod", depth, tuple(sorted(args)), role=role)


def register(group: ViewGroup, order: AttributeOrder, views: Mapping[int, DirectionalView],
             node_attrs: frozenset[str]) -> MultiOutputPlan:
    D = len(order)
    rows_depth = D + 1
    in_order = set(order.attrs)

    def depth_of_attrs(attrs) -> int:
        d = 0
        for a in attrs:
            if a in node_attrs:
                d = max(d, order.depth(a) if a in in_order else rows_depth)
        return d

    lookups: dict[int, Lookup] = {}
    for vid in group.incoming:
        v = views[vid]
        keys = tuple(a for a in v.group_by if a in node_attrs)
        missing = [a for a in keys if a not in in_order]
        if missing:
            raise UnjoinableView(
                f"{v.label()} keys {missing} are not fixed by the order {list(order.attrs)}")
        d = max((order.depth(a) for a in keys), default=0)
        lookups[vid] = Lookup(vid, d, tuple(sorted(keys, key=order.depth)),
                              tuple(a for a in v.group_by if a not in node_attrs))

    table = _SlotTable()
    outputs = []
    for vid in group.views:
        v = views[vid]
        bound = tuple(a for a in v.group_by if a in node_attrs)
        free = tuple(a for a in v.group_by if a not in node_attrs)
        for a in bound:
            if a not in in_order:
                raise UnjoinableView(f"{v.label()} groups by {a}, which is not in the order")
        anchor = max((order.depth(a) for a in bound), default=0)
        prefix = set(order.attrs[:anchor])
        container = "vector" if set(bound) == prefix and not free else "map"
        aggs = []
        for aggregate in v.aggregates:
            aggs.append([_register_term(table, term, anchor, free, D, order, lookups,
                                        node_attrs, depth_of_attrs)
                         for term in aggregate])
        outputs.append(OutputPlan(vid, v.label(), v.group_by, anchor, bound, free,
                                  container, aggs, v.is_output))
    return MultiOutputPlan(group, group.node, order, lookups, table.slots, outputs)


def _register_term(table: _SlotTable, term, anchor: int, keep_free: tuple[str, ...], D: int,
                   order: AttributeOrder, lookups, node_attrs, depth_of_attrs) -> int:
    rows_depth = D + 1
    members: list[Member] = []
    for f in term:
        if isinstance(f, ViewSlot):
            lk = lookups[f.view]
            members.append(Member(None, f.view, f.slot, lk.depth, lk.free))
            continue
        if f.kind == "constant" and f.params == 1.0 and len(term) > 1:
            continue
        outside = tuple(a for a in f.attrs if a not in node_attrs)
        toks = outside
        if any(a in node_attrs and a not in order.attrs for a in f.attrs):
            toks = toks + (ROWS,)
        members.append(Member(f, None, 0, depth_of_attrs(f.attrs), toks))

    # members sharing a non-order attribute are evaluated together
    uf = _UnionFind(len(members))
    owner: dict[str, int] = {}
    for i, m in enumerate(members):
        for t in m.free:
            if t in owner:
                uf.union(owner[t], i)
            else:
                owner[t] = i
    comps: dict[int, list[Member]] = {}
    for i, m in enumerate(members):
        comps.setdefault(uf.find(i), []).append(m)

    per_depth: dict[int, list[int]] = {}
    for ms in comps.values():
        depth = max(m.depth for m in ms)
        free = {a for m in ms for a in m.free if a != ROWS}
        keep = tuple(a for a in keep_free if a in free)
        ms = sorted(ms, key=lambda m: (m.factor is not None, repr(m.key())))
        sid = table.get("comp", depth, (), tuple(ms), keep, role="p")
        per_depth.setdefault(depth, []).append(sid)

    p = {d: table.prod(d, per_depth[d], "p") for d in per_depth}

    a_prev = None
    for d in range(anchor):
        down = table.get("down", d, (a_prev,), role="a") if a_prev is not None and d > 0 else a_prev
        a_prev = table.prod(d, [down, p.get(d)], "a")

    r = p.get(rows_depth)
    if r is None:
        r = table.get("ones", rows_depth, role="r")
    for d in range(D, anchor, -1):
        up = table.get("up", d, (r,), role="r")
        r = table.prod(d, [p.get(d), up], "r")
    up = table.get("up", anchor, (r,), role="r")
    down = None
    if a_prev is not None:
        down = table.get("down", anchor, (a_prev,), role="a") if anchor > 0 else a_prev
    out = table.prod(anchor, [down, p.get(anchor), up], "out")
    return out


def plan_group(logical: LogicalPlan, group: ViewGroup, distinct: Mapping[str, int],
               order: Sequence[str] | None = None) -> MultiOutputPlan:
    node_attrs = logical.catalog.attrs(group.node)
    if order is None:
        attrs = group_join_attributes(group, logical.views, node_attrs)
        ao = choose_attribute_order(attrs, distinct)
    else:
        ao = AttributeOrder(tuple(order))
    return register(group, ao, logical.views, node_attrs)


def plan_all(logical: LogicalPlan, distinct_fn) -> dict[int, MultiOutputPlan]:
    """Plans for every group; `distinct_fn(rel, attr)` gives distinct counts."""
    plans = {}
    for g in logical.graph.groups:
        node_attrs = logical.catalog.attrs(g.node)
        attrs = group_join_attributes(g, logical.views, node_attrs)
        distinct = {a: distinct_fn(g.node, a) for a in attrs}
        plans[g.id] = register(g, choose_attribute_order(attrs, distinct),
                               logical.views, node_attrs)
    return plans


# explain

def _slot_text(s: Slot) -> str:
    if s.op == "comp":
        body = " * ".join(str(m) if m.factor is not None else f"V{m.view}[{m.slot}]"
                          for m in s.members)
        extra = f" by {','.join(s.keep)}" if s.keep else ""
        free = sorted({a for m in s.members for a in m.free if a != ROWS})
        if free:
            return f"sum over {','.join(free)} of {body}{extra}"
        return body
    if s.op == "ones":
        return "1"
    if s.op == "prod":
        return " * ".join(f"a{x}" for x in s.args)
    if s.op == "down":
        return f"a{s.args[0]}"
    if s.op == "up":
        return f"sum a{s.args[0]}"
    return s.op


def explain_plan(plan: MultiOutputPlan, views: Mapping[int, DirectionalView] | None = None) -> str:
    D = len(plan.order)
    names = {}
    for vid in plan.lookups:
        names[vid] = views[vid].label() if views else f"V{vid}"
    lines = [f"group G{plan.group.id} over {plan.node}; order: {', '.join(plan.order.attrs) or '-'}"]
    by_depth: dict[int, list[Slot]] = {}
    for s in plan.slots:
        by_depth.setdefault(s.depth, []).append(s)

    def emit(depth, indent):
        pad = "  " * indent
        for vid, lk in sorted(plan.lookups.items()):
            if lk.depth == depth:
                keys = ",".join(lk.keys)
                free = f" (foreach {','.join(lk.free)})" if lk.free else ""
                lines.append(f"{pad}lookup {names[vid]}({keys}){free}")
        ups = []
        for s in by_depth.get(depth, []):
            if s.op == "up" or (s.op == "prod" and any(
                    plan.slots[a].op == "up" for a in s.args)):
                ups.append(s)
                continue
            lines.append(f"{pad}a{s.id} = {_slot_text(s)}")
        if depth < D + 1:
            attr = plan.order.attrs[depth] if depth < D else "tuple"
            lines.append(f"{pad}foreach {attr}:")
            emit(depth + 1, indent + 1)
        for s in ups:
            op = "+=" if s.op == "up" else "="
            text = f"a{s.args[0]}" if s.op == "up" else _slot_text(s)
            lines.append(f"{pad}a{s.id} {op} {text}")
        for o in plan.outputs:
            if o.anchor == depth:
                for i, terms in enumerate(o.aggregates):
                    rhs = " + ".join(f"a{t}" for t in terms)
                    key = ",".join(o.group_by)
                    kind = "vector" if o.container == "vector" else "map"
                    lines.append(f"{pad}{o.label}({key})[{i}] += {rhs}   [{kind}]")

    if plan.outputs:
        emit(0, 0)
    return "\n".join(lines) + "\n"
