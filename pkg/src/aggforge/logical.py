"""Logical optimization: roots, aggregate pushdown, view merging, view grouping.

Every query is decomposed per product term into one directional view per
join-tree edge, all directed toward the query's root. Views are hash-consed
while they are built, so identical views are shared from the start; merging
then consolidates views along the same edge and grouping clusters views that
leave the same relation.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .catalog import Catalog, JoinTree
from .errors import CycleDetected
from .query import AggregateQuery, Factor


@dataclass(frozen=True)
class ViewSlot:
    """Reference to aggregate `slot` of an incoming view."""

    view: int
    slot: int

    def key(self):
        return ("view", self.view, self.slot)

    def __str__(self):
        return f"V{self.view}[{self.slot}]"


def _fkey(f):
    return f.key()


def term_key(term) -> tuple:
    return tuple(sorted((_fkey(f) for f in term), key=repr))


def agg_key(aggregate) -> tuple:
    return tuple(sorted((term_key(t) for t in aggregate), key=repr))


@dataclass
class DirectionalView:
    id: int
    source: str
    target: str | None          # None marks a query output at its root
    group_by: tuple[str, ...]
    aggregates: list[tuple]     # each aggregate: tuple of terms; term: tuple of Factor|ViewSlot
    incoming: tuple[int, ...]
    query_id: str | None = None

    @property
    def is_output(self) -> bool:
        return self.target is None

    def signature(self):
        return (self.source, self.target, frozenset(self.group_by), self.incoming,
                tuple(agg_key(a) for a in self.aggregates))

    def label(self) -> str:
        if self.is_output:
            return self.query_id
        return f"V{self.id}:{self.source}->{self.target}"

    def describe(self) -> str:
        aggs = ", ".join(" + ".join("*".join(str(f) for f in t) for t in a) for a in self.aggregates)
        inc = ",".join(f"V{i}" for i in self.incoming)
        return f"{self.label()}({', '.join(self.group_by)}; {aggs}) <- {self.source}" + \
            (f", {inc}" if inc else "")


@dataclass
class ViewGroup:
    id: int
    node: str
    views: tuple[int, ...]
    incoming: tuple[int, ...]


@dataclass
class GroupDependencyGraph:
    groups: list[ViewGroup]
    edges: set[tuple[int, int]]

    def predecessors(self, gid: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == gid)

    def topological(self) -> list[int]:
        indeg = {g.id: 0 for g in self.groups}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted(g for g, d in indeg.items() if d == 0)
        out = []
        while ready:
            g = ready.pop(0)
            out.append(g)
            for a, b in sorted(self.edges):
                if a == g:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
                        ready.sort()
        if len(out) != len(self.groups):
            raise CycleDetected("view group dependency graph has a cycle")
        return out


@dataclass
class MergeStats:
    before: int = 0
    after: int = 0
    case3: int = 0
    case2: int = 0
    case1: int = 0


@dataclass
class LogicalPlan:
    catalog: Catalog
    tree: JoinTree
    queries: list[AggregateQuery]
    roots: dict[str, str]
    views: dict[int, DirectionalView]
    outputs: dict[str, int]
    graph: GroupDependencyGraph
    merge_stats: MergeStats = field(default_factory=MergeStats)

    @property
    def directional_views(self) -> list[DirectionalView]:
        return [v for v in self.views.values() if not v.is_output]

    def summary(self) -> dict:
        app = sum(len(q.aggregates) for q in self.queries)
        inter = sum(len(v.aggregates) for v in self.directional_views)
        return {"A": app, "I": inter, "V": len(self.directional_views),
                "G": len(self.graph.groups)}


# root assignment

def assign_roots(batch: Sequence[AggregateQuery], tree: JoinTree, catalog: Catalog,
                 sizes: Mapping[str, int] | None = None) -> dict[str, str]:
    sizes = sizes or {}
    rels = sorted(tree.nodes)
    m = len(rels)
    weights: dict[str, dict[str, Fraction]] = {}
    total = defaultdict(Fraction)
    for q in batch:
        F = set(q.group_by)
        w = {}
        for r in rels:
            if F:
                w[r] = Fraction(len(F & catalog.attrs(r)), len(F))
            else:
                w[r] = Fraction(1, m)
            total[r] += w[r]
        weights[q.id] = w
    order = sorted(rels, key=lambda r: (-total[r], -sizes.get(r, 0), r))
    roots: dict[str, str] = {}
    for r in order:
        for q in batch:
            if q.id not in roots and weights[q.id][r] > 0:
                roots[q.id] = r
    return roots


# decomposition

class _Builder:
    def __init__(self, catalog: Catalog, tree: JoinTree):
        self.catalog, self.tree = catalog, tree
        self.views: dict[int, DirectionalView] = {}
        self.memo: dict[tuple, int] = {}
        self.created = 0      # views requested (before sharing)
        self._sub: dict[tuple, frozenset] = {}
        self.rank = catalog.attr_rank()

    def subtree_attrs(self, node, parent) -> frozenset[str]:
        k = (node, parent)
        if k not in self._sub:
            acc = set()
            for n in self.tree.subtree(node, parent):
                acc |= self.catalog.attrs(n)
            self._sub[k] = frozenset(acc)
        return self._sub[k]

    def canon(self, attrs: Iterable[str]) -> tuple[str, ...]:
        return tuple(sorted(set(attrs), key=lambda a: self.rank[a]))

    def split(self, node, parent, F: frozenset, term: Sequence[Factor]):
        """Place the factors of one product at `node` or push them to a child."""
        children = [c for c in self.tree.neighbors(node) if c != parent]
        own = self.catalog.attrs(node)
        local, pushed = [], {c: [] for c in children}
        hoist = {c: set() for c in children}
        for f in term:
            A = set(f.attrs)
            if A <= own:
                local.append(f)
                continue
            owner = [c for c in children if A <= self.subtree_attrs(c, node)]
            if owner:
                pushed[owner[0]].append(f)
            else:
                # spans node and/or several subtrees: evaluate here, hoist attributes
                local.append(f)
                for c in children:
                    hoist[c] |= A & self.subtree_attrs(c, node)
        slots = []
        for c in children:
            sub = self.subtree_attrs(c, node)
            Fc = (F & sub) | (own & self.catalog.attrs(c)) | hoist[c]
            vid = self.view(c, node, frozenset(Fc), tuple(pushed[c]))
            slots.append(ViewSlot(vid, 0))
        return local, slots

    def view(self, node, parent, F: frozenset, term: tuple) -> int:
        self.created += 1
        local, slots = self.split(node, parent, F, term)
        t = tuple(local) + tuple(slots)
        if not t:
            from .query import constant
            t = (constant(1.0),)
        v = DirectionalView(-1, node, parent, self.canon(F), [(t,)],
                            tuple(sorted(s.view for s in slots)))
        sig = v.signature()
        hit = self.memo.get(sig)
        if hit is not None:
            return hit
        v.id = len(self.views)
        self.views[v.id] = v
        self.memo[sig] = v.id
        return v.id

    def output(self, q: AggregateQuery, root: str) -> int:
        F = frozenset(q.group_by)
        aggs, inc = [], set()
        for a in q.aggregates:
            terms = []
            for term in a.terms:
                local, slots = self.split(root, None, F, term)
                terms.append(tuple(local) + tuple(slots))
                inc.update(s.view for s in slots)
            aggs.append(tuple(terms))
        v = DirectionalView(len(self.views), root, None, tuple(q.group_by), aggs,
                            tuple(sorted(inc)), q.id)
        self.views[v.id] = v
        return v.id


def decompose_query(q: AggregateQuery, tree: JoinTree, root: str, catalog: Catalog):
    """Views for a single query (unmerged) plus its root definition."""
    b = _Builder(catalog, tree)
    out = b.output(q, root)
    views = [v for v in b.views.values() if not v.is_output]
    return views, b.views[out]


# merging

def _remap_term(term, remap):
    out = []
    for f in term:
        if isinstance(f, ViewSlot) and (f.view, f.slot) in remap:
            nv, ns = remap[(f.view, f.slot)]
            out.append(ViewSlot(nv, ns))
        else:
            out.append(f)
    return tuple(out)


def _heights(views: Mapping[int, DirectionalView]) -> dict[int, int]:
    h: dict[int, int] = {}

    def go(i):
        if i not in h:
            h[i] = 1 + max((go(j) for j in views[i].incoming), default=-1)
        return h[i]

    for i in views:
        go(i)
    return h


def merge_views(views: Mapping[int, DirectionalView], rank: Mapping[str, int] | None = None):
    """Consolidate views that share an edge direction and group-by attributes.

    Identical views collapse (case 3), views with the same body concatenate
    their aggregates (case 2), and views with different bodies are fused into
    one view joining them on the group-by keys (case 1). Returns the new view
    map, the (view, slot) remapping and merge statistics.
    """
    stats = MergeStats(before=sum(1 for v in views.values() if not v.is_output))
    heights = _heights(views)
    remap: dict[tuple[int, int], tuple[int, int]] = {}
    out: dict[int, DirectionalView] = {}
    next_id = 0
    rank = rank or {}

    for level in sorted(set(heights.values())):
        buckets: dict[tuple, list[DirectionalView]] = defaultdict(list)
        for vid in sorted(v for v in views if heights[v] == level):
            v = views[vid]
            aggs = [tuple(_remap_term(t, remap) for t in a) for a in v.aggregates]
            inc = tuple(sorted({remap[(i, 0)][0] if (i, 0) in remap else i for i in v.incoming}))
            nv = DirectionalView(v.id, v.source, v.target, v.group_by, aggs, inc, v.query_id)
            if v.is_output:
                nv.id = next_id
                next_id += 1
                out[nv.id] = nv
                continue
            buckets[(v.source, v.target, frozenset(v.group_by))].append(nv)
        for key in sorted(buckets, key=repr):
            members = buckets[key]
            sigs = {m.signature() for m in members}
            bodies = {m.incoming for m in members}
            if len(members) > 1:
                if len(sigs) == 1:
                    stats.case3 += len(members) - 1
                elif len(bodies) == 1:
                    stats.case2 += len(members) - 1
                else:
                    stats.case1 += len(members) - 1
            gid = next_id
            next_id += 1
            aggs, seen = [], {}
            for m in members:
                for s, a in enumerate(m.aggregates):
                    k = agg_key(a)
                    if k not in seen:
                        seen[k] = len(aggs)
                        aggs.append(a)
                    remap[(m.id, s)] = (gid, seen[k])
            inc = tuple(sorted({i for m in members for i in m.incoming}))
            first = members[0]
            gb = tuple(sorted(first.group_by, key=lambda a: rank.get(a, 0)))
            out[gid] = DirectionalView(gid, first.source, first.target, gb, aggs, inc)
    stats.after = sum(1 for v in out.values() if not v.is_output)
    return out, remap, stats


# grouping

def _dependency_levels(views: Mapping[int, DirectionalView]) -> dict[int, int]:
    return _heights(views)


def group_views(views: Mapping[int, DirectionalView], tree: JoinTree | None = None
                ) -> GroupDependencyGraph:
    """Cluster views leaving the same relation into dependency-free groups.

    Views are first bucketed by (source, dependency level); buckets on the same
    relation are then fused greedily whenever neither reaches the other in the
    group graph, which keeps the graph acyclic.
    """
    level = _dependency_levels(views)
    buckets: dict[tuple[str, int], list[int]] = defaultdict(list)
    for vid in sorted(views):
        buckets[(views[vid].source, level[vid])].append(vid)
    members = [sorted(buckets[k]) for k in sorted(buckets, key=lambda k: (k[1], k[0]))]
    owner = {}
    for gi, vs in enumerate(members):
        for v in vs:
            owner[v] = gi

    def edges_of():
        e = set()
        for gi, vs in enumerate(members):
            for v in vs:
                for u in views[v].incoming:
                    if owner[u] != gi:
                        e.add((owner[u], gi))
        return e

    def reaches(edges, a, b):
        stack, seen = [a], {a}
        while stack:
            x = stack.pop()
            for s, t in edges:
                if s == x and t not in seen:
                    if t == b:
                        return True
                    seen.add(t)
                    stack.append(t)
        return False

    changed = True
    while changed:
        changed = False
        edges = edges_of()
        alive = [i for i, vs in enumerate(members) if vs]
        for x in alive:
            for y in alive:
                if y <= x or not members[x] or not members[y]:
                    continue
                if views[members[x][0]].source != views[members[y][0]].source:
                    continue
                if reaches(edges, x, y) or reaches(edges, y, x):
                    continue
                members[x] = sorted(members[x] + members[y])
                for v in members[y]:
                    owner[v] = x
                members[y] = []
                changed = True
                break
            if changed:
                break

    # renumber in topological order
    kept = [i for i, vs in enumerate(members) if vs]
    edges = edges_of()
    indeg = {i: 0 for i in kept}
    for _, b in edges:
        indeg[b] += 1
    order, ready = [], sorted((i for i in kept if indeg[i] == 0),
                              key=lambda i: (views[members[i][0]].source, i))
    while ready:
        g = ready.pop(0)
        order.append(g)
        for a, b in sorted(edges):
            if a == g:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
        ready.sort(key=lambda i: (views[members[i][0]].source, i))
    if len(order) != len(kept):
        raise CycleDetected("grouping produced a cyclic dependency graph")
    new_id = {old: new for new, old in enumerate(order)}
    groups = []
    for old in order:
        vs = tuple(members[old])
        inc = sorted({u for v in vs for u in views[v].incoming})
        groups.append(ViewGroup(new_id[old], views[vs[0]].source, vs, tuple(inc)))
    return GroupDependencyGraph(groups, {(new_id[a], new_id[b]) for a, b in edges})


# full pipeline

def optimize(batch: Sequence[AggregateQuery], catalog: Catalog,
             sizes: Mapping[str, int] | None = None,
             roots: Mapping[str, str] | str | None = None,
             merge: bool = True) -> LogicalPlan:
    tree = catalog.ensure_tree()
    ids = [q.id for q in batch]
    if len(set(ids)) != len(ids):
        raise ValueError("query ids must be unique within a batch")
    for q in batch:
        for a in sorted(q.attrs):
            catalog.check_attr(a, f"query {q.id}")
    if roots is None:
        root_map = assign_roots(batch, tree, catalog, sizes)
    elif isinstance(roots, str):
        root_map = {q.id: roots for q in batch}
    else:
        root_map = dict(roots)
    b = _Builder(catalog, tree)
    outputs = {}
    for q in batch:
        outputs[q.id] = b.output(q, root_map[q.id])
    views = b.views
    stats = MergeStats(before=b.created, after=len(views) - len(outputs), case3=b.created - (len(views) - len(outputs)))
    if merge:
        views, _, ms = merge_views(views, b.rank)
        stats.after = ms.after
        stats.case3 += ms.case3
        stats.case2 = ms.case2
        stats.case1 = ms.case1
        outputs = {v.query_id: v.id for v in views.values() if v.is_output}
    graph = group_views(views, tree)
    return LogicalPlan(catalog, tree, list(batch), root_map, views, outputs, graph, stats)


def explain_logical(plan: LogicalPlan) -> str:
    lines = ["# roots"]
    for q in plan.queries:
        lines.append(f"{q.id} -> {plan.roots[q.id]}")
    lines.append("# views")
    for vid in sorted(plan.views):
        lines.append(plan.views[vid].describe())
    lines.append("# groups")
    for g in plan.graph.groups:
        deps = plan.graph.predecessors(g.id)
        names = ", ".join(plan.views[v].label() for v in g.views)
        dep = f" after {', '.join(f'G{d}' for d in deps)}" if deps else ""
        lines.append(f"G{g.id} @ {g.node}: {names}{dep}")
    s = plan.merge_stats
    lines.append(f"# merge: {s.before} views requested, {s.after} kept "
                 f"(identical {s.case3}, same body {s.case2}, fused {s.case1})")
    return "\n".join(lines) + "\n"
