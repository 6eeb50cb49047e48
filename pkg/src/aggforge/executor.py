"""Evaluation of multi-output plans, batch scheduling and the join oracle.

A plan is evaluated level by level over the relation sorted by the plan's
attribute order. Level d holds one segment per distinct prefix of length d
(a trie node); level D+1 holds the tuples. Every slot of the plan becomes a
keyed vector on its level: one value per segment, or, when the slot still
carries attributes of an incoming view that are not yet summed out, one value
per (segment, free attribute values) entry. Each relation tuple is read once
per group.
"""
from __future__ import annotations

import csv
import os
import threading
from concurrent.futures import ThreadPoolExecutor, FIRST_COMPLETED, wait
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CycleDetected, MissingDependency
from .logical import LogicalPlan, optimize
from .physical import ROWS, MultiOutputPlan, plan_all
from .query import AggregateQuery
from .storage import Database, Table, sort_table


# key coding helpers

def _encode(columns_a: Sequence[np.ndarray], columns_b: Sequence[np.ndarray] | None = None):
    """Dense int codes for the rows of one or two aligned column lists.

    Codes are consistent between the two sides, so equal keys get equal codes.
    """
    na = len(columns_a[0]) if columns_a else 0
    if columns_b is None:
        columns_b = [np.empty(0, dtype=c.dtype) for c in columns_a]
    nb = len(columns_b[0]) if columns_b else 0
    code = np.zeros(na + nb, dtype=np.int64)
    card = 1
    for ca, cb in zip(columns_a, columns_b):
        both = np.concatenate([np.asarray(ca), np.asarray(cb)])
        if both.dtype.kind in "iu" and len(both) and both.min() >= 0 and both.max() < 4 * len(both) + 64:
            inv = both.astype(np.int64)        # small non-negative ints code themselves
        else:
            _, inv = np.unique(both, return_inverse=True)
            inv = inv.reshape(-1).astype(np.int64)
        width = int(inv.max(initial=0)) + 1
        if card * width > 2 ** 40:
            _, code = np.unique(code, return_inverse=True)
            code = code.reshape(-1).astype(np.int64)
            card = int(code.max(initial=0)) + 1
        code = code * width + inv
        card *= width
    return code[:na], code[na:]


def _match(left: np.ndarray, right: np.ndarray):
    """All index pairs (i, j) with left[i] == right[j]."""
    if len(left) == 0 or len(right) == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e
    order = np.argsort(right, kind="stable")
    rs = right[order]
    lo = np.searchsorted(rs, left, "left")
    hi = np.searchsorted(rs, left, "right")
    cnt = hi - lo
    li = np.repeat(np.arange(len(left), dtype=np.int64), cnt)
    if len(li) == 0:
        return li, li
    offs = np.arange(len(li), dtype=np.int64) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ri = order[np.repeat(lo, cnt) + offs]
    return li, ri


def _group(columns: Sequence[np.ndarray], n: int):
    """(inverse codes, representative index per group, group count)."""
    if not columns:
        return np.zeros(n, dtype=np.int64), np.zeros(min(n, 1), dtype=np.int64), min(n, 1)
    code, _ = _encode(columns)
    uniq, first, inv = np.unique(code, return_index=True, return_inverse=True)
    return inv.reshape(-1), first, len(uniq)


# keyed vectors

@dataclass
class KeyedVec:
    """Values on one trie level.

    Dense form (`free` empty and `seg` None): one entry per segment. Long form:
    entries (seg, free attribute values) with no duplicate keys.
    """

    val: np.ndarray
    mask: np.ndarray
    seg: np.ndarray | None = None
    free: dict = field(default_factory=dict)

    @property
    def dense(self) -> bool:
        return self.seg is None


class _Frame:
    """Trie levels of a sorted table."""

    def __init__(self, table: Table, order: Sequence[str]):
        self.table = table
        self.order = tuple(order)
        n = table.row_count
        self.n = n
        D = len(order)
        self.starts = [np.zeros(1, dtype=np.int64)]      # level 0: one segment
        self.row_seg = [np.zeros(n, dtype=np.int64)]
        self.parent = [None]
        change = np.zeros(max(n - 1, 0), dtype=bool)
        for d in range(1, D + 1):
            col = table.columns[order[d - 1]]
            if n:
                change = change | (col[1:] != col[:-1])
                flags = np.concatenate([[True], change])
            else:
                flags = np.zeros(0, dtype=bool)
            rs = np.cumsum(flags) - 1
            st = np.flatnonzero(flags)
            self.row_seg.append(rs.astype(np.int64))
            self.starts.append(st.astype(np.int64))
            self.parent.append(self.row_seg[d - 1][st])
        self.starts.append(np.arange(n, dtype=np.int64))  # tuple level
        self.row_seg.append(np.arange(n, dtype=np.int64))
        self.parent.append(self.row_seg[D].copy())
        self._cols: dict[tuple[int, str], np.ndarray] = {}

    def size(self, level: int) -> int:
        return len(self.starts[level])

    def column(self, level: int, attr: str) -> np.ndarray:
        k = (level, attr)
        c = self._cols.get(k)
        if c is None:
            c = self.table.columns[attr][self.starts[level]]
            self._cols[k] = c
        return c


@dataclass
class ScanStats:
    group: int
    node: str
    leaf_visits: int = 0
    lookups: int = 0
    inner_iterations: int = 0
    partitions: int = 1

    def add(self, other: "ScanStats"):
        self.leaf_visits += other.leaf_visits
        self.lookups += other.lookups
        self.inner_iterations += other.inner_iterations


class ResultTable:
    """Group-by keys plus an aggregate matrix (rows x arity), sorted by key."""

    def __init__(self, group_by: Sequence[str], keys: Mapping[str, np.ndarray],
                 values: np.ndarray, name: str = ""):
        self.group_by = tuple(group_by)
        self.keys = {a: np.asarray(keys[a]) for a in self.group_by}
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        self.name = name
        self._index = None

    @property
    def arity(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def sorted(self) -> "ResultTable":
        if not self.group_by or len(self) < 2:
            return self
        idx = np.lexsort(tuple(self.keys[a] for a in reversed(self.group_by)))
        return ResultTable(self.group_by, {a: c[idx] for a, c in self.keys.items()},
                           self.values[idx], self.name)

    def to_dict(self) -> dict[tuple, tuple[float, ...]]:
        cols = [self.keys[a] for a in self.group_by]
        out = {}
        for i in range(len(self)):
            k = tuple(c[i].item() for c in cols)
            out[k] = tuple(float(x) for x in self.values[i])
        return out

    def scalar(self, slot: int = 0) -> float:
        if self.group_by:
            raise ValueError(f"{self.name} has group-by attributes")
        return float(self.values[0, slot]) if len(self) else 0.0

    def column(self, slot: int) -> np.ndarray:
        return self.values[:, slot]

    def to_csv(self, path, decode=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.group_by) + [f"agg{i}" for i in range(self.arity)])
            cols = [decode(a, self.keys[a]) if decode else self.keys[a].tolist()
                    for a in self.group_by]
            for i in range(len(self)):
                w.writerow([c[i] for c in cols] + [repr(float(x)) for x in self.values[i]])


# single group

class _GroupRun:
    def __init__(self, plan: MultiOutputPlan, table: Table,
                 inputs: Mapping[int, ResultTable], stats: ScanStats):
        self.plan = plan
        self.fr = _Frame(table, plan.order.attrs)
        self.inputs = inputs
        self.stats = stats
        self.memo: dict[int, KeyedVec] = {}
        self.lookup_cache: dict[int, KeyedVec] = {}
        self.rows_level = len(plan.order) + 1
        stats.leaf_visits += self.fr.n

    # level movement
    def down(self, kv: KeyedVec, level: int) -> KeyedVec:
        """From level-1 to level."""
        par = self.fr.parent[level]
        if kv.dense:
            return KeyedVec(kv.val[par], kv.mask[par])
        # every child segment repeats the entries of its parent
        li, ri = _match(par, kv.seg)
        return KeyedVec(kv.val[ri], kv.mask[ri], li,
                        {a: c[ri] for a, c in kv.free.items()})

    def up(self, kv: KeyedVec, level: int) -> KeyedVec:
        """From level+1 to level: sum values, OR masks."""
        par = self.fr.parent[level + 1]
        n = self.fr.size(level)
        v = np.where(kv.mask, kv.val, 0.0)
        if kv.dense:
            val = np.bincount(par, weights=v, minlength=n)
            mask = np.bincount(par, weights=kv.mask, minlength=n) > 0
            return KeyedVec(val, mask)
        seg = par[kv.seg]
        return self._collapse(seg, kv.free, v, kv.mask, n)

    def _collapse(self, seg, free, v, mask, n) -> KeyedVec:
        if not free:
            val = np.bincount(seg, weights=v, minlength=n)
            m = np.bincount(seg, weights=mask, minlength=n) > 0
            return KeyedVec(val, m)
        names = sorted(free)
        inv, first, k = _group([seg] + [free[a] for a in names], len(seg))
        val = np.bincount(inv, weights=v, minlength=k)
        m = np.bincount(inv, weights=mask, minlength=k) > 0
        return KeyedVec(val[m], np.ones(int(m.sum()), dtype=bool), seg[first][m],
                        {a: free[a][first][m] for a in names})

    def mul(self, a: KeyedVec, b: KeyedVec) -> KeyedVec:
        if a.dense and b.dense:
            return KeyedVec(a.val * b.val, a.mask & b.mask)
        if a.dense:
            a, b = b, a
        if b.dense:
            m = a.mask & b.mask[a.seg]
            keep = np.flatnonzero(m)
            return KeyedVec(a.val[keep] * b.val[a.seg[keep]], m[keep], a.seg[keep],
                            {k: c[keep] for k, c in a.free.items()})
        shared = sorted(set(a.free) & set(b.free))
        ka, kb = _encode([a.seg] + [a.free[s] for s in shared],
                         [b.seg] + [b.free[s] for s in shared])
        li, ri = _match(ka, kb)
        free = {k: c[li] for k, c in a.free.items()}
        for k, c in b.free.items():
            if k not in free:
                free[k] = c[ri]
        m = a.mask[li] & b.mask[ri]
        keep = np.flatnonzero(m)
        self.stats.inner_iterations += len(li)
        return KeyedVec(a.val[li][keep] * b.val[ri][keep], m[keep], a.seg[li][keep],
                        {k: c[keep] for k, c in free.items()})

    # lookups
    def lookup(self, vid: int, slot: int) -> KeyedVec:
        key = (vid, slot)
        hit = self.lookup_cache.get(key)
        if hit is not None:
            return hit
        lk = self.plan.lookups[vid]
        if vid not in self.inputs:
            raise MissingDependency(f"view V{vid} needed by group G{self.plan.group.id} "
                                    "has not been computed")
        rt = self.inputs[vid]
        n = self.fr.size(lk.depth)
        self.stats.lookups += n
        seg_keys = [self.fr.column(lk.depth, a) for a in lk.keys]
        view_keys = [rt.keys[a] for a in lk.keys]
        vals = rt.values[:, slot]
        if lk.keys:
            ks, kv = _encode(seg_keys, view_keys)
        else:
            ks, kv = np.zeros(n, dtype=np.int64), np.zeros(len(rt), dtype=np.int64)
        li, ri = _match(ks, kv)
        if not lk.free:
            val = np.zeros(n)
            mask = np.zeros(n, dtype=bool)
            val[li] = vals[ri]
            mask[li] = True
            out = KeyedVec(val, mask)
        else:
            self.stats.inner_iterations += len(li)
            out = KeyedVec(vals[ri], np.ones(len(li), dtype=bool), li,
                           {a: rt.keys[a][ri] for a in lk.free})
        self.lookup_cache[key] = out
        return out

    def at_level(self, kv: KeyedVec, src: int, dst: int) -> KeyedVec:
        for d in range(src + 1, dst + 1):
            kv = self.down(kv, d)
        return kv

    def component(self, s) -> KeyedVec:
        level = s.depth
        acc = None
        for m in s.members:
            if m.factor is None:
                lk = self.plan.lookups[m.view]
                part = self.at_level(self.lookup(m.view, m.slot), lk.depth, level)
            else:
                part = self.eval_factor(m.factor, level, acc)
                if acc is not None and not acc.dense and set(m.free) - {ROWS}:
                    # evaluated on acc's entries already
                    acc = KeyedVec(acc.val * part.val, acc.mask, acc.seg, acc.free)
                    continue
            acc = part if acc is None else self.mul(acc, part)
        # sum out free attributes that are not kept
        if acc is not None and not acc.dense:
            drop = set(acc.free) - set(s.keep)
            if drop:
                acc = self._collapse(acc.seg, {a: acc.free[a] for a in s.keep},
                                     np.where(acc.mask, acc.val, 0.0), acc.mask,
                                     self.fr.size(level))
        if level == self.rows_level:
            self.stats.inner_iterations += self.fr.n
        return acc

    def eval_factor(self, f, level: int, acc: KeyedVec | None) -> KeyedVec:
        n = self.fr.size(level)
        if acc is not None and not acc.dense and any(a in acc.free for a in f.attrs):
            cols = {}
            for a in f.attrs:
                cols[a] = acc.free[a] if a in acc.free else self.fr.column(level, a)[acc.seg]
            v = f.evaluate(cols, len(acc.seg))
            return KeyedVec(v, np.ones(len(v), dtype=bool), acc.seg, {})
        cols = {a: self.fr.column(level, a) for a in f.attrs}
        return KeyedVec(f.evaluate(cols, n), np.ones(n, dtype=bool))

    def slot(self, sid: int) -> KeyedVec:
        hit = self.memo.get(sid)
        if hit is not None:
            return hit
        s = self.plan.slots[sid]
        if s.op == "comp":
            out = self.component(s)
        elif s.op == "ones":
            n = self.fr.size(s.depth)
            out = KeyedVec(np.ones(n), np.ones(n, dtype=bool))
        elif s.op == "prod":
            out = self.slot(s.args[0])
            for a in s.args[1:]:
                out = self.mul(out, self.slot(a))
        elif s.op == "down":
            out = self.down(self.slot(s.args[0]), s.depth)
        elif s.op == "up":
            out = self.up(self.slot(s.args[0]), s.depth)
        else:
            raise ValueError(f"unknown slot op {s.op}")
        self.memo[sid] = out
        return out

    def run(self) -> dict[int, ResultTable]:
        results = {}
        for o in self.plan.outputs:
            results[o.view] = self.output(o)
        return results

    def output(self, o) -> ResultTable:
        level = o.anchor
        n = self.fr.size(level)
        seg_parts, free_parts, agg_parts, val_parts, mask_parts = [], [], [], [], []
        for i, terms in enumerate(o.aggregates):
            for sid in terms:
                kv = self.slot(sid)
                if kv.dense:
                    seg = np.arange(len(kv.val), dtype=np.int64)
                    free = {}
                else:
                    seg, free = kv.seg, kv.free
                seg_parts.append(seg)
                free_parts.append(free)
                agg_parts.append(np.full(len(seg), i, dtype=np.int64))
                val_parts.append(np.where(kv.mask, kv.val, 0.0))
                mask_parts.append(kv.mask)
        ell = len(o.aggregates)
        seg = np.concatenate(seg_parts) if seg_parts else np.zeros(0, dtype=np.int64)
        aggi = np.concatenate(agg_parts) if agg_parts else np.zeros(0, dtype=np.int64)
        val = np.concatenate(val_parts) if val_parts else np.zeros(0)
        mask = np.concatenate(mask_parts) if mask_parts else np.zeros(0, dtype=bool)
        if not o.free:
            # entries are per segment: accumulate there, then roll up to the key
            values = np.zeros((n, ell))
            np.add.at(values, (seg, aggi), val)
            exists = np.bincount(seg, weights=mask, minlength=n) > 0
            values = values[exists]
            keys = {a: self.fr.column(level, a)[exists] for a in o.bound}
            if o.container == "map" and o.group_by:
                cols = [keys[a] for a in o.group_by]
                inv, first, k = _group(cols, len(values))
                acc = np.zeros((k, ell))
                np.add.at(acc, inv, values)
                keys = {a: keys[a][first] for a in o.group_by}
                values = acc
            out_keys = keys
        else:
            keys = {a: self.fr.column(level, a)[seg] for a in o.bound}
            for a in o.free:
                keys[a] = np.concatenate([fp[a] for fp in free_parts])
            cols = [keys[a] for a in o.group_by]
            inv, first, k = _group(cols, len(seg))
            values = np.zeros((k, ell))
            np.add.at(values, (inv, aggi), val)
            exists = np.bincount(inv, weights=mask, minlength=k) > 0
            out_keys = {a: keys[a][first][exists] for a in o.group_by}
            values = values[exists]
        if o.is_query and not o.group_by and len(values) == 0:
            values = np.zeros((1, ell))
        return ResultTable(o.group_by, out_keys, values, o.label).sorted()


def execute_group(plan: MultiOutputPlan, table: Table, computed: Mapping[int, ResultTable],
                  partitions: int = 1) -> tuple[dict[int, ResultTable], ScanStats]:
    """All outgoing views of one group in one scan over `table`."""
    for vid in plan.lookups:
        if vid not in computed:
            raise MissingDependency(f"view V{vid} needed by group G{plan.group.id} "
                                    "has not been computed")
    if tuple(table.sort_order[:len(plan.order)]) != plan.order.attrs:
        table = sort_table(table, plan.order.attrs)
    stats = ScanStats(plan.group.id, plan.node)
    chunks = _partition(table, plan.order.attrs, partitions)
    if len(chunks) <= 1:
        return _GroupRun(plan, table, computed, stats).run(), stats
    stats.partitions = len(chunks)
    parts = [_GroupRun(plan, c, computed, stats).run() for c in chunks]
    return _merge_parts(plan, parts), stats


def _partition(table: Table, order: Sequence[str], k: int) -> list[Table]:
    """Contiguous row ranges that never split a value of the first order attribute."""
    n = table.row_count
    if k <= 1 or not order or n < 2:
        return [table]
    col = table.columns[order[0]]
    bounds = [0]
    for j in range(1, k):
        cut = int(round(j * n / k))
        if cut <= bounds[-1]:
            continue
        # move the cut to the start of the value run it lands in
        cut = int(np.searchsorted(col, col[cut - 1], "right")) if cut < n else n
        if bounds[-1] < cut < n:
            bounds.append(cut)
    bounds.append(n)
    return [table.slice(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


def _merge_parts(plan: MultiOutputPlan, parts: list[dict[int, ResultTable]]):
    out = {}
    for o in plan.outputs:
        tables = [p[o.view] for p in parts]
        out[o.view] = merge_results(tables, o.label)
    return out


def merge_results(tables: Sequence[ResultTable], name: str = "") -> ResultTable:
    """Key-wise sum of partial result tables over disjoint or overlapping key sets."""
    gb = tables[0].group_by
    if not gb:
        vals = sum(t.values.sum(axis=0, keepdims=True) if len(t) else
                   np.zeros((1, t.arity)) for t in tables)
        if all(len(t) == 0 for t in tables):
            vals = np.zeros((0, tables[0].arity))
        return ResultTable(gb, {}, vals, name)
    cols = [np.concatenate([t.keys[a] for t in tables]) for a in gb]
    vals = np.concatenate([t.values for t in tables])
    inv, first, k = _group(cols, len(vals))
    acc = np.zeros((k, vals.shape[1]))
    np.add.at(acc, inv, vals)
    return ResultTable(gb, {a: c[first] for a, c in zip(gb, cols)}, acc, name).sorted()


# batches

@dataclass
class BatchResult:
    results: dict[str, ResultTable]
    views: dict[int, ResultTable]
    stats: list[ScanStats]
    logical: LogicalPlan | None = None

    def __getitem__(self, qid: str) -> ResultTable:
        return self.results[qid]


class SortedCache:
    """Sorted copies of base tables keyed by (relation, order)."""

    def __init__(self, db: Database):
        self.db = db
        self._cache: dict[tuple, Table] = {}
        self._lock = threading.Lock()

    def get(self, rel: str, order: tuple[str, ...]) -> Table:
        key = (rel, tuple(order))
        with self._lock:
            t = self._cache.get(key)
        if t is None:
            t = sort_table(self.db.table(rel), order)
            with self._lock:
                self._cache[key] = t
        return t


def usable_cpus() -> int:
    try:
        return len(os.sched_getaffinity(0)) or 1
    except AttributeError:          # not available on every platform
        return os.cpu_count() or 1


def default_partitions(threads: int) -> int:
    """Domain partitions used for the largest group: one per usable core."""
    return max(1, min(threads, usable_cpus()))


def execute_batch(logical: LogicalPlan, db: Database, threads: int = 1,
                  plans: Mapping[int, MultiOutputPlan] | None = None,
                  partitions: int | None = None,
                  cache: SortedCache | None = None) -> BatchResult:
    """Run every group in dependency order.

    Independent groups run concurrently on up to `threads` workers (never more
    than usable cores) and the group on the largest relation is split into
    `partitions` key-disjoint chunks.
    """
    if threads < 1:
        raise ValueError("threads must be positive")
    graph = logical.graph
    order = graph.topological()      # raises CycleDetected
    if plans is None:
        plans = plan_all(logical, db.distinct_count)
    cache = cache or SortedCache(db)
    if partitions is None:
        partitions = default_partitions(threads)
    largest = None
    if graph.groups:
        largest = max(graph.groups, key=lambda g: (db.size(g.node), -g.id)).id

    computed: dict[int, ResultTable] = {}
    stats: dict[int, ScanStats] = {}
    lock = threading.Lock()

    def run(gid):
        plan = plans[gid]
        table = cache.get(plan.node, plan.order.attrs)
        with lock:
            inputs = {v: computed[v] for v in plan.lookups if v in computed}
        k = partitions if gid == largest else 1
        res, st = execute_group(plan, table, inputs, k)
        with lock:
            computed.update(res)
            stats[gid] = st

    preds = {g.id: set(graph.predecessors(g.id)) for g in graph.groups}
    # more workers than cores only adds switching; the GIL-free numpy kernels
    # cannot overlap on a single core
    workers = min(threads, usable_cpus())
    if workers == 1:
        for gid in order:
            run(gid)
    else:
        done: set[int] = set()
        pending = set(preds)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            running = {}
            while pending or running:
                for gid in sorted(pending):
                    if preds[gid] <= done:
                        running[pool.submit(run, gid)] = gid
                pending -= set(running.values())
                if not running:
                    raise CycleDetected("no runnable group")
                fin, _ = wait(list(running), return_when=FIRST_COMPLETED)
                for fut in fin:
                    fut.result()
                    done.add(running.pop(fut))
    results = {qid: computed[vid] for qid, vid in logical.outputs.items()}
    return BatchResult(results, computed, [stats[g] for g in order], logical)


class Engine:
    """Database plus reusable sorted tables; compiles and runs batches."""

    def __init__(self, db: Database, threads: int = 1, partitions: int | None = None):
        self.db = db
        self.threads = threads
        self.partitions = partitions
        self.cache = SortedCache(db)

    def compile(self, batch: Sequence[AggregateQuery], roots=None, merge: bool = True
                ) -> "CompiledBatch":
        logical = optimize(batch, self.db.catalog, self.db.sizes(), roots, merge)
        plans = plan_all(logical, self.db.distinct_count)
        return CompiledBatch(self, logical, plans)

    def run(self, batch: Sequence[AggregateQuery], **kw) -> BatchResult:
        return self.compile(batch, **kw).run()


@dataclass
class CompiledBatch:
    engine: Engine
    logical: LogicalPlan
    plans: dict[int, MultiOutputPlan]

    def run(self, threads: int | None = None, partitions: int | None = None) -> BatchResult:
        e = self.engine
        return execute_batch(self.logical, e.db, threads or e.threads, self.plans,
                             partitions if partitions is not None else e.partitions, e.cache)


def run_batch(batch: Sequence[AggregateQuery], db: Database, threads: int = 1,
              roots=None, merge: bool = True, partitions: int | None = None) -> BatchResult:
    return Engine(db, threads, partitions).run(batch, roots=roots, merge=merge)


# oracle

def materialize_join(db: Database):
    """Natural join of every relation as a pandas frame (row-by-row reference)."""
    import pandas as pd

    tree = db.catalog.ensure_tree()
    nodes = sorted(tree.nodes)
    start = nodes[0]
    frame = pd.DataFrame({a: db.table(start).columns[a] for a in db.catalog.schema(start).attributes})
    seen = {start}
    stack = [start]
    while stack:
        cur = stack.pop()
        for nb in tree.neighbors(cur):
            if nb in seen:
                continue
            seen.add(nb)
            stack.append(nb)
            t = db.table(nb)
            other = pd.DataFrame({a: t.columns[a] for a in t.schema.attributes})
            on = sorted(set(frame.columns) & set(other.columns))
            if on:
                frame = frame.merge(other, on=on, how="inner")
            else:
                frame = frame.merge(other, how="cross")
    return frame


def brute_force_oracle(batch: Sequence[AggregateQuery], db: Database,
                       joined=None) -> dict[str, ResultTable]:
    """Evaluate each query by grouping the materialized join."""
    frame = materialize_join(db) if joined is None else joined
    n = len(frame)
    cols = {c: frame[c].to_numpy() for c in frame.columns}
    factor_cache: dict = {}
    group_cache: dict = {}

    def column(f):
        k = f.key()
        if k not in factor_cache:
            factor_cache[k] = f.evaluate(cols, n)
        return factor_cache[k]

    def groups(gb):
        # pandas assigns each row the index of its group in sorted key order
        if gb not in group_cache:
            g = frame.groupby(list(gb), sort=True)
            codes = g.ngroup().to_numpy()
            index = g.size().index
            if len(gb) == 1:
                keys = {gb[0]: np.asarray(index)}
            else:
                keys = {a: np.asarray(index.get_level_values(a)) for a in gb}
            group_cache[gb] = (codes, keys, len(index))
        return group_cache[gb]

    out = {}
    for q in batch:
        ell = len(q.aggregates)
        mat = np.zeros((ell, n))            # one row per aggregate
        for i, a in enumerate(q.aggregates):
            for term in a.terms:
                prod = column(term[0])
                for f in term[1:]:
                    prod = prod * column(f)
                mat[i] += prod
        if not q.group_by:
            out[q.id] = ResultTable((), {}, mat.sum(axis=1).reshape(1, ell), q.id)
            continue
        if n == 0:
            out[q.id] = ResultTable(q.group_by, {a: cols[a][:0] for a in q.group_by},
                                    np.zeros((0, ell)), q.id)
            continue
        codes, keys, k = groups(tuple(q.group_by))
        vals = np.column_stack([np.bincount(codes, weights=mat[i], minlength=k)
                                for i in range(ell)])
        out[q.id] = ResultTable(q.group_by, keys, vals, q.id)
    return out


def compare_results(a: ResultTable, b: ResultTable, rtol: float = 1e-9, atol: float = 1e-9):
    """None when equal (same keys, values within tolerance), else a message."""
    da, db_ = a.to_dict(), b.to_dict()
    if set(da) != set(db_):
        extra = sorted(set(da) ^ set(db_), key=repr)[:3]
        return f"key sets differ ({len(da)} vs {len(db_)}), e.g. {extra}"
    for k, va in da.items():
        vb = db_[k]
        for x, y in zip(va, vb):
            if abs(x - y) > atol + rtol * max(abs(x), abs(y)):
                return f"key {k}: {va} vs {vb}"
    return None
