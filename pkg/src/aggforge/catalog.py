"""Schemas, attribute metadata and join trees.

A join tree is stored undirected; directions only appear once a root is
picked by the logical optimizer.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    ConfigError,
    CyclicSchema,
    CyclicTree,
    DisconnectedTree,
    RunningIntersectionViolation,
    UnknownAttribute,
)


class AttrKind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class AttributeInfo:
    name: str
    kind: AttrKind = AttrKind.CONTINUOUS
    domain_size_hint: int | None = None

    def __post_init__(self):
        if self.domain_size_hint is not None and self.domain_size_hint < 1:
            raise ValueError(f"domain_size_hint for {self.name} must be >= 1")

    @property
    def categorical(self) -> bool:
        return self.kind is AttrKind.CATEGORICAL


@dataclass(frozen=True)
class RelationSchema:
    name: str
    attributes: tuple[str, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise ValueError(f"relation {self.name} has no attributes")
        if len(set(attrs)) != len(attrs):
            raise ValueError(f"relation {self.name} repeats an attribute")

    @property
    def attrset(self) -> frozenset[str]:
        return frozenset(self.attributes)

    def __contains__(self, attr):
        return attr in self.attributes


def _edge(a: str, b: str) -> frozenset[str]:
    return frozenset((a, b))


@dataclass(frozen=True)
class JoinTree:
    nodes: frozenset[str]
    edges: frozenset[frozenset[str]]
    keys: Mapping[frozenset[str], frozenset[str]] = field(default_factory=dict, compare=False)

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> "JoinTree":
        return cls(frozenset(nodes), frozenset(_edge(a, b) for a, b in edges))

    def neighbors(self, node: str) -> list[str]:
        out = []
        for e in self.edges:
            if node in e:
                other = [x for x in e if x != node]
                out.extend(other)
        return sorted(out)

    def edge_list(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted(e)) for e in self.edges)

    def join_keys(self, a: str, b: str) -> frozenset[str]:
        return self.keys[_edge(a, b)]

    def path(self, a: str, b: str) -> list[str]:
        """Nodes on the unique path from a to b (inclusive)."""
        prev = {a: None}
        stack = [a]
        while stack:
            cur = stack.pop()
            if cur == b:
                break
            for n in self.neighbors(cur):
                if n not in prev:
                    prev[n] = cur
                    stack.append(n)
        if b not in prev:
            raise DisconnectedTree(f"no path between {a} and {b}")
        out = [b]
        while out[-1] != a:
            out.append(prev[out[-1]])
        return out[::-1]

    def subtree(self, node: str, parent: str | None) -> list[str]:
        """Nodes of the subtree hanging at `node` when entered from `parent`."""
        seen = {node}
        stack = [node]
        while stack:
            cur = stack.pop()
            for n in self.neighbors(cur):
                if n != parent and n not in seen:
                    seen.add(n)
                    stack.append(n)
        return sorted(seen)

    def depth_from(self, root: str) -> int:
        best = 0
        stack = [(root, None, 0)]
        while stack:
            cur, par, d = stack.pop()
            best = max(best, d)
            for n in self.neighbors(cur):
                if n != par:
                    stack.append((n, cur, d + 1))
        return best


class Catalog:
    """Relation schemas, attribute metadata and (optionally) a validated join tree."""

    def __init__(self, relations: Iterable[RelationSchema],
                 attributes: Iterable[AttributeInfo] = (),
                 tree: JoinTree | None = None):
        self.relations: dict[str, RelationSchema] = {}
        for r in relations:
            if r.name in self.relations:
                raise ConfigError(f"duplicate relation {r.name}")
            self.relations[r.name] = r
        infos = {a.name: a for a in attributes}
        self.attributes: dict[str, AttributeInfo] = {}
        for r in self.relations.values():
            for a in r.attributes:
                if a not in self.attributes:
                    self.attributes[a] = infos.pop(a, AttributeInfo(a))
        if infos:
            raise UnknownAttribute(sorted(infos)[0], "attribute metadata")
        self.tree = validate_join_tree(list(self.relations.values()), tree) if tree else None

    def with_tree(self, tree: JoinTree) -> "Catalog":
        return Catalog(self.relations.values(), self.attributes.values(), tree)

    def ensure_tree(self) -> JoinTree:
        if self.tree is None:
            self.tree = infer_join_tree(list(self.relations.values()))
        return self.tree

    def schema(self, name: str) -> RelationSchema:
        return self.relations[name]

    def attrs(self, rel: str) -> frozenset[str]:
        return self.relations[rel].attrset

    def is_categorical(self, attr: str) -> bool:
        return self.attributes[attr].categorical

    def check_attr(self, attr: str, where: str = "") -> str:
        if attr not in self.attributes:
            raise UnknownAttribute(attr, where)
        return attr

    def attr_rank(self) -> dict[str, int]:
        """Stable position of every attribute (first appearance order)."""
        return {a: i for i, a in enumerate(self.attributes)}

    def relations_with(self, attr: str) -> list[str]:
        return [r for r, s in self.relations.items() if attr in s.attrset]


def validate_join_tree(schemas: list[RelationSchema], tree: JoinTree) -> JoinTree:
    by_name = {s.name: s for s in schemas}
    for n in sorted(tree.nodes):
        if n not in by_name:
            raise ConfigError(f"tree node {n} names no relation")
    for e in tree.edges:
        if len(e) != 2:
            raise CyclicTree(f"self loop on {sorted(e)}")
        for n in e:
            if n not in tree.nodes:
                raise ConfigError(f"edge endpoint {n} is not a tree node")

    # union-find: an edge closing a loop means a cycle
    parent = {n: n for n in tree.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in sorted(tuple(sorted(e)) for e in tree.edges):
        ra, rb = find(a), find(b)
        if ra == rb:
            raise CyclicTree(f"edge {a}-{b} closes a cycle")
        parent[ra] = rb
    roots = {find(n) for n in tree.nodes}
    if len(roots) > 1:
        raise DisconnectedTree(f"join tree has {len(roots)} components")

    keyed = JoinTree(tree.nodes, tree.edges, {
        e: by_name[min(e)].attrset & by_name[max(e)].attrset for e in tree.edges
    })
    for a, b in itertools.combinations(sorted(tree.nodes), 2):
        shared = by_name[a].attrset & by_name[b].attrset
        if not shared:
            continue
        for k in keyed.path(a, b)[1:-1]:
            missing = shared - by_name[k].attrset
            if missing:
                raise RunningIntersectionViolation(a, b, k, missing)
    return keyed


def infer_join_tree(schemas: list[RelationSchema]) -> JoinTree:
    """Maximum-weight spanning tree over shared-attribute counts, then validated."""
    names = [s.name for s in schemas]
    cand = []
    for a, b in itertools.combinations(schemas, 2):
        w = len(a.attrset & b.attrset)
        x, y = sorted((a.name, b.name))
        cand.append((-w, x, y))
    cand.sort()
    parent = {n: n for n in names}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, x, y in cand:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry
            edges.append((x, y))
    tree = JoinTree.from_edges(names, edges)
    try:
        return validate_join_tree(schemas, tree)
    except RunningIntersectionViolation as exc:
        # a max-weight spanning tree is a join tree whenever one exists
        raise CyclicSchema(f"schema admits no join tree ({exc})") from exc


_REL = re.compile(r"^relation\s+(\w+)\s*:\s*(.*)$")
_CAT = re.compile(r"^categorical\s*:\s*(.*)$")
_EDGE = re.compile(r"^edge\s+(\w+)\s+(\w+)\s*$")
_DOM = re.compile(r"^domain\s*:\s*(.*)$")


def parse_config(text: str, source: str = "<config>") -> Catalog:
    rels, cats, edges, hints = [], set(), [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _REL.match(line):
            attrs = [a.strip() for a in m.group(2).split(",") if a.strip()]
            try:
                rels.append(RelationSchema(m.group(1), tuple(attrs)))
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from exc
        elif m := _CAT.match(line):
            cats.update(a.strip() for a in m.group(1).split(",") if a.strip())
        elif m := _EDGE.match(line):
            edges.append((m.group(1), m.group(2)))
        elif m := _DOM.match(line):
            for item in m.group(1).split(","):
                if not item.strip():
                    continue
                k, _, v = item.partition("=")
                try:
                    hints[k.strip()] = int(v)
                except ValueError as exc:
                    raise ConfigError(f"{source}:{lineno}: bad domain hint {item!r}") from exc
        else:
            raise ConfigError(f"{source}:{lineno}: cannot parse {raw.strip()!r}")
    if not rels:
        raise ConfigError(f"{source}: no relations declared")
    known = {a for r in rels for a in r.attributes}
    for a in sorted(cats | set(hints)):
        if a not in known:
            raise UnknownAttribute(a, source)
    infos = [AttributeInfo(a, AttrKind.CATEGORICAL if a in cats else AttrKind.CONTINUOUS,
                           hints.get(a))
             for a in dict.fromkeys(x for r in rels for x in r.attributes)]
    tree = None
    if edges or len(rels) == 1:
        tree = JoinTree.from_edges([r.name for r in rels], edges)
    return Catalog(rels, infos, tree)


def load_config(path) -> Catalog:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read schema file {p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


def favorita_config_path() -> Path:
    return Path(__file__).parent / "data" / "favorita.cfg"


def format_config(catalog: Catalog) -> str:
    """Config text that parse_config reads back into an equal catalog."""
    lines = []
    for r in catalog.relations.values():
        lines.append(f"relation {r.name}: {','.join(r.attributes)}")
    cats = [a for a, i in catalog.attributes.items() if i.categorical]
    if cats:
        lines.append(f"categorical: {','.join(cats)}")
    hints = [f"{a}={i.domain_size_hint}" for a, i in catalog.attributes.items()
             if i.domain_size_hint is not None]
    if hints:
        lines.append(f"domain: {','.join(hints)}")
    if catalog.tree is not None:
        for a, b in catalog.tree.edge_list():
            lines.append(f"edge {a} {b}")
    return "\n".join(lines) + "\n"
