"""Class taxonomy trees.

A taxonomy is a rooted tree whose leaves are the classes and whose inner
nodes are categories. Node ids are dense integers assigned in order of first
appearance in the edge list, and every child list keeps source order so the
row of a softmax weight matrix is bound to the same child on every run.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChildHasTwoParents,
    CycleDetected,
    EmptyInput,
    MissingFile,
    MalformedLine,
    MultipleRoots,
    NotALeaf,
    NotAParent,
    TaxonomyError,
)


@dataclass(frozen=True)
class NodeId:
    id: int
    name: str


@dataclass(frozen=True, eq=False)
class TaxonomyTree:
    names: tuple[str, ...]
    parent: tuple[int, ...]  # -1 for the root
    children: tuple[tuple[int, ...], ...]
    root: int
    leaves: tuple[int, ...]
    parents: tuple[int, ...]  # nodes with at least one child, in id order
    source_edges: tuple[tuple[str, str], ...] = field(repr=False)
    _index: dict[str, int] = field(repr=False, compare=False)
    _leaf_pos: dict[int, int] = field(repr=False, compare=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "TaxonomyTree":
        return build_from_edges(edges)

    # -- basic queries ----------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.names)

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    @property
    def num_parents(self) -> int:
        return len(self.parents)

    @property
    def nodes(self) -> list[NodeId]:
        return [NodeId(i, n) for i, n in enumerate(self.names)]

    @property
    def root_name(self) -> str:
        return self.names[self.root]

    @property
    def leaf_names(self) -> list[str]:
        return [self.names[i] for i in self.leaves]

    @property
    def leaf_index(self) -> dict[str, int]:
        """Class name -> node id, for leaves only."""
        return {self.names[i]: i for i in self.leaves}

    def node(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no node named {name!r}") from None

    def name(self, node: int) -> str:
        return self.names[node]

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def fan_out(self, node: int) -> int:
        return len(self.children[node])

    def parent_of(self, node: int) -> int | None:
        p = self.parent[node]
        return None if p < 0 else p

    def leaf_position(self, leaf: int) -> int:
        """Position of `leaf` in the leaf order (its class index)."""
        try:
            return self._leaf_pos[leaf]
        except KeyError:
            raise NotALeaf(f"node {self._label(leaf)} is not a leaf") from None

    def child_slot(self, parent: int, child: int) -> int:
        return self.children[parent].index(child)

    def depth(self) -> int:
        return max(len(self.path_from_root(leaf)) for leaf in self.leaves)

    def edges(self) -> list[tuple[str, str]]:
        """Name edges in source order; rebuilding from them gives an identical tree."""
        return list(self.source_edges)

    def _label(self, node) -> str:
        if isinstance(node, (int, np.integer)) and 0 <= node < self.num_nodes:
            return repr(self.names[node])
        return repr(node)

    def require_parent(self, node: int) -> None:
        if not (0 <= node < self.num_nodes) or not self.children[node]:
            raise NotAParent(f"node {self._label(node)} has no children")

    def resolve_leaf(self, leaf: int | str) -> int:
        """Accept a leaf id or a leaf name; return the id."""
        if isinstance(leaf, str):
            if leaf not in self._index:
                raise NotALeaf(f"no node named {leaf!r}")
            leaf = self._index[leaf]
        if not (0 <= leaf < self.num_nodes) or self.children[leaf]:
            raise NotALeaf(f"node {self._label(leaf)} is not a leaf")
        return int(leaf)

    # -- paths ------------------------------------------------------------

    def path_from_root(self, leaf: int | str) -> list[tuple[int, int]]:
        """(parent, child) pairs from the root down to `leaf`."""
        node = self.resolve_leaf(leaf)
        path = []
        while self.parent[node] >= 0:
            path.append((self.parent[node], node))
            node = self.parent[node]
        path.reverse()
        return path

    def path_names(self, leaf: int | str) -> list[tuple[str, str]]:
        return [(self.names[p], self.names[c]) for p, c in self.path_from_root(leaf)]

    def flat_view(self) -> "TaxonomyTree":
        return flat_view(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaxonomyTree):
            return NotImplemented
        return self.names == other.names and self.parent == other.parent and self.children == other.children

    def __hash__(self) -> int:
        return hash((self.names, self.parent, self.children))


def build_from_edges(edges: Iterable[tuple[str, str]]) -> TaxonomyTree:
    """Build and validate a tree from ordered (parent, child) name pairs."""
    edges = list(edges)
    if not edges:
        raise EmptyInput("edge list is empty")

    index: dict[str, int] = {}
    names: list[str] = []

    def intern(name: str) -> int:
        if name not in index:
            index[name] = len(names)
            names.append(name)
        return index[name]

    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {}
    for p_name, c_name in edges:
        p, c = intern(p_name), intern(c_name)
        if p == c:
            raise CycleDetected(c_name)
        if c in parent:
            raise ChildHasTwoParents(c_name)
        parent[c] = p
        children.setdefault(p, []).append(c)

    n = len(names)
    roots = [i for i in range(n) if i not in parent]
    if len(roots) > 1:
        raise MultipleRoots([names[r] for r in roots])
    if not roots:
        # every node has a parent, so following parents must loop
        raise CycleDetected(names[_find_cycle(parent, 0)])
    root = roots[0]

    seen = {root}
    stack = [root]
    while stack:
        node = stack.pop()
        for c in children.get(node, ()):
            seen.add(c)
            stack.append(c)
    if len(seen) != n:
        orphan = min(set(range(n)) - seen)
        raise CycleDetected(names[_find_cycle(parent, orphan)])

    kids = tuple(tuple(children.get(i, ())) for i in range(n))
    leaves = tuple(i for i in range(n) if not kids[i])
    if len(leaves) < 2:
        raise TaxonomyError(f"a taxonomy needs at least two leaf classes, got {len(leaves)}")
    return TaxonomyTree(
        names=tuple(names),
        parent=tuple(parent.get(i, -1) for i in range(n)),
        children=kids,
        root=root,
        leaves=leaves,
        parents=tuple(i for i in range(n) if kids[i]),
        source_edges=tuple((str(p), str(c)) for p, c in edges),
        _index=dict(index),
        _leaf_pos={leaf: k for k, leaf in enumerate(leaves)},
    )


def _find_cycle(parent: dict[int, int], start: int) -> int:
    seen = set()
    node = start
    while node not in seen:
        seen.add(node)
        node = parent[node]
    return node


def flat_view(tree: TaxonomyTree) -> TaxonomyTree:
    """Depth-one tree with the same root name and the same leaves, in order."""
    root = tree.root_name
    return build_from_edges((root, name) for name in tree.leaf_names)


def two_level(root: str, groups: Sequence[tuple[str, Sequence[str]]]) -> TaxonomyTree:
    """Convenience builder: root -> categories -> classes."""
    edges = []
    for cat, classes in groups:
        edges.append((root, cat))
        edges.extend((cat, c) for c in classes)
    return build_from_edges(edges)


def random_tree(rng: np.random.Generator, max_depth: int = 3, max_fanout: int = 4,
                max_nodes: int = 60) -> TaxonomyTree:
    """Random tree for property tests: root fan-out >= 2, depth <= max_depth."""
    edges = []
    counter = [0]

    def new_name() -> str:
        counter[0] += 1
        return f"n{counter[0]}"

    frontier = [("R", 0)]
    while frontier:
        name, depth = frontier.pop(0)
        if depth == 0:
            k = int(rng.integers(2, max_fanout + 1))
        elif depth >= max_depth or len(edges) >= max_nodes or rng.random() < 0.4:
            continue
        else:
            k = int(rng.integers(1, max_fanout + 1))
        for _ in range(k):
            child = new_name()
            edges.append((name, child))
            frontier.append((child, depth + 1))
    return build_from_edges(edges)


def parse_edges(lines: Iterable[str], source: str | None = None) -> list[tuple[str, str]]:
    edges = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedLine(lineno, "expected 'parent<TAB>child'", source)
        edges.append((parts[0], parts[1]))
    return edges


def load_taxonomy(path: str | Path) -> TaxonomyTree:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"taxonomy file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return build_from_edges(parse_edges(fh, str(path)))


def save_taxonomy(tree: TaxonomyTree, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p, c in tree.edges():
            fh.write(f"{p}\t{c}\n")


def bundled_taxonomy(name: str) -> TaxonomyTree:
    """Load one of the shipped taxonomies: trec, 20ng, r8, r52."""
    here = Path(__file__).parent / "taxonomies"
    return load_taxonomy(here / f"{name}.tsv")
