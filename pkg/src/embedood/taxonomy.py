"""Rooted is-a taxonomy and path-based relatedness measures.

The taxonomy is a DAG with one designated root; every node must reach it.
Relatedness between two mapped labels comes in three flavors: inverse
node-count of the shortest connecting path, depth-weighted common-ancestor
ratio (Wu-Palmer style), and negative log of the path length scaled by
twice the hierarchy depth (Leacock-Chodorow style).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

__all__ = [
    "Taxonomy",
    "TaxonomyError",
    "SemanticScores",
    "load_taxonomy",
    "parse_label_map",
    "relatedness",
    "avg_semantic_scores",
]


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class SemanticScores:
    path: float
    wup: float
    lch: float


class Taxonomy:
    def __init__(self, parents: dict[str, tuple[str, ...]], root: str,
                 label_map: dict[str, str] | None = None):
        self.parents = parents
        self.root = root
        self.label_map = dict(label_map or {})
        self._children: dict[str, list[str]] = {n: [] for n in parents}
        self._children.setdefault(root, [])
        for child, ps in parents.items():
            for p in ps:
                if p not in self._children:
                    raise TaxonomyError(f"edge references unknown node {p!r}")
                self._children[p].append(child)
        self._validate()
        self.depths = self._compute_depths()
        self.max_depth = max(self.depths.values())

    @property
    def nodes(self) -> set[str]:
        return set(self._children)

    def _validate(self):
        if self.root in self.parents and self.parents[self.root]:
            raise TaxonomyError("root must not have a parent")
        # cycle check: iterative DFS over parent edges
        state: dict[str, int] = {}
        for start in self.parents:
            if state.get(start):
                continue
            stack = [(start, iter(self.parents.get(start, ())))]
            state[start] = 1
            while stack:
                node, it = stack[-1]
                advanced = False
                for parent in it:
                    s = state.get(parent, 0)
                    if s == 1:
                        raise TaxonomyError(f"cycle through {parent!r}")
                    if s == 0:
                        state[parent] = 1
                        stack.append((parent, iter(self.parents.get(parent, ()))))
                        advanced = True
                        break
                if not advanced:
                    state[node] = 2
                    stack.pop()
        for node in self._children:
            if node != self.root and not self.parents.get(node):
                raise TaxonomyError(f"node {node!r} has no path to the root (orphan or extra root)")

    def _compute_depths(self) -> dict[str, int]:
        # shortest node-counting chain to the root; root itself has depth 1
        depths = {self.root: 1}
        frontier = [self.root]
        while frontier:
            nxt = []
            for node in frontier:
                for child in self._children[node]:
                    if child not in depths:
                        depths[child] = depths[node] + 1
                        nxt.append(child)
            frontier = nxt
        missing = self.nodes - set(depths)
        if missing:
            raise TaxonomyError(f"unreachable nodes: {sorted(missing)}")
        return depths

    @lru_cache(maxsize=None)
    def ancestor_hops(self, node: str) -> dict[str, int]:
        """Minimal upward edge count from ``node`` to each of its ancestors."""
        hops = {node: 0}
        frontier = [node]
        while frontier:
            nxt = []
            for n in frontier:
                for p in self.parents.get(n, ()):
                    if p not in hops or hops[n] + 1 < hops[p]:
                        hops[p] = hops[n] + 1
                        nxt.append(p)
            frontier = nxt
        return hops

    def resolve(self, label: str) -> str:
        node = self.label_map.get(label, label)
        if node not in self._children:
            raise TaxonomyError(f"label {label!r} does not map to a taxonomy node")
        return node


def load_taxonomy(source, label_map: dict[str, str] | None = None) -> Taxonomy:
    """Edge-list format: one ``child parent`` pair per line plus a
    ``!root <id>`` directive."""
    if hasattr(source, "read"):
        text = source.read()
    elif "\n" in source or " " in source:
        text = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()

    root = None
    parents: dict[str, list[str]] = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "!root":
            if len(parts) != 2 or root is not None:
                raise TaxonomyError(f"line {lineno}: malformed or duplicate !root directive")
            root = parts[1]
            seen.add(root)
            continue
        if len(parts) != 2:
            raise TaxonomyError(f"line {lineno}: expected 'child parent', got {line!r}")
        child, parent = parts
        parents.setdefault(child, []).append(parent)
        seen.update((child, parent))
    if root is None:
        raise TaxonomyError("no !root directive")
    if not parents:
        raise TaxonomyError("taxonomy has no edges")
    full = {n: tuple(parents.get(n, ())) for n in seen}
    return Taxonomy(full, root, label_map=label_map)


def parse_label_map(source) -> dict[str, str]:
    """Two-column ``label node_id`` lines."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TaxonomyError(f"label map line {lineno}: expected 2 columns")
        mapping[parts[0]] = parts[1]
    return mapping


def relatedness(tax: Taxonomy, a: str, b: str) -> SemanticScores:
    """Node-counting path, depth-of-common-ancestor ratio, and scaled-log
    path relatedness of two labels."""
    na, nb = tax.resolve(a), tax.resolve(b)
    hops_a = tax.ancestor_hops(na)
    hops_b = tax.ancestor_hops(nb)
    common = set(hops_a) & set(hops_b)
    if not common:
        raise TaxonomyError(f"no common ancestor for {a!r} and {b!r} (broken taxonomy)")

    # node count of the shortest connecting path via an is-a ancestor
    length = min(hops_a[c] + hops_b[c] for c in common) + 1
    # deepest common ancestor; ties resolved by node id for determinism
    lcs = min(common, key=lambda c: (-tax.depths[c], c))

    path = 1.0 / length
    wup = 2.0 * tax.depths[lcs] / (tax.depths[na] + tax.depths[nb])
    lch = -math.log(length / (2.0 * tax.max_depth))
    return SemanticScores(path=path, wup=wup, lch=lch)


def avg_semantic_scores(tax: Taxonomy, pairs: list[tuple[str, str]]) -> SemanticScores:
    """Mean relatedness over (true, predicted) label pairs."""
    if not pairs:
        raise ValueError("no pairs given; nothing to average")
    scores = [relatedness(tax, a, b) for a, b in pairs]
    n = len(scores)
    return SemanticScores(
        path=sum(s.path for s in scores) / n,
        wup=sum(s.wup for s in scores) / n,
        lch=sum(s.lch for s in scores) / n,
    )
