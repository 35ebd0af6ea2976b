"""Canonical vertex orderings for colored, bond-ordered graphs.

The labeling is a plain individualization-refinement search: refine to the
coarsest equitable partition, individualize each vertex of the first
non-singleton cell, recurse, and keep the leaf whose relabeled graph is
lexicographically smallest. Automorphisms found along the way (two leaves with
the same relabeled graph) prune equivalent subtrees.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .molgraph import ColoredGraph, distance_matrix

Partition = List[Tuple[int, ...]]


@dataclass(frozen=True)
class CanonicalOrder:
    perm: Tuple[int, ...]
    certificate: bytes
    # generators of the automorphism group found during the search, as full permutations
    automorphisms: Tuple[Tuple[int, ...], ...] = field(default=(), compare=False, repr=False)

    @property
    def rank(self) -> Tuple[int, ...]:
        """rank[v] is the canonical label of original vertex v."""
        out = [0] * len(self.perm)
        for i, v in enumerate(self.perm):
            out[v] = i
        return tuple(out)


class OrderStrategy(str, enum.Enum):
    CANONICAL_LOCALITY = "canonical-locality"
    CANONICAL_NONLOCALITY = "canonical-nonlocality"
    BFS = "bfs"
    DFS = "dfs"
    RANDOM = "random"


def _color_partition(g: ColoredGraph, keys: Optional[Sequence[Hashable]] = None) -> Partition:
    groups: Dict[Hashable, List[int]] = {}
    for v in range(g.n):
        k = (g.colors[v],) if keys is None else (g.colors[v], keys[v])
        groups.setdefault(k, []).append(v)
    return [tuple(groups[k]) for k in sorted(groups)]


def _refine(colors, adj, partition: Partition) -> Partition:
    cells = [tuple(c) for c in partition]
    while True:
        cell_of = {}
        for idx, cell in enumerate(cells):
            for v in cell:
                cell_of[v] = idx
        new_cells: Partition = []
        for cell in cells:
            if len(cell) == 1:
                new_cells.append(cell)
                continue
            groups: Dict[tuple, List[int]] = {}
            for v in cell:
                counts = Counter((cell_of[w], o) for w, o in adj[v].items())
                sig = (colors[v], tuple(sorted(counts.items())))
                groups.setdefault(sig, []).append(v)
            for sig in sorted(groups):
                new_cells.append(tuple(groups[sig]))
        if len(new_cells) == len(cells):
            return new_cells
        cells = new_cells


def refine(g: ColoredGraph, partition: Sequence[Sequence[int]]) -> Partition:
    """Coarsest equitable refinement of ``partition``.

    Cells are split in place, so every subcell keeps the position range of its
    parent; subcells are ordered by their (color, neighbor-count) signature.
    """
    flat = sorted(v for cell in partition for v in cell)
    if flat != list(range(g.n)) or any(len(c) == 0 for c in partition):
        raise ValueError("not a partition of the graph's vertices")
    return _refine(g.colors, g.neighbors(), [tuple(c) for c in partition])


def _form(g: ColoredGraph, perm: Sequence[int]) -> tuple:
    inv = [0] * g.n
    for i, v in enumerate(perm):
        inv[v] = i
    edges = sorted(
        (min(inv[u], inv[v]), max(inv[u], inv[v]), o) for (u, v), o in g.edges.items()
    )
    return tuple(g.colors[v] for v in perm), tuple(edges)


def _certificate(n: int, form: tuple) -> bytes:
    colors, edges = form
    parts = [str(n), ",".join(map(str, colors)), ",".join(f"{i}-{j}:{o}" for i, j, o in edges)]
    return "|".join(parts).encode()


class _Search:
    def __init__(self, g: ColoredGraph):
        self.g = g
        self.adj = g.neighbors()
        self.best_form = None
        self.best_perm: Optional[Tuple[int, ...]] = None
        self.best_path: List[int] = []
        self.first_form = None
        self.first_path: List[int] = []
        self.first_perm: Optional[Tuple[int, ...]] = None
        self.generators: List[Dict[int, int]] = []

    def _automorphism(self, src: Sequence[int], dst: Sequence[int]) -> None:
        gamma = {a: b for a, b in zip(src, dst) if a != b}
        if gamma:
            self.generators.append(gamma)

    def _orbit_root(self, path: Sequence[int]):
        fixed = set(path)
        parent = list(range(self.g.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for gamma in self.generators:
            if any(v in gamma for v in fixed):
                continue
            for a, b in gamma.items():
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        return find

    @staticmethod
    def _common_prefix(a: Sequence[int], b: Sequence[int]) -> int:
        k = 0
        for x, y in zip(a, b):
            if x != y:
                break
            k += 1
        return k

    def visit(self, partition: Partition, path: List[int]) -> Optional[int]:
        p = _refine(self.g.colors, self.adj, partition)
        target = next((i for i, c in enumerate(p) if len(c) > 1), None)
        if target is None:
            perm = tuple(c[0] for c in p)
            form = _form(self.g, perm)
            if self.first_form is None:
                self.first_form, self.first_path, self.first_perm = form, list(path), perm
            elif form == self.first_form:
                self._automorphism(self.first_perm, perm)
                return self._common_prefix(path, self.first_path)
            if self.best_form is None or form < self.best_form:
                self.best_form, self.best_perm, self.best_path = form, perm, list(path)
                return None
            if form == self.best_form:
                self._automorphism(self.best_perm, perm)
                return self._common_prefix(path, self.best_path)
            return None

        cell = p[target]
        explored: List[int] = []
        depth = len(path)
        for v in sorted(cell):
            if explored:
                find = self._orbit_root(path)
                root = find(v)
                if any(find(u) == root for u in explored):
                    continue
            explored.append(v)
            rest = tuple(w for w in cell if w != v)
            child = p[:target] + [(v,), rest] + p[target + 1 :]
            jump = self.visit(child, path + [v])
            if jump is not None and jump < depth:
                return jump
        return None


def canonical_order(g: ColoredGraph, vertex_keys: Optional[Sequence[Hashable]] = None) -> CanonicalOrder:
    """Canonical labeling of ``g``.

    ``vertex_keys`` are extra isomorphism-invariant vertex attributes (for
    example geometric descriptors). They split the initial color classes, so
    the resulting order is canonical for the graph with those attributes.
    """
    if g.n == 0:
        return CanonicalOrder((), _certificate(0, ((), ())))
    search = _Search(g)
    search.visit(_color_partition(g, vertex_keys), [])
    gens = []
    for gamma in search.generators:
        full = tuple(gamma.get(v, v) for v in range(g.n))
        if full not in gens:
            gens.append(full)
    return CanonicalOrder(search.best_perm, _certificate(g.n, search.best_form), tuple(gens))


def automorphism_group(generators: Sequence[Sequence[int]], n: int, limit: int = 1024) -> List[Tuple[int, ...]]:
    """Closure of ``generators`` (identity first), truncated at ``limit`` elements."""
    identity = tuple(range(n))
    group = [identity]
    seen = {identity}
    head = 0
    while head < len(group) and len(group) < limit:
        elem = group[head]
        head += 1
        for gen in generators:
            prod = tuple(gen[elem[v]] for v in range(n))
            if prod not in seen:
                seen.add(prod)
                group.append(prod)
                if len(group) >= limit:
                    break
    return group


def certificate(g: ColoredGraph) -> bytes:
    return canonical_order(g).certificate


def geometric_keys(coords: np.ndarray, decimals: int = 6) -> List[Tuple[float, ...]]:
    """Sorted distances from each atom to every other atom.

    Rounded so that float noise from rigid motions does not split atoms that
    are geometrically equivalent.
    """
    coords = np.asarray(coords, dtype=np.float64)
    dist = np.round(distance_matrix(coords), decimals) + 0.0
    return [tuple(np.sort(row)) for row in dist]


def _traverse(g: ColoredGraph, rank: Sequence[int], depth_first: bool) -> List[int]:
    adj = g.neighbors()
    by_rank = sorted(range(g.n), key=lambda v: rank[v])
    seen = [False] * g.n
    order: List[int] = []
    for root in by_rank:
        if seen[root]:
            continue
        if depth_first:
            stack = [root]
            while stack:
                u = stack.pop()
                if seen[u]:
                    continue
                seen[u] = True
                order.append(u)
                for w in sorted(adj[u], key=lambda x: rank[x], reverse=True):
                    if not seen[w]:
                        stack.append(w)
        else:
            seen[root] = True
            queue = [root]
            head = 0
            while head < len(queue):
                u = queue[head]
                head += 1
                order.append(u)
                for w in sorted(adj[u], key=lambda x: rank[x]):
                    if not seen[w]:
                        seen[w] = True
                        queue.append(w)
    return order


def _locality(g: ColoredGraph, rank: Sequence[int]) -> List[int]:
    # always extend with the lowest-ranked unvisited neighbor of the visited set
    adj = g.neighbors()
    visited = [False] * g.n
    frontier = set()
    order: List[int] = []
    remaining = sorted(range(g.n), key=lambda v: rank[v])
    while len(order) < g.n:
        if frontier:
            u = min(frontier, key=lambda v: rank[v])
            frontier.discard(u)
        else:
            u = next(v for v in remaining if not visited[v])
        visited[u] = True
        order.append(u)
        for w in adj[u]:
            if not visited[w]:
                frontier.add(w)
    return order


def _check_strategy(strategy) -> OrderStrategy:
    try:
        return OrderStrategy(strategy)
    except ValueError:
        names = ", ".join(s.value for s in OrderStrategy)
        raise ValueError(f"unknown order strategy {strategy!r} (expected one of: {names})") from None


def _order_from_rank(g: ColoredGraph, rank: Sequence[int], strategy: OrderStrategy) -> List[int]:
    if strategy is OrderStrategy.CANONICAL_NONLOCALITY:
        return sorted(range(g.n), key=lambda v: rank[v])
    if strategy is OrderStrategy.CANONICAL_LOCALITY:
        return _locality(g, rank)
    return _traverse(g, rank, depth_first=strategy is OrderStrategy.DFS)


def candidate_orders(
    g: ColoredGraph,
    coords: Optional[np.ndarray],
    strategy,
    seed: int = 0,
    limit: int = 1024,
) -> List[List[int]]:
    """Orders produced by every labeling equivalent to the canonical one.

    With coordinates, the equivalent labelings are the geometric symmetries
    that survive the distance keys (mirror images, for instance). Serializers
    pick one of these by a rule that does not depend on input atom order.
    The first entry is what :func:`order_strategy` returns.
    """
    strategy = _check_strategy(strategy)
    if strategy is OrderStrategy.RANDOM:
        return [[int(v) for v in np.random.default_rng(seed).permutation(g.n)]]
    keys = geometric_keys(coords) if coords is not None else None
    canon = canonical_order(g, keys)
    rank = canon.rank
    orders = []
    seen = set()
    for gamma in automorphism_group(canon.automorphisms, g.n, limit):
        moved = [0] * g.n
        for v in range(g.n):
            moved[gamma[v]] = rank[v]
        order = _order_from_rank(g, moved, strategy)
        if tuple(order) not in seen:
            seen.add(tuple(order))
            orders.append(order)
    return orders


def order_strategy(
    g: ColoredGraph,
    coords: Optional[np.ndarray],
    strategy,
    seed: int = 0,
) -> List[int]:
    """Atom visiting order for serialization.

    Canonical strategies refine the graph labeling with geometric keys when
    ``coords`` is given, so 2D-automorphic atoms get a geometry-determined order.
    """
    strategy = _check_strategy(strategy)
    if strategy is OrderStrategy.RANDOM:
        return [int(v) for v in np.random.default_rng(seed).permutation(g.n)]
    keys = geometric_keys(coords) if coords is not None else None
    return _order_from_rank(g, canonical_order(g, keys).rank, strategy)
