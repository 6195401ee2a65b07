"""Class hierarchy as a DAG, its signed edge-indicator matrix, and filling.

Hierarchy file format: one edge per line, ``parent_name child_name``.
A class may have several parents.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from mlmg.errors import ConfigError, HierarchyError, ParseError
from mlmg.labels import LabelState, ObservedLabelMatrix


@dataclass(frozen=True)
class Hierarchy:
    """Directed parent -> child edges over ``num_classes`` classes."""

    num_classes: int
    edges: tuple = ()

    def __post_init__(self):
        edges = tuple((int(p), int(c)) for p, c in self.edges)
        object.__setattr__(self, "edges", edges)
        m = self.num_classes
        for p, c in edges:
            if not (0 <= p < m and 0 <= c < m):
                raise HierarchyError(f"edge ({p}, {c}) outside {m} classes")
            if p == c:
                raise HierarchyError(f"self-edge on class {p}")
        cycle = _find_cycle(m, edges)
        if cycle:
            raise HierarchyError("cycle detected: " + " -> ".join(map(str, cycle)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def parents(self):
        out = [[] for _ in range(self.num_classes)]
        for p, c in self.edges:
            out[c].append(p)
        return out

    def children(self):
        out = [[] for _ in range(self.num_classes)]
        for p, c in self.edges:
            out[p].append(c)
        return out

    def ancestors(self):
        """Transitive parent closure per class, as sorted index arrays."""
        parents = self.parents()
        memo = {}
        for start in topological_order(self):
            acc = set()
            for p in parents[start]:
                acc.add(p)
                acc |= memo[p]
            memo[start] = acc
        return [np.array(sorted(memo[i]), dtype=int) for i in range(self.num_classes)]

    def node_kinds(self):
        """Structural role per class: root, intermediate, leaf or singleton."""
        has_parent = np.zeros(self.num_classes, bool)
        has_child = np.zeros(self.num_classes, bool)
        for p, c in self.edges:
            has_child[p] = True
            has_parent[c] = True
        kinds = []
        for hp, hc in zip(has_parent, has_child):
            if not hp and not hc:
                kinds.append("singleton")
            elif hp and not hc:
                kinds.append("leaf")
            elif hc and not hp:
                kinds.append("root")
            else:
                kinds.append("intermediate")
        return kinds

    def leaf_or_singleton(self) -> np.ndarray:
        return np.array([k in ("leaf", "singleton") for k in self.node_kinds()])


def _find_cycle(m, edges):
    children = [[] for _ in range(m)]
    for p, c in edges:
        children[p].append(c)
    color = [0] * m  # 0 unvisited, 1 on stack, 2 done
    for root in range(m):
        if color[root]:
            continue
        stack = [(root, iter(children[root]))]
        path = [root]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                color[node] = 2
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                stack.append((nxt, iter(children[nxt])))
                path.append(nxt)
    return None


def topological_order(h: Hierarchy):
    """Kahn's algorithm; parents before children, ties by lower index."""
    indeg = [0] * h.num_classes
    children = h.children()
    for _, c in h.edges:
        indeg[c] += 1
    heap = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order


def load_hierarchy(path, vocab) -> Hierarchy:
    index = {name: i for i, name in enumerate(vocab)}
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise ParseError("edge line must be 'parent child'", path, lineno)
            for name in tokens:
                if name not in index:
                    raise HierarchyError(f"{path}:{lineno}: unknown class name {name!r}")
            if tokens[0] == tokens[1]:
                raise HierarchyError(f"{path}:{lineno}: self-edge on {tokens[0]!r}")
            edges.append((index[tokens[0]], index[tokens[1]]))
    try:
        return Hierarchy(len(vocab), tuple(edges))
    except HierarchyError as exc:
        names = str(exc)
        cycle = _find_cycle(len(vocab), edges)
        if cycle:
            names = "cycle detected: " + " -> ".join(vocab[i] for i in cycle)
        raise HierarchyError(f"{path}: {names}") from None


def save_hierarchy(path, h: Hierarchy, vocab) -> None:
    with open(path, "w") as fh:
        for p, c in h.edges:
            fh.write(f"{vocab[p]} {vocab[c]}\n")


def build_constraint_matrix(h: Hierarchy) -> np.ndarray:
    """``m x n_e`` matrix with +1 at each edge's parent row, -1 at its child."""
    phi = np.zeros((h.num_classes, h.n_edges))
    for j, (p, c) in enumerate(h.edges):
        phi[p, j] = 1.0
        phi[c, j] = -1.0
    return phi


def fill_ancestors(y: ObservedLabelMatrix, h: Hierarchy) -> ObservedLabelMatrix:
    """Set every ancestor of a positive label positive, in the same column."""
    if y.m != h.num_classes:
        raise ConfigError(f"label matrix has {y.m} classes, hierarchy {h.num_classes}")
    pos = y.positive()
    filled = pos.copy()
    for cls, anc in enumerate(h.ancestors()):
        if anc.size:
            filled[anc] |= pos[cls]
    states = y.states.copy()
    states[filled] = LabelState.POS
    return y.with_states(states)


def check_consistency(z_binary, h: Hierarchy) -> int:
    """Count (edge, instance) pairs where the child is on and the parent off."""
    z = np.asarray(z_binary).astype(bool)
    if not h.edges:
        return 0
    e = np.array(h.edges)
    return int(np.count_nonzero(z[e[:, 1]] & ~z[e[:, 0]]))
