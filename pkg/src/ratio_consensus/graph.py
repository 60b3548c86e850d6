"""Directed communication graphs and the column-stochastic weight matrix.

Edges are ordered pairs ``(j, i)`` meaning "``j`` receives from ``i``".
Vertex labels are 1-based at every public entry point that takes labels
(:func:`from_edge_list`, edge-list files, :attr:`DirectedGraph.edges`);
array positions and :attr:`DirectedGraph.edge_array` are 0-based.
"""
from __future__ import annotations

import os
from collections import deque
from typing import Iterable

import numpy as np

from .errors import GenerationTimeout, InvalidVertex, NotStronglyConnected
from .rng import make_rng

# Stand-in for the unrecoverable 5-node example topology: a->b means b receives from a.
# 1->2, 2->3, 3->4, 4->5, 5->1, 1->3, 3->5
PAPER5_EDGES = ((2, 1), (3, 2), (4, 3), (5, 4), (1, 5), (3, 1), (5, 3))


class DirectedGraph:
    """Immutable strongly connected digraph with a self-loop at every vertex.

    ``edge_array`` rows are sorted by receiver then sender; the simulator
    accumulates incoming mass in exactly this order.
    """

    __slots__ = (
        "n",
        "edge_array",
        "in_neighbors",
        "out_neighbors",
        "in_degree",
        "out_degree",
        "_key",
    )

    def __init__(self, n: int, edges: Iterable[tuple[int, int]]):
        n = int(n)
        if n < 1:
            raise InvalidVertex(f"vertex count must be >= 1, got {n}")
        pairs = set()
        for j, i in edges:
            j, i = int(j), int(i)
            if not (0 <= j < n and 0 <= i < n):
                raise InvalidVertex(f"edge ({j}, {i}) out of range for n={n}")
            pairs.add((j, i))
        pairs.update((j, j) for j in range(n))
        ordered = sorted(pairs)
        arr = np.array(ordered, dtype=np.int64).reshape(-1, 2)
        arr.flags.writeable = False

        in_nb: list[list[int]] = [[] for _ in range(n)]
        out_nb: list[list[int]] = [[] for _ in range(n)]
        for j, i in ordered:
            in_nb[j].append(i)
            out_nb[i].append(j)

        self.n = n
        self.edge_array = arr
        self.in_neighbors = tuple(tuple(v) for v in in_nb)
        self.out_neighbors = tuple(tuple(sorted(v)) for v in out_nb)
        self.in_degree = np.array([len(v) for v in in_nb], dtype=np.int64)
        self.out_degree = np.array([len(v) for v in out_nb], dtype=np.int64)
        self.in_degree.flags.writeable = False
        self.out_degree.flags.writeable = False
        self._key = (n, tuple(ordered))
        if not _reaches_all(self.out_neighbors) or not _reaches_all(self.in_neighbors):
            raise NotStronglyConnected(f"graph on {n} vertices is not strongly connected")

    @property
    def m(self) -> int:
        return int(self.edge_array.shape[0])

    @property
    def receivers(self) -> np.ndarray:
        return self.edge_array[:, 0]

    @property
    def senders(self) -> np.ndarray:
        return self.edge_array[:, 1]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        """Edge set with 1-based labels."""
        return frozenset((j + 1, i + 1) for j, i in self._key[1])

    @property
    def self_loop_mask(self) -> np.ndarray:
        return self.edge_array[:, 0] == self.edge_array[:, 1]

    def edge_index(self, j: int, i: int) -> int:
        """Row of the 0-based edge ``(j, i)`` in :attr:`edge_array`."""
        hits = np.flatnonzero((self.edge_array[:, 0] == j) & (self.edge_array[:, 1] == i))
        if hits.size == 0:
            raise KeyError((j, i))
        return int(hits[0])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        a[self.edge_array[:, 0], self.edge_array[:, 1]] = True
        return a

    def __eq__(self, other):
        return isinstance(other, DirectedGraph) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        return f"DirectedGraph(n={self.n}, m={self.m})"


def _reaches_all(neighbors) -> bool:
    n = len(neighbors)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        v = queue.popleft()
        for w in neighbors[v]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count == n


def is_strongly_connected(g: DirectedGraph) -> bool:
    """Forward and backward reachability from vertex 0 both cover every vertex."""
    return _reaches_all(g.out_neighbors) and _reaches_all(g.in_neighbors)


def from_edge_list(n: int, edges: Iterable[tuple[int, int]]) -> DirectedGraph:
    """Build a graph from 1-based ``(receiver, sender)`` pairs; self-loops are added."""
    n = int(n)
    if n < 1:
        raise InvalidVertex(f"vertex count must be >= 1, got {n}")
    zero_based = []
    for j, i in edges:
        if not (1 <= j <= n and 1 <= i <= n):
            raise InvalidVertex(f"edge ({j}, {i}) out of range 1..{n}")
        zero_based.append((j - 1, i - 1))
    return DirectedGraph(n, zero_based)


def random_strongly_connected(
    n: int, p: float, seed, max_attempts: int = 10000
) -> DirectedGraph:
    """Rejection-sample Erdos-Renyi digraphs (each i->j, i != j, kept with probability p)
    until one is strongly connected."""
    if n < 1:
        raise InvalidVertex(f"vertex count must be >= 1, got {n}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"edge probability must be in (0, 1], got {p}")
    rng = make_rng(seed)
    off_diag = ~np.eye(n, dtype=bool)
    for _ in range(max_attempts):
        keep = (rng.random((n, n)) < p) & off_diag
        js, is_ = np.nonzero(keep)
        try:
            return DirectedGraph(n, zip(js.tolist(), is_.tolist()))
        except NotStronglyConnected:
            continue
    raise GenerationTimeout(
        f"no strongly connected digraph after {max_attempts} attempts (n={n}, p={p})"
    )


def weight_matrix(g: DirectedGraph) -> np.ndarray:
    """Dense column-stochastic P with ``P[j, i] = 1 / outdeg(i)`` on every edge."""
    P = np.zeros((g.n, g.n))
    src = g.senders
    P[g.receivers, src] = 1.0 / g.out_degree[src]
    return P


def cycle(n: int, chords: Iterable[tuple[int, int]] = ()) -> DirectedGraph:
    """Directed ring 1->2->...->n->1 plus optional extra 1-based ``(receiver, sender)`` chords."""
    ring = [((k % n) + 1, k) for k in range(1, n + 1)] if n > 1 else []
    return from_edge_list(n, list(ring) + list(chords))


def complete(n: int) -> DirectedGraph:
    return DirectedGraph(n, [(j, i) for j in range(n) for i in range(n)])


def paper5() -> DirectedGraph:
    return from_edge_list(5, PAPER5_EDGES)


def builtin_graph(name: str) -> DirectedGraph:
    """Resolve ``paper5``, ``cycle:N``, ``cycle-chord:N`` (ring plus 1->3) or ``complete:N``."""
    kind, _, arg = name.partition(":")
    if kind == "paper5" and not arg:
        return paper5()
    if kind in ("cycle", "cycle-chord", "complete") and arg.isdigit():
        n = int(arg)
        if kind == "cycle":
            return cycle(n)
        if kind == "cycle-chord":
            if n < 3:
                raise InvalidVertex("cycle-chord needs n >= 3")
            return cycle(n, chords=[(3, 1)])
        return complete(n)
    raise ValueError(f"unknown builtin graph {name!r}")


def read_edge_list(path: str | os.PathLike) -> DirectedGraph:
    """Parse ``n m`` followed by ``m`` lines ``j i`` (1-based, j receives from i)."""
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip() and not line.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: first line must be 'n m'")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise ValueError(f"{path}: header promises {m} edges, found {len(body)}")
    return from_edge_list(n, [(int(a), int(b)) for a, b in body])


def write_edge_list(g: DirectedGraph, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.m}\n")
        for j, i in g.edge_array.tolist():
            fh.write(f"{j + 1} {i + 1}\n")
