"""Skeleton graph model: joints, bones, adjacency construction and normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_symmetric

ROOT = -1


def build_adjacency(edges, n: int) -> np.ndarray:
    """Binary adjacency matrix from an unordered edge set.

    Indices must lie in [0, n); self-loops are rejected (the propagation
    operator adds the identity itself).
    """
    if n < 1:
        raise ValueError(f"joint count must be positive; got {n}")
    a = np.zeros((n, n), dtype=np.float64)
    for edge in edges:
        i, j = edge
        if i == j:
            raise ValueError(f"self-loop ({i},{j}) not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i},{j}) out of range for {n} joints")
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def degree_scaling(a: np.ndarray) -> np.ndarray:
    """Entrywise 1/sqrt(d_i * d_j) for the degree matrix of A + I.

    Shared by plain and dependency-refined propagation so that disabling
    refinement reproduces plain graph convolution bit for bit.
    """
    d = a.sum(axis=1) + 1.0
    return 1.0 / np.sqrt(np.outer(d, d))


def normalize_adjacency(a) -> np.ndarray:
    """Symmetric degree normalization (A + I) scaled by 1/sqrt(d_i d_j).

    Degrees are taken from A + I, so every joint has positive degree and
    the result is well defined for any symmetric non-negative A.
    """
    a = check_symmetric(a, "adjacency")
    if a.size and a.min() < 0.0:
        raise ValueError("adjacency entries must be non-negative")
    n = a.shape[0]
    return (a + np.eye(n)) * degree_scaling(a)


@dataclass(frozen=True)
class SkeletonGraph:
    """A human skeleton as a joint graph with bone topology.

    `parents` maps each joint to its parent joint (ROOT for tree roots)
    and must describe a forest; `edges` and `adjacency` describe the same
    undirected bone set.
    """

    num_joints: int
    edges: frozenset[tuple[int, int]]
    adjacency: np.ndarray = field(repr=False)
    parents: tuple[int, ...]

    def __post_init__(self):
        if self.num_joints < 1:
            raise ValueError("num_joints must be positive")
        if len(self.parents) != self.num_joints:
            raise ValueError("parents must list one entry per joint")
        self._check_forest()
        expected = build_adjacency(self.edges, self.num_joints)
        if not np.array_equal(expected, self.adjacency):
            raise ValueError("adjacency does not match the edge set")

    def _check_forest(self):
        for j, p in enumerate(self.parents):
            if p == ROOT:
                continue
            if not (0 <= p < self.num_joints):
                raise ValueError(f"parent {p} of joint {j} out of range")
        for j in range(self.num_joints):
            seen = set()
            node = j
            while node != ROOT:
                if node in seen:
                    raise ValueError(f"parent map contains a cycle through joint {j}")
                seen.add(node)
                node = self.parents[node]

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(j for j, p in enumerate(self.parents) if p == ROOT)

    @property
    def root(self) -> int:
        return self.roots[0]


def make_graph(edges, parents) -> SkeletonGraph:
    """SkeletonGraph from an edge iterable and a parent list."""
    parents = tuple(int(p) for p in parents)
    n = len(parents)
    norm_edges = frozenset((min(i, j), max(i, j)) for i, j in edges)
    return SkeletonGraph(
        num_joints=n,
        edges=norm_edges,
        adjacency=build_adjacency(norm_edges, n),
        parents=parents,
    )


def chain_graph(n: int) -> SkeletonGraph:
    """A simple chain skeleton: joint 0 is the root, joint j hangs off j-1."""
    if n < 1:
        raise ValueError("chain graph needs at least one joint")
    edges = [(j - 1, j) for j in range(1, n)]
    parents = [ROOT] + list(range(n - 1))
    return make_graph(edges, parents)
