"""Single-membership community detection.

Directed inputs are symmetrized (``A + A.T``) first; both search algorithms
operate on the resulting undirected weighted graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from netgee.graph import DirectedGraph, Partition

__all__ = [
    "Oracle",
    "LabelPropagation",
    "GreedyModularity",
    "DetectionAlgorithm",
    "detect",
    "modularity",
    "partition_agreement",
]


@dataclass(frozen=True, eq=False)
class Oracle:
    """Return known labels verbatim (after canonical relabeling)."""

    labels: np.ndarray


@dataclass(frozen=True)
class LabelPropagation:
    max_sweeps: int = 100
    seed: int | None = 0


@dataclass(frozen=True)
class GreedyModularity:
    resolution: float = 1.0
    seed: int | None = 0


DetectionAlgorithm = Union[Oracle, LabelPropagation, GreedyModularity]


def detect(graph: DirectedGraph, algo: DetectionAlgorithm) -> Partition:
    if graph.n == 0:
        raise ValueError("cannot detect communities on an empty graph")
    if isinstance(algo, Oracle):
        labels = np.asarray(algo.labels)
        if labels.shape != (graph.n,):
            raise ValueError(f"oracle has {labels.size} labels for {graph.n} nodes")
        return Partition.from_labels(labels)
    sym = graph.weights + graph.weights.T
    if isinstance(algo, LabelPropagation):
        labels = _label_propagation(sym, algo.max_sweeps, algo.seed)
    elif isinstance(algo, GreedyModularity):
        labels = _greedy_modularity(sym, algo.resolution, algo.seed)
    else:
        raise TypeError(f"unknown detection algorithm {algo!r}")
    return Partition.from_labels(labels)


def _label_propagation(w: np.ndarray, max_sweeps: int, seed) -> np.ndarray:
    # Asynchronous updates; ties go to the lowest label.
    n = w.shape[0]
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    has_nbrs = w.sum(axis=1) > 0
    for _ in range(max_sweeps):
        changed = False
        for i in rng.permutation(n):
            if not has_nbrs[i]:
                continue
            scores = np.bincount(labels, weights=w[i], minlength=n)
            best = int(np.flatnonzero(scores == scores.max())[0])
            if best != labels[i]:
                labels[i] = best
                changed = True
        if not changed:
            break
    return labels


def _greedy_modularity(w: np.ndarray, resolution: float, seed) -> np.ndarray:
    """Clauset-Newman-Moore agglomeration on a dense community-pair matrix.

    Merges the pair with the largest modularity gain until no merge of
    connected communities improves modularity. The seed permutes the node
    order, which only matters for exact ties.
    """
    n = w.shape[0]
    total = w.sum()
    if total <= 0 or n == 1:
        return np.arange(n)
    perm = np.random.default_rng(seed).permutation(n) if seed is not None else np.arange(n)
    e = w[np.ix_(perm, perm)] / total
    a = e.sum(axis=1)
    owner = np.arange(n)
    active = np.ones(n, dtype=bool)
    gain = 2.0 * (e - resolution * np.outer(a, a))
    gain[e <= 0] = -np.inf
    np.fill_diagonal(gain, -np.inf)
    for _ in range(n - 1):
        flat = int(np.argmax(gain))
        i, j = divmod(flat, n)
        if not gain[i, j] > 0:
            break
        if j < i:
            i, j = j, i
        # fold community j into i
        e[i, :] += e[j, :]
        e[:, i] += e[:, j]
        a[i] += a[j]
        owner[owner == j] = i
        active[j] = False
        e[j, :] = 0.0
        e[:, j] = 0.0
        row = 2.0 * (e[i] - resolution * a[i] * a)
        row[(e[i] <= 0) | ~active] = -np.inf
        row[i] = -np.inf
        gain[i, :] = row
        gain[:, i] = row
        gain[j, :] = -np.inf
        gain[:, j] = -np.inf
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = owner
    return labels


def modularity(graph: DirectedGraph, partition: Partition, resolution: float = 1.0) -> float:
    """Newman modularity of the symmetrized graph."""
    w = graph.weights + graph.weights.T
    total = w.sum()
    if total == 0:
        return 0.0
    q = 0.0
    deg = w.sum(axis=1)
    for idx in partition.clusters():
        q += w[np.ix_(idx, idx)].sum() / total - resolution * (deg[idx].sum() / total) ** 2
    return float(q)


def _comb2(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * (x - 1) / 2.0))


def partition_agreement(a: Partition, b: Partition) -> float:
    """Adjusted Rand index; two identical partitions score 1.0 even when trivial."""
    if a.n != b.n:
        raise ValueError(f"partitions have different sizes ({a.n} vs {b.n})")
    table = np.zeros((a.K, b.K))
    np.add.at(table, (a.labels - 1, b.labels - 1), 1)
    index = _comb2(table)
    sum_a = _comb2(table.sum(axis=1))
    sum_b = _comb2(table.sum(axis=0))
    total = a.n * (a.n - 1) / 2.0
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # only reachable when both are the same trivial partition
        return 1.0
    return float((index - expected) / (max_index - expected))
