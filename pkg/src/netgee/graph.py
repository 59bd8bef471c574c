"""Directed graphs, partitions, stochastic block model sampling and edge-probability estimates."""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from netgee._csvio import format_number, read_matrix, write_matrix

__all__ = [
    "DirectedGraph",
    "Partition",
    "SbmConfig",
    "NoWithinPairsError",
    "NoBetweenPairsError",
    "sample_sbm",
    "planted_partition",
    "block_submatrix",
    "estimate_edge_probs",
    "edge_counts",
    "read_adjacency_csv",
    "write_adjacency_csv",
    "read_edge_list_csv",
    "write_edge_list_csv",
]


class NoWithinPairsError(ValueError):
    """Every community is a singleton, so no within-community pairs exist."""


class NoBetweenPairsError(ValueError):
    """A single community covers every node, so no between-community pairs exist."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Dense weighted digraph; ``weights[i, j]`` is the weight of the edge i -> j.

    The diagonal must be zero and all weights non-negative. ``is_binary`` is
    inferred from the entries when not given.
    """

    weights: np.ndarray
    is_binary: bool | None = None

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("adjacency has non-finite entries")
        if np.any(w < 0):
            raise ValueError("adjacency weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise ValueError("adjacency diagonal must be zero (no self-loops)")
        binary = bool(np.all((w == 0) | (w == 1)))
        if self.is_binary is None:
            object.__setattr__(self, "is_binary", binary)
        elif self.is_binary and not binary:
            raise ValueError("is_binary=True but weights are not all 0/1")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def empty(cls, n: int) -> "DirectedGraph":
        return cls(np.zeros((n, n)))

    def permute(self, order: np.ndarray) -> "DirectedGraph":
        """Graph whose node ``i`` is node ``order[i]`` of this one."""
        order = np.asarray(order)
        return DirectedGraph(self.weights[np.ix_(order, order)], self.is_binary)


@dataclass(frozen=True, eq=False)
class Partition:
    """Single-membership community labels in ``1..K`` (every label used)."""

    labels: np.ndarray
    _members: tuple = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.array(self.labels, copy=True)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-d sequence")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        k = int(labels.max())
        if labels.min() < 1 or np.unique(labels).size != k:
            raise ValueError("labels must cover 1..K with no empty community")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        order = np.argsort(labels, kind="stable")
        bounds = np.cumsum(np.bincount(labels, minlength=k + 1)[1:])[:-1]
        members = tuple(np.split(order, bounds))
        for idx in members:
            idx.setflags(write=False)
        object.__setattr__(self, "_members", members)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Relabel arbitrary hashable labels to ``1..K`` by order of first appearance."""
        mapping: dict = {}
        out = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            key = lab.item() if isinstance(lab, np.generic) else lab
            out[i] = mapping.setdefault(key, len(mapping) + 1)
        return cls(out)

    @classmethod
    def single(cls, n: int) -> "Partition":
        return cls(np.ones(n, dtype=np.int64))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(1, n + 1))

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def K(self) -> int:
        return len(self._members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([idx.size for idx in self._members])

    def members(self, k: int) -> np.ndarray:
        """Ascending node indices of community ``k`` (1-based)."""
        if not 1 <= k <= self.K:
            raise IndexError(f"community index {k} outside 1..{self.K}")
        return self._members[k - 1]

    def clusters(self) -> tuple:
        return self._members

    def permute(self, order: np.ndarray) -> "Partition":
        return Partition.from_labels(self.labels[np.asarray(order)])

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["node_id", "label"])
            for i, lab in enumerate(self.labels):
                writer.writerow([i, int(lab)])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "Partition":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"node_id", "label"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected header node_id,label")
            pairs = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    pairs.append((int(row["node_id"]), int(row["label"])))
                except (TypeError, ValueError):
                    raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
        pairs.sort()
        if [p[0] for p in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: node ids must be exactly 0..n-1")
        return cls(np.array([p[1] for p in pairs]))


@dataclass(frozen=True)
class SbmConfig:
    """Balanced directed SBM: ``K`` communities of ``m`` nodes each."""

    K: int
    m: int
    p: float
    q: float
    seed: int | np.random.SeedSequence | None = None

    def __post_init__(self):
        if self.K < 1 or self.m < 1:
            raise ValueError("K and m must be positive")
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if self.q >= self.p and self.K > 1:
            warnings.warn(
                f"q={self.q} >= p={self.p}: block model is not assortative",
                stacklevel=3,
            )

    @property
    def n(self) -> int:
        return self.K * self.m


def planted_partition(K: int, m: int) -> Partition:
    """Community ``k`` holds nodes ``(k-1)*m .. k*m - 1``."""
    return Partition(np.repeat(np.arange(1, K + 1), m))


def sample_sbm(config: SbmConfig) -> DirectedGraph:
    """Draw a binary digraph from the block model.

    Every ordered pair ``(i, j)``, ``i != j``, gets an edge independently with
    probability ``p`` within a community and ``q`` across. Uniforms are drawn
    in row-major order from a PCG64 stream seeded by ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    labels = planted_partition(config.K, config.m).labels
    probs = np.where(labels[:, None] == labels[None, :], config.p, config.q)
    adj = (rng.random((config.n, config.n)) < probs).astype(float)
    np.fill_diagonal(adj, 0.0)
    return DirectedGraph(adj, is_binary=True)


def block_submatrix(graph: DirectedGraph, partition: Partition, k: int) -> np.ndarray:
    """Rows and columns of community ``k`` in ascending node order."""
    if partition.n != graph.n:
        raise ValueError(f"partition covers {partition.n} nodes, graph has {graph.n}")
    idx = partition.members(k)
    return graph.weights[np.ix_(idx, idx)]


def edge_counts(graph: DirectedGraph, partition: Partition) -> tuple[float, int, float, int]:
    """Within edges, within ordered pairs, between edges, between ordered pairs."""
    if partition.n != graph.n:
        raise ValueError(f"partition covers {partition.n} nodes, graph has {graph.n}")
    n = graph.n
    labels = partition.labels
    same = labels[:, None] == labels[None, :]
    total = float(graph.weights.sum())
    within = float(graph.weights[same].sum())
    sizes = partition.sizes
    within_pairs = int(np.sum(sizes * (sizes - 1)))
    between_pairs = n * (n - 1) - within_pairs
    return within, within_pairs, total - within, between_pairs


def estimate_edge_probs(graph: DirectedGraph, partition: Partition) -> tuple[float, float]:
    """Empirical within (p) and between (q) edge probabilities over ordered pairs."""
    if not graph.is_binary:
        raise ValueError("edge-probability estimates need a binary graph")
    within, n_within, between, n_between = edge_counts(graph, partition)
    if n_within == 0:
        raise NoWithinPairsError("no within-community ordered pairs (all communities are singletons)")
    if n_between == 0:
        raise NoBetweenPairsError("no between-community ordered pairs (single community)")
    return within / n_within, between / n_between


def write_adjacency_csv(graph: DirectedGraph, path: str | os.PathLike) -> None:
    write_matrix(path, graph.weights)


def read_adjacency_csv(path: str | os.PathLike) -> DirectedGraph:
    return DirectedGraph(read_matrix(path))


def write_edge_list_csv(graph: DirectedGraph, path: str | os.PathLike) -> None:
    """Write ``src,dst,weight`` rows (0-based ids) for every non-zero entry, row-major."""
    src, dst = np.nonzero(graph.weights)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst", "weight"])
        for i, j in zip(src, dst):
            writer.writerow([int(i), int(j), format_number(graph.weights[i, j])])


def read_edge_list_csv(path: str | os.PathLike, n: int | None = None) -> DirectedGraph:
    """Read an edge list; ``n`` defaults to one more than the largest node id."""
    path = Path(path)
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["src", "dst", "weight"]:
            raise ValueError(f"{path}: expected header src,dst,weight")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                edges.append((int(row[0]), int(row[1]), float(row[2])))
            except (IndexError, ValueError):
                raise ValueError(f"{path}:{lineno}: malformed edge row {row}") from None
    size = max((max(s, d) for s, d, _ in edges), default=-1) + 1
    if n is None:
        n = size
    elif size > n:
        raise ValueError(f"{path}: node id {size - 1} outside 0..{n - 1}")
    w = np.zeros((n, n))
    for s, d, val in edges:
        if s < 0 or d < 0:
            raise ValueError(f"{path}: negative node id")
        w[s, d] += val
    return DirectedGraph(w)
