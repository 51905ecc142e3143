"""Neural architectures as directed acyclic operation graphs.

Nodes are dense integer indices ``0..n-1``; each node carries exactly one
operation from an :class:`OpVocabulary`, stored as a one-hot feature row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BadFeatureRow, CyclicGraph, DanglingEdgeIndex, UnknownOp


@dataclass(frozen=True)
class OpVocabulary:
    ops: tuple[str, ...]

    def __init__(self, ops: Iterable[str]):
        ops = tuple(ops)
        if not ops:
            raise ValueError("operation vocabulary must be non-empty")
        if len(set(ops)) != len(ops):
            raise ValueError(f"duplicate operation names in {ops!r}")
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "_index", {op: i for i, op in enumerate(ops)})

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def index(self, op: str) -> int:
        try:
            return self._index[op]
        except KeyError:
            raise UnknownOp(f"operation {op!r} is not in vocabulary {list(self.ops)}") from None

    def one_hot(self, ops: Sequence[str]) -> np.ndarray:
        x = np.zeros((len(ops), len(self.ops)))
        for row, op in enumerate(ops):
            x[row, self.index(op)] = 1.0
        return x


@dataclass(frozen=True, eq=False)
class ArchGraph:
    """Architecture graph ``G = (X, E)``.

    ``features`` is the one-hot matrix ``X`` (``num_nodes x |O|``) and
    ``edges`` a sorted tuple of ``(i, j)`` pairs, each a directed edge
    ``i -> j``. ``bidirectional`` marks graphs produced by :func:`undirect`,
    which are exempt from the acyclicity invariant.
    """

    features: np.ndarray
    edges: tuple[tuple[int, int], ...]
    bidirectional: bool = False
    _in: tuple[frozenset, ...] = field(init=False, repr=False, compare=False)
    _out: tuple[frozenset, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.features, dtype=float, copy=True)
        if x.ndim != 2:
            raise BadFeatureRow(f"feature matrix must be 2-D, got shape {x.shape}")
        x.flags.writeable = False
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "edges", edges)
        n = x.shape[0]
        ins = [set() for _ in range(n)]
        outs = [set() for _ in range(n)]
        for i, j in edges:
            if 0 <= i < n and 0 <= j < n:
                outs[i].add(j)
                ins[j].add(i)
        object.__setattr__(self, "_in", tuple(frozenset(s) for s in ins))
        object.__setattr__(self, "_out", tuple(frozenset(s) for s in outs))

    @classmethod
    def from_ops(cls, vocab: OpVocabulary, ops: Sequence[str], edges, validate_graph=True):
        g = cls(vocab.one_hot(ops), tuple(map(tuple, edges)))
        if validate_graph:
            validate(g)
        return g

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_ops(self) -> int:
        return self.features.shape[1]

    @property
    def op_indices(self) -> np.ndarray:
        return np.argmax(self.features, axis=1)

    def symmetric_edge_array(self) -> np.ndarray:
        """``(m, 2)`` array of the edges plus their reverses, cached on first use."""
        cached = self.__dict__.get("_sym")
        if cached is None:
            pairs = set(self.edges) | {(j, i) for i, j in self.edges}
            cached = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
            cached.flags.writeable = False
            object.__setattr__(self, "_sym", cached)
        return cached

    def op_names(self, vocab: OpVocabulary) -> list[str]:
        return [vocab.ops[i] for i in self.op_indices]

    def relabel(self, perm: Sequence[int]) -> "ArchGraph":
        """Return the graph with old node ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm)
        x = np.empty_like(self.features)
        x[perm] = self.features
        edges = tuple((int(perm[i]), int(perm[j])) for i, j in self.edges)
        return ArchGraph(x, edges, self.bidirectional)

    def __eq__(self, other):
        if not isinstance(other, ArchGraph):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and self.edges == other.edges
            and self.bidirectional == other.bidirectional
        )

    def __hash__(self):
        return hash((self.features.tobytes(), self.features.shape, self.edges, self.bidirectional))


@dataclass(frozen=True)
class TopoPartition:
    levels: tuple[frozenset, ...]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level_of(self) -> dict[int, int]:
        """Map node index to its 1-based order."""
        return {v: t for t, level in enumerate(self.levels, start=1) for v in level}


def _check_node(graph: ArchGraph, i: int) -> None:
    if not 0 <= i < graph.num_nodes:
        raise DanglingEdgeIndex(f"node index {i} out of range for {graph.num_nodes} nodes")


def validate(graph: ArchGraph) -> None:
    """Raise on the first violated invariant; return None when the graph is valid."""
    x = graph.features
    for row in range(x.shape[0]):
        r = x[row]
        if not (np.count_nonzero(r == 1.0) == 1 and np.count_nonzero(r) == 1):
            raise BadFeatureRow(f"node {row} feature row is not one-hot: {r.tolist()}")
    n = graph.num_nodes
    for i, j in graph.edges:
        if not (0 <= i < n and 0 <= j < n):
            raise DanglingEdgeIndex(f"edge ({i}, {j}) references a node outside 0..{n - 1}")
        if i == j:
            raise CyclicGraph(f"self-loop on node {i}")
    if not graph.bidirectional:
        assign_topological_order(graph)


def assign_topological_order(graph: ArchGraph) -> TopoPartition:
    """Partition nodes by iteratively peeling off in-degree-0 nodes."""
    n = graph.num_nodes
    indeg = [len(graph._in[v]) for v in range(n)]
    frontier = sorted(v for v in range(n) if indeg[v] == 0)
    levels = []
    seen = 0
    while frontier:
        levels.append(frozenset(frontier))
        seen += len(frontier)
        nxt = []
        for v in frontier:
            for w in graph._out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    nxt.append(w)
        frontier = sorted(nxt)
    if seen != n:
        stuck = min(v for v in range(n) if indeg[v] > 0)
        raise CyclicGraph(f"graph has a cycle through node {stuck}")
    return TopoPartition(tuple(levels))


def in_neighbors(graph: ArchGraph, i: int) -> frozenset:
    _check_node(graph, i)
    return graph._in[i]


def out_neighbors(graph: ArchGraph, i: int) -> frozenset:
    _check_node(graph, i)
    return graph._out[i]


def undirect(graph: ArchGraph) -> ArchGraph:
    edges = set(graph.edges) | {(j, i) for i, j in graph.edges}
    return ArchGraph(graph.features, tuple(edges), bidirectional=True)


def reachable_from(graph: ArchGraph, sources: Iterable[int], reverse=False) -> set[int]:
    adj = graph._in if reverse else graph._out
    seen = set(sources)
    stack = list(seen)
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen
