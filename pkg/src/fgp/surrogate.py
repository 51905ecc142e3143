"""Flow surrogates: seeded random-message propagation over an architecture DAG.

A random vector enters every source node, is pushed forward level by level
(each node converting the pooled incoming messages according to its
operation), then pushed back from the last level to the first. The
surrogate is the sum of the messages that arrive back at the sources.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .archgraph import ArchGraph, OpVocabulary, TopoPartition, assign_topological_order, validate
from .errors import BatchSurrogateError, InvalidHyperparameter, NumericOverflow, ShapeMismatch

AGGREGATIONS = ("sum", "mean", "max")
OVERFLOW_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class SurrogateParams:
    P: np.ndarray
    W: np.ndarray
    r: np.ndarray
    alpha: float
    sigma: float
    k: int
    seed: int
    aggregation: str = "sum"

    def __post_init__(self):
        if self.P.shape[1] != self.k or self.W.shape != (2 * self.k, self.k) or self.r.shape != (self.k,):
            raise ShapeMismatch(
                f"inconsistent shapes P{self.P.shape} W{self.W.shape} r{self.r.shape} for k={self.k}"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidHyperparameter(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.aggregation not in AGGREGATIONS:
            raise InvalidHyperparameter(f"aggregation must be one of {AGGREGATIONS}")
        for a in (self.P, self.W, self.r):
            a.flags.writeable = False

    @property
    def num_ops(self) -> int:
        return self.P.shape[0]

    def describe(self) -> dict:
        return {
            "k": self.k,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "seed": self.seed,
            "aggregation": self.aggregation,
            "num_ops": self.num_ops,
        }


@dataclass
class MessageState:
    fp: np.ndarray
    bp: np.ndarray | None = None


def init_params(vocab, k=8, sigma=0.1, alpha=0.5, seed=0, aggregation="sum") -> SurrogateParams:
    """Draw ``P`` (row-major), then ``W`` (row-major), then ``r`` from one generator.

    ``vocab`` may be an :class:`OpVocabulary` or the vocabulary size.
    """
    if int(k) != k or k < 1:
        raise InvalidHyperparameter(f"k must be a positive integer, got {k}")
    if not sigma > 0 or not np.isfinite(sigma):
        raise InvalidHyperparameter(f"sigma must be positive, got {sigma}")
    k = int(k)
    n_ops = len(vocab) if isinstance(vocab, OpVocabulary) else int(vocab)
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, sigma, size=(n_ops, k))
    W = rng.normal(0.0, sigma, size=(2 * k, k))
    r = rng.uniform(0.0, 1.0, size=k)
    return SurrogateParams(P, W, r, float(alpha), float(sigma), k, int(seed), aggregation)


def node_embeddings(graph: ArchGraph, params: SurrogateParams) -> np.ndarray:
    if graph.num_ops != params.num_ops:
        raise ShapeMismatch(
            f"graph has {graph.num_ops} op columns but params were drawn for {params.num_ops}"
        )
    return graph.features @ params.P


def convert(pooled, h, params: SurrogateParams) -> np.ndarray:
    """``alpha * m + (1 - alpha) * ReLU([h || m] W)``."""
    a = params.alpha
    proj = np.concatenate([h, pooled]) @ params.W
    return a * pooled + (1.0 - a) * np.maximum(proj, 0.0)


def _pool(messages: list, aggregation: str, k: int) -> np.ndarray:
    if not messages:
        return np.zeros(k)
    stack = np.array(messages)
    # canonical row order makes the reduction independent of node labels
    stack = stack[np.lexsort(stack.T[::-1])]
    if aggregation == "sum":
        return stack.sum(axis=0)
    if aggregation == "mean":
        return stack.sum(axis=0) / len(messages)
    return stack.max(axis=0)


def _guard(v: np.ndarray, node: int) -> np.ndarray:
    if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > OVERFLOW_LIMIT:
        raise NumericOverflow(f"message at node {node} exceeds {OVERFLOW_LIMIT:g}")
    return v


def forward_pass(graph: ArchGraph, topo: TopoPartition, params: SurrogateParams) -> MessageState:
    H = node_embeddings(graph, params)
    fp = np.zeros((graph.num_nodes, params.k))
    for j in topo.levels[0]:
        fp[j] = params.r
    for level in topo.levels[1:]:
        for i in sorted(level):
            m = _pool([fp[j] for j in graph._in[i]], params.aggregation, params.k)
            fp[i] = _guard(convert(m, H[i], params), i)
    return MessageState(fp=fp)


def backward_pass(graph, topo, params, fp_state: MessageState) -> MessageState:
    H = node_embeddings(graph, params)
    bp = np.zeros_like(fp_state.fp)
    for j in topo.levels[-1]:
        bp[j] = fp_state.fp[j]
    for level in reversed(topo.levels[:-1]):
        for i in sorted(level):
            m = _pool([bp[j] for j in graph._out[i]], params.aggregation, params.k)
            bp[i] = _guard(convert(m, H[i], params), i)
    return MessageState(fp=fp_state.fp, bp=bp)


def compute_surrogate(graph: ArchGraph, params: SurrogateParams) -> np.ndarray:
    validate(graph)
    topo = assign_topological_order(graph)
    state = backward_pass(graph, topo, params, forward_pass(graph, topo, params))
    sources = sorted(topo.levels[0], key=lambda v: tuple(state.bp[v]))
    s = np.zeros(params.k)
    for v in sources:
        s = s + state.bp[v]
    return s


def batch_surrogates(graphs, params: SurrogateParams, jobs: int = 1) -> list[np.ndarray]:
    graphs = list(graphs)

    def one(g):
        try:
            return compute_surrogate(g, params), None
        except Exception as e:
            return None, e

    if jobs > 1 and len(graphs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, graphs))
    else:
        results = [one(g) for g in graphs]
    failures = [(i, e) for i, (_, e) in enumerate(results) if e is not None]
    if failures:
        raise BatchSurrogateError(failures)
    return [s for s, _ in results]


def surrogates_to_csv(ids, surrogates, seed=None) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    k = len(surrogates[0]) if len(surrogates) else 0
    w.writerow(["id"] + [f"s{i}" for i in range(k)])
    for ident, s in zip(ids, surrogates):
        w.writerow([ident] + [repr(float(v)) for v in s])
    return buf.getvalue()
