"""Predictor-guided evolutionary search (NPENAS-style) and a random-search control."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .archgraph import ArchGraph
from .benchdata import (
    DEFAULT_ORACLE,
    INPUT_OP,
    OUTPUT_OP,
    ArchRecord,
    OracleConfig,
    SpaceSpec,
    canonical_key,
    in_spec,
    sample_graph,
    synthetic_oracle,
)
from .encoder import EncoderModel, predict_graphs
from .errors import MutationExhausted
from .training import FinetuneConfig, finetune_arrays


@dataclass
class OracleEvaluator:
    """Ground-truth stand-in: returns the synthetic oracle's performance."""

    spec: SpaceSpec
    oracle_seed: int = 0
    config: OracleConfig = DEFAULT_ORACLE

    def __call__(self, graph: ArchGraph) -> float:
        return synthetic_oracle(graph, self.oracle_seed, self.spec.vocab, self.config)[0]


class OraclePredictor:
    """A perfect predictor: ranks candidates by their true performance."""

    def __init__(self, evaluator: OracleEvaluator):
        self.evaluator = evaluator

    def fit(self, graphs, labels):
        return self

    def predict(self, graphs):
        return np.array([self.evaluator(g) for g in graphs])


class EncoderPredictor:
    """Encoder + regressor, warm-started once and fine-tuned on the growing pool."""

    def __init__(self, model: EncoderModel, cfg: FinetuneConfig | None = None):
        self.model = model.copy()
        self.cfg = cfg or FinetuneConfig(epochs=50, patience=50)
        self.fits = 0

    def fit(self, graphs, labels):
        self.fits += 1
        cfg = FinetuneConfig(**{**self.cfg.__dict__, "seed": self.cfg.seed + self.fits})
        self.model, _ = finetune_arrays(self.model, graphs, labels, cfg)
        return self

    def predict(self, graphs):
        return predict_graphs(self.model, graphs)


@dataclass
class SearchState:
    pool: list
    budget: int
    seed: int
    reference_best: float
    round: int = 0
    trace: list = field(default_factory=list)
    seen: set = field(default_factory=set)
    rng: np.random.Generator = None

    @property
    def best(self) -> float:
        return max(r.performance for r in self.pool)

    def record(self):
        best = self.best
        self.trace.append({
            "round": self.round,
            "pool_size": len(self.pool),
            "best": best,
            "regret": self.reference_best - best,
        })

    def add(self, graph, performance):
        self.seen.add(canonical_key(graph))
        self.pool.append(ArchRecord(id=f"eval{len(self.pool):04d}", graph=graph, performance=performance))


def mutate(graph: ArchGraph, spec: SpaceSpec, rng, max_retries=100) -> ArchGraph:
    """One atomic change: relabel an intermediate op, add an edge, or remove an edge.

    Candidates are rejection-sampled until one stays inside ``spec``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    vocab = spec.vocab
    fixed = {vocab.index(INPUT_OP), vocab.index(OUTPUT_OP)}
    ops = graph.op_indices
    mids = [v for v in range(graph.num_nodes) if ops[v] not in fixed]
    n = graph.num_nodes
    edges = set(graph.edges)
    for _ in range(max_retries):
        kind = int(rng.integers(0, 3))
        if kind == 0:
            if not mids or len(spec.ops) < 2:
                continue
            v = mids[int(rng.integers(0, len(mids)))]
            choices = [vocab.index(o) for o in spec.ops if vocab.index(o) != ops[v]]
            x = graph.features.copy()
            x[v] = 0.0
            x[v, choices[int(rng.integers(0, len(choices)))]] = 1.0
            cand = ArchGraph(x, graph.edges)
        elif kind == 1:
            i, j = (int(a) for a in rng.integers(0, n, size=2))
            if i == j or (i, j) in edges:
                continue
            cand = ArchGraph(graph.features, tuple(edges | {(i, j)}))
        else:
            if not edges:
                continue
            e = sorted(edges)[int(rng.integers(0, len(edges)))]
            cand = ArchGraph(graph.features, tuple(edges - {e}))
        if in_spec(cand, spec):
            return cand
    raise MutationExhausted(f"no valid mutation found in {max_retries} attempts")


def init_search(spec, evaluator, budget=200, seed=0, initial=20, reference_best=None) -> SearchState:
    rng = np.random.default_rng(seed)
    state = SearchState(pool=[], budget=budget, seed=seed, reference_best=np.nan, rng=rng)
    while len(state.pool) < min(initial, budget):
        g = sample_graph(spec, rng)
        if canonical_key(g) in state.seen:
            continue
        state.add(g, evaluator(g))
    state.reference_best = state.best if reference_best is None else float(reference_best)
    state.record()
    return state


def npenas_round(state: SearchState, predictor, spec: SpaceSpec, evaluator,
                 mutants_per_parent=5, select=20, max_retries=100) -> SearchState:
    """Fit the predictor on the pool, mutate every pool member, evaluate the predicted top ``select``."""
    room = state.budget - len(state.pool)
    if room <= 0:
        return state
    predictor.fit([r.graph for r in state.pool], [r.performance for r in state.pool])
    candidates, keys = [], set()
    for parent in list(state.pool):
        made = 0
        for _ in range(max_retries):
            if made == mutants_per_parent:
                break
            child = mutate(parent.graph, spec, state.rng, max_retries)
            key = canonical_key(child)
            if key in state.seen or key in keys:
                continue
            keys.add(key)
            candidates.append(child)
            made += 1
    if not candidates:
        raise MutationExhausted("mutation produced no unseen candidates")
    scores = np.asarray(predictor.predict(candidates), dtype=float)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    for i in order[:min(select, room)]:
        state.add(candidates[i], evaluator(candidates[i]))
    state.round += 1
    state.record()
    return state


def run_npenas(spec, predictor, evaluator, budget=200, seed=0, initial=20, select=20,
               mutants_per_parent=5, reference_best=None) -> SearchState:
    state = init_search(spec, evaluator, budget, seed, initial, reference_best)
    while len(state.pool) < budget:
        npenas_round(state, predictor, spec, evaluator, mutants_per_parent, select)
    return state


def random_search(spec, budget=200, seed=0, evaluator=None, round_size=20, reference_best=None) -> SearchState:
    evaluator = evaluator or OracleEvaluator(spec)
    rng = np.random.default_rng(seed)
    state = SearchState(pool=[], budget=budget, seed=seed, reference_best=np.nan, rng=rng)
    while len(state.pool) < budget:
        g = sample_graph(spec, rng)
        if canonical_key(g) in state.seen:
            continue
        state.add(g, evaluator(g))
        if len(state.pool) % round_size == 0 or len(state.pool) == budget:
            if not state.trace:
                state.reference_best = state.best if reference_best is None else float(reference_best)
            state.record()
            state.round += 1
    if not state.trace:
        state.reference_best = state.best if reference_best is None else float(reference_best)
        state.record()
    return state


def trace_to_csv(state: SearchState, header: dict | None = None) -> str:
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "pool_size", "best", "regret"])
    for row in state.trace:
        w.writerow([row["round"], row["pool_size"], repr(row["best"]), repr(row["regret"])])
    return buf.getvalue()
