"""Synthetic architecture spaces, the stand-in performance/proxy oracle, and dataset I/O.

The oracle replaces real benchmark accuracies and zero-cost proxies. Its
performance is a fixed function of the flow structure (operations on the
longest input-to-output path, plus a depth/width interaction) plus seeded
per-architecture noise; the proxy adds independent noise on top.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .archgraph import (
    ArchGraph,
    OpVocabulary,
    assign_topological_order,
    reachable_from,
    validate,
)
from .errors import (
    GraphError,
    InsufficientRecords,
    LabelAccessError,
    ParseError,
    SchemaError,
    SpaceExhausted,
    UnknownOp,
)

SCHEMA = "fgp-bench/1"
INPUT_OP = "input"
OUTPUT_OP = "output"


@dataclass(frozen=True)
class SpaceSpec:
    family: str
    ops: tuple
    min_nodes: int
    max_nodes: int
    max_edges: int
    edge_prob: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not 2 <= self.min_nodes <= self.max_nodes:
            raise ValueError(f"node bounds must satisfy 2 <= min <= max, got {self.min_nodes}..{self.max_nodes}")
        if self.max_edges < self.max_nodes - 1:
            raise ValueError("max_edges too small to connect max_nodes nodes")

    @property
    def vocab(self) -> OpVocabulary:
        return OpVocabulary((INPUT_OP, *self.ops, OUTPUT_OP))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "ops": list(self.ops),
            "min_nodes": self.min_nodes,
            "max_nodes": self.max_nodes,
            "max_edges": self.max_edges,
            "edge_prob": self.edge_prob,
        }


FAMILIES = {
    "cell201-like": dict(
        ops=("nor_conv_3x3", "nor_conv_1x1", "avg_pool_3x3", "skip_connect"),
        min_nodes=8, max_nodes=8, max_edges=14,
    ),
    "cell101-like": dict(
        ops=("conv3x3-bn-relu", "conv1x1-bn-relu", "maxpool3x3"),
        min_nodes=3, max_nodes=7, max_edges=9,
    ),
}


def space_spec(family="cell201-like", **overrides) -> SpaceSpec:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    return SpaceSpec(family=family, **{**FAMILIES[family], **overrides})


@dataclass(frozen=True)
class OracleConfig:
    base: float = 0.5
    op_weights: dict = field(default_factory=lambda: {
        "nor_conv_3x3": 0.06, "nor_conv_1x1": 0.04, "avg_pool_3x3": 0.01, "skip_connect": 0.0,
        "conv3x3-bn-relu": 0.06, "conv1x1-bn-relu": 0.04, "maxpool3x3": 0.01,
    })
    interaction: float = 0.01
    noise_std: float = 0.0062
    proxy_noise_std: float = 0.03

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "op_weights": dict(sorted(self.op_weights.items())),
            "interaction": self.interaction,
            "noise_std": self.noise_std,
            "proxy_noise_std": self.proxy_noise_std,
        }


DEFAULT_ORACLE = OracleConfig()


# ---------------------------------------------------------------- structure

def in_spec(graph: ArchGraph, spec: SpaceSpec) -> bool:
    """True when ``graph`` is a valid DAG with one input, one output and every node on an in->out path."""
    try:
        validate(graph)
    except GraphError:
        return False
    n = graph.num_nodes
    if not spec.min_nodes <= n <= spec.max_nodes or len(graph.edges) > spec.max_edges:
        return False
    if graph.num_ops != len(spec.vocab):
        return False
    ops = graph.op_indices
    vocab = spec.vocab
    inputs = np.flatnonzero(ops == vocab.index(INPUT_OP))
    outputs = np.flatnonzero(ops == vocab.index(OUTPUT_OP))
    if len(inputs) != 1 or len(outputs) != 1:
        return False
    fwd = reachable_from(graph, [int(inputs[0])])
    back = reachable_from(graph, [int(outputs[0])], reverse=True)
    return len(fwd & back) == n


def sample_graph(spec: SpaceSpec, rng: np.random.Generator) -> ArchGraph:
    """Draw one graph: nodes in index order, each intermediate node gets a predecessor and a successor."""
    vocab = spec.vocab
    while True:
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        mids = [spec.ops[int(i)] for i in rng.integers(0, len(spec.ops), size=n - 2)]
        ops = [INPUT_OP, *mids, OUTPUT_OP]
        edges = set()
        for i in range(1, n - 1):
            edges.add((int(rng.integers(0, i)), i))
            edges.add((i, int(rng.integers(i + 1, n))))
        if n == 2:
            edges.add((0, 1))
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < spec.edge_prob:
                    edges.add((i, j))
        if len(edges) <= spec.max_edges:
            return ArchGraph(vocab.one_hot(ops), tuple(edges))


def canonical_form(graph: ArchGraph):
    """Smallest ``(op sequence, sorted edge list)`` over level-respecting relabelings."""
    topo = assign_topological_order(graph)
    ops = graph.op_indices
    groups = []
    for level in topo.levels:
        by_op = {}
        for v in sorted(level):
            by_op.setdefault(int(ops[v]), []).append(v)
        groups.extend(by_op[o] for o in sorted(by_op))
    op_seq = tuple(int(ops[g[0]]) for g in groups for _ in g)
    best = None
    for choice in itertools.product(*(itertools.permutations(g) for g in groups)):
        order = [v for grp in choice for v in grp]
        label = {v: i for i, v in enumerate(order)}
        edges = tuple(sorted((label[i], label[j]) for i, j in graph.edges))
        if best is None or edges < best:
            best = edges
    return op_seq, best


def canonical_graph(graph: ArchGraph) -> ArchGraph:
    op_seq, edges = canonical_form(graph)
    x = np.zeros((len(op_seq), graph.num_ops))
    x[np.arange(len(op_seq)), op_seq] = 1.0
    return ArchGraph(x, edges)


def canonical_key(graph: ArchGraph) -> str:
    op_seq, edges = canonical_form(graph)
    return json.dumps([list(op_seq), [list(e) for e in edges]], separators=(",", ":"))


# ---------------------------------------------------------------- oracle

def _longest_path(graph: ArchGraph, weights: np.ndarray):
    """Node count and op-weight sum of the longest source-to-sink path (heaviest among ties)."""
    topo = assign_topological_order(graph)
    best = {}
    for level in topo.levels:
        for v in sorted(level):
            preds = [best[u] for u in graph._in[v]]
            length, weight = max(preds) if preds else (0, 0.0)
            best[v] = (length + 1, weight + weights[v])
    return max(best.values()), topo


def noiseless_performance(graph: ArchGraph, vocab: OpVocabulary, config: OracleConfig = DEFAULT_ORACLE) -> float:
    g = canonical_graph(graph)
    w = np.array([config.op_weights.get(op, 0.0) for op in vocab.ops])[g.op_indices]
    (depth, path_weight), topo = _longest_path(g, w)
    width = max(len(level) for level in topo.levels)
    return config.base + path_weight + config.interaction * (width - 1) * (depth - 2)


def _noise_rng(graph: ArchGraph, oracle_seed: int) -> np.random.Generator:
    digest = hashlib.sha256(canonical_key(graph).encode()).digest()
    return np.random.default_rng([int(oracle_seed), int.from_bytes(digest[:8], "little")])


def synthetic_oracle(graph, oracle_seed=0, vocab=None, config: OracleConfig = DEFAULT_ORACLE):
    """Return ``(performance, proxy)`` for one graph; deterministic in its canonical form and the seed."""
    if vocab is None:
        raise ValueError("synthetic_oracle needs the operation vocabulary to weight operations")
    perf = noiseless_performance(graph, vocab, config)
    rng = _noise_rng(graph, oracle_seed)
    eps_perf, eps_proxy = rng.standard_normal(2)
    perf = perf + config.noise_std * eps_perf
    return float(perf), float(perf + config.proxy_noise_std * eps_proxy)


# ---------------------------------------------------------------- dataset

@dataclass
class ArchRecord:
    id: str
    graph: ArchGraph
    performance: float | None = None
    proxy: float | None = None
    surrogate: np.ndarray | None = None


class BenchDataset:
    """Architectures with optional labels, proxies and cached surrogates.

    Performance labels are only handed out through :meth:`labels`, which
    counts every read in ``label_reads``.
    """

    def __init__(self, vocab: OpVocabulary, records=(), splits=None, provenance=None, k=None):
        self.vocab = vocab
        self.records = list(records)
        self.splits = {name: list(idx) for name, idx in (splits or {}).items()}
        self.provenance = dict(provenance or {})
        self.k = k
        self.label_reads = 0
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise SchemaError("record ids must be unique within a dataset")

    def __len__(self):
        return len(self.records)

    def _idx(self, idx):
        if idx is None:
            return range(len(self.records))
        if isinstance(idx, str):
            return self.splits[idx]
        return idx

    def ids(self, idx=None):
        return [self.records[i].id for i in self._idx(idx)]

    def graphs(self, idx=None):
        return [self.records[i].graph for i in self._idx(idx)]

    def proxies(self, idx=None):
        vals = [self.records[i].proxy for i in self._idx(idx)]
        return None if any(v is None for v in vals) else np.asarray(vals, dtype=float)

    def surrogates(self, idx=None):
        vals = [self.records[i].surrogate for i in self._idx(idx)]
        return None if any(v is None for v in vals) else np.asarray(vals, dtype=float)

    def labels(self, idx=None):
        idx = list(self._idx(idx))
        self.label_reads += len(idx)
        vals = [self.records[i].performance for i in idx]
        if any(v is None for v in vals):
            raise LabelAccessError("some requested records carry no performance label")
        return np.asarray(vals, dtype=float)

    def unlabeled(self) -> "UnlabeledView":
        return UnlabeledView(self)

    def structurally_equal(self, other: "BenchDataset") -> bool:
        if self.vocab != other.vocab or self.k != other.k or len(self) != len(other):
            return False
        if self.splits != other.splits or self.provenance != other.provenance:
            return False
        for a, b in zip(self.records, other.records):
            if (a.id, a.graph, a.performance, a.proxy) != (b.id, b.graph, b.performance, b.proxy):
                return False
            if (a.surrogate is None) != (b.surrogate is None):
                return False
            if a.surrogate is not None and not np.array_equal(a.surrogate, b.surrogate):
                return False
        return True


class UnlabeledView:
    """Read-only dataset facade for label-free stages; touching labels raises."""

    def __init__(self, dataset: BenchDataset):
        self._ds = dataset
        self.vocab = dataset.vocab
        self.splits = dataset.splits

    def __len__(self):
        return len(self._ds)

    def graphs(self, idx=None):
        return self._ds.graphs(idx)

    def proxies(self, idx=None):
        return self._ds.proxies(idx)

    def surrogates(self, idx=None):
        return self._ds.surrogates(idx)

    def ids(self, idx=None):
        return self._ds.ids(idx)

    def labels(self, idx=None):
        raise LabelAccessError("performance labels are not available during pre-training")


def generate_space(spec: SpaceSpec, count: int, seed: int = 0, max_attempts=None) -> BenchDataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 50 * count + 1000
    seen = set()
    records = []
    attempts = 0
    while len(records) < count:
        if attempts >= max_attempts:
            raise SpaceExhausted(f"found only {len(records)} unique graphs after {attempts} draws")
        attempts += 1
        g = sample_graph(spec, rng)
        key = canonical_key(g)
        if key in seen:
            continue
        seen.add(key)
        records.append(ArchRecord(id=f"arch{len(records):05d}", graph=g))
    return BenchDataset(
        spec.vocab, records,
        provenance={"generator": "generate_space", "seed": int(seed), "space": spec.to_dict()},
    )


def label_dataset(dataset: BenchDataset, oracle_seed=0, config: OracleConfig = DEFAULT_ORACLE) -> BenchDataset:
    for rec in dataset.records:
        rec.performance, rec.proxy = synthetic_oracle(rec.graph, oracle_seed, dataset.vocab, config)
    dataset.provenance["oracle"] = {"seed": int(oracle_seed), **config.to_dict()}
    return dataset


def make_splits(dataset: BenchDataset, train_frac=0.5, val_count=40, seed=0) -> BenchDataset:
    n = len(dataset)
    if not 0 < train_frac < 1:
        raise InsufficientRecords(f"train_frac must lie in (0, 1), got {train_frac}")
    n_train = int(round(train_frac * n))
    n_test = n - n_train
    if n_train < 1 or val_count >= n_test:
        raise InsufficientRecords(
            f"{n} records give {n_train} train / {n_test} test; need more than {val_count} test records"
        )
    order = np.random.default_rng(seed).permutation(n)
    train = sorted(int(i) for i in order[:n_train])
    rest = order[n_train:]
    val = sorted(int(i) for i in rest[:val_count])
    test = sorted(int(i) for i in rest[val_count:])
    dataset.splits = {"train": train, "test": test, "validation": val}
    dataset.provenance["splits"] = {"train_frac": train_frac, "val_count": val_count, "seed": int(seed)}
    return dataset


# ---------------------------------------------------------------- JSONL

def _record_line(rec: ArchRecord, vocab: OpVocabulary) -> str:
    return json.dumps({
        "id": rec.id,
        "nodes": rec.graph.op_names(vocab),
        "edges": [list(e) for e in rec.graph.edges],
        "performance": rec.performance,
        "proxy": rec.proxy,
        "surrogate": None if rec.surrogate is None else [float(v) for v in rec.surrogate],
    })


def dumps_jsonl(dataset: BenchDataset) -> str:
    header = {
        "schema": SCHEMA,
        "vocab": list(dataset.vocab.ops),
        "k": dataset.k,
        "splits": {name: dataset.ids(idx) for name, idx in dataset.splits.items()} or None,
        "provenance": dataset.provenance,
    }
    lines = [json.dumps(header)] + [_record_line(r, dataset.vocab) for r in dataset.records]
    return "\n".join(lines) + "\n"


def save_jsonl(dataset: BenchDataset, path) -> None:
    Path(path).write_text(dumps_jsonl(dataset))


def _number_or_none(doc, key, lineno):
    v = doc.get(key)
    if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
        raise SchemaError(f"line {lineno}: field {key!r} must be a number or null")
    return None if v is None else float(v)


def loads_jsonl(text: str) -> BenchDataset:
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise ParseError("missing header line", line=1)

    def parse(i, ln):
        try:
            doc = json.loads(ln)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=i) from None
        if not isinstance(doc, dict):
            raise ParseError("expected a JSON object", line=i)
        return doc

    hline, htext = lines[0]
    header = parse(hline, htext)
    if "vocab" not in header or not isinstance(header["vocab"], list):
        raise SchemaError(f"line {hline}: header needs a 'vocab' list")
    schema = header.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise SchemaError(f"unsupported schema {schema!r}")
    vocab = OpVocabulary(header["vocab"])
    k = header.get("k")
    records = []
    for i, ln in lines[1:]:
        doc = parse(i, ln)
        for key in ("id", "nodes", "edges"):
            if key not in doc:
                raise SchemaError(f"line {i}: missing field {key!r}")
        try:
            x = vocab.one_hot(doc["nodes"])
        except UnknownOp as e:
            raise UnknownOp(f"line {i}: {e}") from None
        try:
            edges = tuple((int(a), int(b)) for a, b in doc["edges"])
        except (TypeError, ValueError):
            raise SchemaError(f"line {i}: 'edges' must be a list of [i, j] pairs") from None
        graph = ArchGraph(x, edges)
        try:
            validate(graph)
        except GraphError as e:
            raise SchemaError(f"line {i}: {type(e).__name__}: {e}") from None
        sur = doc.get("surrogate")
        if sur is not None:
            sur = np.asarray(sur, dtype=float)
            if k is not None and sur.shape != (k,):
                raise SchemaError(f"line {i}: surrogate length {sur.size} != k={k}")
        records.append(ArchRecord(
            id=str(doc["id"]), graph=graph,
            performance=_number_or_none(doc, "performance", i),
            proxy=_number_or_none(doc, "proxy", i),
            surrogate=sur,
        ))
    by_id = {r.id: n for n, r in enumerate(records)}
    splits = {}
    for name, ids in (header.get("splits") or {}).items():
        try:
            splits[name] = [by_id[x] for x in ids]
        except KeyError as e:
            raise SchemaError(f"split {name!r} references unknown id {e}") from None
    return BenchDataset(vocab, records, splits, header.get("provenance") or {}, k)


def load_jsonl(path) -> BenchDataset:
    return loads_jsonl(Path(path).read_text())


def with_surrogates(dataset: BenchDataset, surrogates, params_desc: dict) -> BenchDataset:
    records = [replace(r, surrogate=np.asarray(s, dtype=float)) for r, s in zip(dataset.records, surrogates)]
    out = BenchDataset(dataset.vocab, records, dataset.splits, dataset.provenance, params_desc["k"])
    out.provenance = {**dataset.provenance, "surrogate": params_desc}
    return out
