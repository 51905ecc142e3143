"""GIN-style architecture encoder with reconstruction, regression and proxy heads.

Graphs are encoded on their undirected form. A batch of graphs is stacked
into one block-diagonal adjacency so every layer is a single sparse product.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffmath as dm
from .archgraph import ArchGraph
from .errors import SchemaError, ShapeMismatch


@dataclass(frozen=True)
class EncoderConfig:
    num_ops: int
    hidden_dim: int = 64
    num_layers: int = 3
    epsilon: float = 0.0
    epsilon_learnable: bool = False
    surrogate_dim: int = 8
    decoder_dims: tuple = (64,)
    head_dims: tuple = (64,)

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1 or self.num_ops < 1:
            raise ValueError(f"invalid encoder config {self}")
        object.__setattr__(self, "decoder_dims", tuple(self.decoder_dims))
        object.__setattr__(self, "head_dims", tuple(self.head_dims))


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class EncoderModel:
    """Parameters of encoder (theta), decoder (phi), regressor (xi) and proxy head (rho).

    ``params`` is an insertion-ordered mapping from dotted names to
    :class:`~fgp.diffmath.DiffValue`; the prefix tells which group a tensor
    belongs to (``encoder.``, ``decoder.``, ``regressor.``, ``proxy.``).
    """

    GROUPS = ("encoder", "decoder", "regressor", "proxy")

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        self.meta: dict = {}
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        p = {}
        p["encoder.embed"] = _glorot(rng, config.num_ops, d)
        for layer in range(config.num_layers):
            pre = f"encoder.gin{layer}"
            p[f"{pre}.w1"] = _glorot(rng, d, d)
            p[f"{pre}.b1"] = np.zeros((1, d))
            p[f"{pre}.w2"] = _glorot(rng, d, d)
            p[f"{pre}.b2"] = np.zeros((1, d))
            if config.epsilon_learnable:
                p[f"{pre}.eps"] = np.full((1, 1), config.epsilon)
        for group, out_dim, dims in (
            ("decoder", config.surrogate_dim, config.decoder_dims),
            ("regressor", 1, config.head_dims),
            ("proxy", 1, config.head_dims),
        ):
            widths = [d, *dims, out_dim]
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                p[f"{group}.l{i}.w"] = _glorot(rng, a, b)
                p[f"{group}.l{i}.b"] = np.zeros((1, b))
        self.params = {name: dm.parameter(v, name=name) for name, v in p.items()}

    def group(self, *names) -> list:
        return [v for k, v in self.params.items() if k.split(".", 1)[0] in names]

    def get_state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_state(self, state: dict):
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: expected {self.params[k].shape}, got {v.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)
            self.params[k].zero_grad()

    def copy(self) -> "EncoderModel":
        other = EncoderModel.__new__(EncoderModel)
        other.config = self.config
        other.meta = json.loads(json.dumps(self.meta))
        other.params = {k: dm.parameter(v.data.copy(), name=k) for k, v in self.params.items()}
        return other

    def zero_grad(self):
        for v in self.params.values():
            v.zero_grad()

    def to_dict(self) -> dict:
        header = {"config": asdict(self.config), "meta": self.meta}
        return dm.params_to_dict(self.params, header)

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderModel":
        header, arrays = dm.params_from_dict(doc)
        try:
            config = EncoderConfig(**header["config"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"checkpoint header lacks a valid encoder config: {e}") from None
        model = cls(config)
        if set(arrays) != set(model.params):
            raise SchemaError(f"checkpoint parameters {sorted(set(arrays) ^ set(model.params))} do not match config")
        model.set_state(arrays)
        model.meta = header.get("meta", {})
        return model


@dataclass
class GraphBatch:
    """Block-diagonal stacking of several graphs."""

    features: np.ndarray
    adjacency: sp.csr_matrix
    pooling: sp.csr_matrix
    sizes: list = field(default_factory=list)

    @property
    def num_graphs(self):
        return self.pooling.shape[0]


def make_batch(graphs, num_ops=None) -> GraphBatch:
    graphs = list(graphs)
    if not graphs:
        raise ShapeMismatch("cannot batch zero graphs")
    if num_ops is not None and any(g.num_ops != num_ops for g in graphs):
        raise ShapeMismatch(f"graph feature width differs from vocabulary size {num_ops}")
    sizes = [g.num_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offsets[-1])
    rows, cols = [], []
    for g, off in zip(graphs, offsets[:-1]):
        e = g.symmetric_edge_array()
        if len(e):
            # row = receiving node, col = sending neighbour
            rows.append(e[:, 1] + off)
            cols.append(e[:, 0] + off)
    if rows:
        rows, cols = np.concatenate(rows), np.concatenate(cols)
    else:
        rows = cols = np.zeros(0, dtype=int)
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    prow = np.repeat(np.arange(len(graphs)), sizes)
    pooling = sp.csr_matrix(
        (np.repeat(1.0 / np.asarray(sizes, dtype=float), sizes), (prow, np.arange(n))),
        shape=(len(graphs), n),
    )
    features = np.concatenate([g.features for g in graphs], axis=0)
    return GraphBatch(features, adjacency, pooling, sizes)


def _linear(x, w, b):
    return dm.add(dm.matmul(x, w), b)


def _mlp(model, prefix, x):
    p = model.params
    n_layers = sum(1 for k in p if k.startswith(prefix) and k.endswith(".w"))
    for i in range(n_layers):
        x = _linear(x, p[f"{prefix}.l{i}.w"], p[f"{prefix}.l{i}.b"])
        if i < n_layers - 1:
            x = dm.relu(x)
    return x


def node_states(model: EncoderModel, batch: GraphBatch) -> dm.DiffValue:
    cfg = model.config
    p = model.params
    if batch.features.shape[1] != cfg.num_ops:
        raise ShapeMismatch(f"features have {batch.features.shape[1]} op columns, model expects {cfg.num_ops}")
    h = dm.matmul(dm.constant(batch.features), p["encoder.embed"])
    n = batch.features.shape[0]
    if not cfg.epsilon_learnable:
        agg_matrix = batch.adjacency + (1.0 + cfg.epsilon) * sp.identity(n, format="csr")
    for layer in range(cfg.num_layers):
        pre = f"encoder.gin{layer}"
        if cfg.epsilon_learnable:
            agg = dm.add(dm.add(h, dm.scalar_mul(h, p[f"{pre}.eps"])), dm.const_matmul(batch.adjacency, h))
        else:
            agg = dm.const_matmul(agg_matrix, h)
        hidden = dm.relu(_linear(agg, p[f"{pre}.w1"], p[f"{pre}.b1"]))
        h = _linear(hidden, p[f"{pre}.w2"], p[f"{pre}.b2"])
    return h


def encode_batch(model: EncoderModel, batch) -> dm.DiffValue:
    """Mean-pooled embeddings, one row per graph (``B x d``)."""
    if not isinstance(batch, GraphBatch):
        batch = make_batch(batch)
    return dm.const_matmul(batch.pooling, node_states(model, batch))


def encode(model: EncoderModel, graph: ArchGraph) -> dm.DiffValue:
    return encode_batch(model, [graph])


def _head_input(model, z):
    z = dm.constant(z)
    if z.shape[1] != model.config.hidden_dim:
        raise ShapeMismatch(f"embedding width {z.shape[1]} != hidden_dim {model.config.hidden_dim}")
    return z


def decode_surrogate(model: EncoderModel, z) -> dm.DiffValue:
    return _mlp(model, "decoder", _head_input(model, z))


def predict_performance(model: EncoderModel, z) -> dm.DiffValue:
    return _mlp(model, "regressor", _head_input(model, z))


def predict_proxy(model: EncoderModel, z) -> dm.DiffValue:
    return _mlp(model, "proxy", _head_input(model, z))


def predict_graphs(model: EncoderModel, graphs, chunk=512) -> np.ndarray:
    """Plain-array performance predictions for many graphs."""
    graphs = list(graphs)
    out = []
    for lo in range(0, len(graphs), chunk):
        z = encode_batch(model, graphs[lo:lo + chunk])
        out.append(predict_performance(model, z).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)
