"""Small reverse-mode autodiff over dense float64 matrices.

Every :class:`DiffValue` gets a creation id from a global counter. Calling
:func:`backward` collects the ancestors of the loss and replays their
backward closures in decreasing id order, which is exactly the reverse of
the order the forward operations were recorded in.
"""

from __future__ import annotations

import itertools
import json
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidHyperparameter, NotScalarLoss, SchemaError, ShapeMismatch

_ids = itertools.count()

PARAMS_FORMAT = "fgp-params"
PARAMS_VERSION = 1


class DiffValue:
    __slots__ = ("data", "_grad", "requires_grad", "id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), name=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise ShapeMismatch(f"DiffValue holds matrices, got ndim={data.ndim}")
        self.data = data
        self._grad = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        self._grad = None

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise NotScalarLoss(f"item() needs a 1x1 value, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"DiffValue{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul_elem(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name=None) -> DiffValue:
    return DiffValue(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> DiffValue:
    return data if isinstance(data, DiffValue) else DiffValue(data)


def _result(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    out = DiffValue(data, requires_grad=needs, _parents=tuple(parents) if needs else ())
    if needs:
        out._backward = lambda: backward(out.grad)
    return out


def _acc(v, g):
    if v._grad is None:
        v._grad = np.array(g, dtype=np.float64)
    else:
        v._grad += g


def _unbroadcast(g, shape):
    # only row (1 x c) and column (r x 1) broadcasting is supported
    if g.shape == shape:
        return g
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    if shape == (1, 1):
        return g.sum(keepdims=True).reshape(1, 1)
    raise ShapeMismatch(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    for x, y in ((sa, sb), (sb, sa)):
        if x == (1, 1) or (x[0] == 1 and x[1] == y[1]) or (x[1] == 1 and x[0] == y[0]):
            return
    raise ShapeMismatch(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b) -> DiffValue:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> DiffValue:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _acc(b, -_unbroadcast(g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul_elem(a, b) -> DiffValue:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul_elem")

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def scalar_mul(a, s) -> DiffValue:
    """Scale ``a`` by a python float or by a 1x1 DiffValue."""
    a = constant(a)
    if isinstance(s, DiffValue):
        if s.shape != (1, 1):
            raise ShapeMismatch(f"scalar_mul needs a 1x1 scale, got {s.shape}")
        return mul_elem(a, s)
    s = float(s)

    def backward(g):
        _acc(a, s * g)

    return _result(s * a.data, (a,), backward)


def matmul(a, b) -> DiffValue:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            _acc(a, g @ b.data.T)
        if b.requires_grad:
            _acc(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def const_matmul(A, x) -> DiffValue:
    """``A @ x`` for a constant (dense or scipy sparse) matrix ``A``."""
    x = constant(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"const_matmul: {A.shape} @ {x.shape}")

    def backward(g):
        _acc(x, np.asarray(A.T @ g))

    return _result(np.asarray(A @ x.data), (x,), backward)


def concat_cols(*values) -> DiffValue:
    values = [constant(v) for v in values]
    rows = {v.shape[0] for v in values}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts differ {[v.shape for v in values]}")
    bounds = np.cumsum([0] + [v.shape[1] for v in values])

    def backward(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                _acc(v, g[:, lo:hi])

    return _result(np.concatenate([v.data for v in values], axis=1), values, backward)


def relu(a) -> DiffValue:
    a = constant(a)
    mask = a.data > 0

    def backward(g):
        _acc(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), backward)


def square(a) -> DiffValue:
    a = constant(a)

    def backward(g):
        _acc(a, 2.0 * a.data * g)

    return _result(a.data * a.data, (a,), backward)


def sum(a, axis=None) -> DiffValue:  # noqa: A001
    a = constant(a)
    if axis is None:
        data = a.data.sum().reshape(1, 1)
    else:
        data = a.data.sum(axis=axis, keepdims=True)

    def backward(g):
        _acc(a, np.broadcast_to(g, a.shape))

    return _result(data, (a,), backward)


def mean(a, axis=None) -> DiffValue:
    a = constant(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis), 1.0 / n)


def backward(loss: DiffValue) -> None:
    if loss.shape != (1, 1):
        raise NotScalarLoss(f"backward needs a 1x1 loss, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        v = stack.pop()
        if v.id in nodes or not v.requires_grad:
            continue
        nodes[v.id] = v
        stack.extend(v._parents)
    loss.grad = loss.grad + 1.0
    for ident in sorted(nodes, reverse=True):
        v = nodes[ident]
        if v._backward is not None:
            v._backward()


def adamw_step(param, grad, m, v, t, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One decoupled-weight-decay Adam update; returns ``(param, m, v)`` as new arrays."""
    if t < 1:
        raise InvalidHyperparameter(f"step count must be >= 1, got {t}")
    b1, b2 = betas
    if not (0 <= b1 < 1 and 0 <= b2 < 1) or lr < 0 or eps <= 0 or weight_decay < 0:
        raise InvalidHyperparameter(f"bad AdamW settings lr={lr} betas={betas} eps={eps} wd={weight_decay}")
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    param = param - lr * (m_hat / (np.sqrt(v_hat) + eps)) - lr * weight_decay * param
    return param, m, v


class AdamW:
    def __init__(self, params: Iterable[DiffValue], lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        for idx, p in enumerate(self.params):
            p.data, self.m[idx], self.v[idx] = adamw_step(
                p.data, p.grad, self.m[idx], self.v[idx], self.t,
                self.lr, self.weight_decay, self.betas, self.eps,
            )


def params_to_dict(params: dict, header=None) -> dict:
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "header": header or {},
        "params": {
            name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for name, p in params.items()
        },
    }


def params_from_dict(doc: dict):
    """Return ``(header, {name: ndarray})`` from a serialized parameter map."""
    if doc.get("format") != PARAMS_FORMAT:
        raise SchemaError(f"not a parameter map (format={doc.get('format')!r})")
    if doc.get("version") != PARAMS_VERSION:
        raise SchemaError(f"unsupported parameter map version {doc.get('version')!r}")
    arrays = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise SchemaError(f"parameter {name!r}: {values.size} values for shape {shape}")
        arrays[name] = values.reshape(shape)
    return doc.get("header", {}), arrays


def dumps_params(params: dict, header=None) -> str:
    return json.dumps(params_to_dict(params, header), sort_keys=False)


def sparse_rows(rows, cols, vals, shape):
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
