"""Pre-training (surrogate reconstruction + proxy ranking) and ranking-loss fine-tuning."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import diffmath as dm
from .encoder import EncoderModel, decode_surrogate, encode_batch, make_batch, predict_graphs, predict_performance, predict_proxy
from .errors import AllTied, InvalidHyperparameter, MissingProxyScores, ShapeMismatch, TooFewItems, TooFewLabeled
from .evalmetrics import kendall_tau
from .surrogate import batch_surrogates

LAMBDA_PRESETS = {
    "half": (0.5, 0.5),
    "third": (1 / 3, 2 / 3),
    "two-thirds": (2 / 3, 1 / 3),
}


@dataclass
class PretrainConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    margin: float = 0.1
    batch_size: int = 256
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    train_only: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise InvalidHyperparameter(f"need lambda1, lambda2 >= 0 with a positive sum, got {self.lambda1}, {self.lambda2}")
        if self.margin < 0:
            raise InvalidHyperparameter("margin must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidHyperparameter("batch_size must be >= 1 and epochs >= 0")


@dataclass
class FinetuneConfig:
    margin: float = 0.1
    train_ratio: float = 0.01
    epochs: int = 300
    patience: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    regressor_init: str = "proxy"

    def __post_init__(self):
        if self.regressor_init not in ("proxy", "keep"):
            raise InvalidHyperparameter(f"regressor_init must be 'proxy' or 'keep', got {self.regressor_init!r}")
        if self.margin < 0 or not 0 < self.train_ratio <= 1:
            raise InvalidHyperparameter(f"bad fine-tuning settings margin={self.margin} train_ratio={self.train_ratio}")


# ---------------------------------------------------------------- losses

def reconstruction_loss(s_hat, s) -> dm.DiffValue:
    """Squared L2 distance per row, averaged over rows (a single row gives the plain distance)."""
    s_hat = dm.constant(s_hat)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if s_hat.shape != s.shape:
        raise ShapeMismatch(f"reconstruction shapes differ: {s_hat.shape} vs {s.shape}")
    per_row = dm.sum(dm.square(dm.sub(s_hat, s)), axis=1)
    return dm.mean(per_row)


def ranking_pairs(targets) -> sp.csr_matrix:
    """Signed selector ``S`` with one row per pair ``targets[i] > targets[j]``: ``(S @ x)_p = x_i - x_j``."""
    t = np.asarray(targets, dtype=float).ravel()
    i, j = np.nonzero(t[:, None] > t[None, :])
    p = np.arange(i.size)
    rows = np.concatenate([p, p])
    cols = np.concatenate([i, j])
    vals = np.concatenate([np.ones(i.size), -np.ones(i.size)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(i.size, t.size))


def margin_ranking_loss(scores, targets, margin=0.1) -> dm.DiffValue:
    """Sum over pairs with ``target_i > target_j`` of ``max(0, margin - (score_i - score_j))``."""
    if not isinstance(scores, dm.DiffValue):
        scores = dm.DiffValue(np.asarray(scores, dtype=float).reshape(-1, 1))
    targets = np.asarray(targets, dtype=float).ravel()
    if scores.shape != (targets.size, 1):
        raise ShapeMismatch(f"scores {scores.shape} do not match {targets.size} targets")
    if targets.size < 2:
        raise TooFewItems("margin ranking loss needs at least two items")
    S = ranking_pairs(targets)
    if S.shape[0] == 0:
        return dm.scalar_mul(dm.sum(scores), 0.0)
    diffs = dm.const_matmul(S, scores)
    return dm.sum(dm.relu(dm.sub(margin, diffs)))


# ---------------------------------------------------------------- pre-training

def normalization_stats(s: np.ndarray):
    mu = s.mean(axis=0)
    sd = s.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def pretrain(model: EncoderModel, dataset, surrogate_params=None, cfg: PretrainConfig = PretrainConfig()):
    """Label-free pre-training; returns ``(model, trace)`` with one trace row per epoch.

    ``dataset`` is only accessed through its unlabeled view. Surrogates are
    taken from the cached records or computed from ``surrogate_params``.
    """
    view = dataset.unlabeled() if hasattr(dataset, "unlabeled") else dataset
    pool = list(view.splits["train"]) if cfg.train_only else list(range(len(view)))
    graphs = view.graphs(pool)
    proxies = None
    if cfg.lambda2 > 0:
        proxies = view.proxies(pool)
        if proxies is None:
            raise MissingProxyScores("lambda2 > 0 but some architectures have no proxy score")
    targets = None
    if cfg.lambda1 > 0:
        targets = view.surrogates(pool)
        if targets is None:
            if surrogate_params is None:
                raise InvalidHyperparameter("surrogates are not cached and no surrogate params were given")
            targets = np.asarray(batch_surrogates(graphs, surrogate_params))
        if targets.shape[1] != model.config.surrogate_dim:
            raise ShapeMismatch(f"surrogates have width {targets.shape[1]}, decoder emits {model.config.surrogate_dim}")
        mu, sd = normalization_stats(targets)
        targets = (targets - mu) / sd
        model.meta["surrogate_norm"] = {"mean": mu.tolist(), "std": sd.tolist()}
    model.meta["pretrain"] = asdict(cfg)

    params = model.group("encoder", "decoder", "proxy")
    opt = dm.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(graphs)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            z = encode_batch(model, make_batch([graphs[i] for i in idx]))
            l_rec = l_aux = None
            total = None
            if cfg.lambda1 > 0:
                l_rec = reconstruction_loss(decode_surrogate(model, z), targets[idx])
                total = dm.scalar_mul(l_rec, cfg.lambda1)
            if cfg.lambda2 > 0 and len(idx) >= 2:
                l_aux = margin_ranking_loss(predict_proxy(model, z), proxies[idx], cfg.margin)
                term = dm.scalar_mul(l_aux, cfg.lambda2)
                total = term if total is None else dm.add(total, term)
            if total is None:
                continue
            opt.zero_grad()
            dm.backward(total)
            opt.step()
            sums += [
                l_rec.item() if l_rec is not None else 0.0,
                l_aux.item() if l_aux is not None else 0.0,
                total.item(),
            ]
            batches += 1
        mean = sums / max(batches, 1)
        trace.append({"epoch": epoch, "L_rec": mean[0], "L_aux": mean[1], "L_total": mean[2]})
    return model, trace


def trace_to_csv(trace, seed=None) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "L_rec", "L_aux", "L_total"])
    for row in trace:
        w.writerow([row["epoch"], repr(row["L_rec"]), repr(row["L_aux"]), repr(row["L_total"])])
    return buf.getvalue()


# ---------------------------------------------------------------- fine-tuning

def labeled_subset(train_idx, ratio, seed) -> list:
    train_idx = list(train_idx)
    count = max(2, int(round(ratio * len(train_idx))))
    if len(train_idx) < 2:
        raise TooFewLabeled(f"need at least 2 labeled architectures, got {len(train_idx)}")
    pick = np.random.default_rng(seed).choice(len(train_idx), size=min(count, len(train_idx)), replace=False)
    return sorted(train_idx[i] for i in pick)


def _safe_tau(truth, pred) -> float:
    try:
        return kendall_tau(truth, pred)
    except AllTied:
        return -math.inf


def transfer_proxy_head(model: EncoderModel) -> bool:
    """Copy the pre-trained proxy head into the performance regressor.

    Only done when the model was pre-trained with the proxy ranking term;
    returns whether the copy happened.
    """
    pre = model.meta.get("pretrain")
    if not pre or pre.get("lambda2", 0) <= 0:
        return False
    for name, p in model.params.items():
        if name.startswith("regressor."):
            p.data = model.params["proxy." + name.split(".", 1)[1]].data.copy()
    return True


def finetune_arrays(model: EncoderModel, graphs, labels, cfg: FinetuneConfig, val_graphs=None, val_labels=None):
    """Fit encoder + regressor on ``(graphs, labels)``; early-stop on validation tau if given.

    The state before the first update competes with every epoch for the
    best validation tau.
    """
    graphs = list(graphs)
    labels = np.asarray(labels, dtype=float)
    if len(graphs) < 2:
        raise TooFewLabeled(f"need at least 2 labeled architectures, got {len(graphs)}")
    transferred = cfg.regressor_init == "proxy" and not model.meta.get("finetune") and transfer_proxy_head(model)
    opt = dm.AdamW(model.group("encoder", "regressor"), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    use_val = val_graphs is not None and len(val_graphs) >= 2
    if use_val:
        val_batch = make_batch(val_graphs)
    best_tau, best_state, best_epoch, stale = -math.inf, None, 0, 0
    history = []
    if use_val:
        pred = predict_performance(model, encode_batch(model, val_batch)).data[:, 0]
        best_tau, best_state = _safe_tau(val_labels, pred), model.get_state()
        history.append({"epoch": 0, "loss": None, "val_tau": best_tau})
    full_batch = make_batch(graphs) if len(graphs) <= cfg.batch_size else None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(graphs))
        epoch_loss = 0.0
        for lo in range(0, len(graphs), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            if full_batch is not None:
                idx = np.arange(len(graphs))
                batch = full_batch
            else:
                batch = make_batch([graphs[i] for i in idx])
            y_hat = predict_performance(model, encode_batch(model, batch))
            loss = margin_ranking_loss(y_hat, labels[idx], cfg.margin)
            opt.zero_grad()
            dm.backward(loss)
            opt.step()
            epoch_loss += loss.item()
        row = {"epoch": epoch, "loss": epoch_loss}
        if use_val:
            pred = predict_performance(model, encode_batch(model, val_batch)).data[:, 0]
            tau = _safe_tau(val_labels, pred)
            row["val_tau"] = tau
            if tau > best_tau:
                best_tau, best_state, best_epoch, stale = tau, model.get_state(), epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    history.append(row)
                    break
        history.append(row)
    if best_state is not None:
        model.set_state(best_state)
    model.meta["finetune"] = {
        **asdict(cfg),
        "best_epoch": best_epoch,
        "best_val_tau": best_tau if use_val else None,
        "regressor_from_proxy": bool(transferred),
    }
    return model, history


def finetune(model: EncoderModel, dataset, cfg: FinetuneConfig = FinetuneConfig()):
    """Fine-tune on a seeded ``train_ratio`` sample of the training split, validating on ``validation``."""
    subset = labeled_subset(dataset.splits["train"], cfg.train_ratio, cfg.seed)
    if len(subset) < 2:
        raise TooFewLabeled(f"only {len(subset)} labeled architectures selected")
    val_idx = dataset.splits.get("validation") or []
    val_graphs = dataset.graphs(val_idx) if val_idx else None
    val_labels = dataset.labels(val_idx) if val_idx else None
    model, history = finetune_arrays(
        model, dataset.graphs(subset), dataset.labels(subset), cfg, val_graphs, val_labels
    )
    model.meta["finetune"]["labeled_ids"] = dataset.ids(subset)
    return model, history


def split_predictions(model: EncoderModel, dataset, split="test"):
    """Return ``(truth, predictions)`` for a split."""
    idx = dataset.splits[split]
    return dataset.labels(idx), predict_graphs(model, dataset.graphs(idx))
