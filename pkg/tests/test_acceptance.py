"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The learning experiments (criteria 6 to 8) run at reduced pre-training
length (``PRETRAIN_EPOCHS``) so the whole file finishes in a few minutes
on one core; all other settings are the library defaults.
"""

import time

import numpy as np
import pytest

from fgp import cli
from fgp import diffmath as dm
from fgp.archgraph import assign_topological_order
from fgp.benchdata import generate_space, label_dataset, make_splits, space_spec, with_surrogates
from fgp.encoder import EncoderConfig, EncoderModel, decode_surrogate, encode_batch, predict_performance, predict_proxy
from fgp.evalmetrics import kendall_tau, precision_at_percent
from fgp.nassearch import EncoderPredictor, OracleEvaluator, random_search, run_npenas
from fgp.surrogate import batch_surrogates, compute_surrogate, init_params
from fgp.training import (
    FinetuneConfig,
    PretrainConfig,
    finetune,
    margin_ranking_loss,
    pretrain,
    reconstruction_loss,
    split_predictions,
)

from conftest import VOCAB, all_small_dags, diamond, random_dag
from gradcheck import max_rel_error
from metric_oracles import precision_by_sets, tau_b_all_pairs
from surrogate_oracle import round_trip_factor

SEEDS = range(5)
PRETRAIN_EPOCHS = 40
SPEC = space_spec("cell201-like")


def test_criterion_1_permutation_invariance(criterion):
    rng = np.random.default_rng(2024)
    params = init_params(VOCAB, seed=0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        g = random_dag(rng, max_nodes=16)
        s = compute_surrogate(g, params)
        for _ in range(5):
            worst = max(worst, float(np.max(np.abs(s - compute_surrogate(g.relabel(rng.permutation(g.num_nodes)), params)))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    criterion(1, ok, f"max |s(G) - s(pi G)| = {worst:.3g} over 200 DAGs x 5 relabelings in {elapsed:.2f}s")
    assert ok


def test_criterion_2_alpha_one_path_counts(criterion):
    params = init_params(VOCAB, alpha=1.0, seed=0)
    worst, count = 0.0, 0
    for g in all_small_dags(5):
        c = round_trip_factor(g.num_nodes, list(g.edges))
        worst = max(worst, float(np.max(np.abs(compute_surrogate(g, params) - c * params.r))))
        count += 1
    ok = count >= 50 and worst <= 1e-12
    criterion(2, ok, f"{count} DAGs with <= 5 nodes, max deviation from path-count oracle {worst:.3g}")
    assert ok


def _composites(model, graphs, rng):
    s = rng.normal(size=(len(graphs), model.config.surrogate_dim))
    y = rng.normal(size=len(graphs))
    return {
        "encoder+decoder": lambda: reconstruction_loss(decode_surrogate(model, encode_batch(model, graphs)), s),
        "encoder+regressor": lambda: margin_ranking_loss(predict_performance(model, encode_batch(model, graphs)), y, 0.5),
        "encoder+proxy": lambda: margin_ranking_loss(predict_proxy(model, encode_batch(model, graphs)), y, 0.5),
    }


def _distinct_batch(model, rng, size=3):
    # tied head outputs make the pairwise gradient exactly zero, so the ratio is pure round-off
    while True:
        graphs = [random_dag(rng, max_nodes=6) for _ in range(size)]
        z = encode_batch(model, graphs)
        outs = [head(model, z).data.ravel() for head in (predict_performance, predict_proxy)]
        if all(np.min(np.abs(o[:, None] - o[None, :]) + np.eye(size)) > 1e-6 for o in outs):
            return graphs


def test_criterion_3_gradient_checks(criterion):
    start = time.perf_counter()
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = EncoderConfig(num_ops=len(VOCAB), hidden_dim=5, num_layers=2, surrogate_dim=3,
                            decoder_dims=(4,), head_dims=(4,), epsilon=0.1, epsilon_learnable=seed % 2 == 1)
        model = EncoderModel(cfg, seed=seed)
        # zero biases put some ReLU inputs exactly on the kink; nudge off it
        for p in model.params.values():
            p.data += rng.normal(scale=0.1, size=p.shape)
        graphs = _distinct_batch(model, rng)
        for name, fn in _composites(model, graphs, rng).items():
            prefix = name.split("+")[1]
            params = model.group("encoder", prefix)
            worst[name] = max(worst.get(name, 0.0), max_rel_error(fn, params))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    detail = ", ".join(f"{k} {v:.2g}" for k, v in worst.items())
    criterion(3, ok, f"worst relative error over 20 seeds: {detail}; {elapsed:.1f}s")
    assert ok


def test_criterion_4_metric_oracles(criterion):
    rng = np.random.default_rng(77)
    worst_tau = worst_prec = 0.0
    done = 0
    while done < 100:
        n = int(rng.integers(2, 51))
        x = rng.integers(0, 10, size=n).astype(float)
        y = rng.normal(size=n).round(1)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        worst_tau = max(worst_tau, abs(kendall_tau(x, y) - tau_b_all_pairs(x, y)))
        for p in (1, 5, 10, 25):
            worst_prec = max(worst_prec, abs(precision_at_percent(x, y, p) - precision_by_sets(x, y, p)))
        done += 1
    ok = worst_tau <= 1e-12 and worst_prec <= 1e-12
    criterion(4, ok, f"100 instances: tau deviation {worst_tau:.3g}, precision deviation {worst_prec:.3g}")
    assert ok


def test_criterion_5_topological_levels(criterion):
    topo = assign_topological_order(diamond())
    got = [sorted(level) for level in topo.levels]
    ok = got == [[0], [1, 2], [3], [4]] and topo.depth == 4
    names = [{f"v{v + 1}" for v in level} for level in got]
    criterion(5, ok, f"levels {names}, T={topo.depth}")
    assert ok


@pytest.fixture(scope="module")
def benchmark():
    ds = label_dataset(generate_space(SPEC, 2000, seed=0), oracle_seed=0)
    make_splits(ds, 0.5, 40, seed=0)
    params = init_params(ds.vocab, k=8, sigma=0.1, alpha=0.5, seed=0)
    return with_surrogates(ds, batch_surrogates(ds.graphs(), params), params.describe())


class Runs:
    def __init__(self, ds):
        self.ds = ds
        self.cache = {}
        self.seconds = {}

    def tau(self, variant, seed):
        key = (variant, seed)
        if key not in self.cache:
            start = time.perf_counter()
            model = EncoderModel(EncoderConfig(num_ops=len(self.ds.vocab), surrogate_dim=self.ds.k), seed=seed)
            if variant != "baseline":
                lam = {"full": (0.5, 0.5), "rec-only": (1.0, 0.0), "proxy-only": (0.0, 1.0)}[variant]
                model, _ = pretrain(model, self.ds, cfg=PretrainConfig(
                    lambda1=lam[0], lambda2=lam[1], epochs=PRETRAIN_EPOCHS, seed=seed))
            if variant == "full":
                self.pretrained = getattr(self, "pretrained", {})
                self.pretrained[seed] = model.copy()
            model, _ = finetune(model, self.ds, FinetuneConfig(seed=seed))
            truth, pred = split_predictions(model, self.ds, "test")
            self.cache[key] = kendall_tau(truth, pred)
            self.seconds[key] = time.perf_counter() - start
        return self.cache[key]


@pytest.fixture(scope="module")
def runs(benchmark):
    return Runs(benchmark)


@pytest.mark.slow
def test_criterion_6_pretraining_gain(runs, criterion):
    ds = runs.ds
    assert (len(ds.splits["train"]), len(ds.splits["test"]), len(ds.splits["validation"])) == (1000, 960, 40)
    fgp = np.array([runs.tau("full", s) for s in SEEDS])
    base = np.array([runs.tau("baseline", s) for s in SEEDS])
    elapsed = sum(runs.seconds[(v, s)] for v in ("full", "baseline") for s in SEEDS)
    gain = float(fgp.mean() - base.mean())
    worse = int(np.sum(fgp < base))
    ok = gain >= 0.03 and worse <= 1 and elapsed < 600
    criterion(6, ok, f"test tau FGP {fgp.mean():.4f} vs baseline {base.mean():.4f} (gain {gain:+.4f}), "
                     f"FGP worse in {worse}/5 seeds, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_direction(runs, criterion):
    means = {v: float(np.mean([runs.tau(v, s) for s in SEEDS])) for v in ("full", "rec-only", "proxy-only")}
    ok = all(means["full"] >= means[v] - 0.01 for v in ("rec-only", "proxy-only"))
    criterion(7, ok, "mean test tau " + ", ".join(f"{k} {v:.4f}" for k, v in means.items()))
    assert ok


@pytest.mark.slow
def test_criterion_8_nas_beats_random(runs, criterion):
    runs.tau("full", 0)
    model = runs.pretrained[0]
    evaluator = OracleEvaluator(SPEC, oracle_seed=0)
    reference = float(np.max(runs.ds.labels()))
    wins, monotone = 0, True
    for seed in range(10):
        guided = run_npenas(SPEC, EncoderPredictor(model, FinetuneConfig(epochs=50, seed=seed)), evaluator,
                            budget=200, seed=seed, reference_best=reference)
        rand = random_search(SPEC, budget=200, seed=seed, evaluator=evaluator, reference_best=reference)
        wins += guided.trace[-1]["regret"] < rand.trace[-1]["regret"]
        for state in (guided, rand):
            regrets = [row["regret"] for row in state.trace]
            monotone &= all(a >= b for a, b in zip(regrets, regrets[1:]))
            monotone &= len(state.pool) == 200
    ok = wins >= 8 and monotone
    criterion(8, ok, f"NPENAS lower final regret in {wins}/10 seeds at 200 evaluations; traces monotone: {monotone}")
    assert ok


def test_criterion_9_determinism(tmp_path, criterion, capsys):
    outs = []
    for run in ("a", "b"):
        assert cli.main(["pipeline", "--config", "smoke", "--out", str(tmp_path / run)]) == 0
        outs.append(next((tmp_path / run).iterdir()) / "eval.json")
    capsys.readouterr()
    same = outs[0].read_bytes() == outs[1].read_bytes()
    criterion(9, same, f"two smoke pipeline runs produce byte-identical eval JSON ({len(outs[0].read_bytes())} bytes)")
    assert same
