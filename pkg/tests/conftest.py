import itertools

import numpy as np
import pytest

from fgp.archgraph import ArchGraph, OpVocabulary

VOCAB = OpVocabulary(["input", "conv3", "conv1", "pool", "output"])


def diamond() -> ArchGraph:
    """Five-node diamond: 0 -> {1, 2} -> 3 -> 4."""
    return ArchGraph.from_ops(
        VOCAB,
        ["input", "conv3", "conv1", "pool", "output"],
        [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)],
    )


def random_dag(rng, n=None, max_nodes=16, p=0.35, vocab=VOCAB) -> ArchGraph:
    n = n or int(rng.integers(1, max_nodes + 1))
    order = rng.permutation(n)
    edges = [(int(order[i]), int(order[j])) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    ops = [vocab.ops[int(rng.integers(0, len(vocab)))] for _ in range(n)]
    return ArchGraph.from_ops(vocab, ops, edges)


def all_small_dags(max_nodes=5):
    """Every labelled DAG whose edges go from lower to higher index, n = 1..max_nodes."""
    for n in range(1, max_nodes + 1):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for mask in range(1 << len(pairs)):
            edges = [pairs[b] for b in range(len(pairs)) if mask >> b & 1]
            yield ArchGraph.from_ops(VOCAB, [VOCAB.ops[i % len(VOCAB)] for i in range(n)], edges)


@pytest.fixture
def vocab():
    return VOCAB


@pytest.fixture
def fig_graph():
    return diamond()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the lines are echoed in the terminal summary."""

    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
