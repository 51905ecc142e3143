# Flow surrogates on a tiny cell.
#
# A cell is a DAG of operations. We build a five-node diamond, look at its
# topological levels, and compute the random-message summary that later
# serves as the pre-training target.

import numpy as np

from fgp import ArchGraph, OpVocabulary, assign_topological_order, compute_surrogate, init_params

vocab = OpVocabulary(["input", "conv3", "conv1", "pool", "output"])
cell = ArchGraph.from_ops(
    vocab,
    ["input", "conv3", "conv1", "pool", "output"],
    [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)],
)

topo = assign_topological_order(cell)
print("levels:", [sorted(level) for level in topo.levels], "depth", topo.depth)

params = init_params(vocab, k=8, sigma=0.1, alpha=0.5, seed=0)
s = compute_surrogate(cell, params)
print("surrogate:", np.round(s, 4))

# Renaming the nodes does not change the summary.
perm = np.random.default_rng(3).permutation(cell.num_nodes)
print("after relabeling:", np.abs(compute_surrogate(cell.relabel(perm), params) - s).max())

# With alpha = 1 the transforms switch off and the result is r scaled by
# an integer path count. For the diamond that count is 4.
plain = init_params(vocab, k=8, alpha=1.0, seed=0)
print("alpha=1 ratio:", compute_surrogate(cell, plain) / plain.r)
