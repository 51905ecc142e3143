# Where do cells land in surrogate space?
#
# Project flow surrogates of 300 cells onto two principal axes and
# compare the first axis with the (synthetic) accuracy ranking.

import numpy as np

from fgp import batch_surrogates, generate_space, init_params, kendall_tau, label_dataset, pca_project, space_spec

ds = label_dataset(generate_space(space_spec("cell201-like"), 300, seed=1), oracle_seed=0)
s = batch_surrogates(ds.graphs(), init_params(ds.vocab, k=8, seed=0))
points, ratio = pca_project(s, out_dim=2)
print("explained variance ratio:", np.round(ratio, 3))
print("tau(first axis, accuracy):", round(kendall_tau(ds.labels(), points[:, 0]), 3))
