# Pre-train on unlabeled cells, then fine-tune on ten labels.
#
# Runs in under half a minute. The baseline starts from random weights, the
# other model first learns to reconstruct flow surrogates and rank a
# zero-cost proxy.

from fgp import (
    EncoderConfig,
    EncoderModel,
    FinetuneConfig,
    PretrainConfig,
    batch_surrogates,
    finetune,
    generate_space,
    init_params,
    kendall_tau,
    label_dataset,
    make_splits,
    pretrain,
    space_spec,
)
from fgp.benchdata import with_surrogates
from fgp.training import split_predictions

spec = space_spec("cell201-like")
ds = label_dataset(generate_space(spec, 2000, seed=0), oracle_seed=0)
make_splits(ds, 0.5, 40, seed=0)
sp = init_params(ds.vocab, k=8, seed=0)
ds = with_surrogates(ds, batch_surrogates(ds.graphs(), sp), sp.describe())
print({name: len(idx) for name, idx in ds.splits.items()})

cfg = EncoderConfig(num_ops=len(ds.vocab), surrogate_dim=ds.k)
seed = 0

baseline, _ = finetune(EncoderModel(cfg, seed=seed), ds, FinetuneConfig(seed=seed))
print("baseline tau:", round(kendall_tau(*split_predictions(baseline, ds, "test")), 4))

model, trace = pretrain(EncoderModel(cfg, seed=seed), ds, cfg=PretrainConfig(epochs=40, seed=seed))
print("pre-training loss, first and last epoch:", round(trace[0]["L_total"], 1), round(trace[-1]["L_total"], 1))
model, _ = finetune(model, ds, FinetuneConfig(seed=seed))
print("pre-trained tau:", round(kendall_tau(*split_predictions(model, ds, "test")), 4))
