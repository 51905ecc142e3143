"""Flow-surrogate pre-training (FGP) for neural architecture encoders.

The package is split by pipeline stage: :mod:`fgp.archgraph` (graphs),
:mod:`fgp.surrogate` (flow surrogates), :mod:`fgp.diffmath` (autodiff),
:mod:`fgp.encoder`, :mod:`fgp.training`, :mod:`fgp.evalmetrics`,
:mod:`fgp.benchdata`, :mod:`fgp.nassearch` and :mod:`fgp.cli`.
"""

from .archgraph import ArchGraph, OpVocabulary, TopoPartition, assign_topological_order, validate
from .benchdata import BenchDataset, generate_space, label_dataset, make_splits, space_spec, synthetic_oracle
from .encoder import EncoderConfig, EncoderModel, encode, encode_batch
from .errors import FGPError
from .evalmetrics import evaluate, kendall_tau, pca_project, precision_at_percent
from .surrogate import SurrogateParams, batch_surrogates, compute_surrogate, init_params
from .training import FinetuneConfig, PretrainConfig, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "ArchGraph", "OpVocabulary", "TopoPartition", "assign_topological_order", "validate",
    "BenchDataset", "generate_space", "label_dataset", "make_splits", "space_spec", "synthetic_oracle",
    "EncoderConfig", "EncoderModel", "encode", "encode_batch",
    "FGPError",
    "evaluate", "kendall_tau", "pca_project", "precision_at_percent",
    "SurrogateParams", "batch_surrogates", "compute_surrogate", "init_params",
    "FinetuneConfig", "PretrainConfig", "finetune", "pretrain",
]
