"""Multimodal search of a target modality over precomputed embedding vectors.

Objects carry one unit vector per modality. A query is matched against them
through a weighted concatenation of those vectors: learned (or user supplied)
per-modality weights define one joint inner-product space, a proximity graph
is built in that space, and a greedy search on the graph answers queries
without merging per-modality result lists.
"""

from mstm.core import (
    MultiVector,
    WeightVector,
    UsageError,
    concat_norm_sq,
    inner_product,
    joint_similarity,
    sme,
)
from mstm.io import MultiModalDataset, QueryBatch, load_dataset
from mstm.index import BuildParams, FusedIndex, build_fused_index
from mstm.search import SearchParams, SearchOutcome, joint_search
from mstm.weights import TrainConfig, train_weights

__all__ = [
    "BuildParams",
    "FusedIndex",
    "MultiModalDataset",
    "MultiVector",
    "QueryBatch",
    "SearchOutcome",
    "SearchParams",
    "TrainConfig",
    "UsageError",
    "WeightVector",
    "build_fused_index",
    "concat_norm_sq",
    "inner_product",
    "joint_search",
    "joint_similarity",
    "load_dataset",
    "sme",
    "train_weights",
]

__version__ = "0.1.0"
