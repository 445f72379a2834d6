"""Neural graphical models: a single masked MLP as a graphical model."""

__version__ = "0.1.0"

from .data import Column, Dataset, FeatureSchema, encode, fit_schema, load_csv, write_csv
from .graph import DependencyGraph, DependencyMask, dependency_mask, read_graph
from .inference import (InferenceQuery, InferenceResult, conditional_distribution,
                        gradient_map, message_passing, train_binned_variant)
from .learning import NgmModel, TrainConfig, fit_ngm
from .projections import build_projection, fit_ngm_generic
from .sampling import SamplerConfig, get_sample, sample_batch
from .serialize import load_model, save_model

__all__ = [
    "Column", "Dataset", "DependencyGraph", "DependencyMask", "FeatureSchema", "InferenceQuery",
    "InferenceResult", "NgmModel", "SamplerConfig", "TrainConfig", "build_projection",
    "conditional_distribution", "dependency_mask", "encode", "fit_ngm", "fit_ngm_generic",
    "fit_schema", "get_sample", "gradient_map", "load_csv", "load_model", "message_passing",
    "read_graph", "sample_batch", "save_model", "train_binned_variant", "write_csv",
]
