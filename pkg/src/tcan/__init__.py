"""Cascade popularity prediction with time embeddings, graph attention and
sequence attention, on a small self-contained autodiff engine."""

__version__ = "0.1.0"

from .cascade import (Cascade, CascadeFormatError, CascadeViews, DatasetSplit, Record, build_views,
                      filter_dataset, parse_cascade_file, split_dataset, write_cascade_file)
from .model import ModelConfig, forward, forward_batch, init_params, make_batch
from .synthgen import GenConfig, generate
from .training import EvalReport, evaluate, load_model, msle_loss, save_model, train

__all__ = [
    "Cascade", "CascadeFormatError", "CascadeViews", "DatasetSplit", "Record", "build_views",
    "filter_dataset", "parse_cascade_file", "split_dataset", "write_cascade_file",
    "ModelConfig", "forward", "forward_batch", "init_params", "make_batch",
    "GenConfig", "generate", "EvalReport", "evaluate", "load_model", "msle_loss", "save_model", "train",
]
