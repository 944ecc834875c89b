"""Fault isolation for PCA process monitoring with structured sparsity.

A fault vector ``f`` is reconstructed from faulty samples by minimizing the
monitoring statistic of ``x - f`` plus a penalty that encodes what is known
about the process: plain l1, partially known support, blocks, sparse blocks,
clusters or a variable tree.
"""

from .datamodel import DataMatrix, SampleBatch, Standardizer, read_csv, write_csv
from .monitor import MonitoringModel, StatisticKind, fit_monitoring_model, detect
from .selection import Isolation, LambdaGrid, Mode, default_grid, isolate, lambda_max, select_lambda
from .solver import AdmmConfig, IsolationResult, reconstruct, reconstruct_samples, solve_path
from .structure import (BlockPartition, Clustered, GroupLasso, Lasso, PartialSupport,
                        SparseGroupLasso, SparsityTree, SupportSpec, Tree)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "BlockPartition", "Clustered", "DataMatrix", "GroupLasso", "Isolation", "IsolationResult",
    "LambdaGrid", "Mode", "Lasso", "MonitoringModel", "PartialSupport", "SampleBatch", "SparseGroupLasso",
    "SparsityTree", "StatisticKind", "Standardizer", "SupportSpec", "Tree", "default_grid",
    "detect", "fit_monitoring_model", "isolate", "lambda_max", "read_csv", "reconstruct",
    "reconstruct_samples", "select_lambda", "solve_path", "write_csv",
]
