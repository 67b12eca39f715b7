"""Truncated path signatures of irregularly sampled time series.

Modules:
    signature: signatures of piecewise-linear paths and their gradients.
    timeseries: irregular series, CSV IO, subsampling and standardization.
    imputation: strategies that turn a series into a path on a grid.
    gp: per-channel RBF Gaussian process posteriors.
    model: the shallow signature classifier and its training loop.
    metrics: accuracy, balanced accuracy, AUROC and average precision.
    harness: the search and evaluation protocol; report: its output files.
"""

from .signature import PiecewiseLinearPath, TruncatedSignature, chen_mul, levy_area, time_augment
from .timeseries import IrregularTimeSeries, LabeledDataset

__all__ = [
    "PiecewiseLinearPath",
    "TruncatedSignature",
    "chen_mul",
    "levy_area",
    "time_augment",
    "IrregularTimeSeries",
    "LabeledDataset",
]
__version__ = "0.1.0"
