"""Path imputation: irregular, partially observed series -> piecewise-linear paths.

Every strategy returns a time-augmented path (channel 0 is time) whose knots
sit on the query grid, except ``causal`` which interleaves time and value
updates and therefore has ``2 * len(grid) - 1`` knots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import gp
from .signature import PiecewiseLinearPath, time_augment
from .timeseries import IrregularTimeSeries

STRATEGIES = ("linear", "forward-fill", "zero", "indicator", "causal", "gp-mean", "gp-mc", "gp-pom")
GP_STRATEGIES = ("gp-mean", "gp-mc", "gp-pom")


@dataclass(frozen=True)
class ImputationStrategy:
    """A strategy tag plus the settings the GP variants need.

    ``posterior`` may hold an already fitted ``GpPosterior`` for the instance
    being imputed; otherwise one is fitted on the fly with ``gp_iters``.
    """

    tag: str
    posterior: Optional[gp.GpPosterior] = None
    n_samples: int = 10
    gp_iters: int = 100
    jitter_init: float = gp.JITTER_INIT

    def __post_init__(self):
        if self.tag not in STRATEGIES:
            raise ValueError(f"unknown imputation strategy {self.tag!r}; choose from {STRATEGIES}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    @property
    def is_gp(self) -> bool:
        return self.tag in GP_STRATEGIES


def output_dim(tag: str, n_channels: int) -> int:
    """Channel count of the imputed path, time channel included."""
    if tag in ("indicator", "gp-pom"):
        return 2 * n_channels + 1
    return n_channels + 1


def _grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("imputation grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("imputation grid must be sorted")
    return grid


def _channel(ts: IrregularTimeSeries, j: int):
    mask = ~np.isnan(ts.values[:, j])
    return ts.times[mask], ts.values[mask, j]


def _exact_rows(ts: IrregularTimeSeries, grid: np.ndarray) -> np.ndarray:
    """Row of ``ts`` whose timestamp equals each grid point, or -1."""
    pos = np.searchsorted(ts.times, grid)
    pos_clipped = np.minimum(pos, len(ts) - 1)
    hit = ts.times[pos_clipped] == grid
    return np.where(hit, pos_clipped, -1)


def _grid_values(ts: IrregularTimeSeries, grid: np.ndarray) -> np.ndarray:
    """Observed values at grid points (NaN where nothing was observed)."""
    rows = _exact_rows(ts, grid)
    out = np.full((len(grid), ts.n_channels), np.nan)
    hit = rows >= 0
    out[hit] = ts.values[rows[hit]]
    return out


def linear_values(ts: IrregularTimeSeries, grid) -> np.ndarray:
    grid = _grid(grid)
    out = np.zeros((len(grid), ts.n_channels))
    for j in range(ts.n_channels):
        t, y = _channel(ts, j)
        if len(t) == 0:
            continue
        inside = (grid >= t[0]) & (grid <= t[-1])
        out[inside, j] = np.interp(grid[inside], t, y)
    return out


def forward_fill_values(ts: IrregularTimeSeries, grid) -> np.ndarray:
    grid = _grid(grid)
    out = np.zeros((len(grid), ts.n_channels))
    for j in range(ts.n_channels):
        t, y = _channel(ts, j)
        idx = np.searchsorted(t, grid, side="right") - 1
        seen = idx >= 0
        out[seen, j] = y[idx[seen]]
    return out


def impute_linear(ts: IrregularTimeSeries, grid) -> PiecewiseLinearPath:
    """Interpolate between the bracketing observations; 0 outside the observed span."""
    grid = _grid(grid)
    return time_augment(PiecewiseLinearPath(grid, linear_values(ts, grid)))


def impute_forward_fill(ts: IrregularTimeSeries, grid) -> PiecewiseLinearPath:
    """Carry the last observation forward; 0 before the first one."""
    grid = _grid(grid)
    return time_augment(PiecewiseLinearPath(grid, forward_fill_values(ts, grid)))


def impute_zero(ts: IrregularTimeSeries, grid) -> PiecewiseLinearPath:
    grid = _grid(grid)
    values = np.nan_to_num(_grid_values(ts, grid), nan=0.0)
    return time_augment(PiecewiseLinearPath(grid, values))


def impute_indicator(ts: IrregularTimeSeries, grid) -> PiecewiseLinearPath:
    """Zero-filled values followed by one missingness flag per channel.

    A flag is 1 where the channel has no observation at that grid point
    (including grid points that match no original timestamp) and 0 where it
    was observed.
    """
    grid = _grid(grid)
    raw = _grid_values(ts, grid)
    missing = np.isnan(raw)
    values = np.hstack([np.where(missing, 0.0, raw), missing.astype(float)])
    return time_augment(PiecewiseLinearPath(grid, values))


def causal_transform(times, values) -> PiecewiseLinearPath:
    """Interleave time and value updates of a fully observed sequence.

    ``(t1, x1), (t2, x2), ...`` becomes ``(t1, x1), (t2, x1), (t2, x2),
    (t3, x2), ..., (tn, xn)``: time moves first with the data frozen, then the
    data jumps with time frozen. Time is returned as channel 0 and the knots
    are parameterised by their index, so repeated times are fine.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != times.shape[0] or times.shape[0] < 1:
        raise ValueError("causal_transform needs one value row per time, at least one row")
    if np.isnan(values).any():
        raise ValueError("causal_transform needs fully observed input; impute it first")
    n = len(times)
    out_t = np.empty(2 * n - 1)
    out_x = np.empty((2 * n - 1, values.shape[1]))
    out_t[0::2] = times
    out_x[0::2] = values
    out_t[1::2] = times[1:]
    out_x[1::2] = values[:-1]
    return PiecewiseLinearPath(np.arange(2 * n - 1, dtype=float), np.hstack([out_t[:, None], out_x]))


def impute_causal(ts: IrregularTimeSeries, grid) -> PiecewiseLinearPath:
    """Forward fill onto the grid, then ``causal_transform``."""
    grid = _grid(grid)
    return causal_transform(grid, forward_fill_values(ts, grid))


_DETERMINISTIC = {
    "linear": impute_linear,
    "forward-fill": impute_forward_fill,
    "zero": impute_zero,
    "indicator": impute_indicator,
    "causal": impute_causal,
}


def impute(ts: IrregularTimeSeries, strategy, grid, rng: Optional[np.random.Generator] = None):
    """Dispatch to a strategy.

    Args:
        ts: the series to impute.
        strategy: an ``ImputationStrategy`` or a bare tag.
        grid: sorted query times.
        rng: generator for ``gp-mc`` sampling.

    Returns:
        a ``PiecewiseLinearPath``; for ``gp-mc`` a list of ``n_samples`` paths.
    """
    if isinstance(strategy, str):
        strategy = ImputationStrategy(strategy)
    grid = _grid(grid)
    if not strategy.is_gp:
        return _DETERMINISTIC[strategy.tag](ts, grid)
    post = strategy.posterior
    if post is None:
        post = gp.fit_posterior(ts, iters=strategy.gp_iters, jitter_init=strategy.jitter_init)
    if post.dim != ts.n_channels:
        raise ValueError(f"posterior covers {post.dim} channels, series has {ts.n_channels}")
    if strategy.tag == "gp-mean":
        return gp.mean_path(post, grid)
    if strategy.tag == "gp-pom":
        return gp.pom_path(post, grid)
    if rng is None:
        raise ValueError("gp-mc imputation needs a random generator")
    return gp.mc_sample(post, grid, strategy.n_samples, rng)
