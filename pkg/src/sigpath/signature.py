"""Truncated signatures of piecewise-linear paths.

Levels are stored densely: level ``k`` of a ``d``-dimensional path is a flat
array of length ``d**k`` indexed by the multi-index ``(i_1, ..., i_k)`` in
row-major order, so entry ``(i, j)`` of level 2 sits at ``i * d + j``.

All array kernels (``segment_levels``, ``chen_levels``, ``batch_signature``,
``batch_signature_backward``) broadcast over leading batch axes; the
``TruncatedSignature`` / ``PiecewiseLinearPath`` wrappers are the
single-path API.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Sequence, Union

import numpy as np

MAX_DEPTH = 6
DEFAULT_COEFFICIENT_BUDGET = 2_000_000

Levels = list  # list[np.ndarray], level k at index k - 1


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Ordered knots ``(params[i], values[i])`` joined by straight lines.

    ``params`` is nondecreasing. The signature never reads it; it only
    matters for ``time_augment`` and for readers of the path.
    """

    params: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != params.shape[0]:
            raise ValueError(
                f"knot count mismatch: {params.shape[0]} params vs values of shape {values.shape}"
            )
        if params.shape[0] < 1:
            raise ValueError("a path needs at least one knot")
        if np.any(np.diff(params) < 0):
            raise ValueError("path parameters must be nondecreasing")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values) -> "PiecewiseLinearPath":
        """Build a path parameterised by knot index ``s_i = i``."""
        values = np.asarray(values, dtype=float)
        return cls(np.arange(values.shape[0], dtype=float), values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, item: slice) -> "PiecewiseLinearPath":
        if not isinstance(item, slice):
            raise TypeError("paths are sliced by knot ranges only")
        return PiecewiseLinearPath(self.params[item], self.values[item])


@dataclass(frozen=True)
class TruncatedSignature:
    dim: int
    depth: int
    levels: tuple

    def __post_init__(self):
        if len(self.levels) != self.depth:
            raise ValueError(f"expected {self.depth} levels, got {len(self.levels)}")
        for k, level in enumerate(self.levels, start=1):
            if np.shape(level) != (self.dim**k,):
                raise ValueError(
                    f"level {k} must have {self.dim ** k} entries, got shape {np.shape(level)}"
                )

    def level(self, k: int) -> np.ndarray:
        """Level ``k`` reshaped to a ``(d,) * k`` tensor."""
        return self.levels[k - 1].reshape((self.dim,) * k)

    def coefficient(self, *index: int) -> float:
        """Coefficient for a multi-index of 0-based channels."""
        return float(self.level(len(index))[tuple(index)])

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.levels)

    def to_lists(self) -> list:
        return [level.tolist() for level in self.levels]

    def restrict(self, channels: Sequence[int]) -> "TruncatedSignature":
        """Coefficients whose multi-indices only use ``channels``.

        This equals the signature of the path projected onto those channels.
        """
        channels = list(channels)
        levels = []
        for k in range(1, self.depth + 1):
            levels.append(self.level(k)[np.ix_(*([channels] * k))].reshape(-1))
        return TruncatedSignature(len(channels), self.depth, tuple(levels))


def signature_size(dim: int, depth: int) -> int:
    """Number of coefficients in levels 1..depth."""
    return sum(dim**k for k in range(1, depth + 1))


def check_budget(dim: int, depth: int, budget: int = DEFAULT_COEFFICIENT_BUDGET) -> None:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if depth > MAX_DEPTH:
        raise ValueError(f"depth {depth} exceeds the cap of {MAX_DEPTH}")
    size = signature_size(dim, depth)
    if size > budget:
        raise ValueError(
            f"signature of dim {dim} at depth {depth} has {size} coefficients, "
            f"over the budget of {budget}"
        )


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Flat tensor product over the last axis, broadcasting leading axes."""
    out = a[..., :, None] * b[..., None, :]
    return out.reshape(out.shape[:-2] + (-1,))


def _contract_right(g: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Sum ``g[..., u, v] * e[..., v]`` with ``g`` flat over ``(u, v)``."""
    m = e.shape[-1]
    g = g.reshape(g.shape[:-1] + (-1, m))
    return np.matmul(g, e[..., :, None])[..., 0]


def _contract_left(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Sum ``s[..., u] * g[..., u, v]`` with ``g`` flat over ``(u, v)``."""
    n = s.shape[-1]
    g = g.reshape(g.shape[:-1] + (n, -1))
    return np.matmul(s[..., None, :], g)[..., 0, :]


def segment_levels(delta: np.ndarray, depth: int) -> Levels:
    """Levels of ``exp(delta)``: the signature of one straight segment."""
    delta = np.asarray(delta, dtype=float)
    levels = [delta]
    for k in range(2, depth + 1):
        levels.append(_outer(levels[-1], delta) / k)
    return levels


def chen_levels(a: Levels, b: Levels) -> Levels:
    """Truncated tensor product of two group-like elements (Chen's identity)."""
    depth = len(a)
    out = []
    for k in range(1, depth + 1):
        acc = a[k - 1] + b[k - 1]
        for i in range(1, k):
            acc = acc + _outer(a[i - 1], b[k - i - 1])
        out.append(acc)
    return out


def zero_levels(dim: int, depth: int, batch_shape: tuple = ()) -> Levels:
    return [np.zeros(batch_shape + (dim**k,)) for k in range(1, depth + 1)]


def batch_signature(values: np.ndarray, depth: int, keep_intermediates: bool = False):
    """Signatures of a batch of knot sequences.

    Args:
        values: array of shape ``(..., L, d)``.
        depth: truncation depth.
        keep_intermediates: also return the running signature after each
            segment, which ``batch_signature_backward`` can reuse.

    Returns:
        list of ``depth`` arrays of shape ``(..., d**k)``; with
        ``keep_intermediates`` a pair ``(levels, prefixes)`` where
        ``prefixes[j]`` is the signature of the first ``j + 1`` knots.
    """
    values = np.asarray(values, dtype=float)
    *batch, n_knots, dim = values.shape
    batch = tuple(batch)
    prefixes = [zero_levels(dim, depth, batch)]
    if n_knots < 2:
        return (prefixes[0], prefixes) if keep_intermediates else prefixes[0]
    deltas = np.diff(values, axis=-2)
    current = segment_levels(deltas[..., 0, :], depth)
    prefixes.append(current)
    for j in range(1, n_knots - 1):
        current = chen_levels(current, segment_levels(deltas[..., j, :], depth))
        if keep_intermediates:
            prefixes.append(current)
    if keep_intermediates:
        return current, prefixes
    return current


def batch_signature_backward(values: np.ndarray, depth: int, grads: Levels, prefixes=None) -> np.ndarray:
    """Reverse-mode derivative of ``batch_signature`` w.r.t. knot values.

    Args:
        values: array ``(..., L, d)`` passed to the forward pass.
        depth: truncation depth.
        grads: upstream gradient, one array ``(..., d**k)`` per level.
        prefixes: intermediates from ``batch_signature(..., keep_intermediates=True)``;
            recomputed when omitted.

    Returns:
        array of the same shape as ``values``.
    """
    values = np.asarray(values, dtype=float)
    n_knots, dim = values.shape[-2:]
    if len(grads) != depth:
        raise ValueError(f"expected {depth} gradient levels, got {len(grads)}")
    for k, g in enumerate(grads, start=1):
        if np.shape(g)[-1] != dim**k:
            raise ValueError(f"gradient level {k} has {np.shape(g)[-1]} entries, expected {dim ** k}")
    out = np.zeros_like(values)
    if n_knots < 2:
        return out
    if prefixes is None:
        _, prefixes = batch_signature(values, depth, keep_intermediates=True)
    deltas = np.diff(values, axis=-2)
    batch = values.shape[:-2]
    g = [np.broadcast_to(gk, batch + (dim**k,)).astype(float) for k, gk in enumerate(grads, start=1)]

    for j in range(n_knots - 2, -1, -1):
        delta = deltas[..., j, :]
        seg = segment_levels(delta, depth)
        if j == 0:
            g_seg = g
        else:
            prev = prefixes[j]
            g_prev = []
            g_seg = []
            for i in range(1, depth + 1):
                acc = g[i - 1].copy()
                for k in range(i + 1, depth + 1):
                    acc += _contract_right(g[k - 1], seg[k - i - 1])
                g_prev.append(acc)
            for m in range(1, depth + 1):
                acc = g[m - 1].copy()
                for k in range(m + 1, depth + 1):
                    acc += _contract_left(prev[k - m - 1], g[k - 1])
                g_seg.append(acc)
            g = g_prev
        # seg[m] = seg[m-1] (x) delta / (m+1); unwind from the top level
        g_seg = [x.copy() for x in g_seg]
        g_delta = np.zeros_like(delta)
        for m in range(depth, 1, -1):
            g_seg[m - 2] += _contract_right(g_seg[m - 1], delta) / m
            g_delta += _contract_left(seg[m - 2], g_seg[m - 1]) / m
        g_delta += g_seg[0]
        out[..., j, :] -= g_delta
        out[..., j + 1, :] += g_delta
    return out


# ---------------------------------------------------------------------------
# single-path API
# ---------------------------------------------------------------------------


def _knot_values(path: Union[PiecewiseLinearPath, np.ndarray]) -> np.ndarray:
    if isinstance(path, PiecewiseLinearPath):
        return path.values
    values = np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return values


def sig_segment(delta, depth: int) -> TruncatedSignature:
    """Signature of the straight segment with increment ``delta``."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return TruncatedSignature(delta.shape[0], depth, tuple(segment_levels(delta, depth)))


def chen_mul(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Signature of the concatenation of the paths behind ``a`` and ``b``."""
    if a.dim != b.dim or a.depth != b.depth:
        raise ValueError(
            f"cannot multiply signatures of (dim, depth) {(a.dim, a.depth)} and {(b.dim, b.depth)}"
        )
    return TruncatedSignature(a.dim, a.depth, tuple(chen_levels(list(a.levels), list(b.levels))))


def signature(path, depth: int, budget: int = DEFAULT_COEFFICIENT_BUDGET) -> TruncatedSignature:
    """Truncated signature of a piecewise-linear path.

    Left fold of ``chen_mul`` over the segment exponentials of the knot
    increments. A single knot gives the zero signature.
    """
    values = _knot_values(path)
    if values.shape[0] < 1:
        raise ValueError("signature needs at least one knot")
    check_budget(values.shape[1], depth, budget)
    levels = batch_signature(values, depth)
    return TruncatedSignature(values.shape[1], depth, tuple(levels))


def signature_backward(path, depth: int, upstream) -> np.ndarray:
    """Gradient of ``<upstream, signature(path, depth)>`` w.r.t. every knot value.

    ``upstream`` is a ``TruncatedSignature`` or a sequence of flat levels.
    Returns an array shaped like the knot values ``(L, d)``.
    """
    values = _knot_values(path)
    grads = list(upstream.levels) if isinstance(upstream, TruncatedSignature) else [np.asarray(g, float) for g in upstream]
    if len(grads) != depth:
        raise ValueError(f"upstream has {len(grads)} levels, expected {depth}")
    dim = values.shape[1]
    for k, g in enumerate(grads, start=1):
        if g.shape != (dim**k,):
            raise ValueError(f"upstream level {k} has shape {g.shape}, expected {(dim ** k,)}")
    return batch_signature_backward(values, depth, grads)


def oracle_signature(path, depth: int, steps: int = 10_000) -> TruncatedSignature:
    """Signature by direct quadrature of the iterated integrals.

    The path is sampled on a uniform grid in the knot-index parameterisation
    (at least ``steps`` cells, aligned with the knots). Each level is then
    accumulated cell by cell as ``S^k += S^{k-1}(mid) (x) dX`` where the
    midpoint value of ``S^{k-1}`` is the mean of its two grid values. Exact
    for levels 1 and 2; second-order accurate above. Test oracle only.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    values = _knot_values(path)
    n_knots, dim = values.shape
    if n_knots < 2:
        return TruncatedSignature(dim, depth, tuple(zero_levels(dim, depth)))
    per_segment = ceil(steps / (n_knots - 1))
    frac = np.arange(per_segment) / per_segment
    starts = values[:-1]
    incs = np.diff(values, axis=0)
    grid = (starts[:, None, :] + frac[None, :, None] * incs[:, None, :]).reshape(-1, dim)
    grid = np.vstack([grid, values[-1:]])
    dx = np.diff(grid, axis=0)  # (M, d)

    prev = grid - grid[0]  # level-1 partial signatures at grid points
    levels = [prev[-1].copy()]
    for _ in range(2, depth + 1):
        mid = 0.5 * (prev[:-1] + prev[1:])
        inc = _outer(mid, dx)
        cur = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
        levels.append(cur[-1].copy())
        prev = cur
    return TruncatedSignature(dim, depth, tuple(levels))


def levy_area(path, i: int, j: int) -> float:
    """Signed area between the ``(i, j)`` projection of the path and its chord."""
    values = _knot_values(path)
    dim = values.shape[1]
    if i == j:
        raise ValueError("Levy area needs two distinct channels")
    if not (0 <= i < dim and 0 <= j < dim):
        raise ValueError(f"channels ({i}, {j}) out of range for dim {dim}")
    level2 = batch_signature(values, 2)[1].reshape(dim, dim)
    return 0.5 * float(level2[i, j] - level2[j, i])


def time_augment(path: PiecewiseLinearPath) -> PiecewiseLinearPath:
    """Prepend the knot parameter as channel 0."""
    values = np.hstack([path.params[:, None], path.values])
    return PiecewiseLinearPath(path.params, values)
