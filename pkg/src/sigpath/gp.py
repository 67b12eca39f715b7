"""Per-channel Gaussian-process regression with RBF kernels.

Each channel of an instance gets an independent zero-mean GP. Hyperparameters
are fitted per channel by gradient ascent on the exact log marginal
likelihood, then frozen; the fitted posterior feeds the GP-based path
imputations (posterior mean, Monte-Carlo samples, mean + variance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .signature import PiecewiseLinearPath, time_augment
from .timeseries import IrregularTimeSeries

JITTER_INIT = 1e-6
JITTER_MAX = 1e-2
# Sampling factors a posterior covariance that is exactly singular at
# noiselessly observed points, so its jitter ladder starts much lower.
SAMPLE_JITTER_INIT = 1e-12
NOISE_FLOOR = 1e-10
_LOG_BOUNDS = np.log(np.array([[1e-4, 1e4], [1e-6, 1e6], [NOISE_FLOOR, 1e4]]))


class GpError(RuntimeError):
    """Cholesky failure or non-finite likelihood."""


@dataclass(frozen=True)
class RbfHyperparams:
    lengthscale: float
    output_scale: float
    noise_variance: float

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.output_scale > 0 and self.noise_variance >= 0):
            raise ValueError(f"invalid RBF hyperparameters {self}")

    def to_log(self) -> np.ndarray:
        return np.log([self.lengthscale, self.output_scale, max(self.noise_variance, NOISE_FLOOR)])

    @classmethod
    def from_log(cls, theta) -> "RbfHyperparams":
        ell, sf2, sn2 = np.exp(np.asarray(theta, dtype=float))
        return cls(float(ell), float(sf2), float(sn2))


def rbf_kernel(t, u, h: RbfHyperparams):
    """``sigma^2 * exp(-(t - u)^2 / (2 ell^2))``, broadcasting over arrays."""
    diff = np.subtract(t, u)
    return h.output_scale * np.exp(-0.5 * diff**2 / h.lengthscale**2)


def _gram(a: np.ndarray, b: np.ndarray, h: RbfHyperparams) -> np.ndarray:
    return rbf_kernel(a[:, None], b[None, :], h)


def cholesky_jittered(matrix: np.ndarray, scale: float, jitter_init: float = JITTER_INIT,
                      jitter_max: float = JITTER_MAX) -> tuple:
    """Lower Cholesky factor, adding ``jitter * scale`` to the diagonal on failure.

    Tries the bare matrix first, then jitter ``jitter_init, 10 * jitter_init,
    ...`` up to ``jitter_max`` (all relative to ``scale``).

    Returns:
        ``(L, jitter)`` with the absolute jitter that was added.
    """
    try:
        return np.linalg.cholesky(matrix), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(matrix.shape[0])
    rel = jitter_init
    while rel <= jitter_max * (1 + 1e-9):
        try:
            return np.linalg.cholesky(matrix + rel * scale * eye), rel * scale
        except np.linalg.LinAlgError:
            rel *= 10
    raise GpError(f"Cholesky failed even with jitter {jitter_max} * {scale}")


def default_hyperparams(times: np.ndarray, values: np.ndarray) -> RbfHyperparams:
    """Data-driven starting point for the marginal-likelihood ascent.

    Lengthscale is the median pairwise distance between observation times,
    output scale the sample variance, noise a tenth of it. Degenerate inputs
    fall back to 1.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    ell = 1.0
    if len(times) >= 2:
        iu = np.triu_indices(len(times), k=1)
        gaps = np.abs(times[:, None] - times[None, :])[iu]
        med = float(np.median(gaps))
        if med > 0:
            ell = med
    var = float(np.var(values)) if len(values) >= 2 else 0.0
    sf2 = var if var > 0 else 1.0
    return RbfHyperparams(ell, sf2, 0.1 * sf2)


def _lml_terms(times, values, theta, jitter_init, with_grad):
    ell, sf2, sn2 = np.exp(theta)
    h = RbfHyperparams(ell, sf2, sn2)
    n = len(times)
    sq = (times[:, None] - times[None, :]) ** 2
    k = sf2 * np.exp(-0.5 * sq / ell**2)
    chol, _ = cholesky_jittered(k + sn2 * np.eye(n), sf2, jitter_init)
    chol_inv = np.linalg.inv(chol)
    k_inv = chol_inv.T @ chol_inv
    alpha = k_inv @ values
    lml = -0.5 * values @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    if not np.isfinite(lml):
        raise GpError("non-finite log marginal likelihood")
    if not with_grad:
        return lml, None
    inner = np.outer(alpha, alpha) - k_inv
    grad = 0.5 * np.array([
        np.sum(inner * (k * sq / ell**2)),
        np.sum(inner * k),
        np.trace(inner) * sn2,
    ])
    return lml, grad


def log_marginal_likelihood(times, values, h: RbfHyperparams, jitter_init: float = JITTER_INIT) -> float:
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    return float(_lml_terms(times, values, h.to_log(), jitter_init, False)[0])


def log_marginal_likelihood_grad(times, values, h: RbfHyperparams, jitter_init: float = JITTER_INIT):
    """Gradient w.r.t. ``(log ell, log sigma^2, log sigma_n^2)``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    return _lml_terms(times, values, h.to_log(), jitter_init, True)[1]


def fit_hyperparams(times, values, init: Optional[RbfHyperparams] = None, iters: int = 100,
                    step_size: float = 0.5, tol: float = 1e-6, jitter_init: float = JITTER_INIT,
                    trace: Optional[list] = None) -> RbfHyperparams:
    """Maximise the log marginal likelihood of one channel.

    Gradient ascent in log-parameter space. The step direction is the
    gradient, rescaled to unit norm when longer; each iteration tries twice
    the previous accepted step (at most ``step_size``) and halves it until
    the likelihood does not decrease.
    Stops early once no ascent step can be found or an accepted step gains
    less than ``tol``.

    Args:
        times, values: observations of the channel, at least two.
        init: starting point; ``default_hyperparams`` when omitted.
        iters: maximum number of accepted steps.
        trace: if given, receives the likelihood at the start and after
            every accepted step.

    Raises:
        GpError: the likelihood at ``init`` is not finite.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        raise ValueError("fitting hyperparameters needs at least two observations")
    if init is None:
        init = default_hyperparams(times, values)
    theta = np.clip(init.to_log(), _LOG_BOUNDS[:, 0], _LOG_BOUNDS[:, 1])
    lml, grad = _lml_terms(times, values, theta, jitter_init, True)
    if trace is not None:
        trace.append(float(lml))
    if iters == 0:
        return init
    step = step_size
    for _ in range(iters):
        direction = grad / max(1.0, float(np.linalg.norm(grad)))
        step = min(step_size, 2 * step)
        accepted = False
        for _ in range(40):
            proposal = np.clip(theta + step * direction, _LOG_BOUNDS[:, 0], _LOG_BOUNDS[:, 1])
            try:
                new_lml, new_grad = _lml_terms(times, values, proposal, jitter_init, True)
            except GpError:
                new_lml = -np.inf
            if new_lml >= lml:
                accepted = True
                break
            step *= 0.5
        if not accepted or np.array_equal(proposal, theta):
            break
        gain = new_lml - lml
        theta, lml, grad = proposal, new_lml, new_grad
        if trace is not None:
            trace.append(float(lml))
        if gain < tol:
            break
    return RbfHyperparams.from_log(theta)


@dataclass(frozen=True)
class ChannelPosterior:
    """GP posterior of one channel conditioned on its observations."""

    times: np.ndarray
    values: np.ndarray
    hyperparams: RbfHyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @classmethod
    def fit(cls, times, values, h: RbfHyperparams, jitter_init: float = JITTER_INIT) -> "ChannelPosterior":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        n = len(times)
        if n == 0:
            return cls(times, values, h, np.zeros((0, 0)), np.zeros(0), 0.0)
        k = _gram(times, times, h) + h.noise_variance * np.eye(n)
        chol, jitter = cholesky_jittered(k, h.output_scale, jitter_init)
        alpha = cho_solve((chol, True), values)
        return cls(times, values, h, chol, alpha, jitter)

    def _cross(self, query: np.ndarray):
        k_star = _gram(self.times, query, self.hyperparams)
        v = solve_triangular(self.chol, k_star, lower=True) if len(self.times) else k_star
        return k_star, v

    def predict(self, query) -> tuple:
        """Posterior mean and (clamped) marginal variance at ``query``."""
        query = np.asarray(query, dtype=float)
        k_star, v = self._cross(query)
        mean = k_star.T @ self.alpha
        var = self.hyperparams.output_scale - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def covariance(self, query) -> tuple:
        """Posterior mean and full covariance over ``query``."""
        query = np.asarray(query, dtype=float)
        k_star, v = self._cross(query)
        mean = k_star.T @ self.alpha
        cov = _gram(query, query, self.hyperparams) - v.T @ v
        return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GpPosterior:
    channels: tuple

    @property
    def dim(self) -> int:
        return len(self.channels)

    @property
    def hyperparams(self) -> tuple:
        return tuple(c.hyperparams for c in self.channels)

    def predict(self, query) -> tuple:
        """Means and variances, each of shape ``(len(query), d)``."""
        pairs = [c.predict(query) for c in self.channels]
        return np.stack([m for m, _ in pairs], axis=1), np.stack([v for _, v in pairs], axis=1)


def fit_posterior(ts: IrregularTimeSeries, hyperparams: Optional[Sequence[RbfHyperparams]] = None,
                  iters: int = 100, jitter_init: float = JITTER_INIT) -> GpPosterior:
    """Condition an independent GP per channel on the observed entries of ``ts``.

    Without explicit ``hyperparams`` each channel with two or more
    observations is fitted by ``fit_hyperparams``; a fit that hits a
    degenerate likelihood falls back to the data-driven initialisation.
    Channels with no observations keep the prior.
    """
    channels = []
    for j in range(ts.n_channels):
        mask = ~np.isnan(ts.values[:, j])
        t, y = ts.times[mask], ts.values[mask, j]
        if hyperparams is not None:
            h = hyperparams[j]
        else:
            h = default_hyperparams(t, y)
            if len(t) >= 2 and iters > 0:
                try:
                    h = fit_hyperparams(t, y, h, iters=iters, jitter_init=jitter_init)
                except GpError:
                    pass
        channels.append(ChannelPosterior.fit(t, y, h, jitter_init))
    return GpPosterior(tuple(channels))


def posterior(times, values, h: RbfHyperparams, query_times, jitter_init: float = JITTER_INIT) -> tuple:
    """Posterior mean and marginal variance of one channel at ``query_times``."""
    return ChannelPosterior.fit(times, values, h, jitter_init).predict(query_times)


def sampling_factors(post: GpPosterior, query_times) -> tuple:
    """Posterior means ``(G, d)`` and covariance Cholesky factors ``(d, G, G)``."""
    query_times = np.asarray(query_times, dtype=float)
    means, factors = [], []
    for c in post.channels:
        mean, cov = c.covariance(query_times)
        chol, _ = cholesky_jittered(cov, c.hyperparams.output_scale, SAMPLE_JITTER_INIT)
        means.append(mean)
        factors.append(chol)
    return np.stack(means, axis=1), np.stack(factors)


def draw_samples(means: np.ndarray, factors: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Joint posterior draws ``(n_samples, G, d)`` from ``sampling_factors`` output."""
    n_grid, dim = means.shape
    z = rng.standard_normal((n_samples, dim, n_grid))
    draws = np.einsum("dgh,sdh->sgd", factors, z)
    return draws + means[None]


def mc_sample(post: GpPosterior, query_times, n_samples: int, rng: np.random.Generator) -> list:
    """``n_samples`` time-augmented sample paths from the joint posterior on the grid."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    query_times = np.asarray(query_times, dtype=float)
    means, factors = sampling_factors(post, query_times)
    draws = draw_samples(means, factors, n_samples, rng)
    return [time_augment(PiecewiseLinearPath(query_times, d)) for d in draws]


def mean_path(post: GpPosterior, query_times) -> PiecewiseLinearPath:
    query_times = np.asarray(query_times, dtype=float)
    mean, _ = post.predict(query_times)
    return time_augment(PiecewiseLinearPath(query_times, mean))


def pom_path(post: GpPosterior, query_times) -> PiecewiseLinearPath:
    """Posterior means in channels ``1..d``, marginal variances in ``d+1..2d``."""
    query_times = np.asarray(query_times, dtype=float)
    mean, var = post.predict(query_times)
    return time_augment(PiecewiseLinearPath(query_times, np.hstack([mean, var])))
