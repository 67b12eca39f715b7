"""Shallow signature classifier trained with Adam.

Architecture: a learned linear map on every knot (no bias), the truncated
signature of the mapped path, two ReLU dense layers of width 30, a linear
output layer and softmax. Gradients are exact reverse mode, with the
signature block differentiated by ``batch_signature_backward``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import metrics
from .signature import batch_signature, batch_signature_backward, check_budget, signature_size

HIDDEN = 30
MAX_PARAMETERS = 1_500_000
PARAM_NAMES = ("augmentation", "dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias",
               "output.weight", "output.bias")
# caps the memory held by per-segment signature intermediates
CHUNK = 64


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SigModelParams:
    arrays: dict
    depth: int

    @property
    def input_dim(self) -> int:
        return self.arrays["augmentation"].shape[0]

    @property
    def aug_width(self) -> int:
        return self.arrays["augmentation"].shape[1]

    @property
    def n_classes(self) -> int:
        return self.arrays["output.bias"].shape[0]

    @property
    def n_features(self) -> int:
        return signature_size(self.aug_width, self.depth)

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "SigModelParams":
        return SigModelParams({k: v.copy() for k, v in self.arrays.items()}, self.depth)

    def to_json(self, config: Optional[dict] = None) -> str:
        """Flat JSON: ``{"depth", "config", "params": {name: nested list}}``."""
        payload = {
            "depth": self.depth,
            "config": config or {},
            "params": {k: self.arrays[k].tolist() for k in PARAM_NAMES},
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SigModelParams":
        payload = json.loads(text)
        arrays = {k: np.asarray(payload["params"][k], dtype=float) for k in PARAM_NAMES}
        return cls(arrays, int(payload["depth"]))


def parameter_count(input_dim: int, aug_width: int, depth: int, n_classes: int, hidden: int = HIDDEN) -> int:
    n_features = signature_size(aug_width, depth)
    return (input_dim * aug_width + n_features * hidden + hidden + hidden * hidden + hidden
            + hidden * n_classes + n_classes)


def init_params(input_dim: int, aug_width: int, depth: int, n_classes: int,
                rng: np.random.Generator) -> SigModelParams:
    check_budget(aug_width, depth)
    total = parameter_count(input_dim, aug_width, depth, n_classes)
    if total > MAX_PARAMETERS:
        raise ValueError(f"model would have {total} parameters, above the cap of {MAX_PARAMETERS}")
    n_features = signature_size(aug_width, depth)
    arrays = {
        "augmentation": rng.normal(0.0, 1.0 / np.sqrt(input_dim), (input_dim, aug_width)),
        "dense1.weight": rng.normal(0.0, np.sqrt(2.0 / n_features), (n_features, HIDDEN)),
        "dense1.bias": np.zeros(HIDDEN),
        "dense2.weight": rng.normal(0.0, np.sqrt(2.0 / HIDDEN), (HIDDEN, HIDDEN)),
        "dense2.bias": np.zeros(HIDDEN),
        "output.weight": rng.normal(0.0, np.sqrt(1.0 / HIDDEN), (HIDDEN, n_classes)),
        "output.bias": np.zeros(n_classes),
    }
    return SigModelParams(arrays, depth)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: SigModelParams, x: np.ndarray, keep: bool = False):
    a = params.arrays
    y = x @ a["augmentation"]
    if keep:
        levels, prefixes = batch_signature(y, params.depth, keep_intermediates=True)
    else:
        levels, prefixes = batch_signature(y, params.depth), None
    feats = np.concatenate(levels, axis=-1)
    pre1 = feats @ a["dense1.weight"] + a["dense1.bias"]
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ a["dense2.weight"] + a["dense2.bias"]
    h2 = np.maximum(pre2, 0.0)
    probs = _softmax(h2 @ a["output.weight"] + a["output.bias"])
    cache = (x, y, prefixes, feats, h1, h2) if keep else None
    return probs, cache


def _check_input(params: SigModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"path dimension {x.shape[-1]} does not match model input dim {params.input_dim}")
    return x


def predict_proba(params: SigModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for knot arrays ``(..., L, d_in)`` -> ``(..., C)``."""
    x = _check_input(params, x)
    lead = x.shape[:-2]
    flat = x.reshape((-1,) + x.shape[-2:])
    out = [_forward(params, flat[i:i + CHUNK])[0] for i in range(0, flat.shape[0], CHUNK)]
    return np.concatenate(out, axis=0).reshape(lead + (params.n_classes,))


def forward(params: SigModelParams, path) -> np.ndarray:
    """Class probabilities of one path (``PiecewiseLinearPath`` or ``(L, d_in)`` array)."""
    values = getattr(path, "values", path)
    return predict_proba(params, np.asarray(values, dtype=float)[None])[0]


def _chunk_grads(params: SigModelParams, x: np.ndarray, onehot: np.ndarray):
    """Summed cross-entropy and its gradient over one chunk."""
    a = params.arrays
    probs, (x, y, prefixes, feats, h1, h2) = _forward(params, x, keep=True)
    loss = -np.sum(onehot * np.log(np.clip(probs, 1e-300, None)))
    d_logits = probs - onehot
    g = {
        "output.weight": h2.T @ d_logits,
        "output.bias": d_logits.sum(axis=0),
    }
    d_h2 = (d_logits @ a["output.weight"].T) * (h2 > 0)
    g["dense2.weight"] = h1.T @ d_h2
    g["dense2.bias"] = d_h2.sum(axis=0)
    d_h1 = (d_h2 @ a["dense2.weight"].T) * (h1 > 0)
    g["dense1.weight"] = feats.T @ d_h1
    g["dense1.bias"] = d_h1.sum(axis=0)
    d_feats = d_h1 @ a["dense1.weight"].T
    width = params.aug_width
    sizes = [width**k for k in range(1, params.depth + 1)]
    d_levels = np.split(d_feats, np.cumsum(sizes)[:-1], axis=-1)
    d_y = batch_signature_backward(y, params.depth, d_levels, prefixes)
    g["augmentation"] = np.einsum("bli,blj->ij", x, d_y)
    return loss, g


def loss_and_grads(params: SigModelParams, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over a batch ``(B, L, d_in)`` and its gradient."""
    x = _check_input(params, x)
    labels = np.asarray(labels, dtype=int)
    onehot = np.eye(params.n_classes)[labels]
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    for i in range(0, x.shape[0], CHUNK):
        loss, g = _chunk_grads(params, x[i:i + CHUNK], onehot[i:i + CHUNK])
        total += loss
        for k in grads:
            grads[k] += g[k]
    n = x.shape[0]
    return total / n, {k: v / n for k, v in grads.items()}


def backward(params: SigModelParams, path, onehot) -> dict:
    """Gradient of the cross-entropy of one path against a one-hot label."""
    values = np.asarray(getattr(path, "values", path), dtype=float)
    _check_input(params, values)
    onehot = np.asarray(onehot, dtype=float).reshape(1, -1)
    _, g = _chunk_grads(params, values[None], onehot)
    return g


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_init(params: SigModelParams) -> AdamState:
    return AdamState({k: np.zeros_like(v) for k, v in params.arrays.items()},
                     {k: np.zeros_like(v) for k, v in params.arrays.items()})


def adam_step(params: SigModelParams, grads: dict, state: AdamState, lr: float, weight_decay: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with decoupled weight decay; returns new ``(params, state)``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {k}")
    t = state.t + 1
    new_arrays, new_m, new_v = {}, {}, {}
    for k, p in params.arrays.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_arrays[k] = p - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
        new_m[k], new_v[k] = m, v
    return SigModelParams(new_arrays, params.depth), AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    depth: int = 2
    aug_width: int = 4
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class FixedInputs:
    """Deterministic path inputs ``(n, L, d)`` or ``(n, S, L, d)``."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 3:
            values = values[:, None]
        if values.ndim != 4:
            raise ValueError(f"expected (n, L, d) or (n, S, L, d) inputs, got {values.shape}")
        self.values = values

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def draw(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.values


def _as_inputs(inputs):
    return inputs if hasattr(inputs, "draw") else FixedInputs(inputs)


def predict_inputs(params: SigModelParams, inputs, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Probabilities per instance, averaged over the sample axis."""
    x = _as_inputs(inputs).draw(rng)
    return predict_proba(params, x).mean(axis=1)


@dataclass
class TrainResult:
    params: SigModelParams
    best_score: float
    best_epoch: int
    epochs_run: int
    trace: list = field(default_factory=list)


def train(train_inputs, train_labels, val_inputs, val_labels, n_classes: int, config: TrainConfig,
          score_fn: Callable = metrics.selection_score) -> TrainResult:
    """Mini-batch Adam on cross-entropy with early stopping.

    ``train_inputs`` / ``val_inputs`` are arrays or objects with a
    ``draw(rng) -> (n, S, L, d)`` method; sampled inputs are redrawn every
    epoch for training and drawn once for validation. The loss of an
    instance is averaged over its ``S`` samples, validation probabilities
    likewise. Returns the parameters of the epoch with the best validation
    score (strict improvement, so earlier epochs win ties).
    """
    train_inputs, val_inputs = _as_inputs(train_inputs), _as_inputs(val_inputs)
    train_labels = np.asarray(train_labels, dtype=int)
    val_labels = np.asarray(val_labels, dtype=int)
    if len(train_inputs) == 0 or len(val_inputs) == 0:
        raise ValueError("train and validation splits must be nonempty")
    if train_labels.max() >= n_classes or val_labels.max() >= n_classes:
        raise ValueError("labels exceed the class count")
    rng = np.random.default_rng(config.seed)
    params = init_params(train_inputs.dim, config.aug_width, config.depth, n_classes, rng)
    state = adam_init(params)
    val_x = val_inputs.draw(np.random.default_rng([config.seed, 1]))

    best = params.copy()
    best_score, best_epoch, since = -np.inf, -1, 0
    trace = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        x = train_inputs.draw(rng)
        n, s = x.shape[:2]
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = x[idx].reshape((-1,) + x.shape[2:])
            yb = np.repeat(train_labels[idx], s)
            loss, grads = loss_and_grads(params, xb, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            params, state = adam_step(params, grads, state, config.lr, config.weight_decay)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / n)
        score = float(score_fn(val_labels, predict_proba(params, val_x).mean(axis=1)))
        trace.append({"epoch": epoch, "train_loss": train_loss, "val_score": score})
        if score > best_score:
            best, best_score, best_epoch, since = params.copy(), score, epoch, 0
        else:
            since += 1
            if since >= config.patience:
                break
    return TrainResult(best, best_score, best_epoch, epoch, trace)
