"""Synthetic labelled time series with class-dependent curve shapes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .timeseries import IrregularTimeSeries, LabeledDataset


@dataclass(frozen=True)
class SynthSpec:
    """Sinusoids whose frequency depends on the class.

    Channel ``j`` of an instance of class ``c`` is
    ``amp * sin(2 pi f_c s + pi j / d + shift) + noise`` on ``n_times``
    equally spaced integer times, with ``s`` the time rescaled to ``[0, 1]``,
    ``f_c = base_frequency * (1 + frequency_step * c)``, and per-instance
    ``amp ~ U(1 - amp_jitter, 1 + amp_jitter)``,
    ``shift ~ U(-phase_jitter, phase_jitter)``.
    """

    n_classes: int = 2
    n_channels: int = 2
    n_times: int = 20
    n_train: int = 200
    n_test: int = 100
    noise: float = 0.1
    base_frequency: float = 1.0
    frequency_step: float = 0.5
    amp_jitter: float = 0.2
    phase_jitter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.n_channels < 1 or self.n_times < 2:
            raise ValueError(f"degenerate synthetic spec {self}")
        if self.n_train < self.n_classes:
            raise ValueError("need at least one training instance per class")

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def synth_dataset(spec: SynthSpec, rng: np.random.Generator = None) -> LabeledDataset:
    """Fully observed dataset; the first ``n_train`` instances are tagged train.

    Labels cycle through the classes before shuffling, so splits are as
    balanced as their sizes allow. ``rng`` defaults to one seeded with
    ``spec.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    times = np.arange(spec.n_times, dtype=float)
    s = times / (spec.n_times - 1)
    offsets = np.pi * np.arange(spec.n_channels) / spec.n_channels
    ids, instances, labels, splits = [], [], [], []
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        classes = rng.permutation(np.arange(count) % spec.n_classes)
        for c in classes:
            freq = spec.base_frequency * (1 + spec.frequency_step * c)
            amp = rng.uniform(1 - spec.amp_jitter, 1 + spec.amp_jitter)
            shift = rng.uniform(-spec.phase_jitter, spec.phase_jitter)
            clean = amp * np.sin(2 * np.pi * freq * s[:, None] + offsets[None, :] + shift)
            values = clean + spec.noise * rng.standard_normal(clean.shape)
            ids.append(f"s{len(ids):05d}")
            instances.append(IrregularTimeSeries(times, values, tuple(f"ch{j}" for j in range(spec.n_channels))))
            labels.append(int(c))
            splits.append(split)
    return LabeledDataset(ids, instances, np.array(labels), splits,
                          tuple(f"ch{j}" for j in range(spec.n_channels)), spec.n_classes)
