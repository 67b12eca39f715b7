"""Experiment runner: data -> subsampling -> standardization -> imputation -> Sig model -> metrics."""

from __future__ import annotations

import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import gp, imputation, metrics, model
from . import timeseries as ts_mod
from .synth import SynthSpec, synth_dataset
from .timeseries import LabeledDataset

log = logging.getLogger(__name__)

MODEL_NAME = "Sig"


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    series: Optional[str] = None
    labels: Optional[str] = None
    synthetic: Optional[dict] = None
    subsampling: str = "none"
    drop_fraction: float = 0.5
    label_lo: float = 0.4
    label_hi: float = 0.6
    imputations: list = field(default_factory=lambda: ["linear"])
    search_calls: int = 20
    final_fits: int = 5
    seed: int = 0
    grid_resolution: Optional[float] = None
    max_epochs: int = 100
    patience: int = 20
    depths: list = field(default_factory=lambda: [2, 3, 4])
    aug_widths: list = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    batch_sizes: list = field(default_factory=lambda: [32, 64, 128, 256])
    lr_range: list = field(default_factory=lambda: [1e-4, 1e-2])
    weight_decay_range: list = field(default_factory=lambda: [1e-4, 1e-2])
    gp_iters: int = 100
    mc_samples: int = 10
    jitter_init: float = gp.JITTER_INIT
    val_fraction: float = 0.2
    test_fraction: float = 0.3
    out: str = "results"
    jobs: int = 1

    def __post_init__(self):
        if self.search_calls < 1 or self.final_fits < 1:
            raise ValueError("search_calls and final_fits must be at least 1")
        if self.subsampling not in ("none", "random", "label"):
            raise ValueError(f"unknown subsampling {self.subsampling!r}")
        for tag in self.imputations:
            if tag not in imputation.STRATEGIES:
                raise ValueError(f"unknown imputation {tag!r}; choose from {imputation.STRATEGIES}")
        if not self.imputations:
            raise ValueError("at least one imputation strategy is required")
        if self.series is None and self.synthetic is None:
            self.synthetic = {}
        if self.series is not None and self.labels is None:
            raise ValueError("a series CSV needs a labels CSV")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if base_dir is not None:
            for key in ("series", "labels"):
                if data.get(key) is not None and not Path(data[key]).is_absolute():
                    data[key] = str(Path(base_dir) / data[key])
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def subsampling_label(self) -> str:
        if self.subsampling == "random":
            return f"random({self.drop_fraction:g})"
        if self.subsampling == "label":
            return f"label({self.label_lo:g},{self.label_hi:g})"
        return "none"


def derive_seed(master: int, *keys) -> int:
    """Child seed as a pure function of the master seed and a key path."""
    words = [int(master)]
    for key in keys:
        words.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def derive_rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    dataset: LabeledDataset
    grid: np.ndarray
    stats: ts_mod.StandardizationStats
    time_span: tuple
    notes: dict


def load_dataset(config: ExperimentConfig) -> LabeledDataset:
    if config.series is not None:
        with open(config.series, encoding="utf-8") as fs, open(config.labels, encoding="utf-8") as fl:
            ds = ts_mod.parse_long_csv(fs, fl)
        if "test" not in ds.splits:
            ds = ts_mod.assign_test_split(ds, config.test_fraction, derive_rng(config.seed, "test-split"))
        return ds
    spec = SynthSpec(**(config.synthetic or {}))
    return synth_dataset(spec)


def prepare(config: ExperimentConfig, ds: Optional[LabeledDataset] = None) -> PreparedData:
    """Subsample, hold out validation, rescale time, standardize and grid.

    Every statistic (time span, channel moments, grid) comes from the
    training split (train + val); test instances are transformed with it.
    """
    if ds is None:
        ds = load_dataset(config)
    notes = {}
    if config.subsampling == "random":
        ds = ts_mod.random_subsample(ds, config.drop_fraction, derive_rng(config.seed, "subsample"))
    elif config.subsampling == "label":
        ds = ts_mod.label_based_subsample(ds, config.label_lo, config.label_hi,
                                          derive_rng(config.seed, "subsample"))
        notes["drop_rates"] = ds.meta["drop_rates"]
    if "val" not in ds.splits:
        ds = ts_mod.stratified_holdout(ds, config.val_fraction, derive_rng(config.seed, "holdout"))
    for split in ("train", "val", "test"):
        present = set(ds.subset(split).labels.tolist())
        if split == "train" and present != set(range(ds.n_classes)):
            raise ts_mod.DataError(f"train split lacks classes {sorted(set(range(ds.n_classes)) - present)}")
        if not present:
            raise ts_mod.DataError(f"{split} split is empty")

    training = ds.subset("train", "val").instances
    start, end = ts_mod.time_range(training)
    ds = ts_mod.rescale_time(ds, start, end)
    stats = ts_mod.fit_standardizer(ds, "train")
    ds = ts_mod.apply_standardizer(ds, stats)
    if config.grid_resolution is None:
        grid = ts_mod.observed_grid(ds.subset("train", "val").instances)
    else:
        scale = end - start if end > start else 1.0
        grid = ts_mod.sample_grid(0.0, 1.0, config.grid_resolution / scale)
    ds = ds.with_instances([ts_mod.snap_to_grid(ts, grid) for ts in ds.instances])
    notes["time_channel"] = "raw time rescaled to [0, 1] with the training span; not standardized"
    notes["gp_channels"] = "independent per-channel RBF GPs"
    return PreparedData(ds, grid, stats, (start, end), notes)


class McInputs:
    """Fresh joint GP posterior draws on the grid, time channel prepended."""

    def __init__(self, means: np.ndarray, factors: np.ndarray, grid: np.ndarray, n_samples: int):
        self.means = means  # (n, G, d)
        self.factors = factors  # (n, d, G, G)
        self.grid = grid
        self.n_samples = n_samples

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[2] + 1

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        n, g, d = self.means.shape
        z = rng.standard_normal((n, self.n_samples, d, g))
        draws = np.einsum("idgh,isdh->isgd", self.factors, z) + self.means[:, None]
        time = np.broadcast_to(self.grid[None, None, :, None], (n, self.n_samples, g, 1))
        return np.concatenate([time, draws], axis=-1)

    def take(self, idx) -> "McInputs":
        return McInputs(self.means[idx], self.factors[idx], self.grid, self.n_samples)


def fit_posteriors(data: PreparedData, config: ExperimentConfig) -> list:
    return [gp.fit_posterior(ts, iters=config.gp_iters, jitter_init=config.jitter_init)
            for ts in data.dataset.instances]


def build_inputs(data: PreparedData, tag: str, config: ExperimentConfig, posteriors: Optional[list] = None):
    """Model inputs for the whole dataset under one strategy (indexable by instance)."""
    grid = data.grid
    if tag == "gp-mc":
        means, factors = zip(*(gp.sampling_factors(p, grid) for p in posteriors))
        return McInputs(np.stack(means), np.stack(factors), grid, config.mc_samples)
    paths = []
    for i, ts in enumerate(data.dataset.instances):
        post = posteriors[i] if posteriors is not None and tag in imputation.GP_STRATEGIES else None
        strategy = imputation.ImputationStrategy(tag, posterior=post, gp_iters=config.gp_iters,
                                                 jitter_init=config.jitter_init)
        paths.append(imputation.impute(ts, strategy, grid).values)
    return model.FixedInputs(np.stack(paths))


def _take(inputs, idx):
    if isinstance(inputs, McInputs):
        return inputs.take(idx)
    return model.FixedInputs(inputs.values[idx])


# ---------------------------------------------------------------------------
# search and fitting
# ---------------------------------------------------------------------------


def draw_arms(config: ExperimentConfig) -> list:
    """The random search arms; identical for every imputation strategy."""
    rng = derive_rng(config.seed, "search-arms")
    lo_lr, hi_lr = np.log(config.lr_range)
    lo_wd, hi_wd = np.log(config.weight_decay_range)
    arms = []
    for i in range(config.search_calls):
        arms.append(model.TrainConfig(
            lr=float(np.exp(rng.uniform(lo_lr, hi_lr))),
            weight_decay=float(np.exp(rng.uniform(lo_wd, hi_wd))),
            batch_size=int(rng.choice(config.batch_sizes)),
            depth=int(rng.choice(config.depths)),
            aug_width=int(rng.choice(config.aug_widths)),
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=derive_seed(config.seed, "search", i),
        ))
    return arms


def _fit_job(job):
    train_in, train_y, val_in, val_y, test_in, test_y, n_classes, cfg = job
    try:
        result = model.train(train_in, train_y, val_in, val_y, n_classes, cfg)
    except model.TrainingDiverged as exc:
        return {"config": cfg.to_dict(), "diverged": str(exc), "val_score": None}
    out = {
        "config": cfg.to_dict(),
        "val_score": result.best_score,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "param_count": result.params.count(),
    }
    if test_in is not None:
        probs = model.predict_inputs(result.params, test_in, np.random.default_rng([cfg.seed, 2]))
        out["test_metrics"] = metrics.classification_report(test_y, probs)
    return out


def _run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_fit_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_job, jobs))  # map keeps submission order


@dataclass
class SearchResult:
    best: model.TrainConfig
    best_index: int
    best_score: float
    trace: list


def hyper_search(arms: list, train_in, train_y, val_in, val_y, n_classes: int, workers: int = 1) -> SearchResult:
    """Train every arm; the best validation score wins, earlier arms on ties."""
    jobs = [(train_in, train_y, val_in, val_y, None, None, n_classes, cfg) for cfg in arms]
    trace = _run_jobs(jobs, workers)
    best_index, best_score = -1, -np.inf
    for i, arm in enumerate(trace):
        if arm["val_score"] is not None and arm["val_score"] > best_score:
            best_index, best_score = i, arm["val_score"]
    if best_index < 0:
        raise model.TrainingDiverged("every search arm diverged")
    return SearchResult(arms[best_index], best_index, float(best_score), trace)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


METRIC_ORDER = ("accuracy", "balanced_accuracy", "weighted_auroc", "auroc", "average_precision")


@dataclass
class MetricRecord:
    dataset: str
    subsampling: str
    imputation: str
    model: str
    seed: int
    metric: str
    value: float


@dataclass
class MetricsReport:
    dataset: str
    subsampling: str
    records: list = field(default_factory=list)
    strategies: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    complete: bool = False

    def imputations(self) -> list:
        seen = []
        for r in self.records:
            if r.imputation not in seen:
                seen.append(r.imputation)
        return seen

    def metrics(self) -> list:
        present = {r.metric for r in self.records}
        return [m for m in METRIC_ORDER if m in present] + sorted(present - set(METRIC_ORDER))

    def summary(self) -> dict:
        """``{imputation: {metric: (mean, std or None)}}``; std needs two or more fits."""
        out = {}
        for imp in self.imputations():
            out[imp] = {}
            for m in self.metrics():
                vals = np.array([r.value for r in self.records if r.imputation == imp and r.metric == m])
                if vals.size:
                    std = float(np.std(vals, ddof=1)) if vals.size >= 2 else None
                    out[imp][m] = (float(vals.mean()), std)
        return out


def run_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> MetricsReport:
    """Search, refit and evaluate every requested imputation strategy.

    For each strategy: ``search_calls`` random arms selected on validation
    (AP if binary, BAC otherwise), then ``final_fits`` refits of the winning
    configuration with fresh derived seeds, each scored on the test split.
    Results are written to ``out_dir`` (default ``config.out``) after every
    strategy, so a failure leaves the finished part on disk.
    """
    from .report import emit_report

    out_dir = Path(out_dir if out_dir is not None else config.out)
    data = prepare(config)
    ds = data.dataset
    report = MetricsReport(config.dataset, config.subsampling_label, notes=dict(data.notes))
    report.notes["grid_points"] = int(len(data.grid))
    splits = np.array(ds.splits)
    idx = {s: np.flatnonzero(splits == s) for s in ("train", "val", "test")}
    arms = draw_arms(config)
    posteriors = None
    try:
        for tag in config.imputations:
            started = time.perf_counter()
            if tag in imputation.GP_STRATEGIES and posteriors is None:
                log.info("fitting GP posteriors for %d instances", len(ds))
                posteriors = fit_posteriors(data, config)
            inputs = build_inputs(data, tag, config, posteriors)
            parts = {s: (_take(inputs, i), ds.labels[i]) for s, i in idx.items()}
            log.info("%s: searching %d arms", tag, len(arms))
            search = hyper_search(arms, *parts["train"], *parts["val"], ds.n_classes, config.jobs)
            finals = [replace(search.best, seed=derive_seed(config.seed, "final", k))
                      for k in range(config.final_fits)]
            jobs = [(*parts["train"], *parts["val"], *parts["test"], ds.n_classes, cfg) for cfg in finals]
            results = _run_jobs(jobs, config.jobs)
            for cfg, res in zip(finals, results):
                if res["val_score"] is None:
                    raise model.TrainingDiverged(f"{tag}: final fit with seed {cfg.seed} diverged")
                for name in METRIC_ORDER:
                    if name in res["test_metrics"]:
                        report.records.append(MetricRecord(config.dataset, config.subsampling_label, tag,
                                                           MODEL_NAME, cfg.seed, name,
                                                           float(res["test_metrics"][name])))
            best = search.best.to_dict()
            best.pop("seed")
            report.strategies[tag] = {
                "hyperparameters": best,
                "search_best_arm": search.best_index,
                "search_best_val_score": search.best_score,
                "search_trace": [{k: v for k, v in arm.items() if k != "config"} | {"arm": i}
                                 for i, arm in enumerate(search.trace)],
                "param_count": model.parameter_count(inputs.dim, search.best.aug_width, search.best.depth,
                                                     ds.n_classes),
                "input_dim": inputs.dim,
                "final_val_scores": [r["val_score"] for r in results],
                "wall_time_s": round(time.perf_counter() - started, 3),
            }
            if write:
                emit_report(report, out_dir)
    except Exception:
        if write and report.records:
            emit_report(report, out_dir)
        raise
    report.complete = True
    if write:
        emit_report(report, out_dir)
    return report
