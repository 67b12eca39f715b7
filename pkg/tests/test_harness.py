import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from sigpath import harness
from sigpath.cli import main
from sigpath.harness import (
    ExperimentConfig,
    McInputs,
    build_inputs,
    derive_seed,
    draw_arms,
    fit_posteriors,
    hyper_search,
    prepare,
    run_experiment,
)
from sigpath.model import FixedInputs
from sigpath.report import barplot_svg, read_results_csv, results_csv
from sigpath.synth import SynthSpec, synth_dataset
from sigpath.timeseries import fit_standardizer, parse_long_csv, to_long_csv

TINY = dict(
    synthetic={"n_train": 40, "n_test": 20, "n_times": 10},
    search_calls=2,
    final_fits=2,
    max_epochs=4,
    patience=2,
    depths=[2],
    aug_widths=[2, 3],
    batch_sizes=[16],
    gp_iters=10,
    mc_samples=3,
)


def tiny(**kw):
    return ExperimentConfig.from_dict({**TINY, **kw})


# --- config and seeds -------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"imputation": "zero"})
    with pytest.raises(ValueError):
        ExperimentConfig(imputations=["median"])
    with pytest.raises(ValueError):
        ExperimentConfig(search_calls=0)
    with pytest.raises(ValueError):
        ExperimentConfig(final_fits=0)
    with pytest.raises(ValueError):
        ExperimentConfig(subsampling="mcar")
    with pytest.raises(ValueError):
        ExperimentConfig(series="x.csv")
    assert ExperimentConfig(subsampling="label").subsampling_label == "label(0.4,0.6)"


def test_config_paths_resolve_relative_to_file(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"series": "s.csv", "labels": "l.csv"}))
    cfg = ExperimentConfig.from_json_file(tmp_path / "cfg.json")
    assert cfg.series == str(tmp_path / "s.csv")


def test_seed_derivation_is_pure_and_distinct():
    assert derive_seed(0, "search", 3) == derive_seed(0, "search", 3)
    seeds = {derive_seed(m, phase, i) for m in (0, 1) for phase in ("search", "final") for i in range(5)}
    assert len(seeds) == 20


def test_arms_are_reproducible_and_in_range():
    cfg = ExperimentConfig(search_calls=20)
    arms = draw_arms(cfg)
    assert arms == draw_arms(cfg)
    assert len(arms) == 20
    for arm in arms:
        assert 1e-4 <= arm.lr <= 1e-2 and 1e-4 <= arm.weight_decay <= 1e-2
        assert arm.batch_size in (32, 64, 128, 256) and arm.depth in (2, 3, 4) and 2 <= arm.aug_width <= 8
    assert len({a.seed for a in arms}) == 20


# --- data preparation -------------------------------------------------------


def test_prepare_has_no_test_leakage():
    cfg = tiny(subsampling="random", drop_fraction=0.3)
    base = synth_dataset(SynthSpec(**cfg.synthetic))
    a = prepare(cfg, base)
    poisoned = [type(ts)(ts.times * (3 if s == "test" else 1), ts.values + (50 if s == "test" else 0),
                         ts.channel_names) for ts, s in zip(base.instances, base.splits)]
    b = prepare(cfg, base.with_instances(poisoned))
    np.testing.assert_array_equal(a.stats.mean, b.stats.mean)
    np.testing.assert_array_equal(a.grid, b.grid)
    assert a.time_span == b.time_span
    # training instances are standardized with their own statistics
    check = fit_standardizer(a.dataset)
    np.testing.assert_allclose(check.mean, 0.0, atol=1e-12)
    assert set(a.dataset.splits) == {"train", "val", "test"}
    for ts in a.dataset.instances:
        assert set(ts.times) <= set(a.grid)


def test_fixed_resolution_grid():
    cfg = tiny(grid_resolution=3.0)
    data = prepare(cfg)
    np.testing.assert_allclose(data.grid, [0, 1 / 3, 2 / 3, 1])


def test_mc_inputs_draw_around_posterior_mean():
    cfg = tiny()
    data = prepare(cfg)
    posts = fit_posteriors(data, cfg)[:3]
    data = replace(data, dataset=data.dataset.take([0, 1, 2]))
    inputs = build_inputs(data, "gp-mc", replace(cfg, mc_samples=2000), posts)
    assert isinstance(inputs, McInputs) and inputs.dim == 3
    x = inputs.draw(np.random.default_rng(0))
    assert x.shape == (3, 2000, len(data.grid), 3)
    np.testing.assert_array_equal(x[..., 0], np.broadcast_to(data.grid, x.shape[:-1]))
    mean = build_inputs(data, "gp-mean", cfg, posts).values[:, 0, :, 1:]
    np.testing.assert_allclose(x[..., 1:].mean(axis=1), mean, atol=0.15)


# --- search -----------------------------------------------------------------


def _search_data(cfg):
    data = prepare(cfg)
    inputs = build_inputs(data, "zero", cfg)
    splits = np.array(data.dataset.splits)
    part = {s: (harness._take(inputs, np.flatnonzero(splits == s)), data.dataset.labels[splits == s])
            for s in ("train", "val")}
    return part["train"], part["val"]


def test_single_call_search_returns_that_arm():
    cfg = tiny(search_calls=1)
    (xt, yt), (xv, yv) = _search_data(cfg)
    arms = draw_arms(cfg)
    res = hyper_search(arms, xt, yt, xv, yv, 2)
    assert res.best == arms[0] and res.best_index == 0 and len(res.trace) == 1


def test_identical_arms_tie_to_the_first():
    cfg = tiny()
    (xt, yt), (xv, yv) = _search_data(cfg)
    arm = draw_arms(cfg)[0]
    res = hyper_search([arm, arm, arm], xt, yt, xv, yv, 2)
    scores = {a["val_score"] for a in res.trace}
    assert len(scores) == 1 and res.best_index == 0
    assert res.best_score >= max(a["val_score"] for a in res.trace)


# --- run and report ---------------------------------------------------------


def test_run_schema_and_report_files(tmp_path):
    cfg = tiny(imputations=["zero", "gp-pom"], subsampling="label", final_fits=2)
    report = run_experiment(cfg, tmp_path)
    assert report.complete
    csv_text = (tmp_path / "results.csv").read_text()
    rows = csv_text.strip().splitlines()[1:]
    assert len(rows) == 2 * 2 * 5  # strategies x seeds x metrics
    assert all(0.0 <= r.value <= 1.0 for r in report.records)
    assert read_results_csv(csv_text).records == report.records
    assert results_csv(read_results_csv(tmp_path / "results.csv")) == csv_text
    for metric in report.metrics():
        root = ET.parse(tmp_path / f"barplot_{metric}.svg").getroot()
        groups = root.findall("{http://www.w3.org/2000/svg}g")
        assert [g.get("data-imputation") for g in groups] == ["zero", "gp-pom"]
    md = (tmp_path / "results.md").read_text()
    assert "| zero | 2 |" in md and "±" in md
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["strategies"]["gp-pom"]["param_count"] > 0
    assert "drop_rates" in payload["notes"]


def test_single_fit_omits_std(tmp_path):
    report = run_experiment(tiny(final_fits=1, imputations=["zero"]), tmp_path)
    assert all(std is None for _, std in report.summary()["zero"].values())
    assert "±" not in (tmp_path / "results.md").read_text().split("## Selected")[0].split("\n", 4)[-1]
    root = ET.fromstring(barplot_svg(report, "accuracy"))
    assert root.tag.endswith("svg")


def test_rerun_is_byte_identical_and_parallel_matches(tmp_path):
    cfg = tiny(imputations=["zero", "gp-mc"])
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    run_experiment(replace(cfg, jobs=2), tmp_path / "c")
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert a == (tmp_path / "c" / "results.csv").read_bytes()


def test_partial_results_flushed_on_error(tmp_path, monkeypatch):
    real = harness.build_inputs

    def failing(data, tag, config, posteriors=None):
        if tag == "indicator":
            raise RuntimeError("boom")
        return real(data, tag, config, posteriors)

    monkeypatch.setattr(harness, "build_inputs", failing)
    with pytest.raises(RuntimeError):
        run_experiment(tiny(imputations=["zero", "indicator"]), tmp_path)
    report = read_results_csv(tmp_path / "results.csv")
    assert report.imputations() == ["zero"]
    assert "Partial results" in (tmp_path / "results.md").read_text()


def test_csv_dataset_with_own_splits(tmp_path):
    ds = synth_dataset(SynthSpec(n_train=40, n_test=20, n_times=8))
    series, labels = to_long_csv(ds)
    (tmp_path / "s.csv").write_text(series)
    (tmp_path / "l.csv").write_text(labels)
    cfg = tiny(series=str(tmp_path / "s.csv"), labels=str(tmp_path / "l.csv"), dataset="toy", synthetic=None)
    report = run_experiment(cfg, tmp_path / "out")
    assert {r.dataset for r in report.records} == {"toy"}
    # a labels file without a split column gets a stratified test split
    (tmp_path / "l2.csv").write_text("\n".join(line.rsplit(",", 1)[0] for line in labels.splitlines()) + "\n")
    loaded = harness.load_dataset(replace(cfg, labels=str(tmp_path / "l2.csv")))
    assert 0 < loaded.splits.count("test") < len(loaded)


# --- CLI --------------------------------------------------------------------


def test_cli_synth_and_sig(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_train": 4, "n_test": 2, "n_times": 5}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    ds = parse_long_csv((tmp_path / "data" / "series.csv").read_text(), (tmp_path / "data" / "labels.csv").read_text())
    assert len(ds) == 6
    capsys.readouterr()
    assert main(["sig", "--input", str(tmp_path / "data" / "series.csv"), "--depth", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["channels"] == ["time", "ch0", "ch1"]
    assert len(out["signatures"]) == 6
    levels = out["signatures"]["s00000"]
    assert len(levels) == 2 and np.asarray(levels[1]).size == 9


def test_cli_run_with_overrides(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    args = ["run", "--config", str(cfg), "--imputation", "zero", "--imputation", "causal", "--seed", "4",
            "--depth", "2", "--subsampling", "random", "--drop-fraction", "0.2", "--final-fits", "1",
            "--out", str(tmp_path / "out")]
    assert main(args) == 0
    report = read_results_csv(tmp_path / "out" / "results.csv")
    assert report.imputations() == ["zero", "causal"]
    assert report.subsampling == "random(0.2)"


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["sig", "--input", str(tmp_path / "missing.csv"), "--depth", "2"]) != 0
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_field": 1}))
    assert main(["run", "--config", str(bad)]) != 0
    (tmp_path / "s.csv").write_text("id,time,channel,value\na,0,x,1\n")
    assert main(["sig", "--input", str(tmp_path / "s.csv"), "--depth", "9"]) != 0
    with pytest.raises(SystemExit) as exc:
        main(["run", "--imputation", "median"])
    assert exc.value.code != 0
