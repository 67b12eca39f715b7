"""Command line entry point: ``sigpath run | synth | sig``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import imputation, signature, timeseries
from .harness import ExperimentConfig, run_experiment
from .synth import SynthSpec, synth_dataset

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigpath", description="Path signatures of irregular time series.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the search and evaluation protocol")
    run.add_argument("--config", type=Path, help="JSON experiment config")
    run.add_argument("--dataset", help="series CSV (id,time,channel,value) or 'synthetic'")
    run.add_argument("--labels", help="labels CSV (id,label[,split])")
    run.add_argument("--imputation", action="append", choices=imputation.STRATEGIES,
                     help="strategy to evaluate; repeat for several")
    run.add_argument("--subsampling", choices=("none", "random", "label"))
    run.add_argument("--drop-fraction", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--depth", type=int, action="append", help="restrict the searched depths; repeatable")
    run.add_argument("--out", help="output directory")
    run.add_argument("--gp-iters", type=int)
    run.add_argument("--mc-samples", type=int)
    run.add_argument("--jitter-init", type=float)
    run.add_argument("--search-calls", type=int)
    run.add_argument("--final-fits", type=int)
    run.add_argument("--jobs", type=int)

    synth = sub.add_parser("synth", help="write a synthetic dataset as long-format CSV")
    synth.add_argument("--spec", type=Path, help="JSON synthetic spec (defaults used when omitted)")
    synth.add_argument("--out", type=Path, help="directory for series.csv and labels.csv (stdout if omitted)")

    sig = sub.add_parser("sig", help="print signatures of the series in a long-format CSV as JSON")
    sig.add_argument("--input", type=Path, required=True)
    sig.add_argument("--depth", type=int, required=True)
    sig.add_argument("--imputation", default="linear",
                     choices=[s for s in imputation.STRATEGIES if s not in imputation.GP_STRATEGIES])
    return parser


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    base = None
    if args.config is not None:
        data = json.loads(args.config.read_text(encoding="utf-8"))
        base = args.config.parent
    if args.dataset is not None:
        if args.dataset == "synthetic":
            data.update(dataset="synthetic", series=None, labels=None)
        else:
            data.update(series=str(Path(args.dataset).resolve()), dataset=Path(args.dataset).stem)
            data.pop("synthetic", None)
    if args.labels is not None:
        data["labels"] = str(Path(args.labels).resolve())
    overrides = {
        "imputations": args.imputation,
        "subsampling": args.subsampling,
        "drop_fraction": args.drop_fraction,
        "seed": args.seed,
        "depths": args.depth,
        "out": args.out,
        "gp_iters": args.gp_iters,
        "mc_samples": args.mc_samples,
        "jitter_init": args.jitter_init,
        "search_calls": args.search_calls,
        "final_fits": args.final_fits,
        "jobs": args.jobs,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data, base_dir=base)


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config)
    for imp, row in report.summary().items():
        cells = ", ".join(f"{m}={100 * mean:.2f}" for m, (mean, _) in row.items())
        print(f"{imp}: {cells}")
    print(f"wrote {Path(config.out) / 'results.csv'}")
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec.read_text(encoding="utf-8")) if args.spec else SynthSpec()
    series, labels = timeseries.to_long_csv(synth_dataset(spec))
    if args.out is None:
        sys.stdout.write(series)
        sys.stdout.write("\n")
        sys.stdout.write(labels)
        return 0
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "series.csv").write_text(series, encoding="utf-8")
    (args.out / "labels.csv").write_text(labels, encoding="utf-8")
    print(f"wrote {args.out / 'series.csv'} and {args.out / 'labels.csv'}")
    return 0


def _cmd_sig(args) -> int:
    """Signature of each series imputed on its own timestamps, time channel first."""
    signature.check_budget(1, args.depth)
    series, names = timeseries.parse_series_csv(args.input.read_text(encoding="utf-8"))
    out = {"channels": ["time", *names], "depth": args.depth, "signatures": {}}
    if args.imputation == "indicator":
        out["channels"] += [f"missing:{n}" for n in names]
    for sid, ts in series.items():
        path = imputation.impute(ts, args.imputation, ts.times)
        sig = signature.signature(path, args.depth)
        out["signatures"][sid] = sig.to_lists()
    json.dump(out, sys.stdout, indent=None)
    sys.stdout.write("\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    commands = {"run": _cmd_run, "synth": _cmd_synth, "sig": _cmd_sig}
    try:
        return commands[args.command](args)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"sigpath {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
