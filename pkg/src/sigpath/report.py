"""Result tables, markdown summary, bar plots and JSON report."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

from .harness import MetricRecord, MetricsReport

CSV_COLUMNS = ("dataset", "subsampling", "imputation", "model", "seed", "metric", "value")


def results_csv(report: MetricsReport) -> str:
    """Long-format CSV; floats use ``repr`` so a re-parse is exact."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.records:
        writer.writerow([r.dataset, r.subsampling, r.imputation, r.model, r.seed, r.metric, repr(float(r.value))])
    return buf.getvalue()


def read_results_csv(source) -> MetricsReport:
    """Inverse of ``results_csv`` (path or text)."""
    if isinstance(source, Path) or "\n" not in source:
        source = Path(source).read_text(encoding="utf-8")
    text = source
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {tuple(rows[0])}")
    records = [MetricRecord(r["dataset"], r["subsampling"], r["imputation"], r["model"], int(r["seed"]),
                            r["metric"], float(r["value"])) for r in rows]
    dataset = records[0].dataset if records else ""
    subsampling = records[0].subsampling if records else ""
    return MetricsReport(dataset, subsampling, records)


def _pct(mean, std) -> str:
    if std is None:
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def results_markdown(report: MetricsReport) -> str:
    summary = report.summary()
    names = report.metrics()
    n_fits = {imp: len({r.seed for r in report.records if r.imputation == imp}) for imp in summary}
    lines = [f"# {report.dataset} ({report.subsampling})", ""]
    if not report.complete:
        lines += ["**Partial results: the run did not finish.**", ""]
    lines += ["Test metrics in percent, mean ± sample std over final fits.", ""]
    lines.append("| imputation | fits | " + " | ".join(names) + " |")
    lines.append("|---|---|" + "---|" * len(names))
    for imp, row in summary.items():
        cells = [_pct(*row[m]) if m in row else "" for m in names]
        lines.append(f"| {imp} | {n_fits[imp]} | " + " | ".join(cells) + " |")
    if report.strategies:
        lines += ["", "## Selected hyperparameters", ""]
        lines.append("| imputation | depth | aug_width | batch_size | lr | weight_decay | parameters | wall time (s) |")
        lines.append("|---|---|---|---|---|---|---|---|")
        for imp, info in report.strategies.items():
            h = info["hyperparameters"]
            lines.append(f"| {imp} | {h['depth']} | {h['aug_width']} | {h['batch_size']} | {h['lr']:.3g} "
                         f"| {h['weight_decay']:.3g} | {info['param_count']} | {info['wall_time_s']:.1f} |")
    if report.notes:
        lines += ["", "## Notes", ""]
        for key, value in report.notes.items():
            lines.append(f"- {key}: {value}")
    return "\n".join(lines) + "\n"


def barplot_svg(report: MetricsReport, metric: str, width: int = 640, height: int = 360) -> str:
    """Bars of mean test ``metric`` per imputation with ±1 std whiskers."""
    summary = {imp: row[metric] for imp, row in report.summary().items() if metric in row}
    left, right, top, bottom = 60, 20, 30, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    n = max(len(summary), 1)
    slot = plot_w / n
    bar_w = slot * 0.6

    def y_of(v):
        return top + plot_h * (1 - min(max(v, 0.0), 1.0))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(report.dataset)} / {escape(report.subsampling)}: {escape(metric)}</text>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
           f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(tick)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{100 * tick:g}</text>')
    for i, (imp, (mean, std)) in enumerate(summary.items()):
        x = left + i * slot + (slot - bar_w) / 2
        cx = x + bar_w / 2
        y = y_of(mean)
        out.append(f'<g class="imputation" data-imputation="{escape(imp)}">')
        out.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{top + plot_h - y:.1f}" '
                   f'fill="#4477aa"><title>{escape(imp)}: {_pct(mean, std)}</title></rect>')
        if std is not None:
            y0, y1 = y_of(mean - std), y_of(mean + std)
            out.append(f'<line x1="{cx:.1f}" y1="{y0:.1f}" x2="{cx:.1f}" y2="{y1:.1f}" stroke="black"/>')
            for yy in (y0, y1):
                out.append(f'<line x1="{cx - 5:.1f}" y1="{yy:.1f}" x2="{cx + 5:.1f}" y2="{yy:.1f}" stroke="black"/>')
        out.append(f'<text x="{cx:.1f}" y="{top + plot_h + 16}" text-anchor="middle">{escape(imp)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_json(report: MetricsReport) -> str:
    summary = {imp: {m: {"mean": mean, "std": std} for m, (mean, std) in row.items()}
               for imp, row in report.summary().items()}
    payload = {
        "dataset": report.dataset,
        "subsampling": report.subsampling,
        "complete": report.complete,
        "summary": summary,
        "strategies": report.strategies,
        "notes": report.notes,
    }
    return json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"


def emit_report(report: MetricsReport, out_dir) -> Path:
    """Write results.csv, results.md, report.json and one barplot per metric."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(results_csv(report), encoding="utf-8")
    (out_dir / "results.md").write_text(results_markdown(report), encoding="utf-8")
    (out_dir / "report.json").write_text(report_json(report), encoding="utf-8")
    for metric in report.metrics():
        (out_dir / f"barplot_{metric}.svg").write_text(barplot_svg(report, metric), encoding="utf-8")
    return out_dir
