"""Benchmark reports: delimited data plus rendered figures.

Every bench writes a CSV (the primary artifact), a JSON twin, and a PNG
rendered with matplotlib; an HTML index links them all.  Figures import
matplotlib lazily so the analytic core stays usable without a display
stack.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence


def write_table(outdir: Path, name: str, rows: Sequence[dict]) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{name}.csv"
    if rows:
        fields = list(rows[0].keys())
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    else:
        csv_path.write_text("")
    (outdir / f"{name}.json").write_text(json.dumps(rows, indent=2))
    return csv_path


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def figure_merge(outdir: Path, rows: Sequence[dict]) -> Path:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    algos = sorted({r["algo"] for r in rows})
    for algo in algos:
        sub = [r for r in rows if r["algo"] == algo]
        xs = [r["x"] for r in sub]
        ax1.plot(xs, [r["dp"] for r in sub], marker="o", label=algo)
        ax2.plot(xs, [r["sr"] for r in sub], marker="s", label=algo)
    ax1.set_xlabel("models merged")
    ax1.set_ylabel("quality gap (DP)")
    ax1.set_title("Merge quality loss")
    ax1.legend()
    ax2.set_xlabel("models merged")
    ax2.set_ylabel("speedup ratio (SR)")
    ax2.set_yscale("log")
    ax2.set_title("Merge speedup")
    ax2.legend()
    fig.tight_layout()
    path = Path(outdir) / "bench_merge.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_plansearch(outdir: Path, rows: Sequence[dict]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        sub = sorted(
            (r for r in rows if r["method"] == method), key=lambda r: r["m"]
        )
        ax.plot([r["m"] for r in sub], [r["mean_time_s"] for r in sub],
                marker="o", label=method)
    ax.set_xlabel("candidate models")
    ax.set_ylabel("mean search time (s)")
    ax.set_yscale("log")
    ax.set_title("Plan search time")
    ax.legend()
    fig.tight_layout()
    path = Path(outdir) / "bench_plansearch.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_coverage(outdir: Path, rows: Sequence[dict]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for algo in sorted({r["algo"] for r in rows}):
        sub = sorted(
            (r for r in rows if r["algo"] == algo), key=lambda r: r["ratio"]
        )
        ax.plot([r["ratio"] for r in sub], [r["sr"] for r in sub],
                marker="o", label=algo)
    ax.set_xlabel("coverage ratio (%)")
    ax.set_ylabel("speedup ratio (SR)")
    ax.set_yscale("log")
    ax.set_title("Speedup vs model coverage")
    ax.legend()
    fig.tight_layout()
    path = Path(outdir) / "bench_coverage.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_index(outdir: Path, title: str, artifacts: Sequence[str]) -> Path:
    items = "\n".join(
        f'<li><a href="{name}">{name}</a></li>' for name in artifacts
    )
    html = (
        "<!doctype html><html><head><meta charset='utf-8'>"
        f"<title>{title}</title></head><body><h1>{title}</h1>"
        f"<ul>{items}</ul></body></html>"
    )
    path = Path(outdir) / "index.html"
    path.write_text(html)
    return path
