"""Delimited report writers plus matplotlib figures rendered alongside.

Each report path emits a CSV and a PNG with the same stem.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .blocking import BandConfig, scurve_probability  # noqa: E402


def _write_csv(path: Path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)


def scurve_table(configs: Sequence[BandConfig], sims: Sequence[float]) -> list[dict]:
    rows = []
    for s in sims:
        row = {"similarity": s}
        for cfg in configs:
            row[str(cfg)] = round(scurve_probability(s, cfg), 6)
        rows.append(row)
    return rows


def scurve_report(
    configs: Sequence[BandConfig],
    sims: Sequence[float],
    out_dir: str | Path,
    stem: str = "scurve",
    empirical: Optional[dict] = None,
) -> tuple[Path, Path]:
    """Probability table CSV + the S-curve figure.

    `empirical` optionally maps (config str, similarity) to a Monte Carlo
    estimate plotted as markers over the closed-form curves.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    rows = scurve_table(configs, sims)
    _write_csv(csv_path, ["similarity"] + [str(c) for c in configs], rows)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    grid = np.linspace(0.0, 1.0, 201)
    for cfg in configs:
        ax.plot(grid, [scurve_probability(s, cfg) for s in grid],
                label=f"r/b = {cfg}")
    if empirical:
        for (cfg_str, s), p in sorted(empirical.items()):
            ax.plot(s, p, "kx", markersize=6)
    ax.set_xlabel("Jaccard similarity")
    ax.set_ylabel("retrieval probability")
    ax.set_title("Band retrieval probability 1 - (1 - s^r)^b")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def eval_report(
    reports: dict[str, "object"],
    out_dir: str | Path,
    stem: str = "eval",
) -> tuple[Path, Path]:
    """System-name -> EvalReport comparison: CSV plus a recall/precision
    bar chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"

    rows = []
    for name, rep in reports.items():
        d = rep.to_dict()
        rows.append({"system": name, "recall": d["recall"],
                     "precision": d["precision"], "tp": d["tp"],
                     "fp": d["fp"], "fn": d["fn"],
                     "meanComparisons": d["meanComparisons"]})
    _write_csv(csv_path, ["system", "recall", "precision", "tp", "fp", "fn",
                          "meanComparisons"], rows)

    names = [r["system"] for r in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(x - 0.2, [r["recall"] for r in rows], width=0.4, label="recall")
    ax.bar(x + 0.2, [r["precision"] for r in rows], width=0.4, label="precision")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1.05)
    ax.set_title("Matching performance by system")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def tradeoff_report(
    rows: Sequence["object"],
    out_dir: str | Path,
    stem: str = "tradeoff",
) -> tuple[Path, Path]:
    """Blocking tradeoff table (TradeoffRow list): CSV plus a twin-axis
    size/comparisons chart with recall annotated."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    dicts = [r.to_dict() for r in rows]
    _write_csv(csv_path, ["config", "recall", "indexBytes", "meanComparisons"],
               dicts)

    labels = [d["config"] for d in dicts]
    x = np.arange(len(labels))
    fig, ax1 = plt.subplots(figsize=(7, 4.5))
    ax1.bar(x - 0.15, [d["indexBytes"] / 1024 for d in dicts], width=0.3,
            color="tab:blue", label="index KiB")
    ax1.set_ylabel("blocking index size (KiB)", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.bar(x + 0.15, [d["meanComparisons"] for d in dicts], width=0.3,
            color="tab:orange", label="mean comparisons")
    ax2.set_ylabel("mean comparisons per query", color="tab:orange")
    ax1.set_xticks(x, labels)
    for i, d in enumerate(dicts):
        ax1.annotate(f"recall {d['recall']:.2f}", (x[i], 0),
                     xytext=(0, 6), textcoords="offset points",
                     ha="center", fontsize=8)
    ax1.set_title("Blocking configuration tradeoff")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def bench_report(
    results: Sequence["object"],
    out_dir: str | Path,
    stem: str = "bench",
) -> tuple[Path, Path]:
    """Scalability runs (BenchResult list): CSV plus latency/throughput
    versus client count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    rows = [r.to_row() for r in results]
    _write_csv(csv_path, list(rows[0].keys()), rows)

    clients = [r["clients"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(clients, [r["meanMs"] for r in rows], "o-", label="mean")
    ax1.plot(clients, [r["p95Ms"] for r in rows], "s--", label="p95")
    ax1.set_xlabel("clients")
    ax1.set_ylabel("latency (ms)")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(clients, [r["throughputRps"] for r in rows], "o-",
             color="tab:green")
    ax2.set_xlabel("clients")
    ax2.set_ylabel("throughput (req/s)")
    ax2.grid(alpha=0.3)
    fig.suptitle("Service scalability")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def training_report(
    losses: Sequence[float],
    out_dir: str | Path,
    stem: str = "training",
) -> tuple[Path, Path]:
    """Per-epoch loss trace: CSV plus the loss curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    rows = [{"epoch": i + 1, "loss": round(l, 6)} for i, l in enumerate(losses)]
    _write_csv(csv_path, ["epoch", "loss"], rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(losses) + 1), losses, "o-")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean negative log-likelihood")
    ax.set_title("Short-name model training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path
