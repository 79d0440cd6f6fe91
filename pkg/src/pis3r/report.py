"""Report writers: evaluation JSON, the per-pair CSV table, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CSV_COLUMNS = [
    "item",
    "mode",
    "registration_ok",
    "psnr",
    "ssim",
    "valid_pixel_count",
    "fallback_psnr",
    "fallback_ssim",
    "sampson_mean",
    "sampson_matches",
    "lpips",
]


def write_pairs_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _short_ids(rows):
    return [r["item"].replace("scene", "s").replace("/item", "/i") for r in rows]


def render_metric_figure(path, rows) -> None:
    """Per-item PSNR/SSIM bars; failed registrations drawn hatched from fallback scores."""
    ids = _short_ids(rows)
    x = np.arange(len(rows))
    fig, axes = plt.subplots(2, 1, figsize=(max(6.0, 0.45 * len(rows) + 2), 6.4), sharex=True)
    for ax, key, fallback_key, label in (
        (axes[0], "psnr", "fallback_psnr", "PSNR (dB)"),
        (axes[1], "ssim", "fallback_ssim", "SSIM"),
    ):
        vals, hatches, colors = [], [], []
        for r in rows:
            ok = r["registration_ok"]
            v = r[key] if ok else r[fallback_key]
            vals.append(0.0 if v is None else v)
            hatches.append("" if ok else "//")
            colors.append("#4878a8" if ok else "#c65353")
        bars = ax.bar(x, vals, color=colors)
        for bar, hatch in zip(bars, hatches):
            bar.set_hatch(hatch)
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3)
    axes[1].set_xticks(x)
    axes[1].set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
    axes[0].set_title("Per-item metrics (hatched = registration failed, unregistered score)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_sampson_figure(path, rows) -> bool:
    """Per-item Sampson error bars (log scale); returns False when no item has one."""
    pairs = [(r["item"], r["sampson_mean"]) for r in rows if r.get("sampson_mean") is not None]
    if not pairs:
        return False
    ids = [p[0].replace("scene", "s").replace("/item", "/i") for p in pairs]
    vals = [max(p[1], 1e-12) for p in pairs]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(pairs) + 2), 3.6))
    ax.bar(np.arange(len(vals)), vals, color="#6a9f58")
    ax.set_yscale("log")
    ax.set_ylabel("Sampson error (px$^2$)")
    ax.set_xticks(np.arange(len(vals)))
    ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return True


def write_eval_report(out_dir, report: dict) -> dict:
    """Write eval_report.json + pairs.csv + figures; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "eval_report.json", "csv": out / "pairs.csv"}
    paths["report"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_pairs_csv(paths["csv"], report["pairs"])
    fig_metrics = out / "fig_metrics.png"
    render_metric_figure(fig_metrics, report["pairs"])
    paths["fig_metrics"] = fig_metrics
    fig_sampson = out / "fig_sampson.png"
    if render_sampson_figure(fig_sampson, report["pairs"]):
        paths["fig_sampson"] = fig_sampson
    return {k: str(v) for k, v in paths.items()}
