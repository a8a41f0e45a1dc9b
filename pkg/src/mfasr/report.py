"""Rendering of run logs, cost tables, and evaluation results to files.

Every renderer writes a CSV next to a PNG so results stay greppable and
plottable at once. Figures use the Agg backend; no display is needed.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .costmodel import CostReport  # noqa: E402

_LOSS_COLS = ("recon", "distill_g", "distill_d", "percep", "adv")


def read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# ---------------------------------------------------------------------------
# training metrics

def metrics_csv(records: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "loss_total", *_LOSS_COLS, "psnr_val", "lr",
                    "wallclock_ms"])
        for r in records:
            parts = r.get("loss_parts", {})
            w.writerow([r["iter"], r["loss_total"],
                        *[parts.get(c, 0.0) for c in _LOSS_COLS],
                        "" if r.get("psnr_val") is None else r["psnr_val"],
                        r.get("lr", ""), r.get("wallclock_ms", "")])


def metrics_figure(records: list[dict], stage: str, path: str) -> None:
    iters = [r["iter"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, [r["loss_total"] for r in records], label="total", lw=1.5)
    for col in _LOSS_COLS:
        series = [r.get("loss_parts", {}).get(col, 0.0) for r in records]
        if any(abs(v) > 0 for v in series):
            ax.plot(iters, series, label=col, lw=0.8, alpha=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(f"{stage}: training losses")
    ax.legend(fontsize=8)
    psnr = [(r["iter"], r["psnr_val"]) for r in records
            if r.get("psnr_val") is not None]
    if psnr:
        ax2 = ax.twinx()
        ax2.plot(*zip(*psnr), "o--", color="tab:red", ms=4, label="PSNR-Y")
        ax2.set_ylabel("PSNR-Y (dB)", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# search history

def search_csv(history: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["generation", "best_fitness", "pop_best", "pop_mean",
                    "best_genotype"])
        for h in history:
            w.writerow([h["generation"], h["best_fitness"], h["pop_best"],
                        h["pop_mean"],
                        "-".join(str(g) for g in h["best_genotype"])])


def search_figure(history: list[dict], path: str) -> None:
    gens = [h["generation"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(gens, [h["best_fitness"] for h in history], label="best so far",
            lw=1.5)
    ax.plot(gens, [h["pop_best"] for h in history], label="population best",
            lw=0.8, alpha=0.8)
    ax.plot(gens, [h["pop_mean"] for h in history], label="population mean",
            lw=0.8, alpha=0.8)
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness (PSNR-Y dB)")
    ax.set_title("evolutionary channel search")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# cost breakdown

def cost_csv(rep: CostReport, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "kind", "params", "flops", "mac_bytes"])
        for row in rep.per_layer:
            w.writerow([row.layer_id, row.kind, row.params, row.flops,
                        row.mac_bytes])
        w.writerow(["TOTAL", "", rep.params, rep.flops, rep.mac_bytes])


def cost_figure(rep: CostReport, path: str, top: int = 15) -> None:
    rows = sorted(rep.per_layer, key=lambda r: -r.flops)[:top]
    rows = [r for r in rows if r.flops > 0][::-1]
    fig, ax = plt.subplots(figsize=(7, max(3, 0.3 * len(rows) + 1)))
    ax.barh([r.layer_id for r in rows], [r.flops / 1e6 for r in rows],
            color="tab:blue")
    ax.set_xlabel("MFLOPs per sample")
    ax.set_title(f"heaviest layers (of {len(rep.per_layer)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cost_table(rep: CostReport) -> str:
    """Aligned text table with one row per layer plus totals."""
    head = f"{'layer':<14} {'kind':<13} {'params':>10} {'flops':>14} {'mac_bytes':>12}"
    lines = [head, "-" * len(head)]
    for row in rep.per_layer:
        lines.append(f"{row.layer_id:<14} {row.kind:<13} {row.params:>10} "
                     f"{row.flops:>14} {row.mac_bytes:>12}")
    lines.append("-" * len(head))
    lines.append(f"{'TOTAL':<14} {'':<13} {rep.params:>10} {rep.flops:>14} "
                 f"{rep.mac_bytes:>12}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# evaluation

def eval_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image", "psnr_model", "psnr_bicubic", "delta"])
        for r in rows:
            w.writerow([r["image"], r["psnr_model"], r["psnr_bicubic"],
                        r["psnr_model"] - r["psnr_bicubic"]])


def eval_figure(rows: list[dict], path: str) -> None:
    idx = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(5, 0.35 * len(rows) + 2), 4))
    ax.bar([i - 0.2 for i in idx], [r["psnr_model"] for r in rows], 0.4,
           label="model")
    ax.bar([i + 0.2 for i in idx], [r["psnr_bicubic"] for r in rows], 0.4,
           label="bicubic")
    ax.set_xticks(list(idx))
    ax.set_xticklabels([r["image"] for r in rows], rotation=90, fontsize=7)
    ax.set_ylabel("PSNR-Y (dB)")
    ax.set_title("per-image reconstruction quality")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# whole-run report

def render_run_report(run_dir: str, out_dir: str) -> list[str]:
    """Render every log in ``<run>/logs`` to CSV + PNG under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    logs = os.path.join(run_dir, "logs")
    written: list[str] = []
    if not os.path.isdir(logs):
        return written
    for name in sorted(os.listdir(logs)):
        if not name.endswith(".jsonl"):
            continue
        stage = name[:-6]
        records = read_jsonl(os.path.join(logs, name))
        if not records:
            continue
        if stage == "search":
            paths = [os.path.join(out_dir, "search_history.csv"),
                     os.path.join(out_dir, "search_history.png")]
            search_csv(records, paths[0])
            search_figure(records, paths[1])
        else:
            paths = [os.path.join(out_dir, f"{stage}_metrics.csv"),
                     os.path.join(out_dir, f"{stage}_loss.png")]
            metrics_csv(records, paths[0])
            metrics_figure(records, stage, paths[1])
        written.extend(paths)
    return written
