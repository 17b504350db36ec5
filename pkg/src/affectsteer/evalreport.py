"""Evaluation metrics and report rendering.

Reports are emitted three ways: an aligned plain-text table, machine-readable
JSON, and CSV; the report path also renders matplotlib figures next to the
delimited output.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import dataio, predictor

DIM_LABELS = ("V", "A", "D")


@dataclass
class EvalReport:
    mae_text: float | None = None
    mae_image: float | None = None
    rmse_text: float | None = None
    rmse_image: float | None = None
    per_dimension_mae: list = field(default_factory=list)
    within_sd_fraction: float | None = None  # per (item, dimension) pair
    within_sd_fraction_items: float | None = None  # all three dims at once
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mae_text": self.mae_text,
            "mae_image": self.mae_image,
            "rmse_text": self.rmse_text,
            "rmse_image": self.rmse_image,
            "per_dimension_mae": self.per_dimension_mae,
            "within_sd_fraction": self.within_sd_fraction,
            "within_sd_fraction_items": self.within_sd_fraction_items,
            "counts": self.counts,
        }


def _scaled_predictions(model, test):
    preds = predictor.score(model, test.inputs)
    targets = np.clip(dataio.apply_scaler(model.target_scaler, test.targets), 0.0, 1.0)
    return preds.astype(np.float64), targets.astype(np.float64)


def mean_error(model, test):
    """MAE on the [0,1] scale, reported separately per source kind.

    Returns a dict with per-kind and pooled MAE/RMSE plus per-dimension MAE.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    preds, targets = _scaled_predictions(model, test)
    abs_err = np.abs(preds - targets)
    kinds = np.array(test.kinds)
    out = {
        "mae": float(abs_err.mean()),
        "rmse": float(np.sqrt((abs_err**2).mean())),
        "per_dimension_mae": [float(v) for v in abs_err.mean(axis=0)],
        "counts": {},
    }
    for kind in ("word", "image"):
        mask = kinds == kind
        out["counts"][kind] = int(mask.sum())
        if mask.any():
            out[f"mae_{kind}"] = float(abs_err[mask].mean())
            out[f"rmse_{kind}"] = float(np.sqrt((abs_err[mask] ** 2).mean()))
    return out


def within_sd_fraction(model, test):
    """Fraction of predictions within one survey SD of the survey mean.

    Counted per (item, dimension) pair; the all-dimensions-per-item variant
    is returned alongside. Both prediction and SD are on the scaled scale
    (SDs scaled by the target scaler's range, no offset).
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    if test.sds.size == 0 or not np.all(np.isfinite(test.sds)):
        raise ValueError("test items must carry standard deviations")
    preds, targets = _scaled_predictions(model, test)
    rng = model.target_scaler.range.astype(np.float64)
    safe = np.where(rng == 0, 1.0, rng)
    sds = test.sds.astype(np.float64) / safe
    hit = np.abs(preds - targets) <= sds
    return float(hit.mean()), float(hit.all(axis=1).mean())


def evaluate(model, test):
    me = mean_error(model, test)
    pair_frac, item_frac = within_sd_fraction(model, test)
    return EvalReport(
        mae_text=me.get("mae_word"),
        mae_image=me.get("mae_image"),
        rmse_text=me.get("rmse_word"),
        rmse_image=me.get("rmse_image"),
        per_dimension_mae=me["per_dimension_mae"],
        within_sd_fraction=pair_frac,
        within_sd_fraction_items=item_frac,
        counts=me["counts"],
    )


def prompt_score_table(model, prompts):
    """Rows (prompt, V, A, D) in input order, scores clamped to [0,1]."""
    rows = []
    for text, embedding in prompts:
        v, a, d = predictor.score(model, np.asarray(embedding, dtype=np.float32))
        rows.append((text, float(v), float(a), float(d)))
    return rows


def format_prompt_table(rows):
    if not rows:
        return ""
    width = max(len("Prompt"), *(len(r[0]) for r in rows))
    lines = [f"{'Prompt':<{width}}  {'V':>6}  {'A':>6}  {'D':>6}"]
    for text, v, a, d in rows:
        lines.append(f"{text:<{width}}  {v:6.3f}  {a:6.3f}  {d:6.3f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Rendering

def write_report(report, out_dir, model=None, test=None):
    """Write report.json / report.txt / report.csv and figures into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    d = report.to_dict()
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)

    lines = ["Affect prediction evaluation", "----------------------------"]
    for key in (
        "mae_text",
        "mae_image",
        "rmse_text",
        "rmse_image",
        "within_sd_fraction",
        "within_sd_fraction_items",
    ):
        val = d[key]
        lines.append(f"{key:26s} {val:.4f}" if val is not None else f"{key:26s} n/a")
    for label, v in zip(DIM_LABELS, report.per_dimension_mae):
        lines.append(f"mae_{label:24s} {v:.4f}")
    lines.append(f"counts: {d['counts']}")
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    with open(os.path.join(out_dir, "report.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, val in d.items():
            if key == "per_dimension_mae":
                for label, v in zip(DIM_LABELS, val):
                    writer.writerow([f"mae_{label}", v])
            elif key == "counts":
                for k, v in val.items():
                    writer.writerow([f"count_{k}", v])
            elif val is not None:
                writer.writerow([key, val])

    if report.per_dimension_mae:
        plot_per_dimension_mae(
            report.per_dimension_mae, os.path.join(out_dir, "per_dimension_mae.png")
        )
    if model is not None and test is not None and len(test):
        plot_prediction_scatter(model, test, os.path.join(out_dir, "pred_vs_target.png"))


def plot_per_dimension_mae(values, path):
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(DIM_LABELS, values, color=["#4c72b0", "#dd8452", "#55a868"])
    ax.set_ylabel("MAE (scaled)")
    ax.set_title("Per-dimension mean absolute error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_prediction_scatter(model, test, path):
    preds, targets = _scaled_predictions(model, test)
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4), sharex=True, sharey=True)
    for i, (ax, label) in enumerate(zip(axes, DIM_LABELS)):
        ax.scatter(targets[:, i], preds[:, i], s=4, alpha=0.4)
        ax.plot([0, 1], [0, 1], "k--", lw=0.8)
        ax.set_title(label)
        ax.set_xlabel("target")
    axes[0].set_ylabel("prediction")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_curve(epoch_losses, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(epoch_losses) + 1), epoch_losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss (MSE)")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_steering_trace(trace, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(trace)), trace)
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
