"""Report rendering -- CSV, markdown tables and SVG charts from an evaluation bundle.

Writes into the output directory:
    results.csv          one row per (attack, decoder), fixed column set
    gap_table.md         SVD vs DL accuracy and their gap, plus trend checks
    fidelity_table.md    Chamfer, PSNR and BER per attack
    roc.csv              ROC thresholds with TPR/FPR (when a decoder ran)
    accuracy_part_a.svg  accuracy bars, first half of the attacks
    accuracy_part_b.svg  accuracy bars, second half
    roc.svg              ROC curve (when a decoder ran)

SVG output is byte-stable: fixed hash salt and no date metadata.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import List, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from point_watermark import watermark_config as cfg  # noqa: E402
from point_watermark.decoder_training import TrainingLog  # noqa: E402
from point_watermark.errors import CloudIOError, ReportError  # noqa: E402
from point_watermark.eval_harness import DL, SVD, ReportBundle, ResultRow  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "point-watermark"

DECODER_COLORS = {SVD: "#3498db", DL: "#e67e22"}


def _fmt(value: float) -> str:
    return format(float(value), f".{cfg.REPORT_DIGITS}g")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def write_results_csv(rows: Sequence[ResultRow], path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cfg.RESULTS_COLUMNS)
        for r in rows:
            cells = [r.attack, r.decoder, r.n_samples]
            for metric in ("accuracy", "iou", "ber", "chamfer", "psnr"):
                mean, std = r.stats[metric]
                cells += [_fmt(mean), _fmt(std)]
            writer.writerow(cells)
    return path


def _attack_order(bundle: ReportBundle) -> List[str]:
    seen: List[str] = []
    for r in bundle.rows:
        if r.attack not in seen:
            seen.append(r.attack)
    return seen


def write_gap_table(bundle: ReportBundle, path: Path) -> Path:
    lines = ["| Attack | SVD | DL | Accuracy Gap |", "|---|---|---|---|"]
    for g in bundle.gaps:
        lines.append(f"| {g.attack} | {g.svd_accuracy:.3f} | {g.dl_accuracy:.3f} | {g.gap:+.3f} |")
    if not bundle.gaps:
        for attack in _attack_order(bundle):
            svd = bundle.row(attack, SVD)
            lines.append(f"| {attack} | {svd.mean('accuracy'):.3f} | - | - |")
    if bundle.trend_checks:
        lines += ["", "## Trend checks", ""]
        for c in bundle.trend_checks:
            lines.append(f"- [{'PASS' if c.passed else 'FAIL'}] {c.name}")
            lines += [f"  - {issue}" for issue in c.issues]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_fidelity_table(bundle: ReportBundle, path: Path) -> Path:
    has_dl = any(r.decoder == DL for r in bundle.rows)
    header = ["Attack", "Chamfer", "PSNR_SVD"] + (["PSNR_DL"] if has_dl else []) \
        + ["BER_SVD"] + (["BER_DL"] if has_dl else [])
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for attack in _attack_order(bundle):
        svd = bundle.row(attack, SVD)
        dl = bundle.row(attack, DL)
        cells = [attack, f"{svd.mean('chamfer'):.4f}", f"{svd.mean('psnr'):.2f}"]
        if has_dl:
            cells.append(f"{dl.mean('psnr'):.2f}")
        cells.append(f"{svd.mean('ber'):.3f}")
        if has_dl:
            cells.append(f"{dl.mean('ber'):.3f}")
        lines.append("| " + " | ".join(cells) + " |")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_roc_csv(bundle: ReportBundle, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cfg.ROC_COLUMNS)
        for t, tp, fp in zip(bundle.roc.thresholds, bundle.roc.tpr, bundle.roc.fpr):
            writer.writerow([_fmt(t), _fmt(tp), _fmt(fp)])
    return path


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

def plot_accuracy(bundle: ReportBundle, attacks: Sequence[str], path: Path, title: str) -> Path:
    decoders = [d for d in (SVD, DL) if any(r.decoder == d for r in bundle.rows)]
    width = 0.8 / len(decoders)
    x = np.arange(len(attacks))

    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(attacks)), 4.5))
    for k, name in enumerate(decoders):
        rows = [bundle.row(a, name) for a in attacks]
        ax.bar(x + (k - (len(decoders) - 1) / 2) * width,
               [r.mean("accuracy") for r in rows], width,
               yerr=[r.std("accuracy") for r in rows], capsize=2,
               label=name, color=DECODER_COLORS[name])
    ax.set_xticks(x)
    ax.set_xticklabels(attacks, rotation=35, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("Bitwise accuracy")
    ax.set_title(title, fontweight="bold")
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_roc(bundle: ReportBundle, path: Path) -> Path:
    roc = bundle.roc
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(roc.fpr, roc.tpr, color=DECODER_COLORS[DL], linewidth=2,
            label=f"DL decoder (AUC = {roc.auc:.2f})")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1, label="Chance")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("Ownership verification", fontweight="bold")
    ax.legend(loc="lower right")
    return _save(fig, path)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def render_report(bundle: ReportBundle, out_dir: Union[str, Path]) -> List[Path]:
    """Write every report artifact; raises ReportError before writing if there is nothing to report."""
    if not bundle.rows:
        raise ReportError("bundle has no result rows; nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [
            write_results_csv(bundle.rows, out / "results.csv"),
            write_gap_table(bundle, out / "gap_table.md"),
            write_fidelity_table(bundle, out / "fidelity_table.md"),
        ]
        attacks = _attack_order(bundle)
        half = (len(attacks) + 1) // 2
        written.append(plot_accuracy(bundle, attacks[:half], out / "accuracy_part_a.svg",
                                     "Bitwise accuracy under attack (part A)"))
        if attacks[half:]:
            written.append(plot_accuracy(bundle, attacks[half:], out / "accuracy_part_b.svg",
                                         "Bitwise accuracy under attack (part B)"))
        if bundle.roc is not None:
            written.append(write_roc_csv(bundle, out / "roc.csv"))
            written.append(plot_roc(bundle, out / "roc.svg"))
    except OSError as exc:
        raise CloudIOError(f"cannot write report to {out}: {exc}") from exc
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def render_roc(bundle: ReportBundle, out_dir: Union[str, Path]) -> List[Path]:
    """ROC-only artifacts (roc.csv, roc.svg)."""
    if bundle.roc is None:
        raise ReportError("bundle has no ROC result")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return [write_roc_csv(bundle, out / "roc.csv"), plot_roc(bundle, out / "roc.svg")]
    except OSError as exc:
        raise CloudIOError(f"cannot write report to {out}: {exc}") from exc


def render_training_curves(log: TrainingLog, out_dir: Union[str, Path]) -> List[Path]:
    """Loss, accuracy and per-bit accuracy against epoch."""
    if not log.records:
        raise ReportError("training log is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epochs = [r.epoch for r in log.records]
    best = log.best_epoch()

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in log.records], label="Train")
    ax.plot(epochs, [r.val_loss for r in log.records], label="Validation")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("BCE loss")
    ax.set_title("Training loss", fontweight="bold")
    ax.legend()
    paths = [_save(fig, out / "training_loss.svg")]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_acc for r in log.records], label="Train")
    ax.plot(epochs, [r.val_acc for r in log.records], label="Validation")
    ax.axvline(best.epoch, color="grey", linestyle=":", label=f"Best (epoch {best.epoch})")
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Bitwise accuracy")
    ax.set_title("Training accuracy", fontweight="bold")
    ax.legend()
    paths.append(_save(fig, out / "training_accuracy.svg"))

    fig, ax = plt.subplots(figsize=(6, 4))
    per_bit = np.array([r.per_bit_acc for r in log.records])
    for i in range(per_bit.shape[1]):
        ax.plot(epochs, per_bit[:, i], label=f"Bit {i}")
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Validation accuracy")
    ax.set_title("Per-bit accuracy", fontweight="bold")
    ax.legend()
    paths.append(_save(fig, out / "per_bit_accuracy.svg"))
    return paths
