"""PNG figures rendered from the CSV artifacts (training history, robustness curves).

matplotlib is imported lazily here, so the library and the CLI work without it
unless a figure is requested.
"""
from __future__ import annotations

import csv
from pathlib import Path


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def read_csv_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {k: [float(r[k]) for r in rows] for k in (rows[0] if rows else {})}
    return cols


def plot_history(csv_path, png_path=None):
    """Loss and accuracy against epoch; returns the PNG path."""
    plt = _pyplot()
    cols = read_csv_columns(csv_path)
    png_path = Path(png_path or Path(csv_path).with_suffix(".png"))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(cols["epoch"], cols["train_loss"], "k-")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(cols["epoch"], cols["train_acc"], "-", label="train")
    ax2.plot(cols["epoch"], cols["test_acc"], "--", label="test")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def plot_curves(csv_paths, png_path, labels=None):
    """Accuracy against perturbation size for one or more curve CSVs on shared axes."""
    plt = _pyplot()
    labels = labels or [Path(p).stem for p in csv_paths]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for p, lab in zip(csv_paths, labels):
        cols = read_csv_columns(p)
        ax.plot(cols["epsilon"], cols["accuracy"], "o-", label=lab)
    ax.set_xlabel(r"$\epsilon$ ($\ell_2$)")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)
