"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def training_curves(rows: list[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ep = [r["epoch"] for r in rows]
        ax.plot(ep, [r["train_loss"] for r in rows], label="train MSE")
        ax.plot(ep, [r["val_mae"] for r in rows], label="val MAE")
        ax.plot(ep, [r["val_rmse"] for r in rows], label="val RMSE")
        ax.set_xlabel("epoch")
        ax.legend(frameon=False)
        return _save(fig, path)


def level_energies(h: list[float], u: list[float], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        levels = list(range(1, len(h) + 1))
        ax.plot(levels, h, "o-", label="embedded h")
        ax.plot(levels, u, "s--", label="lifted u")
        ax.set_xlabel("hierarchy level")
        ax.set_ylabel("Dirichlet energy")
        ax.set_xticks(levels)
        ax.legend(frameon=False)
        return _save(fig, path)


def gap_trend(medians: dict[int, float], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bs = sorted(medians)
        ax.plot(bs, [medians[b] for b in bs], "o-")
        ax.set_xscale("log", base=2)
        ax.set_xticks(bs, [str(b) for b in bs])
        ax.set_xlabel("series terms B")
        ax.set_ylabel("median energy gap")
        return _save(fig, path)


def color_counts(counts: list[list[int]], path) -> Path:
    """One faint line per trial: colour count against prefix depth."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for c in counts:
            ax.plot(range(1, len(c) + 1), c, color="C0", alpha=0.15, lw=0.8)
        ax.set_xlabel("memory prefix depth")
        ax.set_ylabel("number of colours")
        return _save(fig, path)


def sweep(rows: list[dict], axis: str, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [r["axis_value"] for r in rows]
        ax.plot(xs, [r["mae"] for r in rows], "o-", label="MAE")
        ax.plot(xs, [r["rmse"] for r in rows], "s--", label="RMSE")
        ax.set_xlabel(axis)
        ax.set_xticks(xs)
        ax.legend(frameon=False)
        return _save(fig, path)
