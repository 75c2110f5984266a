"""PNG figures rendered next to the CSV tables.

Figures are written with the Agg backend and without the ``Software``
metadata entry, so identical inputs give identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def loss_curve(path, rows: list[dict], window: int = 50) -> None:
    """Training loss against step, smoothed with a moving average."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("loss", "total"), ("cdfm_loss", "posterior"), ("mid_loss", "mid")):
        y = np.array([r[key] for r in rows], dtype=float)
        if not np.any(y):
            continue
        w = max(1, min(window, y.size))
        ax.plot(np.arange(w, y.size + 1), np.convolve(y, np.ones(w) / w, mode="valid"), label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss per sequence")
    ax.legend()
    _save(fig, path)


def ablation_bars(path, summary: list[dict], rows: list[dict]) -> None:
    """Mean test error per path design with the individual seeds overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r["config"] for r in summary]
    x = np.arange(len(names))
    ax.bar(x, [r["wer"] for r in summary], color="0.75")
    for i, name in enumerate(names):
        errs = [r["wer"] for r in rows if r["config"] == name]
        ax.plot(np.full(len(errs), x[i]), errs, "k.", ms=4)
    ax.set_xticks(x, [f"({n})" for n in names])
    ax.set_ylabel("test WER")
    ax.set_title("path design")
    _save(fig, path)


def eval_curves(path, summary: list[dict]) -> None:
    """Error against NFE, one line per (candidate count, scoring method)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    keys = []
    for r in summary:
        k = (r["candidates"], r["scoring"])
        if k not in keys:
            keys.append(k)
    for n, method in keys:
        pts = sorted((r["nfe"], r["wer"]) for r in summary if r["candidates"] == n and r["scoring"] == method)
        if n == 1 and method != "single":
            continue
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"n={n} {method}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("NFE")
    ax.set_ylabel("test WER")
    ax.legend(fontsize=7, ncol=2)
    _save(fig, path)


def include_mid_bars(path, summary: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [f"{r['sampler']}\nmid={'on' if r['include_mid'] else 'off'}" for r in summary]
    ax.bar(np.arange(len(summary)), [r["wer"] for r in summary], color="0.6")
    ax.set_xticks(np.arange(len(summary)), labels, fontsize=8)
    ax.set_ylabel("test WER")
    _save(fig, path)


def speculate_bars(path, summary: list[dict]) -> None:
    """Matched tokens per round for each drafter, averaged over seeds."""
    fig, ax = plt.subplots(figsize=(5, 4))
    names = []
    for r in summary:
        if r["drafter"] not in names:
            names.append(r["drafter"])
    means = [np.mean([r["matches_per_round"] for r in summary if r["drafter"] == n]) for n in names]
    ax.bar(np.arange(len(names)), means, color="0.6")
    if summary:
        ax.axhline(summary[0]["random_baseline"], color="k", ls="--", lw=1, label="random, analytic")
        ax.legend()
    ax.set_xticks(np.arange(len(names)), names)
    ax.set_ylabel("matched tokens per round")
    _save(fig, path)


def theory_slacks(path, rows: list[dict]) -> None:
    """Minimum slack of every check per trial (negative beyond tolerance means failure)."""
    fig, axes = plt.subplots(1, 4, figsize=(12, 3.5), sharey=False)
    for ax, name in zip(axes, ("claim1", "corollary1", "occupancy", "theorem1")):
        for size in sorted({r["n_states"] for r in rows}):
            pts = [(float(r["eps"]), float(r[f"{name}_slack"])) for r in rows if r["n_states"] == size]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], ".", label=f"|S|={size}")
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_title(name)
        ax.set_xlabel("epsilon")
    axes[0].set_ylabel("min slack")
    axes[0].legend(fontsize=7)
    _save(fig, path)
