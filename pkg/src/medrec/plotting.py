"""Figures for the report commands. Rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport, SafetyRates  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(reports: Sequence[MetricsReport], path: str | Path) -> Path:
    keys = ("jaccard", "precision", "recall", "f1", "ddi_b", "ddi_w", "contra_b", "contra_w")
    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / max(len(reports), 1)
    x = np.arange(len(keys))
    for k, rep in enumerate(reports):
        ax.bar(x + k * width, [getattr(rep, m) for m in keys], width, label=rep.label)
    ax.set_xticks(x + width * (len(reports) - 1) / 2, [m.replace("_", "-") for m in keys])
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_efficiency(stages: Mapping[str, Mapping[str, float]], path: str | Path) -> Path:
    names = list(stages)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 3.5))
    a1.bar(names, [stages[s]["calls"] for s in names], color="tab:blue")
    a1.set_title("calls per case")
    a2.bar(names, [stages[s]["in_tokens"] for s in names], label="input")
    a2.bar(names, [stages[s]["out_tokens"] for s in names], bottom=[stages[s]["in_tokens"] for s in names], label="output")
    a2.set_title("tokens per case")
    a2.legend(fontsize=8)
    for ax in (a1, a2):
        ax.tick_params(axis="x", rotation=45)
    return _save(fig, path)


def plot_granularity(rates: Mapping[str, SafetyRates], path: str | Path) -> Path:
    keys = ("ddi_b", "ddi_w", "contra_b", "contra_w")
    x = np.arange(len(keys))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, level in enumerate(("l4", "l3")):
        ax.bar(x + 0.4 * k, [getattr(rates[level], m) for m in keys], 0.4, label=level.upper())
    ax.set_xticks(x + 0.2, [m.replace("_", "-") for m in keys])
    ax.set_ylabel("rate")
    ax.legend()
    return _save(fig, path)


def plot_silhouette(silhouettes: Mapping[int, float], chosen: int, path: str | Path) -> Path:
    ks = sorted(silhouettes)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [silhouettes[k] for k in ks], marker="o")
    ax.axvline(chosen, color="grey", linestyle="--")
    ax.set_xlabel("k")
    ax.set_ylabel("mean silhouette")
    return _save(fig, path)


def plot_diagnostics(diag: Mapping[str, Any], path: str | Path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    cols = ("tp", "fp", "fn")
    x = np.arange(len(cols))
    a1.bar(x - 0.2, [diag["preCritique"][c] for c in cols], 0.4, label="before critique")
    a1.bar(x + 0.2, [diag["postCritique"][c] for c in cols], 0.4, label="after critique")
    a1.set_xticks(x, [c.upper() for c in cols])
    a1.set_title("mean per case")
    a1.legend(fontsize=8)
    hist = diag["removedBySupport"]
    a2.bar(list(hist), list(hist.values()), color="tab:red")
    a2.set_xlabel("proposing experts")
    a2.set_title("removed codes")
    return _save(fig, path)


def plot_loo(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([r["expertId"] for r in rows], [r["delta"] for r in rows])
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_ylabel("F1 with - without")
    return _save(fig, path)


def plot_activation(activations: Sequence[Sequence[str]], expert_ids: Sequence[str], path: str | Path) -> Path:
    counts = [sum(eid in a for a in activations) for eid in expert_ids]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(list(expert_ids), counts)
    ax.set_ylabel("cases activated")
    return _save(fig, path)
