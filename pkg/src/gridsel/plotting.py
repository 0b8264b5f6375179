"""Figures for selection results, simulation reports and transfer history.

All functions write a file and return its path; nothing is shown on screen.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .broker import SelectionResult  # noqa: E402
from .classad import is_number  # noqa: E402
from .history import DIRECTIONS, HistoryStore  # noqa: E402

CHOSEN = "#1b7837"
RANKED = "#7fbf7b"
EXCLUDED = "#bdbdbd"
MISMATCH = "#d6604d"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_selection(result: SelectionResult, path) -> Path:
    """Bar per replica: rank of matched ones, excluded ones greyed at zero."""
    labels, values, colors = [], [], []
    for i, r in enumerate(result.ranked):
        labels.append(str(r.location))
        values.append(float(r.match.rank) if is_number(r.match.rank) else 0.0)
        colors.append(CHOSEN if i == 0 else RANKED)
    for e in result.excluded:
        labels.append(f"{e.location} ({e.status})")
        values.append(0.0)
        colors.append(EXCLUDED)
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(labels), 2) + 1))
    ypos = range(len(labels))
    ax.barh(list(ypos), values, color=colors)
    ax.set_yticks(list(ypos))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("rank")
    ax.set_title("replica ranking")
    return _save(fig, path)


def plot_report(report, path) -> Path:
    """Search/match wall time per request, mismatching requests highlighted."""
    rows = report.rows
    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = list(range(len(rows)))
    search = [1e3 * r.timings.get("search", 0.0) for r in rows]
    match = [1e3 * r.timings.get("match", 0.0) for r in rows]
    ax.bar(x, search, color=RANKED, label="search")
    ax.bar(x, match, bottom=search, color=CHOSEN, label="match")
    for i, r in enumerate(rows):
        if not (r.agrees and r.meets_expectation):
            ax.bar(i, search[i] + match[i], fill=False, edgecolor=MISMATCH, linewidth=2)
    ax.set_xticks(x)
    ax.set_xticklabels([r.request for r in rows], rotation=90, fontsize=6)
    ax.set_ylabel("ms")
    ax.set_title(f"seed {report.seed}: {len(report.mismatches)} mismatches / {len(rows)} requests")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_history(store: HistoryStore, path) -> Path:
    """Observed bandwidth over time per direction, with the mean as a dashed line."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for direction, color in zip(DIRECTIONS, (CHOSEN, MISMATCH)):
        samples = store.samples(direction)
        if not samples:
            continue
        ax.plot([s.timestamp for s in samples], [s.bandwidth for s in samples], "o",
                color=color, ms=4, label=direction)
        ax.axhline(store.summarize(direction).mean, color=color, ls="--", lw=1)
    ax.set_xlabel("timestamp (s)")
    ax.set_ylabel("bandwidth (B/s)")
    if store.samples():
        ax.legend(frameon=False)
    ax.set_title("transfer history")
    return _save(fig, path)
