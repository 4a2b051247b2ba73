"""Figure rendering for benchmark output.

Consumes the delimited files the harness emits (it never reaches into
live simulation state) and writes message-count scaling figures next to
them: decreasing max-per-rank curves for the decentral routines,
increasing manager curves for the central baseline.
"""

from __future__ import annotations

import csv
import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def read_sweep_csv(text: str) -> list[dict]:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(rows))))


def plot_sweep(summary_text: str, out_path: str, title: str | None = None) -> str:
    """Render a bench summary CSV to a PNG; returns the output path."""
    rows = read_sweep_csv(summary_text)
    if not rows:
        raise ValueError("summary CSV has no data rows")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    modes = sorted({row["mode"] for row in rows})
    for mode in modes:
        pts = [(int(r["ranks"]),
                int(r["manager_msgs"] if mode == "central" else r["max_rank_msgs"]))
               for r in rows if r["mode"] == mode]
        pts.sort()
        label = ("manager messages (central)" if mode == "central"
                 else "max per-rank messages (decentral)")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("ranks")
    ax.set_ylabel("messages per round")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    if title is None and rows:
        title = (f"uniform refinement depth {rows[0]['from_depth']}"
                 f" to {rows[0]['to_depth']}")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_rank_traffic(stats_csv: str, out_path: str) -> str:
    """Bar chart of per-rank sent message counts from a stats CSV."""
    rows = [ln for ln in stats_csv.splitlines() if ln and not ln.startswith("#")]
    data = list(csv.DictReader(io.StringIO("\n".join(rows))))
    per_rank: dict[int, int] = {}
    for row in data:
        per_rank[int(row["rank"])] = (per_rank.get(int(row["rank"]), 0)
                                      + int(row["msgs_sent"]))
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ranks = sorted(per_rank)
    ax.bar([str(r) for r in ranks], [per_rank[r] for r in ranks])
    ax.set_xlabel("rank")
    ax.set_ylabel("messages sent")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
