"""Render a run trace into delimited files and figures.

``write_report`` takes a Trace (live from a kernel or reloaded from a
dump) and writes into one directory:

  events.csv    every event: t, actor, kind, detail as compact JSON
  summary.csv   per-kind counts and time bounds
  timeline.png  event raster grouped by actor
  frames.png    frame volume by protocol kind
  activity.png  cumulative registrations and stored readings over time

The CSVs are the machine-readable artifact; the figures are for eyes.
"""

from __future__ import annotations

import csv
import json
import os
from collections import Counter, defaultdict

import matplotlib

matplotlib.use("Agg")  # headless; must precede pyplot
import matplotlib.pyplot as plt

from iotmp.sim.trace import Trace

FIGSIZE = (9.0, 4.5)


def write_events_csv(trace: Trace, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "actor", "kind", "detail"])
        for e in trace.events:
            w.writerow([f"{e.t:.6f}", e.actor, e.kind,
                        json.dumps(e.detail, sort_keys=True, separators=(",", ":"))])


def write_summary_csv(trace: Trace, path: str) -> None:
    counts: Counter = Counter()
    first: dict = {}
    last: dict = {}
    for e in trace.events:
        counts[e.kind] += 1
        first.setdefault(e.kind, e.t)
        last[e.kind] = e.t
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "count", "first_t", "last_t"])
        for kind in sorted(counts):
            w.writerow([kind, counts[kind], f"{first[kind]:.6f}", f"{last[kind]:.6f}"])


def _fig_timeline(trace: Trace, path: str) -> None:
    by_actor: dict = defaultdict(list)
    for e in trace.events:
        by_actor[e.actor].append(e.t)
    actors = sorted(by_actor)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if actors:
        ax.eventplot([by_actor[a] for a in actors], lineoffsets=range(len(actors)),
                     linelengths=0.8, colors="tab:blue")
        ax.set_yticks(range(len(actors)))
        ax.set_yticklabels(actors, fontsize=7)
    ax.set_xlabel("simulated time (s)")
    ax.set_title("event timeline by actor")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _fig_frames(trace: Trace, path: str) -> None:
    counts: Counter = Counter()
    for e in trace.events:
        if e.kind == "frame":
            counts[e.detail.get("kind", "?")] += 1
    kinds = sorted(counts)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(kinds, [counts[k] for k in kinds], color="tab:orange")
    ax.set_ylabel("frames")
    ax.set_title("protocol frames by kind")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _fig_activity(trace: Trace, path: str) -> None:
    reg_t = [e.t for e in trace.events if e.kind in ("registered", "reconnected")]
    stored_t, stored_n = [], []
    total = 0
    for e in trace.events:
        if e.kind == "stored":
            total += e.detail.get("n", 1)
            stored_t.append(e.t)
            stored_n.append(total)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if reg_t:
        ax.step(reg_t, range(1, len(reg_t) + 1), where="post",
                label="registrations", color="tab:green")
    if stored_t:
        ax2 = ax.twinx()
        ax2.step(stored_t, stored_n, where="post", label="stored readings",
                 color="tab:purple")
        ax2.set_ylabel("stored readings")
        ax2.legend(loc="lower right")
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("registrations")
    ax.set_title("fleet activity")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(trace: Trace, outdir: str) -> list[str]:
    """Write all report artifacts; returns the paths written."""
    os.makedirs(outdir, exist_ok=True)
    artifacts = {
        "events.csv": write_events_csv,
        "summary.csv": write_summary_csv,
        "timeline.png": _fig_timeline,
        "frames.png": _fig_frames,
        "activity.png": _fig_activity,
    }
    written = []
    for name, fn in artifacts.items():
        path = os.path.join(outdir, name)
        fn(trace, path)
        written.append(path)
    return written
