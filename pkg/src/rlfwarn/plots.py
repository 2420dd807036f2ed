"""Figure rendering for the report outputs; every figure has a CSV twin."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import HitReport, MetricsReport

_PNG_META = {"Software": None}  # keep PNG bytes reproducible across reruns


def _save(fig, path: str) -> None:
    tmp = path + ".tmp"
    fig.savefig(tmp, format="png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    os.replace(tmp, path)


def save_timeline_figure(now_times, scores, alarm_flags, rlf_times, tau: float, path: str,
                         title: str = "Per-tick RLF score") -> None:
    """Score trajectory with alarm markers and RLF event lines."""
    fig, ax = plt.subplots(figsize=(10, 3.2))
    ax.plot(now_times, scores, lw=0.7, color="tab:blue", label="score")
    ax.axhline(tau, color="gray", ls="--", lw=0.8, label=f"tau={tau:g}")
    alarm_t = [t for t, a in zip(now_times, alarm_flags) if a]
    alarm_s = [s for s, a in zip(scores, alarm_flags) if a]
    if alarm_t:
        ax.plot(alarm_t, alarm_s, "r.", ms=5, label="alarm")
    for i, t_e in enumerate(rlf_times):
        ax.axvline(t_e, color="black", lw=0.8, alpha=0.6, label="RLF" if i == 0 else None)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_grid_figure(reports: list[MetricsReport], path: str) -> None:
    """Grouped F1 bars per model across prediction horizons."""
    models = sorted({r.model for r in reports})
    horizons = sorted({r.tp_horizon for r in reports})
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(horizons), 1)
    for j, tp in enumerate(horizons):
        xs, ys = [], []
        for i, m in enumerate(models):
            vals = [r.f1 for r in reports if r.model == m and r.tp_horizon == tp]
            if vals:
                xs.append(i + j * width)
                ys.append(sum(vals) / len(vals))
        ax.bar(xs, ys, width=width * 0.95, label=f"Tp={tp:g}s")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(models))])
    ax.set_xticklabels(models)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.0)
    ax.set_title("Test F1 by model and prediction horizon")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_hits_figure(reports: list[HitReport], path: str) -> None:
    """Coverage bars per hit policy."""
    labels = [f"{r.policy.kind.replace('_k', '')}-{r.policy.k}" for r in reports]
    cover = [r.coverage for r in reports]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(reports)), cover, color="tab:orange")
    for i, r in enumerate(reports):
        ax.text(i, cover[i] + 0.02, r.ratio, ha="center", fontsize=8)
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("coverage")
    ax.set_ylim(0, 1.1)
    ax.set_title("Per-event hit coverage by policy")
    fig.tight_layout()
    _save(fig, path)
