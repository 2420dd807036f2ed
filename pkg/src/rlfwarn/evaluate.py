"""Evaluation protocol: confusion metrics, rank-based AUC, F1-optimal
threshold sweep, benchmark grid, per-event hit-policy analysis, external
prediction import, and inference latency profiling."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .learners import TrainedModel, predict_batch

THRESHOLD_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
_TIME_EPS = 1e-9


class EvalError(ValueError):
    pass


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    auc: float | None = None
    tau_star: float | None = None
    model: str = ""
    ts: float | None = None
    tp_horizon: float | None = None
    balance: str = ""


def metrics_at_threshold(scores, labels, tau: float) -> MetricsReport:
    """Confusion metrics predicting positive iff score >= tau.

    Precision and recall use the 0-when-undefined convention so F1 stays
    defined for never-alarming models.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1 or len(s) < 1:
        raise EvalError("scores and labels must be equal-length 1-D sequences")
    pred = s >= tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    accuracy = (tp + tn) / len(s)
    return MetricsReport(accuracy, precision, recall, f1, tp, fp, tn, fn)


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied pairs count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvalError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank over ties
        i = j + 1
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def select_threshold(val_scores, val_labels) -> float:
    """F1-maximizing tau over the nine-point grid; ties take the smallest tau."""
    best_tau = THRESHOLD_GRID[0]
    best_f1 = -1.0
    for tau in THRESHOLD_GRID:
        f1 = metrics_at_threshold(val_scores, val_labels, tau).f1
        if f1 > best_f1:
            best_f1 = f1
            best_tau = tau
    return best_tau


@dataclass
class GridCell:
    model: str
    ts: float
    tp: float
    balance: str
    val_scores: np.ndarray
    val_labels: np.ndarray
    test_scores: np.ndarray
    test_labels: np.ndarray


def evaluate_cell(cell: GridCell) -> MetricsReport:
    tau_star = select_threshold(cell.val_scores, cell.val_labels)
    report = metrics_at_threshold(cell.test_scores, cell.test_labels, tau_star)
    report.auc = auc(cell.test_scores, cell.test_labels)
    report.tau_star = tau_star
    report.model = cell.model
    report.ts = cell.ts
    report.tp_horizon = cell.tp
    report.balance = cell.balance
    return report


def evaluate_grid(cells: list[GridCell]) -> tuple[list[MetricsReport], list[str]]:
    """One report per cell, in deterministic (model, ts, tp) order; failing
    cells become error entries and the grid continues."""
    reports: list[MetricsReport] = []
    errors: list[str] = []
    for cell in sorted(cells, key=lambda c: (c.model, c.ts, c.tp)):
        try:
            reports.append(evaluate_cell(cell))
        except EvalError as exc:
            errors.append(f"{cell.model},ts={cell.ts},tp={cell.tp}: {exc}")
    return reports, errors


REPORT_HEADER = "model,T_s,T_p,balance,tau_star,accuracy,precision,recall,f1,auc,tp,fp,tn,fn"


def report_csv(reports: list[MetricsReport]) -> str:
    lines = [REPORT_HEADER]
    for r in reports:
        lines.append(
            f"{r.model},{r.ts:g},{r.tp_horizon:g},{r.balance},{r.tau_star:.1f},"
            f"{r.accuracy:.6f},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.auc:.6f},"
            f"{r.tp},{r.fp},{r.tn},{r.fn}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class HitPolicy:
    kind: str  # any_k | consecutive_k
    k: int

    def __post_init__(self) -> None:
        if self.kind not in ("any_k", "consecutive_k"):
            raise EvalError(f"unknown hit policy {self.kind!r}")
        if self.k < 1:
            raise EvalError("hit policy k must be >= 1")


@dataclass
class HitReport:
    policy: HitPolicy
    tp_horizon: float
    hits: list[bool]
    events: int

    @property
    def hit_count(self) -> int:
        return sum(self.hits)

    @property
    def coverage(self) -> float:
        return self.hit_count / self.events

    @property
    def ratio(self) -> str:
        return f"{self.hit_count}/{self.events}"


def hit_analysis(alarm_times, rlf_times, tp: float, policy: HitPolicy,
                 sample_interval: float = 0.1) -> HitReport:
    """Per-event hit decision: alarms count when raised in [t_e - Tp, t_e).

    any_k needs at least k alarms in the window; consecutive_k needs k alarms
    at consecutive ticks (spacing exactly one sampling interval).
    """
    alarms = np.asarray(sorted(alarm_times), dtype=float)
    events = sorted(rlf_times)
    if not events:
        raise EvalError("no events to analyze")
    hits: list[bool] = []
    for t_e in events:
        lo = np.searchsorted(alarms, t_e - tp - _TIME_EPS, side="left")
        hi = np.searchsorted(alarms, t_e - _TIME_EPS, side="left")
        window = alarms[lo:hi]
        if policy.kind == "any_k":
            hits.append(len(window) >= policy.k)
        else:
            run = 1
            ok = policy.k <= 1 and len(window) >= 1
            for a, b in zip(window, window[1:]):
                if abs((b - a) - sample_interval) <= _TIME_EPS:
                    run += 1
                else:
                    run = 1
                if run >= policy.k:
                    ok = True
                    break
            hits.append(bool(ok))
    return HitReport(policy=policy, tp_horizon=tp, hits=hits, events=len(events))


HIT_HEADER = "policy,k,T_p,hits,events,coverage,ratio"


def hit_report_csv(reports: list[HitReport]) -> str:
    lines = [HIT_HEADER]
    for r in reports:
        lines.append(
            f"{r.policy.kind},{r.policy.k},{r.tp_horizon:g},{r.hit_count},{r.events},"
            f"{r.coverage:.6f},{r.ratio}"
        )
    return "\n".join(lines) + "\n"


def standard_hit_policies() -> list[HitPolicy]:
    return [HitPolicy("any_k", k) for k in (1, 2, 3)] + [HitPolicy("consecutive_k", k) for k in (2, 3)]


def import_predictions(path: str, ds: Dataset) -> np.ndarray:
    """Scores from an external CSV (trace_id, now_t, score) aligned to the
    dataset's example order; every example must match exactly one row."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split(",")[:3] != ["trace_id", "now_t", "score"]:
        raise EvalError(f"malformed predictions header in {path}")
    rows: list[tuple[str, float, float]] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != 3:
            raise EvalError(f"wrong field count at line {line_no}")
        tid, t_s, score_s = cells
        t = float(t_s)
        score = float(score_s)
        if not 0.0 <= score <= 1.0:
            raise EvalError(f"score out of [0,1] for key ({tid}, {t}) at line {line_no}")
        rows.append((tid, t, score))

    # quantize now_t to the matching tolerance so lookups are exact
    def key(tid: str, t: float) -> tuple[str, int]:
        return (tid, int(round(t / 1e-6)))

    table: dict[tuple[str, int], float] = {}
    for tid, t, score in rows:
        k = key(tid, t)
        if k in table:
            raise EvalError(f"duplicate prediction row for key ({tid}, {t})")
        table[k] = score

    out = np.empty(len(ds.examples))
    used: set[tuple[str, int]] = set()
    for i, e in enumerate(ds.examples):
        k = key(e.trace_id, e.now_t)
        if k not in table:
            raise EvalError(f"missing prediction row for key ({e.trace_id}, {e.now_t})")
        out[i] = table[k]
        used.add(k)
    extra = set(table) - used
    if extra:
        tid, tq = sorted(extra)[0]
        raise EvalError(f"unmatched extra prediction row for key ({tid}, {tq * 1e-6})")
    return out


@dataclass
class LatencyReport:
    mean_s: float
    p50_s: float
    p95_s: float
    feature_dim: int
    model_desc: str


def latency_profile(model: TrainedModel, examples: np.ndarray, repetitions: int = 5) -> LatencyReport:
    """Wall-clock per-sample single-prediction latency over repetitions,
    after one warm-up pass."""
    x = np.atleast_2d(np.asarray(examples, dtype=float))
    if x.shape[0] == 0:
        raise EvalError("latency profile needs at least one example")
    if repetitions < 3:
        raise EvalError("repetitions must be >= 3")
    predict_batch(model, x)  # warm-up
    per_rep: list[float] = []
    for _ in range(repetitions):
        start = time.perf_counter()
        for i in range(x.shape[0]):
            predict_batch(model, x[i:i + 1])
        elapsed = time.perf_counter() - start
        per_rep.append(elapsed / x.shape[0])
    vals = np.array(per_rep)
    if model.kind == "gbdt":
        desc = f"gbdt:{len(model.params['trees'])} trees"
    elif model.kind == "mlp":
        desc = f"mlp:{model.config.hidden_units} hidden"
    else:
        desc = "logreg"
    return LatencyReport(
        mean_s=float(vals.mean()),
        p50_s=float(np.percentile(vals, 50)),
        p95_s=float(np.percentile(vals, 95)),
        feature_dim=model.feature_dim,
        model_desc=desc,
    )


TIMELINE_HEADER = "now_t,score,alarm,rlf_event"


def timeline_csv(now_times, scores, alarms, rlf_flags) -> str:
    lines = [TIMELINE_HEADER]
    for t, s, a, r in zip(now_times, scores, alarms, rlf_flags):
        lines.append(f"{t:.6f},{s:.9f},{int(a)},{int(r)}")
    return "\n".join(lines) + "\n"
