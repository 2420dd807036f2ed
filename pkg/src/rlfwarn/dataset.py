"""Sliding-window supervised dataset construction.

Turns traces into labeled examples: an observation window of past frames
ending at a "Now" tick, a flat feature vector, and a binary (or
multi-interval) label saying whether an RLF falls in the horizon (t, t+Tp].
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .trace import RSRP_MIN, RSRQ_MIN, EventCode, RadioSample, Trace, rlf_timestamps

EVENT_ORDER = (EventCode.MCGF, EventCode.NASR, EventCode.MNBH, EventCode.SCGM, EventCode.ENBH)
_EVENT_INDEX = {code: i for i, code in enumerate(EVENT_ORDER)}
PAD_RSRP = RSRP_MIN
PAD_RSRQ = RSRQ_MIN
STD_FLOOR = 1e-6
_TIME_EPS = 1e-9

_SCHEME_RE = re.compile(r"^points\((\d+),(continuous|spread)\)$")


class DatasetError(ValueError):
    pass


def parse_scheme(text: str) -> tuple[str, int | None, str | None]:
    """'full' or 'points(k,continuous|spread)' -> (kind, k, mode)."""
    if text == "full":
        return ("full", None, None)
    m = _SCHEME_RE.match(text)
    if not m:
        raise DatasetError(f"unknown scheme {text!r}")
    k = int(m.group(1))
    if k < 1:
        raise DatasetError("scheme k must be >= 1")
    return ("points", k, m.group(2))


@dataclass(frozen=True)
class WindowSpec:
    ts: float = 3.0
    tp: float = 2.0
    sample_interval: float = 0.1
    neighbor_capacity: int = 3
    scheme: str = "full"
    label_mode: str = "binary"      # binary | multi_interval
    intervals: int | None = None    # K for multi_interval; default tp in seconds

    def __post_init__(self) -> None:
        for name, value in (("ts", self.ts), ("tp", self.tp)):
            ticks = value / self.sample_interval
            if value <= 0 or abs(ticks - round(ticks)) > 1e-6:
                raise DatasetError(f"{name}={value} is not a positive multiple of the sampling interval")
        parse_scheme(self.scheme)
        if self.label_mode not in ("binary", "multi_interval"):
            raise DatasetError(f"unknown label_mode {self.label_mode!r}")

    @property
    def window_ticks(self) -> int:
        return int(round(self.ts / self.sample_interval))

    @property
    def horizon_ticks(self) -> int:
        return int(round(self.tp / self.sample_interval))

    @property
    def k_intervals(self) -> int:
        if self.intervals is not None:
            return self.intervals
        return max(1, int(round(self.tp)))

    @property
    def per_frame_dim(self) -> int:
        return 2 + 2 * self.neighbor_capacity + 2 + len(EVENT_ORDER)

    def frame_offsets(self) -> list[int]:
        """Offsets (0-based within the window of W frames) of the frames fed
        to the model; the frame at Now (offset W-1) is always included."""
        w = self.window_ticks
        kind, k, mode = parse_scheme(self.scheme)
        if kind == "full":
            return list(range(w))
        assert k is not None
        k = min(k, w)
        if mode == "continuous":
            return list(range(w - k, w))
        if k == 1:
            return [w - 1]
        return sorted({int(round(i * (w - 1) / (k - 1))) for i in range(k)})

    @property
    def feature_dim(self) -> int:
        return len(self.frame_offsets()) * self.per_frame_dim

    def continuous_mask(self) -> np.ndarray:
        """True for dims that get z-scored (signal levels, not flags/one-hots)."""
        per = np.zeros(self.per_frame_dim, dtype=bool)
        per[: 2 + 2 * self.neighbor_capacity] = True
        return np.tile(per, len(self.frame_offsets()))


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class Example:
    trace_id: str
    now_t: float
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    spec: WindowSpec
    examples: list[Example]
    normalization: Normalization | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def feature_matrix(self) -> np.ndarray:
        if not self.examples:
            return np.zeros((0, self.spec.feature_dim))
        return np.stack([e.features for e in self.examples])

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=int)

    def positive_count(self) -> int:
        return int(sum(1 for e in self.examples if e.label > 0))

    def negative_count(self) -> int:
        return int(sum(1 for e in self.examples if e.label == 0))

    def sort(self) -> None:
        self.examples.sort(key=lambda e: (e.trace_id, e.now_t))


def _frame_vector(frame: RadioSample, prev: RadioSample | None, spec: WindowSpec) -> list[float]:
    out = [frame.serving_rsrp, frame.serving_rsrq]
    for j in range(spec.neighbor_capacity):
        if j < len(frame.neighbors):
            out += [frame.neighbors[j].rsrp, frame.neighbors[j].rsrq]
        else:
            out += [PAD_RSRP, PAD_RSRQ]
    if prev is None:
        neighbor_changed = 0.0
        serving_changed = 0.0
    else:
        ids = {nb.cell_id for nb in frame.neighbors}
        prev_ids = {nb.cell_id for nb in prev.neighbors}
        neighbor_changed = 1.0 if ids != prev_ids else 0.0
        serving_changed = 1.0 if frame.serving_cell != prev.serving_cell else 0.0
    out += [neighbor_changed, serving_changed]
    onehot = [0.0] * len(EVENT_ORDER)
    idx = _EVENT_INDEX.get(frame.event)
    if idx is not None:
        onehot[idx] = 1.0
    out += onehot
    return out


def featurize(frames: list[RadioSample], spec: WindowSpec, normalization: Normalization | None = None) -> np.ndarray:
    """Flat feature vector for an already-selected frame sequence.

    Change flags compare each frame against the previous frame in the
    sequence; the first frame's flags are zero.
    """
    if not frames:
        raise DatasetError("featurize needs at least one frame")
    parts: list[float] = []
    prev = None
    for frame in frames:
        parts.extend(_frame_vector(frame, prev, spec))
        prev = frame
    x = np.array(parts, dtype=float)
    if normalization is not None:
        x = normalization.apply(x)
    return x


def binary_label(now_t: float, rlf_times, tp: float) -> int:
    """1 iff some RLF time falls in the left-open, right-closed (t, t+Tp]."""
    for e in rlf_times:
        if now_t + _TIME_EPS < e <= now_t + tp + _TIME_EPS:
            return 1
    return 0


def multi_interval_label(now_t: float, rlf_times, tp: float, k: int) -> np.ndarray:
    """One-hot of length K+1: index 0 for no RLF in the horizon, otherwise the
    sub-interval of (t, t+Tp] holding the earliest RLF (right-closed)."""
    if k < 1:
        raise DatasetError("K must be >= 1")
    onehot = np.zeros(k + 1)
    hits = [e for e in rlf_times if now_t + _TIME_EPS < e <= now_t + tp + _TIME_EPS]
    if not hits:
        onehot[0] = 1.0
        return onehot
    earliest = min(hits)
    sub = tp / k
    j = int(math.ceil((earliest - now_t) / sub - 1e-9))
    onehot[min(max(j, 1), k)] = 1.0
    return onehot


def _multi_interval_index(now_t: float, rlf_times, tp: float, k: int) -> int:
    return int(np.argmax(multi_interval_label(now_t, rlf_times, tp, k)))


def build_examples(trace: Trace, spec: WindowSpec) -> list[Example]:
    """One example per Now tick whose window fits in the trace and whose
    horizon does not outrun it; stride is one sampling interval."""
    if abs(trace.sample_interval - spec.sample_interval) > 1e-9:
        raise DatasetError(
            f"trace interval {trace.sample_interval} does not match spec {spec.sample_interval}"
        )
    n = len(trace.samples)
    w = spec.window_ticks
    horizon = spec.horizon_ticks
    first = w - 1
    last = n - 1 - horizon
    if last < first:
        return []

    samples = trace.samples
    cap = spec.neighbor_capacity
    cont = np.empty((n, 2 + 2 * cap))
    serving_cell = np.empty(n, dtype=int)
    neighbor_key: dict[tuple[int, ...], int] = {}
    neighbor_id = np.empty(n, dtype=int)
    event_idx = np.full(n, -1, dtype=int)
    for i, s in enumerate(samples):
        cont[i, 0] = s.serving_rsrp
        cont[i, 1] = s.serving_rsrq
        for j in range(cap):
            if j < len(s.neighbors):
                cont[i, 2 + 2 * j] = s.neighbors[j].rsrp
                cont[i, 3 + 2 * j] = s.neighbors[j].rsrq
            else:
                cont[i, 2 + 2 * j] = PAD_RSRP
                cont[i, 3 + 2 * j] = PAD_RSRQ
        serving_cell[i] = s.serving_cell
        key = tuple(sorted(nb.cell_id for nb in s.neighbors))
        neighbor_id[i] = neighbor_key.setdefault(key, len(neighbor_key))
        idx = _EVENT_INDEX.get(s.event)
        if idx is not None:
            event_idx[i] = idx

    offsets = np.array(spec.frame_offsets(), dtype=int)
    now_idx = np.arange(first, last + 1)
    frame_idx = now_idx[:, None] - (w - 1) + offsets[None, :]  # (n_windows, n_frames)
    n_windows, n_frames = frame_idx.shape
    per = spec.per_frame_dim
    feats = np.zeros((n_windows, n_frames * per))
    for j in range(n_frames):
        col = frame_idx[:, j]
        base = j * per
        feats[:, base: base + 2 + 2 * cap] = cont[col]
        if j > 0:
            prev_col = frame_idx[:, j - 1]
            feats[:, base + 2 + 2 * cap] = (neighbor_id[col] != neighbor_id[prev_col]).astype(float)
            feats[:, base + 2 + 2 * cap + 1] = (serving_cell[col] != serving_cell[prev_col]).astype(float)
        ev = event_idx[col]
        has = ev >= 0
        feats[np.nonzero(has)[0], base + 2 + 2 * cap + 2 + ev[has]] = 1.0

    rlf = np.asarray(rlf_timestamps(trace))
    now_t = np.array([samples[i].t for i in now_idx])
    if rlf.size:
        lo = np.searchsorted(rlf, now_t + _TIME_EPS, side="right")
        hi = np.searchsorted(rlf, now_t + spec.tp + _TIME_EPS, side="right")
        positive = hi > lo
    else:
        positive = np.zeros(n_windows, dtype=bool)

    examples: list[Example] = []
    rlf_list = rlf.tolist()
    for widx in range(n_windows):
        if spec.label_mode == "binary":
            label = int(positive[widx])
        else:
            label = _multi_interval_index(float(now_t[widx]), rlf_list, spec.tp, spec.k_intervals)
        examples.append(Example(trace.trace_id, float(now_t[widx]), feats[widx], label))
    return examples


def fit_normalization(examples: list[Example], spec: WindowSpec) -> Normalization:
    """Per-dimension mean/std over the given examples; flag and one-hot dims
    are left untouched (mean 0, std 1); std floored at 1e-6."""
    dim = spec.feature_dim
    mean = np.zeros(dim)
    std = np.ones(dim)
    if examples:
        x = np.stack([e.features for e in examples])
        mask = spec.continuous_mask()
        mean[mask] = x[:, mask].mean(axis=0)
        std[mask] = np.maximum(x[:, mask].std(axis=0), STD_FLOOR)
    return Normalization(mean=mean, std=std)


@dataclass
class SplitResult:
    train: Dataset
    val: Dataset
    test: Dataset
    warnings: list[str]


def chrono_split(examples: list[Example], spec: WindowSpec,
                 fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> SplitResult:
    """Leakage-free chronological split per trace.

    Examples whose observation window or horizon straddles a cut boundary are
    dropped from both sides. Normalization is fitted on train only and
    attached to all three datasets.
    """
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError("fractions must be positive and sum to 1")
    by_trace: dict[str, list[Example]] = {}
    for e in examples:
        by_trace.setdefault(e.trace_id, []).append(e)

    train: list[Example] = []
    val: list[Example] = []
    test: list[Example] = []
    footprint_back = spec.ts - spec.sample_interval
    footprint_fwd = spec.tp
    for tid in sorted(by_trace):
        group = sorted(by_trace[tid], key=lambda e: e.now_t)
        n = len(group)
        c1 = int(math.floor(fractions[0] * n))
        c2 = int(math.floor((fractions[0] + fractions[1]) * n))
        c1 = min(max(c1, 1), n - 1)
        c2 = min(max(c2, c1), n - 1)
        b1 = 0.5 * (group[c1 - 1].now_t + group[c1].now_t) if c1 > 0 else group[0].now_t
        b2 = 0.5 * (group[c2 - 1].now_t + group[c2].now_t) if c2 > 0 else group[0].now_t
        for e in group:
            start = e.now_t - footprint_back
            end = e.now_t + footprint_fwd
            if end < b1:
                train.append(e)
            elif start > b1 and end < b2:
                val.append(e)
            elif start > b2:
                test.append(e)

    norm = fit_normalization(train, spec)
    warnings: list[str] = []
    for name, part in (("train", train), ("val", val), ("test", test)):
        if part and not any(e.label > 0 for e in part):
            warnings.append(f"{name} split contains zero positive examples")
    return SplitResult(
        train=Dataset(spec, train, norm),
        val=Dataset(spec, val, norm),
        test=Dataset(spec, test, norm),
        warnings=warnings,
    )


def _norm_path(path: str) -> str:
    return (path[:-4] if path.endswith(".csv") else path) + ".norm.csv"


def save_dataset(ds: Dataset, path: str) -> None:
    dim = ds.spec.feature_dim
    header = "trace_id,now_t,label," + ",".join(f"f{i}" for i in range(dim))
    lines = [header]
    for e in ds.examples:
        feats = ",".join(repr(float(v)) for v in e.features)
        lines.append(f"{e.trace_id},{float(e.now_t)!r},{e.label},{feats}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if ds.normalization is not None:
        nlines = ["dim,mean,std"]
        for i in range(dim):
            nlines.append(f"{i},{float(ds.normalization.mean[i])!r},{float(ds.normalization.std[i])!r}")
        with open(_norm_path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(nlines) + "\n")


def load_dataset(path: str, spec: WindowSpec) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("trace_id,now_t,label"):
        raise DatasetError(f"malformed dataset header in {path}")
    examples: list[Example] = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        feats = np.array([float(v) for v in cells[3:]])
        examples.append(Example(cells[0], float(cells[1]), feats, int(cells[2])))
    norm = None
    npath = _norm_path(path)
    if os.path.exists(npath):
        with open(npath, "r", encoding="utf-8") as fh:
            nlines = fh.read().splitlines()
        mean = np.zeros(spec.feature_dim)
        std = np.ones(spec.feature_dim)
        for line in nlines[1:]:
            if not line:
                continue
            i, m, s = line.split(",")
            mean[int(i)] = float(m)
            std[int(i)] = float(s)
        norm = Normalization(mean, std)
    return Dataset(spec, examples, norm)
