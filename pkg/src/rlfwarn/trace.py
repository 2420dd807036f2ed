"""Telemetry data model and trace CSV I/O.

A trace is a uniformly sampled sequence of 10 Hz radio frames: serving and
neighbor RSRP/RSRQ, cell ids, a protocol event code, and an RLF flag.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

RSRP_MIN, RSRP_MAX = -140.0, -44.0  # 3GPP reporting range, dBm
RSRQ_MIN, RSRQ_MAX = -20.0, -3.0    # 3GPP reporting range, dB
TIME_TOL = 1e-9


class EventCode(enum.Enum):
    NONE = "NONE"
    MCGF = "MCGF"
    NASR = "NASR"
    MNBH = "MNBH"
    SCGM = "SCGM"
    ENBH = "ENBH"


RLF_CODES = frozenset({EventCode.MCGF, EventCode.NASR})
HANDOVER_CODES = frozenset({EventCode.MNBH, EventCode.ENBH})


def is_rlf(code: EventCode) -> bool:
    return code in RLF_CODES


class TraceParseError(ValueError):
    """Malformed trace file; message names the offending line."""


@dataclass(frozen=True)
class NeighborEntry:
    cell_id: int
    rsrp: float
    rsrq: float


@dataclass(frozen=True)
class RadioSample:
    t: float
    serving_cell: int
    serving_rsrp: float
    serving_rsrq: float
    neighbors: tuple[NeighborEntry, ...]
    event: EventCode
    rlf: bool


@dataclass(frozen=True)
class Trace:
    trace_id: str
    sample_interval: float
    samples: tuple[RadioSample, ...]

    @property
    def neighbor_capacity(self) -> int:
        return max((len(s.neighbors) for s in self.samples), default=0)

    @property
    def duration(self) -> float:
        if not self.samples:
            return 0.0
        return self.samples[-1].t - self.samples[0].t


def rlf_timestamps(trace: Trace) -> list[float]:
    """Timestamps of RLF samples (MCGF or NASR), ascending."""
    return [s.t for s in trace.samples if is_rlf(s.event)]


def handover_timestamps(trace: Trace) -> list[float]:
    """Timestamps of handover samples (MNBH or ENBH), ascending."""
    return [s.t for s in trace.samples if s.event in HANDOVER_CODES]


@dataclass(frozen=True)
class Violation:
    index: int
    field: str
    message: str


def validate_trace(trace: Trace) -> list[Violation]:
    """Report every invariant violation; empty list iff the trace is valid."""
    out: list[Violation] = []
    prev_t = None
    capacity = None
    for i, s in enumerate(trace.samples):
        if prev_t is not None and abs((s.t - prev_t) - trace.sample_interval) > TIME_TOL:
            out.append(Violation(i, "t", f"non-uniform spacing {s.t - prev_t!r}, expected {trace.sample_interval!r}"))
        prev_t = s.t
        if not RSRP_MIN <= s.serving_rsrp <= RSRP_MAX:
            out.append(Violation(i, "serving_rsrp", f"{s.serving_rsrp} outside [{RSRP_MIN}, {RSRP_MAX}] dBm"))
        if not RSRQ_MIN <= s.serving_rsrq <= RSRQ_MAX:
            out.append(Violation(i, "serving_rsrq", f"{s.serving_rsrq} outside [{RSRQ_MIN}, {RSRQ_MAX}] dB"))
        for j, nb in enumerate(s.neighbors):
            if nb.cell_id < 0:
                out.append(Violation(i, f"n{j+1}_pci", "negative cell id"))
            if not RSRP_MIN <= nb.rsrp <= RSRP_MAX:
                out.append(Violation(i, f"n{j+1}_rsrp", f"{nb.rsrp} outside [{RSRP_MIN}, {RSRP_MAX}] dBm"))
            if not RSRQ_MIN <= nb.rsrq <= RSRQ_MAX:
                out.append(Violation(i, f"n{j+1}_rsrq", f"{nb.rsrq} outside [{RSRQ_MIN}, {RSRQ_MAX}] dB"))
        for a, b in zip(s.neighbors, s.neighbors[1:]):
            if a.rsrp < b.rsrp or (a.rsrp == b.rsrp and a.cell_id >= b.cell_id):
                out.append(Violation(i, "neighbors", "not sorted by descending rsrp (ties by ascending cell_id)"))
                break
        if s.rlf != is_rlf(s.event):
            out.append(Violation(i, "rlf", f"rlf flag {s.rlf} inconsistent with event {s.event.value}"))
        if capacity is None:
            capacity = len(s.neighbors)
    return out


def _header_fields(n: int) -> list[str]:
    cols = ["t", "serving_pci", "serving_rsrp", "serving_rsrq"]
    for j in range(1, n + 1):
        cols += [f"n{j}_pci", f"n{j}_rsrp", f"n{j}_rsrq"]
    cols += ["event", "rlf"]
    return cols


def _fmt(x: float) -> str:
    # 6 decimal places, round-half-even (Python's banker's rounding).
    return f"{round(x, 6):.6f}"


def save_trace_csv(trace: Trace, path: str, neighbor_capacity: int | None = None) -> None:
    n = trace.neighbor_capacity if neighbor_capacity is None else neighbor_capacity
    lines = [",".join(_header_fields(n))]
    for s in trace.samples:
        row = [_fmt(s.t), str(s.serving_cell), _fmt(s.serving_rsrp), _fmt(s.serving_rsrq)]
        for j in range(n):
            if j < len(s.neighbors):
                nb = s.neighbors[j]
                row += [str(nb.cell_id), _fmt(nb.rsrp), _fmt(nb.rsrq)]
            else:
                row += ["", "", ""]
        row += [s.event.value, "1" if s.rlf else "0"]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_float(text: str, line_no: int, field: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise TraceParseError(f"bad {field} value {text!r} at line {line_no}") from None


def _parse_int(text: str, line_no: int, field: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise TraceParseError(f"bad {field} value {text!r} at line {line_no}") from None


def load_trace_csv(path: str, trace_id: str | None = None) -> Trace:
    """Parse a trace CSV, enforcing all Trace invariants; errors name the line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceParseError("empty file")
    header = lines[0].split(",")
    if len(header) < 6 or (len(header) - 6) % 3 != 0:
        raise TraceParseError("malformed header: wrong column count")
    n = (len(header) - 6) // 3
    if header != _header_fields(n):
        raise TraceParseError("malformed header: unexpected column names")

    samples: list[RadioSample] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise TraceParseError(f"wrong field count at line {line_no}")
        t = _parse_float(cells[0], line_no, "t")
        serving_cell = _parse_int(cells[1], line_no, "serving_pci")
        s_rsrp = _parse_float(cells[2], line_no, "serving_rsrp")
        s_rsrq = _parse_float(cells[3], line_no, "serving_rsrq")
        if not RSRP_MIN <= s_rsrp <= RSRP_MAX:
            raise TraceParseError(f"serving_rsrp {s_rsrp} out of range at line {line_no}")
        if not RSRQ_MIN <= s_rsrq <= RSRQ_MAX:
            raise TraceParseError(f"serving_rsrq {s_rsrq} out of range at line {line_no}")
        neighbors: list[NeighborEntry] = []
        for j in range(n):
            pci_s, rsrp_s, rsrq_s = cells[4 + 3 * j: 7 + 3 * j]
            if pci_s == "" and rsrp_s == "" and rsrq_s == "":
                continue
            if "" in (pci_s, rsrp_s, rsrq_s):
                raise TraceParseError(f"partially empty neighbor slot {j+1} at line {line_no}")
            if neighbors and len(neighbors) < j:
                raise TraceParseError(f"gap in neighbor slots at line {line_no}")
            rsrp = _parse_float(rsrp_s, line_no, f"n{j+1}_rsrp")
            rsrq = _parse_float(rsrq_s, line_no, f"n{j+1}_rsrq")
            if not RSRP_MIN <= rsrp <= RSRP_MAX:
                raise TraceParseError(f"n{j+1}_rsrp {rsrp} out of range at line {line_no}")
            if not RSRQ_MIN <= rsrq <= RSRQ_MAX:
                raise TraceParseError(f"n{j+1}_rsrq {rsrq} out of range at line {line_no}")
            neighbors.append(NeighborEntry(_parse_int(pci_s, line_no, f"n{j+1}_pci"), rsrp, rsrq))
        for a, b in zip(neighbors, neighbors[1:]):
            if a.rsrp < b.rsrp or (a.rsrp == b.rsrp and a.cell_id >= b.cell_id):
                raise TraceParseError(f"neighbors not sorted by descending rsrp at line {line_no}")
        try:
            event = EventCode(cells[-2])
        except ValueError:
            raise TraceParseError(f"unknown event code {cells[-2]!r} at line {line_no}") from None
        if cells[-1] not in ("0", "1"):
            raise TraceParseError(f"bad rlf flag {cells[-1]!r} at line {line_no}")
        rlf = cells[-1] == "1"
        if rlf != is_rlf(event):
            raise TraceParseError(f"rlf flag inconsistent with event {event.value} at line {line_no}")
        samples.append(RadioSample(t, serving_cell, s_rsrp, s_rsrq, tuple(neighbors), event, rlf))

    if len(samples) < 2:
        raise TraceParseError("trace needs at least 2 samples to establish the sampling interval")
    interval = samples[1].t - samples[0].t
    if interval <= 0:
        raise TraceParseError("non-increasing timestamp at line 3")
    for i in range(1, len(samples)):
        if abs((samples[i].t - samples[i - 1].t) - interval) > TIME_TOL:
            raise TraceParseError(f"non-uniform timestamp at line {i + 2}")
    if trace_id is None:
        trace_id = path.rsplit("/", 1)[-1]
        if trace_id.endswith(".csv"):
            trace_id = trace_id[:-4]
    return Trace(trace_id=trace_id, sample_interval=round(interval, 6), samples=tuple(samples))
