"""Synthetic metro-line trace generator.

Produces labeled 10 Hz traces with log-distance path loss, AR(1) shadowing,
hysteresis-driven handovers, rare Poisson RLF events, and a configurable
linear pre-failure signature on the serving cell. Purely deterministic given
(config, seed), so traces double as ground-truth oracles for the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from . import rng
from .trace import (
    RSRP_MAX,
    RSRP_MIN,
    RSRQ_MAX,
    RSRQ_MIN,
    EventCode,
    NeighborEntry,
    RadioSample,
    Trace,
    handover_timestamps,
    rlf_timestamps,
)

# Reference transmit power seen at the reference distance, dBm.
TX_REF_DBM = -55.0
REF_DISTANCE_M = 10.0
RLF_REFRACTORY_S = 5.0  # keeps events well separated for per-event hit analysis


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float = 600.0
    sample_interval: float = 0.1
    cell_count: int = 8
    cell_spacing: float = 600.0
    cell_positions: tuple[float, ...] | None = None
    train_speed: float = 20.0
    station_stop_s: float = 20.0
    pathloss_exponent: float = 3.0
    shadowing_sigma: float = 4.0
    shadowing_correlation: float = 0.98
    handover_hysteresis: float = 3.0
    neighbor_capacity: int = 3
    rlf_rate: float = 20.0          # expected RLF events per 1000 s
    precursor_lead: float = 2.0     # seconds of degradation before each RLF
    precursor_depth: float = 6.0    # dB of serving RSRQ decay over the lead
    scgm_probability: float = 0.3
    seed: int = 1
    trace_id: str = ""

    def positions(self) -> np.ndarray:
        if self.cell_positions is not None:
            return np.asarray(self.cell_positions, dtype=float)
        return np.arange(self.cell_count, dtype=float) * self.cell_spacing

    def validate(self) -> None:
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if self.duration < self.sample_interval:
            raise ScenarioError("duration shorter than one sampling interval")
        if self.sample_interval <= 0:
            raise ScenarioError("sample_interval must be positive")
        if self.cell_count < 2:
            raise ScenarioError("cell_count must be >= 2")
        if self.neighbor_capacity < 1:
            raise ScenarioError("neighbor_capacity must be >= 1")
        if self.rlf_rate < 0:
            raise ScenarioError("rlf_rate must be >= 0")
        if self.precursor_lead < 0:
            raise ScenarioError("precursor_lead must be >= 0")
        if not 0.0 <= self.shadowing_correlation < 1.0:
            raise ScenarioError("shadowing_correlation must be in [0, 1)")
        if self.train_speed <= 0:
            raise ScenarioError("train_speed must be positive")


@dataclass(frozen=True)
class GroundTruth:
    rlf_times: tuple[float, ...]
    handover_times: tuple[float, ...]
    precursor_intervals: tuple[tuple[float, float], ...]


def _train_positions(config: ScenarioConfig, times: np.ndarray) -> np.ndarray:
    """Piecewise-linear position along the track: cruise between stations,
    pause at each station, bounce at the track ends."""
    pos = config.positions()
    lo, hi = float(pos.min()), float(pos.max())
    stations = sorted(set(float(p) for p in pos))
    knot_t = [0.0]
    knot_x = [lo]
    t, x, direction = 0.0, lo, 1
    horizon = float(times[-1])
    while t <= horizon:
        if direction > 0:
            ahead = [s for s in stations if s > x + 1e-9]
            target = ahead[0] if ahead else None
        else:
            ahead = [s for s in stations if s < x - 1e-9]
            target = ahead[-1] if ahead else None
        if target is None:
            direction = -direction
            continue
        travel = abs(target - x) / config.train_speed
        t += travel
        x = target
        knot_t.append(t)
        knot_x.append(x)
        if config.station_stop_s > 0:
            t += config.station_stop_s
            knot_t.append(t)
            knot_x.append(x)
        if x in (lo, hi):
            direction = 1 if x == lo else -1
    return np.interp(times, knot_t, knot_x)


def _rlf_event_ticks(config: ScenarioConfig, n_ticks: int, gen: np.random.Generator) -> list[int]:
    """Poisson arrivals snapped to ticks, with a refractory gap between events."""
    if config.rlf_rate <= 0:
        return []
    rate_per_s = config.rlf_rate / 1000.0
    ticks: list[int] = []
    t = 0.0
    last = -math.inf
    while True:
        t += gen.exponential(1.0 / rate_per_s)
        if t > config.duration:
            break
        if t - last < RLF_REFRACTORY_S:
            continue
        idx = int(round(t / config.sample_interval))
        if idx <= 0 or idx >= n_ticks:
            continue
        ticks.append(idx)
        last = t
    return ticks


def simulate_trace(config: ScenarioConfig) -> Trace:
    """Generate one labeled trace; pure function of (config, config.seed)."""
    config.validate()
    i_s = config.sample_interval
    n_ticks = int(round(config.duration / i_s)) + 1
    times = np.arange(n_ticks) * i_s
    cells = config.positions()
    n_cells = len(cells)
    if n_cells < 2:
        raise ScenarioError("need at least 2 cell positions")

    # Received power per cell: log-distance path loss + AR(1) shadowing.
    train_x = _train_positions(config, times)
    dist = np.maximum(np.abs(train_x[:, None] - cells[None, :]), REF_DISTANCE_M)
    pathloss = 10.0 * config.pathloss_exponent * np.log10(dist / REF_DISTANCE_M)
    shadow_gen = rng.substream(config.seed, "shadowing")
    rho = config.shadowing_correlation
    eps = shadow_gen.standard_normal((n_ticks, n_cells))
    innovation = math.sqrt(max(1.0 - rho * rho, 0.0)) * config.shadowing_sigma
    s_init = config.shadowing_sigma * shadow_gen.standard_normal(n_cells)
    shadow, _ = lfilter([1.0], [1.0, -rho], innovation * eps, axis=0, zi=(rho * s_init)[None, :])
    power = TX_REF_DBM - pathloss + shadow

    # RSRQ proxy: quality relative to the total received power.
    linear = np.power(10.0, power / 10.0)
    total = linear.sum(axis=1, keepdims=True)
    rsrq_all = np.clip(-3.0 + 10.0 * np.log10(linear / total), RSRQ_MIN, RSRQ_MAX)
    rsrp_all = np.clip(power, RSRP_MIN, RSRP_MAX)

    # Serving-cell selection with hysteresis; handover event on every change.
    event_gen = rng.substream(config.seed, "events")
    serving = np.empty(n_ticks, dtype=int)
    serving[0] = int(np.argmax(power[0]))
    events = [EventCode.NONE] * n_ticks
    scgm_pending: list[int] = []
    for i in range(1, n_ticks):
        best = int(np.argmax(power[i]))
        if best != serving[i - 1] and power[i, best] > power[i, serving[i - 1]] + config.handover_hysteresis:
            serving[i] = best
            events[i] = EventCode.MNBH if best % 2 == 0 else EventCode.ENBH
            if event_gen.random() < config.scgm_probability:
                offset = int(event_gen.integers(1, int(round(1.0 / i_s)) + 1))
                if i + offset < n_ticks:
                    scgm_pending.append(i + offset)
        else:
            serving[i] = serving[i - 1]
    for idx in scgm_pending:
        if events[idx] is EventCode.NONE:
            events[idx] = EventCode.SCGM

    # Rare RLF events with a linear serving-side precursor.
    rlf_gen = rng.substream(config.seed, "rlf")
    rlf_ticks = _rlf_event_ticks(config, n_ticks, rlf_gen)
    precursor_rsrq = np.zeros(n_ticks)
    precursor_rsrp = np.zeros(n_ticks)
    for idx in rlf_ticks:
        events[idx] = EventCode.MCGF if rlf_gen.random() < 0.9 else EventCode.NASR
        # Per-event jitter on lead and depth keeps time-to-failure ambiguous:
        # the configured lead is the guaranteed minimum degradation span.
        lead_ticks = int(round(config.precursor_lead * (1.0 + 0.5 * rlf_gen.random()) / i_s))
        depth = config.precursor_depth * (0.75 + 0.5 * rlf_gen.random())
        if lead_ticks > 0:
            start = max(idx - lead_ticks, 0)
            for j in range(start, idx):
                frac = (j - (idx - lead_ticks)) / lead_ticks
                precursor_rsrq[j] = max(precursor_rsrq[j], depth * frac)
                precursor_rsrp[j] = max(precursor_rsrp[j], 0.5 * depth * frac)

    serving_rsrp = np.clip(rsrp_all[np.arange(n_ticks), serving] - precursor_rsrp, RSRP_MIN, RSRP_MAX)
    serving_rsrq = np.clip(rsrq_all[np.arange(n_ticks), serving] - precursor_rsrq, RSRQ_MIN, RSRQ_MAX)

    # Neighbors: next-strongest N cells each tick, strongest first.
    order = np.argsort(-power, axis=1, kind="stable")
    samples: list[RadioSample] = []
    cap = config.neighbor_capacity
    for i in range(n_ticks):
        neighbors = []
        for c in order[i]:
            if c == serving[i]:
                continue
            neighbors.append(NeighborEntry(int(c), round(float(rsrp_all[i, c]), 6), round(float(rsrq_all[i, c]), 6)))
            if len(neighbors) == cap:
                break
        ev = events[i]
        samples.append(
            RadioSample(
                t=round(float(times[i]), 6),
                serving_cell=int(serving[i]),
                serving_rsrp=round(float(serving_rsrp[i]), 6),
                serving_rsrq=round(float(serving_rsrq[i]), 6),
                neighbors=tuple(neighbors),
                event=ev,
                rlf=ev in (EventCode.MCGF, EventCode.NASR),
            )
        )
    trace_id = config.trace_id or f"sim-{config.seed}"
    return Trace(trace_id=trace_id, sample_interval=i_s, samples=tuple(samples))


def ground_truth(trace: Trace, precursor_lead: float | None = None) -> GroundTruth:
    """Event-derived truths; precursor intervals reconstructed when the
    generation lead time is supplied."""
    rlf = tuple(rlf_timestamps(trace))
    ho = tuple(handover_timestamps(trace))
    precursors: tuple[tuple[float, float], ...] = ()
    if precursor_lead is not None and trace.samples:
        t0 = trace.samples[0].t
        precursors = tuple((max(t0, te - precursor_lead), te) for te in rlf)
    return GroundTruth(rlf_times=rlf, handover_times=ho, precursor_intervals=precursors)


def save_truth_csv(truth: GroundTruth, path: str) -> None:
    """Sidecar truth file: kind,t_start,t_end."""
    lines = ["kind,t_start,t_end"]
    for t in truth.rlf_times:
        lines.append(f"RLF,{t:.6f},{t:.6f}")
    for t in truth.handover_times:
        lines.append(f"HANDOVER,{t:.6f},{t:.6f}")
    for a, b in truth.precursor_intervals:
        lines.append(f"PRECURSOR,{a:.6f},{b:.6f}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
