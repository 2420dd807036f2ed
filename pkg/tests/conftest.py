"""Shared builders for hand-crafted traces and toy datasets."""

from __future__ import annotations

import numpy as np
import pytest

from rlfwarn.dataset import Dataset, Example, Normalization, WindowSpec
from rlfwarn.simulator import ScenarioConfig, simulate_trace
from rlfwarn.trace import EventCode, NeighborEntry, RadioSample, Trace


def make_sample(t, serving=0, rsrp=-80.0, rsrq=-10.0, neighbors=(),
                event=EventCode.NONE) -> RadioSample:
    return RadioSample(
        t=round(t, 6),
        serving_cell=serving,
        serving_rsrp=rsrp,
        serving_rsrq=rsrq,
        neighbors=tuple(neighbors),
        event=event,
        rlf=event in (EventCode.MCGF, EventCode.NASR),
    )


def make_trace(n_samples, interval=0.1, events=None, trace_id="t0",
               neighbor_capacity=2, seed=0) -> Trace:
    """Valid trace with mildly varying levels; events maps tick -> EventCode."""
    events = events or {}
    gen = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        nbs = tuple(
            NeighborEntry(cell_id=10 + j,
                          rsrp=round(-85.0 - 2.0 * j - 0.5 * gen.random(), 6),
                          rsrq=round(-11.0 - j * 0.5, 6))
            for j in range(neighbor_capacity)
        )
        samples.append(make_sample(
            t=i * interval,
            serving=3,
            rsrp=round(-78.0 + 2.0 * float(np.sin(0.03 * i)) + 0.3 * gen.random(), 6),
            rsrq=round(-9.0 + float(np.cos(0.05 * i)), 6),
            neighbors=nbs,
            event=events.get(i, EventCode.NONE),
        ))
    return Trace(trace_id=trace_id, sample_interval=interval, samples=tuple(samples))


def toy_dataset(x, y, spec: WindowSpec | None = None,
                normalization: Normalization | None = None) -> Dataset:
    """Dataset wrapping raw feature rows; dims need not match the spec."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    spec = spec or WindowSpec(ts=1.0, tp=1.0)
    examples = [Example(trace_id="toy", now_t=float(i), features=x[i], label=int(y[i]))
                for i in range(len(x))]
    if normalization is None:
        normalization = Normalization(np.zeros(x.shape[1]), np.ones(x.shape[1]))
    return Dataset(spec=spec, examples=examples, normalization=normalization)


def quick_scenario(seed=1, duration=60.0, rlf_rate=100.0, **kw) -> ScenarioConfig:
    """Short scenario with frequent failures so small tests see positives."""
    return ScenarioConfig(duration=duration, rlf_rate=rlf_rate, seed=seed, **kw)


@pytest.fixture(scope="session")
def short_trace():
    return simulate_trace(quick_scenario(seed=7))


# verdict lines registered by the acceptance tests; echoed after the run so
# they survive output capture
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
