"""Online replay: score each tick from a ring buffer of recent frames and
raise alarms after m consecutive positives, with a cooldown between alarms."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataset import WindowSpec, featurize
from .learners import TrainedModel, check_spec_compatible, predict_batch
from .trace import RadioSample, Trace, rlf_timestamps

_TIME_EPS = 1e-9


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class AlarmConfig:
    tau: float
    confirm_m: int = 2
    cooldown: float = 1.0
    action_hint: str = "activate_redundancy"

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise StreamError("tau must be in (0, 1)")
        if self.confirm_m < 1:
            raise StreamError("confirm_m must be >= 1")
        if self.cooldown < 0:
            raise StreamError("cooldown must be >= 0")


@dataclass
class AlarmEvent:
    t: float
    score: float
    action_hint: str


class StreamState:
    """Per-trace streaming scorer; strictly single-threaded."""

    def __init__(self, model: TrainedModel, spec: WindowSpec, alarm_config: AlarmConfig):
        check_spec_compatible(model, spec)
        self.model = model
        self.spec = spec
        self.alarm_config = alarm_config
        self.buffer: deque[RadioSample] = deque(maxlen=spec.window_ticks)
        self.offsets = spec.frame_offsets()
        self.consecutive = 0
        self.last_alarm_t = -math.inf
        self.last_t: float | None = None

    def push_sample(self, sample: RadioSample) -> tuple[float | None, AlarmEvent | None]:
        """Feed one frame; returns (score, alarm), both None during warm-up.

        Timestamps must arrive in order with exactly one sampling interval
        between them; gaps are a hard error.
        """
        if self.last_t is not None:
            gap = sample.t - self.last_t
            if abs(gap - self.spec.sample_interval) > _TIME_EPS:
                raise StreamError(
                    f"out-of-order or gapped timestamp: {self.last_t} -> {sample.t}"
                )
        self.last_t = sample.t
        self.buffer.append(sample)
        if len(self.buffer) < self.spec.window_ticks:
            return None, None

        window = list(self.buffer)
        frames = [window[o] for o in self.offsets]
        score = float(predict_batch(self.model, featurize(frames, self.spec)[None, :])[0])

        alarm = None
        if score >= self.alarm_config.tau:
            self.consecutive += 1
        else:
            self.consecutive = 0
        if (
            self.consecutive >= self.alarm_config.confirm_m
            and sample.t - self.last_alarm_t >= self.alarm_config.cooldown - _TIME_EPS
        ):
            alarm = AlarmEvent(t=sample.t, score=score, action_hint=self.alarm_config.action_hint)
            self.last_alarm_t = sample.t
            self.consecutive = 0
        return score, alarm


@dataclass
class AlarmRecord:
    t: float
    score: float
    action_hint: str
    lead_time_s: float | None  # time to the next RLF, None for a false alarm
    outcome: str               # hit | false


@dataclass
class ReplayResult:
    now_times: list[float]
    scores: list[float]
    alarm_flags: list[bool]
    rlf_flags: list[bool]
    alarms: list[AlarmRecord]


def replay(trace: Trace, model: TrainedModel, spec: WindowSpec, alarm_config: AlarmConfig) -> ReplayResult:
    """Feed every sample through the streaming scorer; per-tick scores match
    the offline build_examples + predict_batch path bit for bit."""
    state = StreamState(model, spec, alarm_config)
    rlf = rlf_timestamps(trace)
    now_times: list[float] = []
    scores: list[float] = []
    alarm_flags: list[bool] = []
    rlf_flags: list[bool] = []
    alarms: list[AlarmRecord] = []
    for sample in trace.samples:
        score, alarm = state.push_sample(sample)
        if score is None:
            continue
        now_times.append(sample.t)
        scores.append(score)
        alarm_flags.append(alarm is not None)
        rlf_flags.append(sample.rlf)
        if alarm is not None:
            upcoming = [e for e in rlf if e > alarm.t + _TIME_EPS]
            lead = upcoming[0] - alarm.t if upcoming else None
            is_hit = lead is not None and lead <= spec.tp + _TIME_EPS
            alarms.append(
                AlarmRecord(
                    t=alarm.t,
                    score=alarm.score,
                    action_hint=alarm.action_hint,
                    lead_time_s=lead if is_hit else None,
                    outcome="hit" if is_hit else "false",
                )
            )
    return ReplayResult(now_times, scores, alarm_flags, rlf_flags, alarms)


ALARM_LOG_HEADER = "t,score,action_hint,lead_time_s,outcome"


def alarm_log_csv(alarms: list[AlarmRecord]) -> str:
    lines = [ALARM_LOG_HEADER]
    for a in alarms:
        lead = f"{a.lead_time_s:.6f}" if a.lead_time_s is not None else ""
        lines.append(f"{a.t:.6f},{a.score:.9f},{a.action_hint},{lead},{a.outcome}")
    return "\n".join(lines) + "\n"
