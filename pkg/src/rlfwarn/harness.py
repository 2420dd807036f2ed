"""End-to-end pipeline helpers: traces -> splits -> model -> protocol report.

Shared by the CLI subcommands and the benchmark sweep so a grid cell is one
function call.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .balance import BalanceConfig, apply_balance
from .dataset import Dataset, SplitResult, WindowSpec, build_examples, chrono_split
from .evaluate import GridCell, MetricsReport, evaluate_cell
from .learners import TrainConfig, TrainedModel, predict_batch, train
from .simulator import ScenarioConfig, simulate_trace
from .trace import Trace


def simulate_traces(base: ScenarioConfig, n_traces: int) -> list[Trace]:
    """n traces with consecutive seeds starting at base.seed."""
    return [
        simulate_trace(replace(base, seed=base.seed + i, trace_id=f"sim-{base.seed + i}"))
        for i in range(n_traces)
    ]


def build_split(traces: list[Trace], spec: WindowSpec,
                fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> SplitResult:
    examples = []
    for trace in sorted(traces, key=lambda t: t.trace_id):
        examples.extend(build_examples(trace, spec))
    return chrono_split(examples, spec, fractions)


def train_on_split(split: SplitResult, balance_cfg: BalanceConfig,
                   train_cfg: TrainConfig) -> TrainedModel:
    """Balance the training portion only, then fit."""
    balanced, weights = apply_balance(split.train, balance_cfg)
    return train(balanced, replace(train_cfg, class_weights=weights))


@dataclass
class CellResult:
    model: TrainedModel
    report: MetricsReport
    split: SplitResult
    val_scores: np.ndarray
    test_scores: np.ndarray


def run_cell(traces: list[Trace], spec: WindowSpec, balance_cfg: BalanceConfig,
             train_cfg: TrainConfig,
             fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)) -> CellResult:
    """One benchmark grid cell: build, balance, train, evaluate under the
    validation-threshold protocol."""
    split = build_split(traces, spec, fractions)
    model = train_on_split(split, balance_cfg, train_cfg)
    val_scores = predict_batch(model, split.val.feature_matrix())
    test_scores = predict_batch(model, split.test.feature_matrix())
    report = evaluate_cell(GridCell(
        model=train_cfg.kind,
        ts=spec.ts,
        tp=spec.tp,
        balance=balance_cfg.method,
        val_scores=val_scores,
        val_labels=(split.val.labels() > 0).astype(int),
        test_scores=test_scores,
        test_labels=(split.test.labels() > 0).astype(int),
    ))
    return CellResult(model=model, report=report, split=split,
                      val_scores=val_scores, test_scores=test_scores)
