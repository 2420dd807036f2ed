"""Class-imbalance countermeasures: downsampling, SMOTE, class weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .dataset import Dataset, Example

SYNTHETIC_TRACE_ID = "synthetic"


class BalanceError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceConfig:
    method: str = "downsample"   # none | downsample | smote | class_weights
    downsample_ratio: float = 30.0
    smote_k: int = 5
    smote_target_ratio: float = 30.0
    seed: int = 1


def downsample(ds: Dataset, ratio: float, seed: int) -> Dataset:
    """Keep all positives; keep at most ratio x positives negatives, sampled
    uniformly without replacement. Output re-sorted by (trace_id, now_t)."""
    if ratio < 1:
        raise BalanceError("downsample ratio must be >= 1")
    positives = [e for e in ds.examples if e.label > 0]
    negatives = [e for e in ds.examples if e.label == 0]
    if not positives:
        raise BalanceError("cannot downsample with no minority samples")
    keep = min(len(negatives), int(round(ratio * len(positives))))
    gen = rng.substream(seed, "balance.downsample")
    chosen = gen.choice(len(negatives), size=keep, replace=False) if negatives else []
    kept = positives + [negatives[i] for i in sorted(chosen)]
    out = Dataset(ds.spec, kept, ds.normalization)
    out.sort()
    return out


def smote(ds: Dataset, k: int, target_ratio: float, seed: int) -> Dataset:
    """Oversample the minority by interpolating between a minority example and
    one of its k nearest minority neighbors (Euclidean distance on z-scored
    features) until pos:neg reaches 1:target_ratio."""
    if target_ratio < 1:
        raise BalanceError("smote target_ratio must be >= 1")
    minority = [e for e in ds.examples if e.label > 0]
    n_neg = sum(1 for e in ds.examples if e.label == 0)
    if len(minority) < 2:
        raise BalanceError("SMOTE needs at least 2 minority samples")
    if not 1 <= k <= len(minority) - 1:
        raise BalanceError(f"SMOTE k={k} out of range for {len(minority)} minority samples")

    needed = max(0, math.ceil(n_neg / target_ratio) - len(minority))
    out_examples = list(ds.examples)
    if needed:
        raw = np.stack([e.features for e in minority])
        scaled = ds.normalization.apply(raw) if ds.normalization is not None else raw
        d2 = ((scaled[:, None, :] - scaled[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        # argsort is stable, so equal distances resolve by index order
        knn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        gen = rng.substream(seed, "balance.smote")
        for _ in range(needed):
            i = int(gen.integers(len(minority)))
            z = int(knn[i][int(gen.integers(k))])
            u = float(gen.random())
            feats = raw[i] + u * (raw[z] - raw[i])
            out_examples.append(Example(SYNTHETIC_TRACE_ID, -1.0, feats, 1))
    out = Dataset(ds.spec, out_examples, ds.normalization)
    out.sort()
    return out


def class_weights(ds: Dataset) -> tuple[float, float]:
    """(w_neg, w_pos) = (1, neg_count / pos_count)."""
    pos = ds.positive_count()
    neg = ds.negative_count()
    if pos == 0 or neg == 0:
        raise BalanceError("class_weights needs both classes present")
    return (1.0, neg / pos)


def apply_balance(ds: Dataset, config: BalanceConfig) -> tuple[Dataset, tuple[float, float]]:
    """Run the configured method; returns the (possibly resampled) dataset and
    the class weights the learner should train with."""
    if config.method == "none":
        return ds, (1.0, 1.0)
    if config.method == "downsample":
        return downsample(ds, config.downsample_ratio, config.seed), (1.0, 1.0)
    if config.method == "smote":
        return smote(ds, config.smote_k, config.smote_target_ratio, config.seed), (1.0, 1.0)
    if config.method == "class_weights":
        return ds, class_weights(ds)
    raise BalanceError(f"unknown balance method {config.method!r}")
