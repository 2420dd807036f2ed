"""Seed-deterministic binary classifiers scoring in [0, 1].

Three learners share one class-weighted logistic loss: full-batch logistic
regression, a one-hidden-layer MLP, and Newton-boosted decision trees with
exact greedy splits. All three predict sigmoid(margin) on z-scored features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .dataset import Dataset, Normalization, WindowSpec

MODEL_MAGIC = "rlfwarn-model"
MODEL_VERSION = "v1"
KINDS = ("logreg", "mlp", "gbdt")


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "gbdt"
    learning_rate: float = 0.3
    epochs: int = 200
    batch_size: int = 32
    hidden_units: int = 32
    trees: int = 60
    max_depth: int = 3
    lambda_: float = 1.0
    gamma: float = 0.0
    min_child_hessian: float = 1e-3
    class_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 1

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise LearnerError("learning_rate must be positive")
        if self.trees < 1 or self.max_depth < 1:
            raise LearnerError("trees and max_depth must be >= 1")
        if self.lambda_ < 0 or self.gamma < 0:
            raise LearnerError("lambda and gamma must be >= 0")


@dataclass
class Tree:
    feature: list[int]      # -1 marks a leaf
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(len(x))
        stack = [(0, np.arange(len(x)))]
        feat = self.feature
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if feat[node] < 0:
                out[idx] = self.value[node]
                continue
            mask = x[idx, feat[node]] < self.threshold[node]
            stack.append((self.left[node], idx[mask]))
            stack.append((self.right[node], idx[~mask]))
        return out


@dataclass
class TrainedModel:
    kind: str
    feature_dim: int
    spec: WindowSpec
    config: TrainConfig
    normalization: Normalization
    params: dict
    train_loss: list[float] = field(default_factory=list)

    def predict_margin(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.feature_dim:
            raise LearnerError(f"feature dim {x.shape[1]} does not match model dim {self.feature_dim}")
        z = self.normalization.apply(x)
        if self.kind == "logreg":
            return z @ self.params["w"] + self.params["b"]
        if self.kind == "mlp":
            a = np.maximum(z @ self.params["W1"] + self.params["b1"], 0.0)
            return a @ self.params["W2"] + self.params["b2"]
        margin = np.full(len(z), self.params["base"])
        for tree in self.params["trees"]:
            margin += tree.predict(z)
        return margin


def sigmoid(m: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(m, dtype=float)))


def predict_batch(model: TrainedModel, features) -> np.ndarray:
    """Scores in [0, 1] for a batch of raw (unnormalized) feature vectors."""
    return sigmoid(model.predict_margin(np.asarray(features, dtype=float)))


def check_spec_compatible(model: TrainedModel, spec: WindowSpec) -> None:
    """Refuse to apply a model to data built under a different window spec."""
    a, b = model.spec, spec
    same = (
        a.ts == b.ts and a.tp == b.tp
        and abs(a.sample_interval - b.sample_interval) <= 1e-9
        and a.neighbor_capacity == b.neighbor_capacity
        and a.scheme == b.scheme
    )
    if not same:
        raise LearnerError(
            f"model trained under spec (ts={a.ts}, tp={a.tp}, N={a.neighbor_capacity}, scheme={a.scheme}) "
            f"refused for spec (ts={b.ts}, tp={b.tp}, N={b.neighbor_capacity}, scheme={b.scheme})"
        )


def _weighted_logloss(margin: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # log(1 + e^m) - y*m, computed stably
    per = np.logaddexp(0.0, margin) - y * margin
    return float(np.dot(w, per) / w.sum())


def _sample_weights(y: np.ndarray, class_weights: tuple[float, float]) -> np.ndarray:
    w_neg, w_pos = class_weights
    return np.where(y > 0, w_pos, w_neg).astype(float)


# --- logreg / mlp expressed over a flat parameter vector so the analytic
# --- gradients and the finite-difference check share one code path

def _logreg_unpack(theta: np.ndarray, dim: int):
    return theta[:dim], theta[dim]

def _logreg_loss_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray):
    dim = x.shape[1]
    wvec, b = _logreg_unpack(theta, dim)
    margin = x @ wvec + b
    p = sigmoid(margin)
    wsum = w.sum()
    loss = _weighted_logloss(margin, y, w)
    dm = w * (p - y) / wsum
    grad = np.concatenate([x.T @ dm, [dm.sum()]])
    return loss, grad


def _mlp_shapes(dim: int, h: int):
    return [(dim, h), (h,), (h,), ()]

def _mlp_unpack(theta: np.ndarray, dim: int, h: int):
    i = dim * h
    w1 = theta[:i].reshape(dim, h)
    b1 = theta[i:i + h]
    w2 = theta[i + h:i + 2 * h]
    b2 = theta[i + 2 * h]
    return w1, b1, w2, b2

def _mlp_loss_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray, h: int):
    dim = x.shape[1]
    w1, b1, w2, b2 = _mlp_unpack(theta, dim, h)
    pre = x @ w1 + b1
    act = np.maximum(pre, 0.0)
    margin = act @ w2 + b2
    p = sigmoid(margin)
    wsum = w.sum()
    loss = _weighted_logloss(margin, y, w)
    dm = w * (p - y) / wsum
    d_w2 = act.T @ dm
    d_b2 = dm.sum()
    d_act = np.outer(dm, w2) * (pre > 0)
    d_w1 = x.T @ d_act
    d_b1 = d_act.sum(axis=0)
    grad = np.concatenate([d_w1.ravel(), d_b1, d_w2, [d_b2]])
    return loss, grad


def split_gain(g_left: float, h_left: float, g_right: float, h_right: float,
               lambda_: float, gamma: float) -> float:
    """Second-order gain of splitting a node into (left, right)."""
    if h_left < 0 or h_right < 0:
        raise LearnerError("hessian sums must be non-negative")
    if lambda_ == 0.0 and (h_left == 0.0 or h_right == 0.0 or h_left + h_right == 0.0):
        raise LearnerError("lambda=0 with a zero hessian sum leaves a denominator unguarded")
    g_tot = g_left + g_right
    h_tot = h_left + h_right
    return 0.5 * (
        g_left ** 2 / (h_left + lambda_)
        + g_right ** 2 / (h_right + lambda_)
        - g_tot ** 2 / (h_tot + lambda_)
    ) - gamma


def _best_split(x: np.ndarray, idx: np.ndarray, g: np.ndarray, h: np.ndarray,
                lambda_: float, gamma: float, presort: np.ndarray | None = None):
    """Exact greedy search over all features and midpoint thresholds.

    Ties resolve to the lowest feature index, then the lowest threshold.
    `presort` holds per-column stable argsort orders of the full matrix so a
    node only compacts instead of re-sorting. Returns (gain, feature,
    threshold) or None when no split is possible.
    """
    g_tot = float(g[idx].sum())
    h_tot = float(h[idx].sum())
    base = g_tot ** 2 / (h_tot + lambda_)
    best_gain = -np.inf
    best = None
    in_node = None
    if presort is not None:
        in_node = np.zeros(len(x), dtype=bool)
        in_node[idx] = True
    for f in range(x.shape[1]):
        if presort is not None:
            col = presort[:, f]
            sel = col[in_node[col]]
            xs = x[sel, f]
            gsel = g[sel]
            hsel = h[sel]
        else:
            xv = x[idx, f]
            order = np.argsort(xv, kind="stable")
            xs = xv[order]
            gsel = g[idx][order]
            hsel = h[idx][order]
        if xs[0] == xs[-1]:
            continue
        gs = np.cumsum(gsel)[:-1]
        hs = np.cumsum(hsel)[:-1]
        distinct = xs[1:] > xs[:-1]
        gains = 0.5 * (gs ** 2 / (hs + lambda_)
                       + (g_tot - gs) ** 2 / (h_tot - hs + lambda_)
                       - base) - gamma
        gains[~distinct] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = float(gains[i])
            best = (best_gain, f, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, config: TrainConfig,
               presort: np.ndarray | None = None) -> Tree:
    tree = Tree([], [], [], [], [])

    def new_node() -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(0.0)
        return len(tree.feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        g_sum = float(g[idx].sum())
        h_sum = float(h[idx].sum())
        tree.value[node] = -g_sum / (h_sum + config.lambda_) * config.learning_rate
        if depth >= config.max_depth or h_sum < config.min_child_hessian or idx.size < 2:
            return node
        best = _best_split(x, idx, g, h, config.lambda_, config.gamma, presort)
        if best is None or best[0] <= 0:
            return node
        _, feat, thr = best
        mask = x[idx, feat] < thr
        tree.feature[node] = feat
        tree.threshold[node] = thr
        tree.left[node] = build(idx[mask], depth + 1)
        tree.right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(len(x)), 0)
    return tree


def _train_gbdt(x: np.ndarray, y: np.ndarray, w: np.ndarray, config: TrainConfig):
    w_pos = float(w[y > 0].sum())
    w_neg = float(w[y == 0].sum())
    base = math.log(w_pos / w_neg)
    margin = np.full(len(x), base)
    presort = np.argsort(x, axis=0, kind="stable").astype(np.int32)
    trees: list[Tree] = []
    losses: list[float] = []
    for round_no in range(config.trees):
        p = sigmoid(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree = _grow_tree(x, g, h, config, presort)
        margin += tree.predict(x)
        loss = _weighted_logloss(margin, y, w)
        if not math.isfinite(loss):
            raise LearnerError(f"non-finite training loss at tree {round_no}")
        trees.append(tree)
        losses.append(loss)
    return {"base": base, "trees": trees}, losses


def _train_logreg(x: np.ndarray, y: np.ndarray, w: np.ndarray, config: TrainConfig):
    theta = np.zeros(x.shape[1] + 1)
    losses: list[float] = []
    for epoch in range(config.epochs):
        loss, grad = _logreg_loss_grad(theta, x, y, w)
        if not math.isfinite(loss):
            raise LearnerError(f"non-finite training loss at epoch {epoch}")
        theta = theta - config.learning_rate * grad
        losses.append(loss)
    wvec, b = _logreg_unpack(theta, x.shape[1])
    return {"w": wvec.copy(), "b": float(b)}, losses


def _train_mlp(x: np.ndarray, y: np.ndarray, w: np.ndarray, config: TrainConfig):
    dim = x.shape[1]
    h = config.hidden_units
    gen = rng.substream(config.seed, "learners.mlp.init")
    theta = np.concatenate([
        (gen.standard_normal((dim, h)) * math.sqrt(2.0 / dim)).ravel(),
        np.zeros(h),
        gen.standard_normal(h) * math.sqrt(1.0 / h),
        [0.0],
    ])
    shuffle = rng.substream(config.seed, "learners.mlp.shuffle")
    n = len(x)
    losses: list[float] = []
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = perm[start:start + config.batch_size]
            _, grad = _mlp_loss_grad(theta, x[batch], y[batch], w[batch], h)
            theta = theta - config.learning_rate * grad
        loss, _ = _mlp_loss_grad(theta, x, y, w, h)
        if not math.isfinite(loss):
            raise LearnerError(f"non-finite training loss at epoch {epoch}")
        losses.append(loss)
    w1, b1, w2, b2 = _mlp_unpack(theta, dim, h)
    return {"W1": w1.copy(), "b1": b1.copy(), "W2": w2.copy(), "b2": float(b2)}, losses


def train(ds: Dataset, config: TrainConfig) -> TrainedModel:
    """Fit one learner on the dataset's z-scored features."""
    config.validate()
    if not ds.examples:
        raise LearnerError("cannot train on an empty dataset")
    y = ds.labels().astype(float)
    y = (y > 0).astype(float)
    if y.min() == y.max():
        raise LearnerError("training requires both classes present")
    norm = ds.normalization or Normalization(
        np.zeros(ds.spec.feature_dim), np.ones(ds.spec.feature_dim)
    )
    x = norm.apply(ds.feature_matrix())
    w = _sample_weights(y, config.class_weights)
    if config.kind == "logreg":
        params, losses = _train_logreg(x, y, w, config)
    elif config.kind == "mlp":
        params, losses = _train_mlp(x, y, w, config)
    else:
        params, losses = _train_gbdt(x, y, w, config)
    return TrainedModel(
        kind=config.kind,
        feature_dim=x.shape[1],
        spec=ds.spec,
        config=config,
        normalization=norm,
        params=params,
        train_loss=losses,
    )


def numeric_gradient_check(kind: str, ds: Dataset, config: TrainConfig) -> float:
    """Max relative error between the analytic loss gradient and central
    finite differences (step 1e-5) at a seeded random parameter point."""
    y = (ds.labels() > 0).astype(float)
    norm = ds.normalization or Normalization(
        np.zeros(ds.spec.feature_dim), np.ones(ds.spec.feature_dim)
    )
    x = norm.apply(ds.feature_matrix())
    w = _sample_weights(y, config.class_weights)
    if kind == "logreg":
        size = x.shape[1] + 1
        fn = lambda t: _logreg_loss_grad(t, x, y, w)
    elif kind == "mlp":
        h = config.hidden_units
        size = x.shape[1] * h + 2 * h + 1
        fn = lambda t: _mlp_loss_grad(t, x, y, w, h)
    else:
        raise LearnerError("gradient check applies to logreg and mlp only")
    gen = rng.substream(config.seed, "learners.gradcheck")
    theta = 0.1 * gen.standard_normal(size)
    _, analytic = fn(theta)
    step = 1e-5
    worst = 0.0
    for i in range(size):
        probe = theta.copy()
        probe[i] = theta[i] + step
        up, _ = fn(probe)
        probe[i] = theta[i] - step
        down, _ = fn(probe)
        numeric = (up - down) / (2 * step)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


# --- model file I/O -----------------------------------------------------

def _g(x: float) -> str:
    return format(float(x), ".17g")


def _vec(a: np.ndarray) -> str:
    return ",".join(_g(v) for v in np.asarray(a, dtype=float).ravel())


def save_model(model: TrainedModel, path: str) -> None:
    c = model.config
    s = model.spec
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"kind = {model.kind}",
        f"feature_dim = {model.feature_dim}",
        f"spec.ts = {_g(s.ts)}",
        f"spec.tp = {_g(s.tp)}",
        f"spec.sample_interval = {_g(s.sample_interval)}",
        f"spec.neighbor_capacity = {s.neighbor_capacity}",
        f"spec.scheme = {s.scheme}",
        f"spec.label_mode = {s.label_mode}",
        f"config.learning_rate = {_g(c.learning_rate)}",
        f"config.epochs = {c.epochs}",
        f"config.batch_size = {c.batch_size}",
        f"config.hidden_units = {c.hidden_units}",
        f"config.trees = {c.trees}",
        f"config.max_depth = {c.max_depth}",
        f"config.lambda = {_g(c.lambda_)}",
        f"config.gamma = {_g(c.gamma)}",
        f"config.min_child_hessian = {_g(c.min_child_hessian)}",
        f"config.class_weights = {_g(c.class_weights[0])},{_g(c.class_weights[1])}",
        f"config.seed = {c.seed}",
        f"norm_mean = {_vec(model.normalization.mean)}",
        f"norm_std = {_vec(model.normalization.std)}",
        "params",
    ]
    p = model.params
    if model.kind == "logreg":
        lines.append(f"w = {_vec(p['w'])}")
        lines.append(f"b = {_g(p['b'])}")
    elif model.kind == "mlp":
        lines.append(f"W1 = {_vec(p['W1'])}")
        lines.append(f"b1 = {_vec(p['b1'])}")
        lines.append(f"W2 = {_vec(p['W2'])}")
        lines.append(f"b2 = {_g(p['b2'])}")
    else:
        lines.append(f"base = {_g(p['base'])}")
        for tree in p["trees"]:
            lines.append(f"tree {len(tree.feature)}")
            for i in range(len(tree.feature)):
                lines.append(
                    f"{tree.feature[i]} {_g(tree.threshold[i])} {tree.left[i]} {tree.right[i]} {_g(tree.value[i])}"
                )
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)


def load_model(path: str) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LearnerError("empty model file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MODEL_MAGIC:
        raise LearnerError("not a model file (bad magic)")
    if head[1] != MODEL_VERSION:
        raise LearnerError(f"unsupported model version {head[1]!r}")
    if "end" not in lines:
        raise LearnerError("truncated model file (missing end marker)")

    kv: dict[str, str] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line == "params":
            body_start = i + 1
            break
        if " = " in line:
            key, val = line.split(" = ", 1)
            kv[key] = val
    if body_start is None:
        raise LearnerError("truncated model file (missing params section)")

    try:
        spec = WindowSpec(
            ts=float(kv["spec.ts"]),
            tp=float(kv["spec.tp"]),
            sample_interval=float(kv["spec.sample_interval"]),
            neighbor_capacity=int(kv["spec.neighbor_capacity"]),
            scheme=kv["spec.scheme"],
            label_mode=kv["spec.label_mode"],
        )
        cw = kv["config.class_weights"].split(",")
        config = TrainConfig(
            kind=kv["kind"],
            learning_rate=float(kv["config.learning_rate"]),
            epochs=int(kv["config.epochs"]),
            batch_size=int(kv["config.batch_size"]),
            hidden_units=int(kv["config.hidden_units"]),
            trees=int(kv["config.trees"]),
            max_depth=int(kv["config.max_depth"]),
            lambda_=float(kv["config.lambda"]),
            gamma=float(kv["config.gamma"]),
            min_child_hessian=float(kv["config.min_child_hessian"]),
            class_weights=(float(cw[0]), float(cw[1])),
            seed=int(kv["config.seed"]),
        )
        feature_dim = int(kv["feature_dim"])
        norm = Normalization(_parse_floats(kv["norm_mean"]), _parse_floats(kv["norm_std"]))
    except KeyError as missing:
        raise LearnerError(f"truncated model file (missing field {missing})") from None

    body = lines[body_start:]
    kind = kv["kind"]
    params: dict
    try:
        if kind == "logreg":
            fields = dict(line.split(" = ", 1) for line in body if " = " in line)
            params = {"w": _parse_floats(fields["w"]), "b": float(fields["b"])}
        elif kind == "mlp":
            fields = dict(line.split(" = ", 1) for line in body if " = " in line)
            h = config.hidden_units
            params = {
                "W1": _parse_floats(fields["W1"]).reshape(feature_dim, h),
                "b1": _parse_floats(fields["b1"]),
                "W2": _parse_floats(fields["W2"]),
                "b2": float(fields["b2"]),
            }
        else:
            base = None
            trees: list[Tree] = []
            i = 0
            while i < len(body) and body[i] != "end":
                line = body[i]
                if line.startswith("base = "):
                    base = float(line.split(" = ", 1)[1])
                    i += 1
                elif line.startswith("tree "):
                    n_nodes = int(line.split()[1])
                    tree = Tree([], [], [], [], [])
                    for j in range(1, n_nodes + 1):
                        f_, thr, lft, rgt, val = body[i + j].split()
                        tree.feature.append(int(f_))
                        tree.threshold.append(float(thr))
                        tree.left.append(int(lft))
                        tree.right.append(int(rgt))
                        tree.value.append(float(val))
                    trees.append(tree)
                    i += n_nodes + 1
                else:
                    raise LearnerError(f"unexpected line in model params: {line!r}")
            if base is None:
                raise LearnerError("truncated model file (missing base score)")
            params = {"base": base, "trees": trees}
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, LearnerError):
            raise
        raise LearnerError(f"truncated or corrupt model file: {exc}") from None

    return TrainedModel(
        kind=kind,
        feature_dim=feature_dim,
        spec=spec,
        config=config,
        normalization=norm,
        params=params,
    )
