"""Flat key=value run configuration shared by every CLI subcommand.

Unknown keys are rejected; every run echoes its fully resolved configuration
next to its outputs so a run is reproducible from the echo alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .balance import BalanceConfig
from .dataset import WindowSpec
from .learners import TrainConfig
from .simulator import ScenarioConfig
from .stream import AlarmConfig


class ConfigError(ValueError):
    pass


# key -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    # scenario
    "duration": (float, 600.0),
    "sample_interval": (float, 0.1),
    "cell_count": (int, 8),
    "cell_spacing": (float, 600.0),
    "train_speed": (float, 20.0),
    "station_stop_s": (float, 20.0),
    "pathloss_exponent": (float, 3.0),
    "shadowing_sigma": (float, 4.0),
    "shadowing_correlation": (float, 0.98),
    "handover_hysteresis": (float, 3.0),
    "neighbor_capacity": (int, 3),
    "rlf_rate": (float, 20.0),
    "precursor_lead": (float, 2.0),
    "precursor_depth": (float, 6.0),
    "scgm_probability": (float, 0.3),
    "seed": (int, 42),
    "n_traces": (int, 1),
    # window spec
    "ts": (float, 3.0),
    "tp": (float, 2.0),
    "scheme": (str, "full"),
    "label_mode": (str, "binary"),
    # split
    "train_frac": (float, 0.7),
    "val_frac": (float, 0.15),
    "test_frac": (float, 0.15),
    # balance
    "balance": (str, "downsample"),
    "downsample_ratio": (float, 30.0),
    "smote_k": (int, 5),
    "smote_target_ratio": (float, 30.0),
    # learner
    "model": (str, "gbdt"),
    "models": (str, "logreg,mlp,gbdt"),
    "ts_list": (str, "1,2,3"),
    "tp_list": (str, "1,2,3"),
    "learning_rate": (float, 0.3),
    "epochs": (int, 200),
    "batch_size": (int, 32),
    "hidden_units": (int, 32),
    "trees": (int, 60),
    "max_depth": (int, 3),
    "lambda": (float, 1.0),
    "gamma": (float, 0.0),
    "min_child_hessian": (float, 1e-3),
    # alarms
    "tau": (float, 0.5),
    "confirm_m": (int, 2),
    "cooldown": (float, 1.0),
    "action_hint": (str, "activate_redundancy"),
    # misc
    "latency_repetitions": (int, 5),
    "import_name": (str, "imported"),
    "figures": (int, 1),
}


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def scenario(self, seed: int | None = None, trace_id: str = "") -> ScenarioConfig:
        v = self.values
        return ScenarioConfig(
            duration=v["duration"],
            sample_interval=v["sample_interval"],
            cell_count=v["cell_count"],
            cell_spacing=v["cell_spacing"],
            train_speed=v["train_speed"],
            station_stop_s=v["station_stop_s"],
            pathloss_exponent=v["pathloss_exponent"],
            shadowing_sigma=v["shadowing_sigma"],
            shadowing_correlation=v["shadowing_correlation"],
            handover_hysteresis=v["handover_hysteresis"],
            neighbor_capacity=v["neighbor_capacity"],
            rlf_rate=v["rlf_rate"],
            precursor_lead=v["precursor_lead"],
            precursor_depth=v["precursor_depth"],
            scgm_probability=v["scgm_probability"],
            seed=v["seed"] if seed is None else seed,
            trace_id=trace_id,
        )

    def window_spec(self, ts: float | None = None, tp: float | None = None) -> WindowSpec:
        v = self.values
        return WindowSpec(
            ts=v["ts"] if ts is None else ts,
            tp=v["tp"] if tp is None else tp,
            sample_interval=v["sample_interval"],
            neighbor_capacity=v["neighbor_capacity"],
            scheme=v["scheme"],
            label_mode=v["label_mode"],
        )

    def fractions(self) -> tuple[float, float, float]:
        return (self.values["train_frac"], self.values["val_frac"], self.values["test_frac"])

    def balance_config(self) -> BalanceConfig:
        v = self.values
        return BalanceConfig(
            method=v["balance"],
            downsample_ratio=v["downsample_ratio"],
            smote_k=v["smote_k"],
            smote_target_ratio=v["smote_target_ratio"],
            seed=v["seed"],
        )

    def train_config(self, kind: str | None = None,
                     class_weights: tuple[float, float] = (1.0, 1.0)) -> TrainConfig:
        v = self.values
        return TrainConfig(
            kind=v["model"] if kind is None else kind,
            learning_rate=v["learning_rate"],
            epochs=v["epochs"],
            batch_size=v["batch_size"],
            hidden_units=v["hidden_units"],
            trees=v["trees"],
            max_depth=v["max_depth"],
            lambda_=v["lambda"],
            gamma=v["gamma"],
            min_child_hessian=v["min_child_hessian"],
            class_weights=class_weights,
            seed=v["seed"],
        )

    def alarm_config(self, tau: float | None = None) -> AlarmConfig:
        v = self.values
        return AlarmConfig(
            tau=v["tau"] if tau is None else tau,
            confirm_m=v["confirm_m"],
            cooldown=v["cooldown"],
            action_hint=v["action_hint"],
        )

    def model_list(self) -> list[str]:
        return [m.strip() for m in str(self.values["models"]).split(",") if m.strip()]

    def ts_values(self) -> list[float]:
        return [float(x) for x in str(self.values["ts_list"]).split(",") if x.strip()]

    def tp_values(self) -> list[float]:
        return [float(x) for x in str(self.values["tp_list"]).split(",") if x.strip()]


def _coerce(key: str, raw: str):
    typ, _ = SCHEMA[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r} (expected {typ.__name__})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    out: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Config file plus `key=value` CLI overrides; overrides win."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), source=path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown override key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return RunConfig(values)


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_text(cfg: RunConfig) -> str:
    lines = [f"{key} = {_format_value(cfg.values[key])}" for key in sorted(cfg.values)]
    return "\n".join(lines) + "\n"


def write_text_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_resolved(cfg: RunConfig, out_dir: str) -> None:
    write_text_atomic(os.path.join(out_dir, "resolved.cfg"), resolved_text(cfg))
