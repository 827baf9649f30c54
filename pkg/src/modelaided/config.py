"""Run configuration: a tree of dataclasses loaded from YAML.

Unknown keys are rejected and every section validates its own invariants,
so a bad config fails before any computation starts. ``preset`` selects the
desk-scale defaults or the full budgets of the original experiments.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .nn import CLAMPED_UNIT, MSE, RELATIVE_MSE, TrainConfig
from .netsim import PathLoss, dbm_to_watt
from .oracles.cellular import CellularParams, ConsumptionLaws

CASES = ("case1", "case2", "case3")
PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_outer: int = 50
    n_random_starts: int = 2

    def __post_init__(self):
        if not self.tol > 0 or self.max_outer < 1 or self.n_random_starts < 0:
            raise ConfigError("solver: need tol > 0, max_outer >= 1, n_random_starts >= 0")


@dataclass
class Case1Config:
    n_users: int = 5
    radius: float = 500.0
    noise_dbm: float = -104.0
    circuit_power: float = 1.0
    amp_efficiency: float = 0.35
    bandwidth: float = 180e3
    pl_intercept_db: float = 128.1
    pl_slope_db: float = 37.6
    pl_min_distance: float = 10.0
    pmax_range_dbm: list = field(default_factory=lambda: [-20.0, 0.0])
    pmax_sweep_dbm: list = field(default_factory=lambda: [-20.0 + 20.0 * i / 7 for i in range(8)])
    n_train: int = 2000
    n_test: int = 500
    hidden: list = field(default_factory=lambda: [18, 18, 16, 16, 14, 14, 12, 12, 10])
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=600, loss=MSE))
    restarts: int = 3
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.n_users < 1 or not self.radius > 0:
            raise ConfigError("case1: need n_users >= 1 and radius > 0")
        if not 0 < self.amp_efficiency <= 1:
            raise ConfigError("case1: amp_efficiency must lie in (0, 1]")
        if len(self.pmax_range_dbm) != 2 or self.pmax_range_dbm[0] > self.pmax_range_dbm[1]:
            raise ConfigError("case1: pmax_range_dbm must be [low, high]")
        if not self.pmax_sweep_dbm:
            raise ConfigError("case1: pmax_sweep_dbm must not be empty")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("case1: n_train and n_test must be >= 1")
        if self.restarts < 1:
            raise ConfigError("case1: restarts must be >= 1")
        if self.train.loss == RELATIVE_MSE:
            raise ConfigError("case1: targets p/pmax can be 0, use loss 'mse'")

    def path_loss(self) -> PathLoss:
        return PathLoss(self.pl_intercept_db, self.pl_slope_db, self.pl_min_distance)

    def scenario_kwargs(self) -> dict:
        return dict(path_loss=self.path_loss(), noise_power=float(dbm_to_watt(self.noise_dbm)),
                    circuit_power=self.circuit_power, amp_inefficiency=1.0 / self.amp_efficiency,
                    bandwidth=self.bandwidth)

    def architecture(self) -> list:
        return [self.n_users + 1, *self.hidden, self.n_users]

    output_activation = CLAMPED_UNIT


@dataclass
class CellularConfig:
    path_loss_exponent: float = 4.0
    user_density_per_km2: float = 100.0
    static_power: float = 10.0
    idle_power: float = 5.0
    amp_efficiency: float = 0.35
    noise_dbm: float = -104.0
    sinr_threshold_db: float = 0.0
    bandwidth: float = 180e3
    path_gain_db: float = -38.45
    tx_power_dbm: list = field(default_factory=lambda: [10.0, 46.0])
    bracket_per_km2: list = field(default_factory=lambda: [0.1, 100.0])
    golden_tol: float = 1e-9
    n_mc: int = 256
    n_grid: int = 401
    oracle_seed: int = 20190101

    def __post_init__(self):
        if not self.path_loss_exponent > 2:
            raise ConfigError("cellular: path_loss_exponent must exceed 2")
        if not self.user_density_per_km2 > 0:
            raise ConfigError("cellular: user_density_per_km2 must be positive")
        if not 0 < self.amp_efficiency <= 1:
            raise ConfigError("cellular: amp_efficiency must lie in (0, 1]")
        if len(self.bracket_per_km2) != 2 or not 0 < self.bracket_per_km2[0] < self.bracket_per_km2[1]:
            raise ConfigError("cellular: bracket_per_km2 must be [low, high] with 0 < low < high")
        if len(self.tx_power_dbm) != 2 or self.tx_power_dbm[0] > self.tx_power_dbm[1]:
            raise ConfigError("cellular: tx_power_dbm must be [low, high]")
        if self.n_mc < 2 or self.n_grid < 3:
            raise ConfigError("cellular: need n_mc >= 2 and n_grid >= 3")

    def params(self) -> CellularParams:
        return CellularParams(
            path_loss_exponent=self.path_loss_exponent,
            tx_power=float(dbm_to_watt(sum(self.tx_power_dbm) / 2.0)),
            user_density=self.user_density_per_km2 * 1e-6,
            static_power=self.static_power,
            idle_power=self.idle_power,
            amp_inefficiency=1.0 / self.amp_efficiency,
            noise_power=float(dbm_to_watt(self.noise_dbm)),
            sinr_threshold=10.0 ** (self.sinr_threshold_db / 10.0),
            bandwidth=self.bandwidth,
            path_gain=10.0 ** (self.path_gain_db / 10.0),
        )

    def bracket(self) -> tuple:
        return (self.bracket_per_km2[0] * 1e-6, self.bracket_per_km2[1] * 1e-6)


@dataclass
class ConsumptionConfig:
    static_uniform: list = field(default_factory=lambda: [5.0, 15.0])
    idle_uniform: list = field(default_factory=lambda: [2.5, 7.5])
    static_gaussian: list = field(default_factory=lambda: [11.0, 1.0])
    idle_gaussian: list = field(default_factory=lambda: [5.5, 0.5])

    def laws(self, tx_power_dbm) -> ConsumptionLaws:
        try:
            return ConsumptionLaws(tuple(self.static_uniform), tuple(self.idle_uniform),
                                   tuple(self.static_gaussian), tuple(self.idle_gaussian), tuple(tx_power_dbm))
        except ValueError as exc:
            raise ConfigError(f"consumption: {exc}") from exc


def _default_pretrain():
    return TrainConfig(epochs=50, learning_rate=1e-3)


def _default_finetune():
    return TrainConfig(epochs=50, learning_rate=1e-3)


@dataclass
class TransferConfig:
    n_total: int = 6000
    x_values: list = field(default_factory=lambda: [60, 120, 300, 420, 600])
    n_seeds: int = 11
    n_test: int = 1000
    architecture: list = field(default_factory=lambda: [8, 8, 2])
    pretrain: TrainConfig = field(default_factory=_default_pretrain)
    finetune: TrainConfig = field(default_factory=_default_finetune)
    arms: list = field(default_factory=lambda: ["transfer", "empirical", "model", "mixed"])
    restarts: int = 3

    def __post_init__(self):
        if not self.x_values or any(x < 0 or x > self.n_total for x in self.x_values):
            raise ConfigError("transfer: every x must satisfy 0 <= x <= n_total")
        if self.n_seeds < 1:
            raise ConfigError("transfer: n_seeds must be >= 1")
        if self.n_test < 1 or not self.architecture:
            raise ConfigError("transfer: need n_test >= 1 and a non-empty architecture")
        if self.restarts < 1:
            raise ConfigError("transfer: restarts must be >= 1")
        bad = set(self.arms) - {"transfer", "empirical", "model", "mixed"}
        if bad or not self.arms:
            raise ConfigError(f"transfer: unknown arms {sorted(bad)}")


@dataclass
class SweepConfig:
    x: int = 420
    candidates: list = field(default_factory=lambda: [[8, 8, 2], [4, 4, 2], [64, 32, 16, 8, 4, 2]])

    def __post_init__(self):
        if not self.candidates:
            raise ConfigError("sweep: candidate list must not be empty")
        for c in self.candidates:
            if not c or any(int(h) < 1 for h in c):
                raise ConfigError(f"sweep: invalid candidate {c}")


@dataclass
class RunConfig:
    case: str = "case2"
    preset: str = "desk"
    master_seed: int = 12345
    out_dir: str = "runs"
    workers: int = 1
    case1: Case1Config = field(default_factory=Case1Config)
    cellular: CellularConfig = field(default_factory=CellularConfig)
    consumption: ConsumptionConfig = field(default_factory=ConsumptionConfig)
    case2: TransferConfig = field(default_factory=TransferConfig)
    case3: TransferConfig = field(default_factory=lambda: TransferConfig(architecture=[8, 8, 8, 8, 8]))
    sweep2: SweepConfig = field(default_factory=SweepConfig)
    sweep3: SweepConfig = field(default_factory=lambda: SweepConfig(
        candidates=[[8, 8, 8, 8, 8], [4, 4, 4, 4, 4], [128, 64, 32, 16, 8]]))

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {CASES}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}")
        if self.master_seed < 0 or self.master_seed >= 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def transfer(self) -> TransferConfig:
        return self.case3 if self.case == "case3" else self.case2

    def sweep(self) -> SweepConfig:
        return self.sweep3 if self.case == "case3" else self.sweep2


PAPER_OVERRIDES = {
    "case1": {"n_users": 10, "n_train": 10000, "n_test": 10000,
              "hidden": [18, 18, 16, 16, 14, 14, 12, 12, 10]},
    "case2": {"n_total": 30000, "x_values": [300, 600, 1500, 2100, 3000]},
    "case3": {"n_total": 30000, "x_values": [300, 600, 1500, 2100, 3000]},
    "sweep2": {"x": 2100},
    "sweep3": {"x": 2100},
}


# --- dict <-> dataclass ------------------------------------------------------

def _hints(cls):
    return typing.get_type_hints(cls)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = _hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for f in fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        typ = hints[f.name]
        sub = f"{path}.{f.name}" if path else f.name
        if is_dataclass(typ):
            base = to_dict(getattr(defaults, f.name))
            kwargs[f.name] = _build(typ, _deep_merge(base, val, sub), sub)
        else:
            kwargs[f.name] = _coerce(val, typ, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(val, typ, path):
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {val!r}")
        return float(val)
    if typ is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{path}: expected an integer, got {val!r}")
        return val
    if typ is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{path}: expected true/false, got {val!r}")
        return val
    if typ is str:
        if not isinstance(val, str):
            raise ConfigError(f"{path}: expected a string, got {val!r}")
        return val
    if typ is list:
        if not isinstance(val, list):
            raise ConfigError(f"{path}: expected a list, got {val!r}")
        return val
    return val


def _deep_merge(base: dict, over, path: str) -> dict:
    if not isinstance(over, dict):
        raise ConfigError(f"{path}: expected a mapping")
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v, f"{path}.{k}")
        else:
            out[k] = v
    return out


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}")
    base = to_dict(RunConfig())
    if preset == "paper":
        base = _deep_merge(base, PAPER_OVERRIDES, "preset")
    return _build(RunConfig, _deep_merge(base, data, ""), "")


def parse_override(text: str) -> tuple[list, object]:
    """``a.b.c=value`` with the value parsed as YAML (numbers, lists, booleans)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key.strip():
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = dict(data or {})
    for text in overrides or []:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            nxt = node.get(k)
            if not isinstance(nxt, dict):
                nxt = {}
                node[k] = nxt
            else:
                nxt = dict(nxt)
                node[k] = nxt
            node = nxt
        node[keys[-1]] = value
    return data


def load_config(path=None, overrides=(), **top_level) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for k, v in top_level.items():
        if v is not None:
            data[k] = v
    return from_dict(apply_overrides(data, overrides))


def dump_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


# settings that cannot change any output byte
_UNHASHED = ("out_dir", "workers")


def config_hash(cfg: RunConfig) -> str:
    d = {k: v for k, v in to_dict(cfg).items() if k not in _UNHASHED}
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)
