"""Random network realizations.

Two kinds of realizations are produced here:

* multi-user uplink scenarios (users dropped in a disk around a single
  receiver, distance-based path loss and Rayleigh fading), and
* base-station deployments drawn from a Poisson point process or from a
  randomly shifted square grid.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .io import atomic_write_csv, atomic_write_text, fmt_float as _fmt
from .seeding import derive_seed

POISSON = "poisson"
GRID = "grid"
DEPLOYMENT_KINDS = (POISSON, GRID)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


@dataclass(frozen=True)
class PathLoss:
    """Log-distance path loss ``PL(d) = intercept + slope * log10(d / 1 km)`` in dB.

    Distances below ``min_distance`` are clamped to it.
    """

    intercept_db: float = 128.1
    slope_db: float = 37.6
    min_distance: float = 10.0

    def __post_init__(self):
        if self.min_distance <= 0:
            raise ValueError("min_distance must be positive")
        if self.slope_db < 0:
            raise ValueError("slope_db must be non-negative")

    def db(self, distance):
        d = np.maximum(np.asarray(distance, dtype=float), self.min_distance)
        return self.intercept_db + self.slope_db * np.log10(d / 1000.0)

    def gain(self, distance):
        """Linear power gain (no fading)."""
        return 10.0 ** (-self.db(distance) / 10.0)


@dataclass(frozen=True)
class UplinkScenario:
    """One realization of the multi-user uplink.

    All users transmit to a common receiver at the origin, so user ``k``
    sees ``SINR_k = p_k g_k / (noise + sum_{j != k} p_j g_j)``.
    """

    user_positions: np.ndarray
    gains: np.ndarray
    noise_power: float
    pmax: float
    circuit_power: float = 1.0
    amp_inefficiency: float = 1.0 / 0.35
    bandwidth: float = 180e3

    def __post_init__(self):
        pos = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        g = np.asarray(self.gains, dtype=float).reshape(-1)
        object.__setattr__(self, "user_positions", pos)
        object.__setattr__(self, "gains", g)
        if g.size == 0:
            raise ValueError("scenario needs at least one user")
        if pos.shape[0] != g.size:
            raise ValueError(f"{pos.shape[0]} positions but {g.size} gains")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("channel gains must be finite and strictly positive")
        if not self.pmax > 0:
            raise ValueError("pmax must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if self.circuit_power < 0:
            raise ValueError("circuit_power must be non-negative")
        if self.amp_inefficiency < 1:
            raise ValueError("amp_inefficiency (1/eta) must be >= 1")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def n_users(self) -> int:
        return int(self.gains.size)

    def with_pmax(self, pmax: float) -> "UplinkScenario":
        return dataclasses.replace(self, pmax=float(pmax))


def rayleigh_power(rng: np.random.Generator, size) -> np.ndarray:
    """``|h|^2`` for ``h`` standard circularly-symmetric complex Gaussian."""
    h = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)
    return np.abs(h) ** 2


def sample_uplink_scenario(
    n_users: int,
    radius: float,
    pmax: float,
    rng_seed: int,
    *,
    path_loss: PathLoss = PathLoss(),
    noise_power: float = float(dbm_to_watt(-104.0)),
    circuit_power: float = 1.0,
    amp_inefficiency: float = 1.0 / 0.35,
    bandwidth: float = 180e3,
) -> UplinkScenario:
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if not pmax > 0:
        raise ValueError("pmax must be positive")
    rng = np.random.default_rng(rng_seed)
    r = radius * np.sqrt(rng.random(n_users))
    phi = 2.0 * math.pi * rng.random(n_users)
    pos = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    gains = rayleigh_power(rng, n_users) * path_loss.gain(r)
    # |h|^2 can underflow to exactly 0 with vanishing probability
    gains = np.maximum(gains, np.finfo(float).tiny)
    return UplinkScenario(pos, gains, noise_power, pmax, circuit_power, amp_inefficiency, bandwidth)


def sample_uplink_batch(n: int, n_users: int, radius: float, pmax: float, master_seed: int,
                        **kwargs) -> tuple[list[UplinkScenario], list[int]]:
    """``n`` scenarios with per-realization seeds derived from ``master_seed``."""
    seeds = [derive_seed(master_seed, "uplink", i) for i in range(n)]
    return [sample_uplink_scenario(n_users, radius, pmax, s, **kwargs) for s in seeds], seeds


@dataclass(frozen=True)
class Deployment:
    kind: str
    points: np.ndarray
    window: float
    density: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __len__(self):
        return int(self.points.shape[0])


def sample_deployment(kind: str, density: float, window: float, rng_seed: int) -> Deployment:
    """Base stations in the square ``[0, window)^2``.

    ``poisson``: count ~ Poisson(density * window^2), positions i.i.d. uniform.
    ``grid``: square lattice with spacing ``1/sqrt(density)`` and one uniform
    random offset per realization.
    """
    if kind not in DEPLOYMENT_KINDS:
        raise ValueError(f"unknown deployment kind {kind!r}")
    if not density > 0:
        raise ValueError("density must be positive")
    if not window > 0:
        raise ValueError("window must be positive")
    rng = np.random.default_rng(rng_seed)
    if kind == POISSON:
        n = rng.poisson(density * window * window)
        pts = rng.random((n, 2)) * window
        return Deployment(kind, pts, window, density)
    spacing = 1.0 / math.sqrt(density)
    offset = rng.random(2) * spacing
    # rounding guard so that e.g. 10 spacings of 1000 m in a 10 km window give 10 columns
    n_axis = int(math.ceil((window - offset.min()) / spacing - 1e-9))
    ticks = np.arange(n_axis) * spacing
    xs = offset[0] + ticks
    ys = offset[1] + ticks
    xs = xs[xs < window]
    ys = ys[ys < window]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return Deployment(kind, pts, window, density, offset)


# --- CSV batch serialization -------------------------------------------------

_SCALAR_COLUMNS = [
    ("seed", "-", "RNG seed of the realization"),
    ("pmax", "W", "maximum transmit power per user"),
    ("noise_power", "W", "receiver noise power"),
    ("circuit_power", "W", "static circuit power per user"),
    ("amp_inefficiency", "-", "inverse power-amplifier efficiency 1/eta"),
    ("bandwidth", "Hz", "system bandwidth"),
]


def scenario_columns(n_users: int) -> list[tuple[str, str, str]]:
    cols = list(_SCALAR_COLUMNS)
    for k in range(n_users):
        cols += [
            (f"x_{k}", "m", f"user {k} abscissa (receiver at origin)"),
            (f"y_{k}", "m", f"user {k} ordinate"),
            (f"g_{k}", "-", f"user {k} linear channel power gain"),
        ]
    return cols


def write_scenarios_csv(path, scenarios: Sequence[UplinkScenario], seeds: Sequence[int]) -> Path:
    """One row per realization; column documentation goes to ``<path>.columns``."""
    path = Path(path)
    if len(scenarios) != len(seeds):
        raise ValueError("one seed per scenario required")
    n_users = scenarios[0].n_users if scenarios else 0
    if any(s.n_users != n_users for s in scenarios):
        raise ValueError("all scenarios in a batch must have the same number of users")
    cols = scenario_columns(n_users)
    rows = []
    for s, seed in zip(scenarios, seeds):
        row = [str(int(seed)), _fmt(s.pmax), _fmt(s.noise_power), _fmt(s.circuit_power),
               _fmt(s.amp_inefficiency), _fmt(s.bandwidth)]
        for k in range(n_users):
            row += [_fmt(s.user_positions[k, 0]), _fmt(s.user_positions[k, 1]), _fmt(s.gains[k])]
        rows.append(row)
    atomic_write_csv(path, [c[0] for c in cols], rows)
    atomic_write_text(Path(str(path) + ".columns"),
                      "".join(f"{name}\t{unit}\t{desc}\n" for name, unit, desc in cols))
    return path


def read_scenarios_csv(path) -> tuple[list[UplinkScenario], list[int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out, seeds = [], []
        for row in reader:
            n_users = sum(1 for k in row if k.startswith("g_"))
            pos = [[float(row[f"x_{k}"]), float(row[f"y_{k}"])] for k in range(n_users)]
            g = [float(row[f"g_{k}"]) for k in range(n_users)]
            out.append(UplinkScenario(np.array(pos), np.array(g), float(row["noise_power"]),
                                      float(row["pmax"]), float(row["circuit_power"]),
                                      float(row["amp_inefficiency"]), float(row["bandwidth"])))
            seeds.append(int(row["seed"]))
    return out, seeds


def nearest_distance(points: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Euclidean distance from every probe to its closest point."""
    d2 = ((probes[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    return np.sqrt(d2.min(axis=1))


__all__: Iterable[str] = [
    "PathLoss", "UplinkScenario", "Deployment", "sample_uplink_scenario", "sample_uplink_batch",
    "sample_deployment", "rayleigh_power", "write_scenarios_csv", "read_scenarios_csv",
    "dbm_to_watt", "watt_to_dbm", "nearest_distance", "POISSON", "GRID",
]
