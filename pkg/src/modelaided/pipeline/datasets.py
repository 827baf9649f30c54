"""Labeled datasets for the three experiments, plus normalization.

Rows are stored in natural units (W, BS/m^2, p/pmax). Each column declares a
transform (``identity`` or ``log10``) applied before z-scoring. Row ``i`` of
every builder depends only on ``(seed, i)``, so the first ``m`` rows of a
larger build equal a build of size ``m``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .. import netsim
from ..oracles import cellular, uplink
from ..seeding import derive_seed

MODEL = "model"
EMPIRICAL = "empirical"
MIXED = "mixed"

IDENTITY = "identity"
LOG10 = "log10"
TRANSFORMS = (IDENTITY, LOG10)


# --- transforms and statistics -----------------------------------------------

def _forward_transform(a: np.ndarray, transforms) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    for j, t in enumerate(transforms):
        if t == LOG10:
            if np.any(out[:, j] <= 0):
                raise ValueError(f"column {j}: log10 transform needs positive values")
            out[:, j] = np.log10(out[:, j])
        elif t != IDENTITY:
            raise ValueError(f"unknown transform {t!r}")
    return out


def _inverse_transform(a: np.ndarray, transforms) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    for j, t in enumerate(transforms):
        if t == LOG10:
            out[:, j] = 10.0 ** out[:, j]
    return out


@dataclass(frozen=True)
class NormStats:
    """Per-column z-score statistics, computed after the column transform."""

    feature_transforms: tuple
    feature_mean: tuple
    feature_std: tuple
    target_transforms: tuple
    target_mean: tuple
    target_std: tuple

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: tuple(d[k]) for k in cls.__dataclass_fields__})

    def encode_features(self, X) -> np.ndarray:
        Z = _forward_transform(np.atleast_2d(np.asarray(X, dtype=float)), self.feature_transforms)
        return (Z - np.array(self.feature_mean)) / np.array(self.feature_std)

    def decode_features(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return _inverse_transform(Z * np.array(self.feature_std) + np.array(self.feature_mean),
                                  self.feature_transforms)

    def encode_targets(self, Y) -> np.ndarray:
        Z = _forward_transform(np.atleast_2d(np.asarray(Y, dtype=float)), self.target_transforms)
        return (Z - np.array(self.target_mean)) / np.array(self.target_std)

    def decode_targets(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return _inverse_transform(Z * np.array(self.target_std) + np.array(self.target_mean),
                                  self.target_transforms)

    def decoder(self) -> "TargetDecoder":
        return TargetDecoder(self)


class TargetDecoder:
    """Maps network outputs back to natural target units, with the elementwise derivative."""

    def __init__(self, stats: NormStats):
        self.mean = np.array(stats.target_mean, dtype=float)
        self.std = np.array(stats.target_std, dtype=float)
        self.log = np.array([t == LOG10 for t in stats.target_transforms])

    def decode(self, z):
        u = z * self.std + self.mean
        return np.where(self.log, 10.0 ** u, u)

    def decode_grad(self, z):
        u = z * self.std + self.mean
        return np.where(self.log, math.log(10.0) * 10.0 ** u * self.std, self.std)


def _column_stats(Z: np.ndarray, zscore: bool):
    if not zscore:
        return (0.0,) * Z.shape[1], (1.0,) * Z.shape[1]
    mean = Z.mean(axis=0)
    std = Z.std(axis=0)
    # constant columns are only centred
    std = np.where(std > 0, std, 1.0)
    return tuple(float(v) for v in mean), tuple(float(v) for v in std)


# --- datasets ----------------------------------------------------------------

def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError("dataset columns must form a 2-D array")
    return a


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    provenance: str
    n_empirical: int
    n_model: int
    feature_transforms: tuple
    target_transforms: tuple
    zscore_targets: bool = True
    row_seeds: tuple = ()
    stats: Optional[NormStats] = None  # set once normalized
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = _as_matrix(self.features)
        self.targets = _as_matrix(self.targets)
        self.feature_transforms = tuple(self.feature_transforms)
        self.target_transforms = tuple(self.target_transforms)
        self.row_seeds = tuple(int(s) for s in self.row_seeds)
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature and target row counts differ")
        if self.provenance not in (MODEL, EMPIRICAL, MIXED):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.n_empirical + self.n_model != len(self):
            raise ValueError("provenance counts must sum to the row count")
        if len(self.feature_transforms) != self.features.shape[1] or \
                len(self.target_transforms) != self.targets.shape[1]:
            raise ValueError("one transform per column is required")
        if self.row_seeds and len(self.row_seeds) != len(self):
            raise ValueError("row_seeds must have one entry per row")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def normalized(self) -> bool:
        return self.stats is not None

    def head(self, n: int) -> "Dataset":
        if self.provenance == MIXED:
            raise ValueError("cannot slice a mixed dataset")
        n = min(n, len(self))
        counts = dict(n_empirical=n, n_model=0) if self.provenance == EMPIRICAL else dict(n_empirical=0, n_model=n)
        return replace(self, features=self.features[:n], targets=self.targets[:n],
                       row_seeds=self.row_seeds[:n], meta=dict(self.meta), **counts)


def compute_stats(ds: Dataset) -> NormStats:
    if ds.normalized:
        raise ValueError("dataset is already normalized")
    if len(ds) == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    fm, fs = _column_stats(_forward_transform(ds.features, ds.feature_transforms), True)
    tm, ts = _column_stats(_forward_transform(ds.targets, ds.target_transforms), ds.zscore_targets)
    return NormStats(ds.feature_transforms, fm, fs, ds.target_transforms, tm, ts)


def normalize(ds: Dataset, reference: Optional[NormStats] = None) -> Dataset:
    """Transform and z-score every column.

    ``reference=None`` uses the dataset's own statistics; passing the stats of
    another set (e.g. the pre-training set) applies them unchanged.
    """
    if ds.normalized:
        raise ValueError("dataset is already normalized")
    stats = compute_stats(ds) if reference is None else reference
    if stats.feature_transforms != ds.feature_transforms or stats.target_transforms != ds.target_transforms:
        raise ValueError("reference statistics were computed for different column transforms")
    if len(ds) == 0:
        return replace(ds, stats=stats)
    return replace(ds, features=stats.encode_features(ds.features), targets=stats.encode_targets(ds.targets),
                   stats=stats)


def denormalize(ds: Dataset) -> Dataset:
    if not ds.normalized:
        raise ValueError("dataset is not normalized")
    if len(ds) == 0:
        return replace(ds, stats=None)
    return replace(ds, features=ds.stats.decode_features(ds.features),
                   targets=ds.stats.decode_targets(ds.targets), stats=None)


def mix(model_set: Dataset, empirical_set: Dataset) -> Dataset:
    """Concatenate a model-labeled and an empirical set for single-stage training."""
    if model_set.normalized or empirical_set.normalized:
        raise ValueError("mix raw datasets, then normalize")
    if model_set.feature_transforms != empirical_set.feature_transforms or \
            model_set.target_transforms != empirical_set.target_transforms:
        raise ValueError("datasets have different column layouts")
    seeds = model_set.row_seeds + empirical_set.row_seeds if model_set.row_seeds and empirical_set.row_seeds else ()
    return Dataset(np.vstack([model_set.features, empirical_set.features]),
                   np.vstack([model_set.targets, empirical_set.targets]), MIXED,
                   model_set.n_empirical + empirical_set.n_empirical, model_set.n_model + empirical_set.n_model,
                   model_set.feature_transforms, model_set.target_transforms, model_set.zscore_targets, seeds,
                   meta={"parts": [model_set.meta, empirical_set.meta]})


def shuffled(ds: Dataset, rng_seed: int) -> Dataset:
    perm = np.random.default_rng(rng_seed).permutation(len(ds))
    seeds = tuple(ds.row_seeds[i] for i in perm) if ds.row_seeds else ()
    return replace(ds, features=ds.features[perm], targets=ds.targets[perm], row_seeds=seeds)


def _map(fn, items, workers: int):
    # Executor.map keeps input order, so results do not depend on scheduling
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# --- Case 1: uplink power control ---------------------------------------------

def case1_features(scenario: netsim.UplinkScenario) -> tuple[np.ndarray, np.ndarray]:
    """Feature row (gains sorted descending, then pmax in dBm) and the sort order.

    Sorting removes the arbitrary user labelling; ``order[j]`` is the user
    whose gain is the j-th largest.
    """
    order = np.argsort(-scenario.gains, kind="stable")
    row = np.concatenate([scenario.gains[order], [float(netsim.watt_to_dbm(scenario.pmax))]])
    return row, order


def case1_powers(scenario: netsim.UplinkScenario, y_sorted, order) -> np.ndarray:
    """Undo the sort: transmit powers in W from normalized outputs in feature order."""
    p = np.empty(scenario.n_users)
    p[order] = np.clip(np.asarray(y_sorted, dtype=float), 0.0, 1.0) * scenario.pmax
    return p


def case1_scenario(seed: int, i: int, n_users: int, radius: float, pmax_range_dbm, scenario_kwargs: dict):
    row_seed = derive_seed(seed, "case1", i)
    lo, hi = pmax_range_dbm
    pmax_dbm = float(np.random.default_rng([row_seed, 1]).uniform(lo, hi)) if hi > lo else float(lo)
    sc = netsim.sample_uplink_scenario(n_users, radius, float(netsim.dbm_to_watt(pmax_dbm)), row_seed,
                                       **scenario_kwargs)
    return sc, row_seed


def _case1_row(args):
    seed, i, n_users, radius, pmax_range_dbm, scenario_kwargs, solver_kwargs = args
    sc, row_seed = case1_scenario(seed, i, n_users, radius, pmax_range_dbm, scenario_kwargs)
    res = uplink.dinkelbach_max_gee(sc, rng_seed=row_seed, **solver_kwargs)
    x, order = case1_features(sc)
    return x, res.p[order] / sc.pmax, row_seed, res.converged


def build_case1_dataset(n: int, pmax_range_dbm, seed: int, *, n_users: int = 5, radius: float = 500.0,
                        scenario_kwargs: Optional[dict] = None, solver_kwargs: Optional[dict] = None,
                        workers: int = 1) -> Dataset:
    """``n`` scenarios labeled with GEE-optimal powers; unconverged solves are dropped."""
    if n < 0:
        raise ValueError("n must be >= 0")
    scenario_kwargs = dict(scenario_kwargs or {})
    solver_kwargs = dict(solver_kwargs or {})
    rows = _map(_case1_row, [(seed, i, n_users, radius, tuple(pmax_range_dbm), scenario_kwargs, solver_kwargs)
                             for i in range(n)], workers)
    kept = [r for r in rows if r[3]]
    X = np.array([r[0] for r in kept]).reshape(len(kept), n_users + 1)
    Y = np.array([r[1] for r in kept]).reshape(len(kept), n_users)
    return Dataset(X, Y, MODEL, 0, len(kept), (LOG10,) * n_users + (IDENTITY,), (IDENTITY,) * n_users,
                   zscore_targets=False, row_seeds=[r[2] for r in kept],
                   meta={"case": "case1", "seed": seed, "requested": n, "excluded_unconverged": n - len(kept)})


# --- Case 2: BS density under a deployment mismatch ---------------------------

def _draw_power(row_seed: int, power_range_dbm) -> float:
    lo, hi = power_range_dbm
    dbm = float(np.random.default_rng([row_seed, 2]).uniform(lo, hi)) if hi > lo else float(lo)
    return float(netsim.dbm_to_watt(dbm))


def _case2_model_row(args):
    seed, i, power_range_dbm, params, bracket, tol = args
    row_seed = derive_seed(seed, "case2-model", i)
    p = _draw_power(row_seed, power_range_dbm)
    sol = cellular.optimal_density_analytic(params.with_(tx_power=p), bracket, tol)
    return p, sol.lambda_star, row_seed, not sol.at_boundary


def _case2_emp_row(args):
    seed, i, power_range_dbm, params, bracket, n_mc, n_grid, oracle_seed = args
    row_seed = derive_seed(seed, "case2-empirical", i)
    p = _draw_power(row_seed, power_range_dbm)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", cellular.MonteCarloPrecisionWarning)
        sol = cellular.optimal_density_grid_mc(params.with_(tx_power=p), bracket, n_mc, oracle_seed,
                                               netsim.GRID, n_grid)
    return p, sol.lambda_star, row_seed, not sol.at_boundary


def _assemble(rows, provenance, requested, meta, feature_transforms, n_features):
    kept = [r for r in rows if r[-1]]
    X = np.array([r[:n_features] for r in kept], dtype=float).reshape(len(kept), n_features)
    Y = np.array([r[n_features] for r in kept], dtype=float).reshape(len(kept), 1)
    n_emp = len(kept) if provenance == EMPIRICAL else 0
    meta = dict(meta, requested=requested, excluded_at_boundary=requested - len(kept))
    return Dataset(X, Y, provenance, n_emp, len(kept) - n_emp, feature_transforms, (LOG10,),
                   row_seeds=[r[n_features + 1] for r in kept], meta=meta)


def build_case2_model_dataset(n: int, power_range_dbm, seed: int, params: cellular.CellularParams,
                              bracket=cellular.DEFAULT_BRACKET, tol: float = 1e-9, workers: int = 1) -> Dataset:
    """P log-uniform over the range, labeled by the Poisson-model optimal density."""
    rows = _map(_case2_model_row, [(seed, i, tuple(power_range_dbm), params, tuple(bracket), tol)
                                   for i in range(n)], workers)
    rows = [(r[0], r[1], r[2], r[3]) for r in rows]
    return _assemble(rows, MODEL, n, {"case": "case2", "seed": seed}, (LOG10,), 1)


def build_case2_empirical_dataset(x: int, power_range_dbm, n_mc: int, seed: int, params: cellular.CellularParams,
                                  bracket=cellular.DEFAULT_BRACKET, n_grid: int = 401, oracle_seed: int = 0,
                                  workers: int = 1) -> Dataset:
    """``x`` rows labeled by exhaustive search of the square-grid Monte-Carlo efficiency.

    ``oracle_seed`` fixes the simulated geometry, i.e. the ground-truth
    function; ``seed`` only drives which powers are sampled.
    """
    if x == 0:
        return Dataset(np.empty((0, 1)), np.empty((0, 1)), EMPIRICAL, 0, 0, (LOG10,), (LOG10,),
                       meta={"case": "case2", "seed": seed, "requested": 0, "excluded_at_boundary": 0})
    if x > 1 and workers <= 1:
        # build the shared table once before looping
        cellular.coverage_table(netsim.GRID, bracket, n_grid, params, n_mc, oracle_seed)
    rows = _map(_case2_emp_row, [(seed, i, tuple(power_range_dbm), params, tuple(bracket), n_mc, n_grid,
                                  oracle_seed) for i in range(x)], workers)
    return _assemble(rows, EMPIRICAL, x, {"case": "case2", "seed": seed, "n_mc": n_mc,
                                          "oracle_seed": oracle_seed}, (LOG10,), 1)


# --- Case 3: unknown power-consumption law -----------------------------------

def _case3_row(args):
    seed, tag, i, law, params, laws, bracket, tol = args
    row_seed = derive_seed(seed, tag, i)
    (p, pc, pidle), sol = cellular.consumption_model_oracle(params, law, row_seed, laws, bracket, tol)
    return p, pc, pidle, sol.lambda_star, row_seed, not sol.at_boundary


def build_case3_set(n: int, law: str, seed: int, params: cellular.CellularParams,
                    laws: cellular.ConsumptionLaws = cellular.ConsumptionLaws(),
                    bracket=cellular.DEFAULT_BRACKET, tol: float = 1e-9, workers: int = 1) -> Dataset:
    provenance = MODEL if law == cellular.UNIFORM else EMPIRICAL
    tag = f"case3-{law}"
    rows = _map(_case3_row, [(seed, tag, i, law, params, laws, tuple(bracket), tol) for i in range(n)], workers)
    return _assemble(rows, provenance, n, {"case": "case3", "seed": seed, "law": law},
                     (LOG10, IDENTITY, IDENTITY), 3)


def build_case3_datasets(n_model: int, x_real: int, seed: int, params: cellular.CellularParams,
                         laws: cellular.ConsumptionLaws = cellular.ConsumptionLaws(),
                         bracket=cellular.DEFAULT_BRACKET, tol: float = 1e-9, workers: int = 1):
    """(model set from the uniform law, empirical set from the Gaussian law)."""
    return (build_case3_set(n_model, cellular.UNIFORM, derive_seed(seed, "model"), params, laws, bracket, tol, workers),
            build_case3_set(x_real, cellular.GAUSSIAN, derive_seed(seed, "empirical"), params, laws, bracket, tol,
                            workers))
