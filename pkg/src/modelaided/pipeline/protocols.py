"""Experiment protocols: train-on-model (Case 1) and pre-train/fine-tune (Cases 2-3)."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import netsim, nn
from ..config import Case1Config, CellularConfig, ConsumptionConfig, ConfigError, RunConfig, TransferConfig
from ..io import atomic_write_csv
from ..oracles import cellular, uplink
from ..seeding import derive_seed
from . import datasets as D

log = logging.getLogger("modelaided")

TRANSFER = "transfer"
EMPIRICAL_ARM = "empirical"
MODEL_ARM = "model"
MIXED_ARM = "mixed"
ARMS = (TRANSFER, EMPIRICAL_ARM, MODEL_ARM, MIXED_ARM)


class HygieneError(RuntimeError):
    """Test rows share seeds with training rows."""


@dataclass
class ExperimentSpec:
    case: str
    x_values: list
    n_total: int
    architecture: list  # hidden layer sizes
    pretrain: nn.TrainConfig
    finetune: nn.TrainConfig
    seeds: list  # replicate indices
    master_seed: int
    n_test: int = 1000
    arms: tuple = ARMS
    restarts: int = 3
    out_dir: Optional[Path] = None
    cellular: CellularConfig = field(default_factory=CellularConfig)
    consumption: ConsumptionConfig = field(default_factory=ConsumptionConfig)
    case1: Case1Config = field(default_factory=Case1Config)
    workers: int = 1

    def __post_init__(self):
        if self.case not in ("case1", "case2", "case3"):
            raise ConfigError(f"unknown case {self.case!r}")
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if any(x > self.n_total or x < 0 for x in self.x_values):
            raise ConfigError("x must satisfy 0 <= x <= n_total")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        bad = set(self.arms) - set(ARMS)
        if bad:
            raise ConfigError(f"unknown arms {sorted(bad)}")
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    @classmethod
    def from_config(cls, cfg: RunConfig, out_dir=None) -> "ExperimentSpec":
        t: TransferConfig = cfg.transfer()
        return cls(case=cfg.case, x_values=list(t.x_values), n_total=t.n_total, architecture=list(t.architecture),
                   pretrain=t.pretrain, finetune=t.finetune, seeds=list(range(t.n_seeds)),
                   master_seed=cfg.master_seed, n_test=t.n_test, arms=tuple(t.arms), restarts=t.restarts,
                   out_dir=out_dir, cellular=cfg.cellular, consumption=cfg.consumption, case1=cfg.case1,
                   workers=cfg.workers)

    def layer_sizes(self, n_in: int, n_out: int, hidden=None) -> list:
        return [n_in, *(self.architecture if hidden is None else hidden), n_out]


# --- metrics -----------------------------------------------------------------

def model_stats(model: nn.MlpModel) -> D.NormStats:
    if model.normalization is None:
        raise ValueError("model carries no normalization statistics")
    return D.NormStats.from_dict(model.normalization)


def predict(model: nn.MlpModel, features) -> np.ndarray:
    """Predictions in natural target units for raw feature rows."""
    stats = model_stats(model)
    return stats.decode_targets(nn.forward(model, stats.encode_features(features)))


def test_error(model: nn.MlpModel, test_set: D.Dataset) -> float:
    """Relative MSE of the model's predictions on the natural target scale."""
    if test_set.normalized:
        test_set = D.denormalize(test_set)
    if len(test_set) == 0:
        raise ValueError("empty test set")
    return nn.relative_mse(predict(model, test_set.features), test_set.targets)


# --- training helpers --------------------------------------------------------

def _selection_loss(rep: nn.TrainReport) -> float:
    v = rep.final_val_loss
    if not math.isfinite(v):
        v = rep.final_train_loss
    return v if math.isfinite(v) else math.inf


def fit_from_scratch(ds: D.Dataset, layer_sizes, output_activation: str, config: nn.TrainConfig,
                     seed: int, restarts: int = 1, reference: Optional[D.NormStats] = None):
    """Train fresh networks from ``restarts`` initializations and keep the best.

    Selection uses only the dataset's own validation split. The chosen model
    carries the normalization statistics it was trained with.
    """
    nd = D.normalize(ds, reference)
    dec = None if config.loss == nn.MSE else nd.stats.decoder()
    best = None
    for r in range(restarts):
        init = nn.init_mlp(layer_sizes, output_activation, derive_seed(seed, "init", r))
        cfg = nn.replace_config(config, rng_seed=derive_seed(seed, "train", r))
        m, rep = nn.train(init, nd.features, nd.targets, cfg, decoder=dec)
        if best is None or _selection_loss(rep) < _selection_loss(best[1]):
            best = (m, rep)
    model, rep = best
    model.normalization = nd.stats.to_dict()
    return model, rep


def fine_tune_on(pretrained: nn.MlpModel, ds: D.Dataset, config: nn.TrainConfig, seed: int):
    """Fine-tune on ``ds`` normalized with the pre-training statistics."""
    stats = model_stats(pretrained)
    nd = D.normalize(ds, stats)
    cfg = nn.replace_config(config, rng_seed=derive_seed(seed, "finetune"))
    model, rep = nn.fine_tune(pretrained, nd.features, nd.targets, cfg, decoder=stats.decoder())
    model.normalization = stats.to_dict()
    return model, rep


# --- CSV writers ---------------------------------------------------------------

CURVE_HEADER = ["epoch", "train_rel_mse", "val_rel_mse"]


def curve_rows(rep: nn.TrainReport, offset: int = 0, include_initial: bool = True) -> list:
    rows = [[offset, rep.initial_train_loss, rep.initial_val_loss]] if include_initial else []
    rows += [[offset + i + 1, t, v] for i, (t, v) in enumerate(zip(rep.train_curve, rep.val_curve))]
    return rows


def write_curve(out_dir: Path, name: str, rows) -> Path:
    return atomic_write_csv(out_dir / name, CURVE_HEADER, rows)


# --- Case 1: protocol A --------------------------------------------------------

@dataclass
class ProtocolAResult:
    model: nn.MlpModel
    report: nn.TrainReport
    summary: list  # one dict per pmax point
    per_scenario: dict  # pmax_dbm -> rows (pmax_dBm, ann_gee, oracle_gee, fullpower_gee)
    meta: dict


def ann_powers(model: nn.MlpModel, scenario: netsim.UplinkScenario) -> np.ndarray:
    row, order = D.case1_features(scenario)
    stats = model_stats(model)
    y = nn.forward(model, stats.encode_features(row[None, :]))[0]
    return D.case1_powers(scenario, y, order)


def case1_test_scenarios(c: Case1Config, master_seed: int) -> list:
    seed = derive_seed(master_seed, "case1", "test")
    kw = c.scenario_kwargs()
    return [netsim.sample_uplink_scenario(c.n_users, c.radius, 1.0, derive_seed(seed, "case1", i), **kw)
            for i in range(c.n_test)]


def _oracle_row(args):
    sc, solver_kwargs, seed = args
    res = uplink.dinkelbach_max_gee(sc, rng_seed=seed, **solver_kwargs)
    return res.p, res.gee, res.converged


def gee_sweep(model: nn.MlpModel, c: Case1Config, master_seed: int, workers: int = 1):
    """Mean GEE of the ANN, the Dinkelbach oracle and full power at every pmax of the sweep.

    The same test drops are re-used at every pmax point; a drop whose oracle
    solve does not converge is dropped from that point's averages.
    """
    base = case1_test_scenarios(c, master_seed)
    solver_kwargs = dict(tol=c.solver.tol, max_outer=c.solver.max_outer, n_random_starts=c.solver.n_random_starts)
    summary, per_scenario, excluded = [], {}, {}
    for pmax_dbm in c.pmax_sweep_dbm:
        pmax = float(netsim.dbm_to_watt(pmax_dbm))
        scen = [sc.with_pmax(pmax) for sc in base]
        oracle = D._map(_oracle_row, [(sc, solver_kwargs, derive_seed(master_seed, "case1", "oracle", i))
                                      for i, sc in enumerate(scen)], workers)
        rows = []
        for sc, (_, g_opt, ok) in zip(scen, oracle):
            if not ok:
                continue
            rows.append([float(pmax_dbm), uplink.gee(sc, ann_powers(model, sc)), g_opt,
                         uplink.gee(sc, uplink.full_power(sc))])
        excluded[float(pmax_dbm)] = len(scen) - len(rows)
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        ann, opt, full = (float(v) for v in arr[:, 1:].mean(axis=0))
        summary.append({"pmax_dBm": float(pmax_dbm), "ann_gee": ann, "oracle_gee": opt, "fullpower_gee": full,
                        "ann_ratio": ann / opt, "fullpower_ratio": full / opt,
                        "mean_per_drop_ratio": float(np.mean(arr[:, 1] / arr[:, 2])), "n": len(rows)})
        per_scenario[float(pmax_dbm)] = rows
        log.info("gee-sweep pmax_dBm=%.3f ann_ratio=%.5f fullpower_ratio=%.5f n=%d",
                 pmax_dbm, ann / opt, full / opt, len(rows))
    return summary, per_scenario, excluded


def gee_filename(pmax_dbm: float) -> str:
    return f"gee_{pmax_dbm:.2f}.csv"


GEE_HEADER = ["pmax_dBm", "ann_gee", "oracle_gee", "fullpower_gee"]
GEE_SUMMARY_HEADER = ["pmax_dBm", "ann_gee", "oracle_gee", "fullpower_gee", "ann_ratio", "fullpower_ratio",
                      "mean_per_drop_ratio", "n"]


def write_gee_outputs(out_dir: Path, summary, per_scenario):
    for pmax_dbm, rows in per_scenario.items():
        atomic_write_csv(out_dir / gee_filename(pmax_dbm), GEE_HEADER, rows)
    atomic_write_csv(out_dir / "gee_summary.csv", GEE_SUMMARY_HEADER,
                     [[s[k] for k in GEE_SUMMARY_HEADER] for s in summary])


def train_case1(c: Case1Config, master_seed: int, restarts: int = 3, workers: int = 1):
    """Build the oracle-labeled training set and fit the power-control network."""
    train_seed = derive_seed(master_seed, "case1", "train")
    solver_kwargs = dict(tol=c.solver.tol, max_outer=c.solver.max_outer, n_random_starts=c.solver.n_random_starts)
    ds = D.build_case1_dataset(c.n_train, c.pmax_range_dbm, train_seed, n_users=c.n_users, radius=c.radius,
                               scenario_kwargs=c.scenario_kwargs(), solver_kwargs=solver_kwargs, workers=workers)
    log.info("case1 dataset rows=%d excluded_unconverged=%d", len(ds), ds.meta["excluded_unconverged"])
    model, rep = fit_from_scratch(ds, c.architecture(), nn.CLAMPED_UNIT, c.train,
                                  derive_seed(master_seed, "case1", "fit"), restarts)
    return model, rep, ds


def run_protocol_A(cfg: RunConfig, out_dir=None) -> ProtocolAResult:
    c = cfg.case1
    model, rep, ds = train_case1(c, cfg.master_seed, c.restarts, cfg.workers)
    summary, per_scenario, excluded = gee_sweep(model, c, cfg.master_seed, cfg.workers)
    test_seeds = {derive_seed(derive_seed(cfg.master_seed, "case1", "test"), "case1", i) for i in range(c.n_test)}
    overlap = test_seeds & set(ds.row_seeds)
    if overlap:
        raise HygieneError(f"{len(overlap)} test drops share seeds with training drops")
    meta = {"train_rows": len(ds), "excluded_unconverged_train": ds.meta["excluded_unconverged"],
            "excluded_unconverged_test": excluded, "test_train_seed_overlap": 0, "train_checksum": rep.checksum}
    if out_dir is not None:
        out_dir = Path(out_dir)
        nn.save(model, out_dir / "model_case1.json")
        write_curve(out_dir, "curves_case1_train_0_0.csv", curve_rows(rep))
        write_gee_outputs(out_dir, summary, per_scenario)
    return ProtocolAResult(model, rep, summary, per_scenario, meta)


# --- Cases 2 and 3: protocol B -------------------------------------------------

@dataclass
class CaseData:
    model_pool: D.Dataset
    empirical: list  # one dataset per replicate
    test: D.Dataset
    meta: dict


def _n_io(case: str) -> tuple[int, int]:
    return (3, 1) if case == "case3" else (1, 1)


def build_case_data(spec: ExperimentSpec, x_max: Optional[int] = None) -> CaseData:
    """Model pool, one nested empirical set per replicate, and the shared held-out test set."""
    c = spec.cellular
    params, bracket = c.params(), c.bracket()
    x_max = max(spec.x_values) if x_max is None else x_max
    pool_seed = derive_seed(spec.master_seed, spec.case, "model-pool")
    test_seed = derive_seed(spec.master_seed, spec.case, "test")
    emp_seeds = [derive_seed(spec.master_seed, spec.case, "empirical", s) for s in spec.seeds]
    if spec.case == "case2":
        pool = D.build_case2_model_dataset(spec.n_total, c.tx_power_dbm, pool_seed, params, bracket, c.golden_tol,
                                           spec.workers)

        def emp(n, seed):
            return D.build_case2_empirical_dataset(n, c.tx_power_dbm, c.n_mc, seed, params, bracket, c.n_grid,
                                                   c.oracle_seed, spec.workers)
    elif spec.case == "case3":
        laws = spec.consumption.laws(c.tx_power_dbm)
        pool = D.build_case3_set(spec.n_total, cellular.UNIFORM, pool_seed, params, laws, bracket, c.golden_tol,
                                 spec.workers)

        def emp(n, seed):
            return D.build_case3_set(n, cellular.GAUSSIAN, seed, params, laws, bracket, c.golden_tol, spec.workers)
    else:
        raise ConfigError("protocol B runs case2 or case3")
    log.info("%s model pool rows=%d excluded=%d", spec.case, len(pool), pool.meta["requested"] - len(pool))
    empirical = [emp(x_max, s) for s in emp_seeds]
    test = emp(spec.n_test, test_seed)
    train_seeds = set(pool.row_seeds)
    for e in empirical:
        train_seeds |= set(e.row_seeds)
    overlap = train_seeds & set(test.row_seeds)
    if overlap:
        raise HygieneError(f"{len(overlap)} test rows share seeds with training rows")
    meta = {"pool_seed": pool_seed, "test_seed": test_seed, "empirical_seeds": emp_seeds,
            "test_train_seed_overlap": 0, "pool_rows": len(pool), "test_rows": len(test),
            "excluded_pool": pool.meta["requested"] - len(pool),
            "excluded_test": test.meta["requested"] - len(test)}
    return CaseData(pool, empirical, test, meta)


@dataclass
class ArmRun:
    arm: str
    x: int
    seed: int
    test_error: float
    report: Optional[nn.TrainReport]
    pretrain_report: Optional[nn.TrainReport] = None
    n_empirical: int = 0
    n_model: int = 0
    model: Optional[nn.MlpModel] = None


@dataclass
class ProtocolBResult:
    case: str
    runs: list
    meta: dict

    def errors(self, arm: str, x: int) -> np.ndarray:
        return np.array([r.test_error for r in self.runs if r.arm == arm and r.x == x], dtype=float)

    def median(self, arm: str, x: int) -> float:
        e = self.errors(arm, x)
        e = e[np.isfinite(e)]
        return float(np.median(e)) if e.size else math.nan

    def summary_rows(self) -> list:
        rows = []
        xs = sorted({r.x for r in self.runs})
        arms = [a for a in ARMS if any(r.arm == a for r in self.runs)]
        for x in xs:
            for a in arms:
                e = self.errors(a, x)
                e = e[np.isfinite(e)]
                if e.size:
                    q1, med, q3 = np.percentile(e, [25, 50, 75])
                    rows.append([x, a, e.size, med, q1, q3])
        return rows


def _empirical_head(data: CaseData, s_index: int, x: int) -> D.Dataset:
    return data.empirical[s_index].head(x)


def pretrain(spec: ExperimentSpec, data: CaseData, x: int, seed: int, hidden=None):
    n_in, n_out = _n_io(spec.case)
    pool = data.model_pool.head(spec.n_total - x)
    return fit_from_scratch(pool, spec.layer_sizes(n_in, n_out, hidden), nn.LINEAR, spec.pretrain,
                            derive_seed(spec.master_seed, spec.case, "pretrain", x, seed), spec.restarts)


def run_arms(spec: ExperimentSpec, data: CaseData, x: int, s_index: int, keep_models: bool = False) -> list:
    """All requested arms for one (x, replicate)."""
    seed = spec.seeds[s_index]
    n_in, n_out = _n_io(spec.case)
    emp = _empirical_head(data, s_index, x)
    runs = []
    pre = pre_rep = None
    if TRANSFER in spec.arms or MODEL_ARM in spec.arms:
        pre, pre_rep = pretrain(spec, data, x, seed)
    if TRANSFER in spec.arms:
        if len(emp):
            ft, rep = fine_tune_on(pre, emp, spec.finetune, derive_seed(spec.master_seed, spec.case, "ft", x, seed))
        else:
            ft, rep = pre.copy(), nn.TrainReport(checksum=pre.checksum())
        runs.append(ArmRun(TRANSFER, x, seed, test_error(ft, data.test), rep, pre_rep, len(emp),
                           len(data.model_pool.head(spec.n_total - x)), ft if keep_models else None))
    if EMPIRICAL_ARM in spec.arms:
        if len(emp):
            m, rep = fit_from_scratch(emp, spec.layer_sizes(n_in, n_out), nn.LINEAR, spec.finetune,
                                      derive_seed(spec.master_seed, spec.case, "empirical-arm", x, seed),
                                      spec.restarts)
            err = test_error(m, data.test)
        else:
            m, rep, err = None, None, math.nan
        runs.append(ArmRun(EMPIRICAL_ARM, x, seed, err, rep, None, len(emp), 0, m if keep_models else None))
    if MODEL_ARM in spec.arms:
        runs.append(ArmRun(MODEL_ARM, x, seed, test_error(pre, data.test), pre_rep, None, 0,
                           len(data.model_pool.head(spec.n_total - x)), pre if keep_models else None))
    if MIXED_ARM in spec.arms:
        mixed = D.mix(data.model_pool.head(spec.n_total - x), emp)
        mixed = D.shuffled(mixed, derive_seed(spec.master_seed, spec.case, "mix-order", x, seed))
        m, rep = fit_from_scratch(mixed, spec.layer_sizes(n_in, n_out), nn.LINEAR, spec.pretrain,
                                  derive_seed(spec.master_seed, spec.case, "mixed-arm", x, seed), spec.restarts)
        runs.append(ArmRun(MIXED_ARM, x, seed, test_error(m, data.test), rep, None, mixed.n_empirical,
                           mixed.n_model, m if keep_models else None))
    for r in runs:
        log.info("arm case=%s arm=%s x=%d seed=%d test_error=%.6g", spec.case, r.arm, x, seed, r.test_error)
    return runs


def curve_filename(case: str, arm: str, x: int, seed: int) -> str:
    return f"curves_{case}_{arm}_{x}_{seed}.csv"


TESTERR_HEADER = ["x", "arm", "seed", "test_error"]
SUMMARY_HEADER = ["x", "arm", "n_seeds", "median", "q25", "q75"]


def write_protocol_B(out_dir: Path, result: ProtocolBResult):
    case = result.case
    for r in result.runs:
        if r.report is None:
            continue
        write_curve(out_dir, curve_filename(case, r.arm, r.x, r.seed), curve_rows(r.report))
        if r.arm == TRANSFER and r.pretrain_report is not None:
            # pre-training epochs followed by fine-tune epochs on one axis
            n_pre = len(r.pretrain_report.train_curve)
            rows = curve_rows(r.pretrain_report) + curve_rows(r.report, offset=n_pre, include_initial=False)
            write_curve(out_dir, curve_filename(case, "transfer-cumulative", r.x, r.seed), rows)
    atomic_write_csv(out_dir / f"testerr_{case}.csv", TESTERR_HEADER,
                     [[r.x, r.arm, r.seed, r.test_error] for r in result.runs])
    atomic_write_csv(out_dir / f"testerr_summary_{case}.csv", SUMMARY_HEADER, result.summary_rows())


def run_protocol_B(spec: ExperimentSpec, data: Optional[CaseData] = None) -> ProtocolBResult:
    """Four arms for every (x, replicate); see ``run_arms``."""
    data = build_case_data(spec) if data is None else data
    runs = []
    for x in spec.x_values:
        for i in range(len(spec.seeds)):
            runs.extend(run_arms(spec, data, x, i))
    meta = dict(data.meta, x_values=list(spec.x_values), seeds=list(spec.seeds), arms=list(spec.arms))
    budgets = {}
    for r in runs:
        if r.arm in (TRANSFER, EMPIRICAL_ARM):
            budgets.setdefault((r.x, r.seed), set()).add(r.n_empirical)
    meta["empirical_budget_consistent"] = all(len(v) == 1 for v in budgets.values())
    result = ProtocolBResult(spec.case, runs, meta)
    if spec.out_dir is not None:
        write_protocol_B(spec.out_dir, result)
    return result


# --- architecture sweep -------------------------------------------------------

def arch_token(hidden) -> str:
    return "-".join(str(int(h)) for h in hidden)


def dedupe_candidates(candidates) -> list:
    seen, out = set(), []
    for c in candidates:
        key = tuple(int(h) for h in c)
        if key in seen:
            warnings.warn(f"duplicate candidate {arch_token(key)} ignored", UserWarning, stacklevel=2)
            continue
        seen.add(key)
        out.append(list(key))
    if not out:
        raise ConfigError("candidate list must not be empty")
    return out


@dataclass
class SweepResult:
    case: str
    x: int
    reports: dict  # arch token -> list of (pretrain report, fine-tune report) per seed

    def final_val(self, token: str) -> np.ndarray:
        return np.array([ft.final_val_loss for _, ft in self.reports[token]])

    def median_final_val(self, token: str) -> float:
        return float(np.median(self.final_val(token)))


def architecture_sweep(spec: ExperimentSpec, candidates, x: int, data: Optional[CaseData] = None) -> SweepResult:
    """Transfer arm for each candidate architecture at a fixed empirical budget."""
    candidates = dedupe_candidates(candidates)
    data = build_case_data(spec, x_max=x) if data is None else data
    reports = {}
    for hidden in candidates:
        tok = arch_token(hidden)
        reports[tok] = []
        for i, seed in enumerate(spec.seeds):
            pre, pre_rep = pretrain(spec, data, x, seed, hidden)
            emp = _empirical_head(data, i, x)
            _, rep = fine_tune_on(pre, emp, spec.finetune, derive_seed(spec.master_seed, spec.case, "ft", x, seed))
            reports[tok].append((pre_rep, rep))
            log.info("sweep case=%s arch=%s x=%d seed=%d final_val=%.6g", spec.case, tok, x, seed,
                     rep.final_val_loss)
            if spec.out_dir is not None:
                write_curve(spec.out_dir, f"sweep_{spec.case}_{tok}_{x}_{seed}.csv", curve_rows(rep))
    result = SweepResult(spec.case, x, reports)
    if spec.out_dir is not None:
        rows = [[tok, len(v), result.median_final_val(tok), float(np.median([p.final_val_loss for p, _ in v]))]
                for tok, v in reports.items()]
        atomic_write_csv(spec.out_dir / f"sweep_summary_{spec.case}_{x}.csv",
                         ["architecture", "n_seeds", "median_final_val_rel_mse", "median_pretrain_val_rel_mse"], rows)
    return result
