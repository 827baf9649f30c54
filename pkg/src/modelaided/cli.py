"""``modelaided`` command line: gen, train, transfer, eval, sweep.

Results go to files under ``--out``; progress goes to stderr as
``key=value`` lines. Exit codes: 0 ok, 2 config error, 3 solver
non-convergence, 4 I/O or model-file error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import nn
from .config import ConfigError, RunConfig, config_hash, load_config, to_dict
from .io import atomic_write_csv, atomic_write_text
from .pipeline import datasets as D
from .pipeline import protocols as P
from .netsim import write_scenarios_csv
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

log = logging.getLogger("modelaided")


class NonConvergenceError(RuntimeError):
    pass


# --- helpers -------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, files, extra=None) -> Path:
    """Manifest listing every output with its digest; no timestamps, so reruns match."""
    entries = {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(set(map(str, files)))}
    body = {"command": command, "config_hash": config_hash(cfg), "files": entries, "meta": extra or {}}
    content = hashlib.sha256(json.dumps(body, sort_keys=True, default=_jsonable).encode("utf-8")).hexdigest()
    doc = dict(body, content_hash=content, config=to_dict(cfg))
    path = out / f"manifest_{command}.json"
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, tuple)):
        return sorted(o) if isinstance(o, set) else list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _check_exclusions(ds: D.Dataset, what: str, max_fraction: float = 0.1):
    req = ds.meta.get("requested", len(ds))
    if req and (req - len(ds)) > max_fraction * req:
        raise NonConvergenceError(f"{what}: {req - len(ds)} of {req} rows failed (unconverged or at bracket edge)")


def dataset_header(ds: D.Dataset, case: str) -> list:
    if case == "case1":
        m = ds.targets.shape[1]
        return [f"g_{k}" for k in range(m)] + ["pmax_dBm"] + [f"p_over_pmax_{k}" for k in range(m)] + ["row_seed"]
    if case == "case2":
        return ["P_W", "lambda_star_per_m2", "row_seed"]
    return ["P_W", "Pc_W", "Pidle_W", "lambda_star_per_m2", "row_seed"]


def write_dataset(path: Path, ds: D.Dataset, case: str) -> Path:
    rows = [list(f) + list(t) + [s] for f, t, s in zip(ds.features.tolist(), ds.targets.tolist(), ds.row_seeds)]
    return atomic_write_csv(path, dataset_header(ds, case), rows)


def _dump_config(out: Path, cfg: RunConfig) -> Path:
    # out_dir is left out so that the same run in two directories gives the same bytes
    d = {k: v for k, v in to_dict(cfg).items() if k != "out_dir"}
    return atomic_write_text(out / "config.yaml", yaml.safe_dump(d, sort_keys=True))


# --- commands ------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, out: Path) -> list:
    files = [_dump_config(out, cfg)]
    meta = {}
    if cfg.case == "case1":
        c = cfg.case1
        seed = derive_seed(cfg.master_seed, "case1", "train")
        solver = dict(tol=c.solver.tol, max_outer=c.solver.max_outer, n_random_starts=c.solver.n_random_starts)
        ds = D.build_case1_dataset(c.n_train, c.pmax_range_dbm, seed, n_users=c.n_users, radius=c.radius,
                                   scenario_kwargs=c.scenario_kwargs(), solver_kwargs=solver, workers=cfg.workers)
        _check_exclusions(ds, "case1 training set")
        files.append(write_dataset(out / "dataset_case1_train.csv", ds, "case1"))
        scen = P.case1_test_scenarios(c, cfg.master_seed)
        test_seed = derive_seed(cfg.master_seed, "case1", "test")
        files.append(write_scenarios_csv(out / "scenarios_case1_test.csv", scen,
                                         [derive_seed(test_seed, "case1", i) for i in range(c.n_test)]))
        files.append(out / "scenarios_case1_test.csv.columns")
        meta = {"train_seed": seed, "test_seed": test_seed, "train": ds.meta}
    else:
        spec = P.ExperimentSpec.from_config(cfg)
        data = P.build_case_data(spec)
        for d, name in [(data.model_pool, "model"), (data.test, "test")] + \
                [(e, f"empirical_{s}") for s, e in zip(spec.seeds, data.empirical)]:
            _check_exclusions(d, f"{cfg.case} {name} set")
            files.append(write_dataset(out / f"dataset_{cfg.case}_{name}.csv", d, cfg.case))
        meta = data.meta
    files.append(write_manifest(out, "gen", cfg, files, meta))
    return files


def cmd_train(cfg: RunConfig, out: Path) -> list:
    files = [_dump_config(out, cfg)]
    if cfg.case == "case1":
        res = P.run_protocol_A(cfg, out_dir=out)
        if res.meta["excluded_unconverged_train"] > 0.1 * cfg.case1.n_train:
            raise NonConvergenceError("too many unconverged Dinkelbach solves in the training set")
        files += [out / "model_case1.json", out / "curves_case1_train_0_0.csv", out / "gee_summary.csv"]
        files += [out / P.gee_filename(p) for p in res.per_scenario]
        meta = res.meta
    else:
        # pre-training on the whole model-labeled pool
        spec = P.ExperimentSpec.from_config(cfg)
        data = P.build_case_data(spec, x_max=0)
        _check_exclusions(data.model_pool, f"{cfg.case} model set")
        model, rep = P.pretrain(spec, data, 0, 0)
        files.append(nn.save(model, out / f"model_{cfg.case}.json"))
        files.append(P.write_curve(out, P.curve_filename(cfg.case, "model", 0, 0), P.curve_rows(rep)))
        meta = dict(data.meta, checksum=rep.checksum)
    files.append(write_manifest(out, "train", cfg, files, meta))
    return files


def cmd_transfer(cfg: RunConfig, out: Path) -> list:
    if cfg.case == "case1":
        raise ConfigError("transfer runs case2 or case3")
    files = [_dump_config(out, cfg)]
    spec = P.ExperimentSpec.from_config(cfg, out_dir=out)
    data = P.build_case_data(spec)
    _check_exclusions(data.model_pool, f"{cfg.case} model set")
    for e in data.empirical:
        _check_exclusions(e, f"{cfg.case} empirical set")
    res = P.run_protocol_B(spec, data)
    files += sorted(out.glob(f"curves_{cfg.case}_*.csv"))
    files += [out / f"testerr_{cfg.case}.csv", out / f"testerr_summary_{cfg.case}.csv"]
    files.append(write_manifest(out, "transfer", cfg, files, res.meta))
    return files


def cmd_eval(cfg: RunConfig, out: Path, model_path) -> list:
    if model_path is None:
        raise ConfigError("eval needs --model")
    model = nn.load(model_path)
    files = [_dump_config(out, cfg)]
    if cfg.case == "case1":
        summary, per_scenario, excluded = P.gee_sweep(model, cfg.case1, cfg.master_seed, cfg.workers)
        P.write_gee_outputs(out, summary, per_scenario)
        files += [out / "gee_summary.csv"] + [out / P.gee_filename(p) for p in per_scenario]
        meta = {"excluded_unconverged_test": excluded}
    else:
        spec = P.ExperimentSpec.from_config(cfg)
        data = P.build_case_data(spec, x_max=0)
        err = P.test_error(model, data.test)
        files.append(atomic_write_csv(out / f"eval_{cfg.case}.csv", ["model_checksum", "n_test", "test_error"],
                                      [[model.checksum(), len(data.test), err]]))
        meta = dict(data.meta, test_error=err)
    files.append(write_manifest(out, "eval", cfg, files, meta))
    return files


def cmd_sweep(cfg: RunConfig, out: Path) -> list:
    if cfg.case == "case1":
        raise ConfigError("sweep runs case2 or case3")
    files = [_dump_config(out, cfg)]
    spec = P.ExperimentSpec.from_config(cfg, out_dir=out)
    sw = cfg.sweep()
    res = P.architecture_sweep(spec, sw.candidates, sw.x)
    files += sorted(out.glob(f"sweep_{cfg.case}_*.csv"))
    meta = {tok: res.median_final_val(tok) for tok in res.reports}
    files.append(write_manifest(out, "sweep", cfg, files, meta))
    return files


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "transfer": cmd_transfer, "eval": cmd_eval, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelaided", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (created if missing)")
    common.add_argument("--preset", choices=["desk", "paper"], help="budget preset")
    common.add_argument("--case", choices=["case1", "case2", "case3"], help="experiment to run")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. case2.n_seeds=3 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "eval":
            sp.add_argument("--model", type=Path, help="model file to evaluate")
    return p


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s level=%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    log.propagate = False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = load_config(args.config, args.overrides, master_seed=args.seed, preset=args.preset, case=args.case,
                          out_dir=str(args.out) if args.out else None)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log.info("start command=%s case=%s preset=%s seed=%d config_hash=%s", args.command, cfg.case, cfg.preset,
                 cfg.master_seed, config_hash(cfg))
        if args.command == "eval":
            files = cmd_eval(cfg, out, args.model)
        else:
            files = COMMANDS[args.command](cfg, out)
        log.info("done command=%s files=%d", args.command, len(files))
        return EXIT_OK
    except ConfigError as exc:
        log.error("config_error msg=%r", str(exc))
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        log.error("solver_error msg=%r", str(exc))
        return EXIT_SOLVER
    except (OSError, nn.ModelFormatError) as exc:
        log.error("io_error msg=%r", str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
