import json

import pytest

from modelaided import cli, nn
from modelaided.config import ConfigError, config_hash, from_dict, load_config, parse_override

SMALL = ["--set", "case3.n_total=120", "--set", "case3.x_values=[0,10]", "--set", "case3.n_seeds=2",
         "--set", "case3.n_test=20", "--set", "case3.restarts=1", "--set", "case3.pretrain.epochs=3",
         "--set", "case3.finetune.epochs=3", "--seed", "5", "--case", "case3"]


def run(args):
    return cli.main(args)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"case2": {"n_totl": 10}})
    with pytest.raises(ConfigError):
        from_dict({"bogus": 1})


@pytest.mark.parametrize("alpha", [2.0, 1.5])
def test_path_loss_exponent_schema(alpha):
    with pytest.raises(ConfigError, match="path_loss_exponent"):
        from_dict({"cellular": {"path_loss_exponent": alpha}})


def test_type_errors():
    with pytest.raises(ConfigError):
        from_dict({"case2": {"n_total": "many"}})
    with pytest.raises(ConfigError):
        from_dict({"case2": {"finetune": {"epochs": -1}}})
    with pytest.raises(ConfigError):
        from_dict({"case1": {"train": {"loss": "relative_mse"}}})


def test_overrides_and_presets():
    cfg = load_config(None, ["case2.x_values=[1, 2]", "cellular.n_mc=8", "case2.finetune.learning_rate=0.01"])
    assert cfg.case2.x_values == [1, 2] and cfg.cellular.n_mc == 8
    assert cfg.case2.finetune.learning_rate == 0.01 and cfg.case2.finetune.epochs == 50
    paper = from_dict({"preset": "paper"})
    assert paper.case2.n_total == 30000 and paper.case1.n_users == 10 and paper.sweep2.x == 2100
    assert from_dict({}).case2.n_total == 6000
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")


def test_config_file_and_hash(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("case: case3\ncase3:\n  n_seeds: 4\n")
    a = load_config(p)
    assert a.case == "case3" and a.case3.n_seeds == 4
    assert config_hash(a) == config_hash(load_config(p))
    assert config_hash(a) != config_hash(load_config(p, ["case3.n_seeds=5"]))
    p.write_text("- not a mapping\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_cli_config_error_exit_code(tmp_path):
    assert run(["gen", "--out", str(tmp_path), "--set", "cellular.path_loss_exponent=2"]) == cli.EXIT_CONFIG
    assert not any(tmp_path.iterdir())
    assert run(["transfer", "--case", "case1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert run(["sweep", "--out", str(tmp_path), "--set", "sweep3.candidates=[]", "--case", "case3"]) == cli.EXIT_CONFIG


def test_cli_io_error_exit_code(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{broken")
    assert run(["eval", "--model", str(bad), "--out", str(tmp_path / "o")] + SMALL) == cli.EXIT_IO
    assert run(["eval", "--model", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")] + SMALL) == cli.EXIT_IO


def test_solver_exit_code(tmp_path, monkeypatch):
    def fail(cfg, out):
        raise cli.NonConvergenceError("forced")
    monkeypatch.setitem(cli.COMMANDS, "gen", fail)
    assert run(["gen", "--out", str(tmp_path)]) == cli.EXIT_SOLVER


def test_gen_creates_output_dir_and_stable_manifest(tmp_path):
    hashes = []
    for k in range(2):
        out = tmp_path / f"new{k}" / "nested"
        assert run(["gen", "--out", str(out)] + SMALL) == cli.EXIT_OK
        man = json.loads((out / "manifest_gen.json").read_text())
        hashes.append(man["content_hash"])
        assert "dataset_case3_model.csv" in man["files"] and "dataset_case3_empirical_1.csv" in man["files"]
    assert hashes[0] == hashes[1]
    header = (tmp_path / "new0" / "nested" / "dataset_case3_test.csv").read_text().splitlines()[0]
    assert header == "P_W,Pc_W,Pidle_W,lambda_star_per_m2,row_seed"


def test_transfer_train_eval_roundtrip(tmp_path):
    out = tmp_path / "t"
    assert run(["transfer", "--out", str(out)] + SMALL) == cli.EXIT_OK
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run(["transfer", "--out", str(out)] + SMALL) == cli.EXIT_OK
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}
    rows = (out / "testerr_case3.csv").read_text().splitlines()
    assert rows[0] == "x,arm,seed,test_error"
    by = {tuple(r.split(",")[:3]): r.split(",")[3] for r in rows[1:]}
    assert by[("0", "transfer", "0")] == by[("0", "model", "0")]

    assert run(["train", "--out", str(out)] + SMALL) == cli.EXIT_OK
    model = out / "model_case3.json"
    assert nn.load(model).layer_sizes == (3, 8, 8, 8, 8, 8, 1)
    assert run(["eval", "--model", str(model), "--out", str(out)] + SMALL) == cli.EXIT_OK
    err = (out / "eval_case3.csv").read_text().splitlines()[1].split(",")[2]
    # the full-pool model is the x=0 pretrain; eval reproduces its protocol-time error
    assert err == by[("0", "model", "0")]


def test_sweep_cli_dedupes_and_names_files(tmp_path, caplog):
    out = tmp_path / "s"
    args = ["sweep", "--out", str(out), "--set", "sweep3.x=10", "--set", "sweep3.candidates=[[3],[3],[4,2]]"] + SMALL
    with pytest.warns(UserWarning, match="duplicate"):
        assert run(args) == cli.EXIT_OK
    names = sorted(p.name for p in out.glob("sweep_case3_*_10_*.csv"))
    assert names == ["sweep_case3_3_10_0.csv", "sweep_case3_3_10_1.csv",
                     "sweep_case3_4-2_10_0.csv", "sweep_case3_4-2_10_1.csv"]


def test_case1_eval_sweep_grid_matches_config(tmp_path):
    out = tmp_path / "c1"
    args = ["--case", "case1", "--out", str(out), "--set", "case1.n_users=2", "--set", "case1.n_train=30",
            "--set", "case1.n_test=4", "--set", "case1.hidden=[4]", "--set", "case1.restarts=1",
            "--set", "case1.train.epochs=2", "--set", "case1.pmax_sweep_dbm=[-20, -12.5, 0]"]
    assert run(["train"] + args) == cli.EXIT_OK
    assert run(["eval", "--model", str(out / "model_case1.json")] + args) == cli.EXIT_OK
    summary = (out / "gee_summary.csv").read_text().splitlines()
    assert [float(r.split(",")[0]) for r in summary[1:]] == [-20.0, -12.5, 0.0]
    assert sorted(p.name for p in out.glob("gee_-*.csv")) == ["gee_-12.50.csv", "gee_-20.00.csv"]
    assert (out / "gee_0.00.csv").exists()


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["explode"])
