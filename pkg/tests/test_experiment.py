import json

import pytest

from emoblind.cli import main
from emoblind.errors import ConfigError, DataError
from emoblind.probes import diff_metric
from emoblind.experiment import (TABLE_ROWS, ExperimentConfig, MetricsReport, build_config, build_table1,
                                 compare_methods, config_keys, emit_report, flatten_config, parse_value,
                                 read_config_file, table1_csv)

SMALL = """\
# tiny run for the command-line tests
seed = 1
gen.num_identities = 40
gen.N = 32
gen.identity_dim = 8
suppression.outer_iterations = 2
suppression.adversary_epochs = 3
suppression.pretrain_epochs = 3
suppression.lnl_epochs = 3
suppression.triplet_batch = 64
probe.train.epochs = 5
probe.trees = 5
eval.dev_pairs = 40
eval.test_pairs = 60
eval.ablation_fractions = 0.0, 0.5
eval.ablation_repeats = 1
eval.fairness_repeats = 1
eval.fairness_identities = 200
fairness.hidden = 16
fairness.train.epochs = 3
bias.min_class_size = 5
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


# --- configuration --------------------------------------------------------------------------


@pytest.mark.parametrize("text,value", [("3", 3), ("0.5", 0.5), ("true", True), ("off", False), ("none", None),
                                        ("0.1, 0.2", (0.1, 0.2)), ("gender", "gender")])
def test_parse_value(text, value):
    assert parse_value(text) == value


def test_config_file_round_trip(small_cfg):
    cfg = build_config(read_config_file(small_cfg))
    assert cfg.seed == 1
    assert cfg.gen.num_identities == 40
    assert cfg.eval.ablation_fractions == (0.0, 0.5)
    assert cfg.probe.train.epochs == 5
    assert cfg.gen_config().seed == 1
    assert cfg.fairness_gen_config().seed == 101
    assert cfg.fairness_gen_config().resolved_mixing_seed == cfg.gen_config().resolved_mixing_seed


def test_defaults_and_keys():
    cfg = build_config([])
    assert cfg == ExperimentConfig()
    keys = config_keys()
    assert "gen.seed" not in keys and "bias.seed" not in keys
    assert set(flatten_config(cfg)) == set(keys) - {"output_dir"}


@pytest.mark.parametrize("entries,match", [([("gen.bogus", "1")], "gen.bogus"), ([("gen.seed", "4")], "seed"),
                                           ([("gen.N", "abc")], "gen.N"), ([("eval.split", "0.5, 0.5")], "split"),
                                           ([("gen.noise_sigma", "-1")], "gen")])
def test_bad_config_entries(entries, match):
    with pytest.raises(ConfigError, match=match):
        build_config(entries)


def test_malformed_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")


def test_unknown_key_exits_1(tmp_path, capsys):
    assert main(["generate", "--output-dir", str(tmp_path), "--set", "gen.colour=3"]) == 1
    assert "gen.colour" in capsys.readouterr().err


def test_usage_error_exits_1(capsys):
    assert main(["train", "--method", "svm"]) == 1
    assert main(["frobnicate"]) == 1


def test_missing_dataset_exits_2(tmp_path, capsys):
    assert main(["probe", "--output-dir", str(tmp_path), "-q"]) == 2
    assert "generate" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch, small_cfg):
    monkeypatch.setenv("EMOBLIND_OUTPUT", str(tmp_path / "env-out"))
    assert main(["generate", "--config", small_cfg, "-q"]) == 0
    assert (tmp_path / "env-out" / "dataset.txt").exists()
    assert main(["generate", "--config", small_cfg, "--output-dir", str(tmp_path / "flag-out"), "-q"]) == 0
    assert (tmp_path / "flag-out" / "dataset.txt").exists()


def test_keys_command(capsys):
    assert main(["keys"]) == 0
    assert "suppression.margin" in capsys.readouterr().out.split()


# --- tables --------------------------------------------------------------------------------------


def test_table1_diff_cell():
    before = {r: 88.1 for r in TABLE_ROWS}
    after = {"SN": {r: 16.7 for r in TABLE_ROWS}}
    table = build_table1(before, after)
    table["chance"] = {r: 16.67 for r in TABLE_ROWS}
    table["diff"]["SN"] = {r: diff_metric(88.1, 16.7, 16.67) for r in TABLE_ROWS}
    row = table1_csv(table).splitlines()[1].split(",")
    assert row[-1] == "99.96"


def test_undefined_diff_is_na():
    before = {r: 40.0 for r in TABLE_ROWS}  # identity at 40 is below the 50% chance line
    table = build_table1(before, {"SN": dict(before), "LnL": dict(before)})
    assert table["diff"]["SN"]["identity"] is None
    assert "n/a" in table1_csv(table)
    assert compare_methods(table)["lnl_costs_more"] is None
    assert compare_methods(build_table1(before, {"SN": before})) is None


def test_metrics_load_errors(tmp_path):
    with pytest.raises(DataError):
        MetricsReport.load(tmp_path / "none.json")
    (tmp_path / "m.json").write_text("{")
    with pytest.raises(DataError):
        MetricsReport.load(tmp_path / "m.json")


# --- pipeline --------------------------------------------------------------------------------------


def test_staged_run_and_report(tmp_path, small_cfg, capsys):
    out = str(tmp_path / "run")
    base = ["--config", small_cfg, "--output-dir", out, "-q"]
    for cmd in (["generate"], ["train", "--method", "sn"], ["probe"]):
        assert main(cmd + base) == 0
    m = MetricsReport.load(tmp_path / "run" / "metrics.json")
    assert m.table1["rows"] == list(TABLE_ROWS)
    assert set(m.table1["after"]) == {"SN"}
    assert m.training["SN"]["kind"] == "SN"
    assert set(m.pca) == {"x", "SN"}
    timings = json.loads((tmp_path / "run" / "timings.json").read_text())
    assert {"generate", "train-sn", "probe"} <= set(timings)

    assert main(["report", "--sections", "fairness"] + base) == 1
    assert main(["report", "--sections", "table1,pca"] + base) == 0
    lines = (tmp_path / "run" / "table1.csv").read_text().splitlines()
    assert lines[0] == "task,chance,x,SN,SN diff"
    assert [l.split(",")[0] for l in lines[1:]] == list(TABLE_ROWS)
    assert (tmp_path / "run" / "pca_sn.csv").exists()


def test_full_run_and_reemit(tmp_path, small_cfg):
    out = tmp_path / "all"
    assert main(["all", "--config", small_cfg, "--output-dir", str(out), "-q"]) == 0
    names = ["table1.csv", "ablation.csv", "ablation.svg", "pca_x.csv", "pca_sn.csv", "pca_lnl.csv", "fairness.csv"]
    first = {n: (out / n).read_bytes() for n in names}
    metrics = MetricsReport.load(out / "metrics.json")
    assert [r["method"] for r in metrics.fairness["rows"]] == ["x", "SN", "LnL", "x (unbiased)"]
    assert metrics.comparison["utility_rows"] == ["identity", "gender", "ethnicity"]
    again = tmp_path / "again"
    again.mkdir()
    emit_report(metrics, again)
    for n in names:
        assert (again / n).read_bytes() == first[n], n
    with pytest.raises(ConfigError):
        emit_report(metrics, again, ["scatter"])
