import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdptest import config as cfgmod
from mdptest.cli import main
from mdptest.envs import TigerConfig, simulate_glucose, simulate_tiger, three_state_chain, GlucoseConfig
from mdptest.trajectory import load_dataset, write_dataset

FAST = ["--B", "10", "--Q", "2", "--n-draws", "200", "--trees", "10"]


@pytest.fixture
def tiger_csv(tmp_path):
    path = tmp_path / "tiger.csv"
    write_dataset(simulate_tiger(TigerConfig(), 30, seed=0), path)
    return path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_test_command_echoes_settings(tiger_csv, capsys):
    code, out, _ = _run(["test", tiger_csv, "--n-actions", 3, "--alpha", 0.05, "--B", 20, "--Q", 3, "--folds", 3,
                         "--n-draws", 300, "--trees", 10], capsys)
    assert code == 0
    res = json.loads(out)
    assert (res["alpha"], res["B"], res["Q"], res["L"]) == (0.05, 20, 3, 3)
    assert res["schema_version"] == 1 and res["seed"] == 0
    assert res["run_config"]["B"] == 20 and res["run_config"]["n_trees"] == 10
    assert "max_depth" in res["run_config"]  # defaulted fields are echoed too


def test_test_command_deterministic(tiger_csv, capsys):
    argv = ["test", tiger_csv, "--n-actions", 3, "--seed", 7] + FAST
    _, a, _ = _run(argv, capsys)
    _, b, _ = _run(argv, capsys)
    strip = lambda s: {k: v for k, v in json.loads(s).items() if k != "runtime_ms"}
    assert strip(a) == strip(b)
    assert json.loads(a)["seed"] == 7


def test_missing_file_exits_with_data_error(tmp_path, capsys):
    code, _, err = _run(["test", tmp_path / "none.csv", "--n-actions", 2], capsys)
    assert code == 3 and "none.csv" in err


def test_bad_row_names_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("traj_id,t,s_1,action,reward\nx,0,0,1,1\nx,1,0,7,1\nx,2,0,1,\n")
    code, _, err = _run(["test", path, "--n-actions", 2], capsys)
    assert code == 3 and "line 3" in err and "'x'" in err


def test_usage_errors(tiger_csv, capsys):
    assert _run(["test", tiger_csv], capsys)[0] == 2  # no action count
    assert _run(["nonsense"], capsys)[0] == 2
    assert _run(["test", tiger_csv, "--n-actions", "x"], capsys)[0] == 2


def test_select_command(tiger_csv, capsys):
    code, out, _ = _run(["select", tiger_csv, "--n-actions", 3, "--K", 2, "--alpha", 0.05] + FAST, capsys)
    assert code == 0
    res = json.loads(out)
    assert res["outcome"]["type"] in ("order", "pomdp") and res["K"] == 2 and res["alpha"] == 0.05
    assert 1 <= len(res["levels"]) <= 2 and "run_config" in res


def test_simulate_commands(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert _run(["simulate", "tiger", "--N", 200, "--T", 20, "--out", out], capsys)[0] == 0
    d = load_dataset(out, n_actions=3)
    assert d.n == 200 and d.horizon == 20

    code, text, _ = _run(["simulate", "glucose", "--N", 2, "--T", 15], capsys)
    assert code == 0 and text.splitlines()[0] == "traj_id,t,s_1,s_2,s_3,action,reward"
    assert len(text.splitlines()) == 1 + 2 * 16

    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(three_state_chain().to_dict()))
    out = tmp_path / "c.csv"
    assert _run(["simulate", "chain", "--spec", spec, "--N", 3, "--T", 12, "--out", out], capsys)[0] == 0
    d = load_dataset(out, n_actions=2)
    assert set(np.unique(d.states)) <= {0.0, 1.0, 2.0}
    assert _run(["simulate", "chain"], capsys)[0] == 2


def test_simulate_glucose_default_horizon(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert _run(["simulate", "glucose", "--N", 1, "--out", out], capsys)[0] == 0
    assert load_dataset(out, n_actions=5).horizon == 1344


def test_experiment_zero_reps(capsys):
    code, _, err = _run(["experiment", "rejection-rates", "--reps", 0], capsys)
    assert code == 2 and "reps" in err


def test_experiment_rejection_rates(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(three_state_chain().to_dict()))
    code, out, _ = _run(["experiment", "rejection-rates", "--env", "chain", "--spec", spec, "--N", 5, "--T", 20,
                         "--reps", 3, "--alphas", "0.05,0.1", "--threads", 1] + FAST, capsys)
    assert code == 0
    rep = json.loads(out)
    assert [c["alpha"] for c in rep["cells"]] == [0.05, 0.1]
    for c in rep["cells"]:
        assert c["n_reps"] == 3 and 0 <= c["rate"] <= 1
    code, out, _ = _run(["experiment", "rejection-rates", "--env", "tiger", "--N", 10, "--reps", 2,
                         "--format", "csv", "--threads", 1] + FAST, capsys)
    assert code == 0 and out.splitlines()[0] == "k,alpha,rate,mce,n_reps"


def test_experiment_cv_value_split_table(tmp_path, capsys):
    code, out, _ = _run(["experiment", "cv-value", "--N", 4, "--T", 30, "--ks", "1-2", "--n-iters", 2,
                         "--fqi-trees", 3, "--fqe-trees", 3, "--format", "csv"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "k,value,se,n_reps" and len(lines) == 3
    assert all(line.endswith(",6") for line in lines[1:])


def test_fqi_and_fqe_commands(tmp_path, capsys):
    data = tmp_path / "g.csv"
    write_dataset(simulate_glucose(GlucoseConfig(), 3, 25, seed=1), data)
    actions = tmp_path / "a.csv"
    rl = ["--n-actions", 5, "--n-iters", 3, "--fqi-trees", 5, "--fqe-trees", 5]
    code, out, _ = _run(["fqi", data, "--level", 2, "--actions-out", actions] + rl, capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["level"] == 2 and sum(rep["action_counts"]) == 3 * 25
    assert actions.read_text().splitlines()[0] == "traj_id,t,action"
    for policy in ("uniform", "constant:1", f"fqi:{data}"):
        code, out, _ = _run(["fqe", data, "--policy", policy] + rl, capsys)
        assert code == 0 and np.isfinite(json.loads(out)["value_initial"])
    assert _run(["fqe", data, "--policy", "constant:9"] + rl, capsys)[0] == 2
    assert _run(["fqe", data, "--policy", "greedy"] + rl, capsys)[0] == 2


def test_config_file_and_flag_precedence(tmp_path, tiger_csv, capsys):
    conf = tmp_path / "run.toml"
    conf.write_text("n_actions = 3\nB = 12\nQ = 2\nn_draws = 200\nn_trees = 10\nseed = 5\n")
    code, out, _ = _run(["test", tiger_csv, "--config", conf, "--B", 8], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["B"] == 8 and res["seed"] == 5 and res["run_config"]["Q"] == 2


@pytest.mark.parametrize("text", ["B = 'many'\n", "colour = 1\n", "[section]\nB = 2\n", "B = \n"])
def test_bad_config_is_usage_error(tmp_path, tiger_csv, capsys, text):
    conf = tmp_path / "bad.toml"
    conf.write_text(text)
    assert _run(["test", tiger_csv, "--n-actions", 3, "--config", conf], capsys)[0] == 2


def test_config_round_trip_with_generators():
    s = cfgmod.Settings(cfgmod.RunConfig(B=50, alpha=0.01, seed=3), {"listen_accuracy": 0.8},
                        GlucoseConfig.with_order(2).to_dict())
    back = cfgmod.loads(cfgmod.dumps(s))
    assert back == s
    assert back.glucose_config() == GlucoseConfig.with_order(2)
    assert back.tiger_config().listen_accuracy == 0.8


@settings(max_examples=30, deadline=None)
@given(
    B=st.integers(1, 500),
    alpha=st.floats(0.001, 0.5),
    seed=st.integers(0, 2**31),
    normalize=st.booleans(),
    mtry=st.integers(0, 5),
)
def test_config_round_trip_property(B, alpha, seed, normalize, mtry):
    s = cfgmod.Settings(cfgmod.RunConfig(B=B, alpha=alpha, seed=seed, normalize=normalize, mtry=mtry))
    assert cfgmod.loads(cfgmod.dumps(s)) == s


def test_version_flag(capsys):
    assert main(["--version"]) == 0
