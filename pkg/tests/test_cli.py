import json

import numpy as np
import pytest

from noisyrc.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from noisyrc.dynsys import Dataset
from noisyrc.reservoir import TrainedModel

HP = ["--rho", "0.9", "--gamma", "0.5", "--alpha", "0.6", "--beta", "1e-6", "--p", "0.1",
      "--sigma", "1e-4", "--n-nodes", "60"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "mg.npz"
    assert main(["gen", "--system", "MG", "--tau", "17", "--train-len", "3000", "--test-len", "1000",
                 "--out", str(path)]) == EXIT_OK
    return path


def test_gen_writes_dataset(data):
    ds = Dataset.load(data)
    assert ds.system == "MG" and ds.split.train_len == 3000 and ds.params["tau"] == 17


def test_train_predict_roundtrip(data, tmp_path, capsys):
    model = tmp_path / "model.npz"
    assert main(["train", "--data", str(data), *HP, "--out", str(model)]) == EXIT_OK
    assert TrainedModel.load(model).hyperparams.n_nodes == 60
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model), "--data", str(data), "--horizon", "50",
                 "--out", str(pred)]) == EXIT_OK
    assert np.loadtxt(pred, delimiter=",").shape == (50,)


def test_train_from_hyperparam_file(data, tmp_path):
    hp = tmp_path / "hp.json"
    hp.write_text(json.dumps(dict(rho=0.9, gamma=0.5, alpha=0.6, beta=1e-6, p=0.1, sigma=0.0,
                                  n_nodes=40)))
    assert main(["train", "--data", str(data), "--hyperparams", str(hp),
                 "--out", str(tmp_path / "m.npz")]) == EXIT_OK


def test_optimize_frozen_sigma(data, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    best = tmp_path / "best.json"
    rc = main(["optimize", "--data", str(data), "--budget", "12", "--sigma", "1e-3", "--n-nodes", "30",
               "--n-rep", "1", "--t-opt", "100", "--trace", str(trace), "--out", str(best)])
    assert rc == EXIT_OK
    hp = json.loads(best.read_text())
    assert hp["sigma"] == 1e-3 and hp["n_nodes"] == 30
    assert len(trace.read_text().splitlines()) == 13


def test_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text('profile = "micro"\nsystem = "MG30"\n[sweep]\nmaster_seed = 3\n')
    ck = tmp_path / "ck"
    assert main(["--config", str(cfg), "sweep", "--checkpoint", str(ck)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert len(summary["sigmas"]) == 2 and "best_sigma" not in summary
    out = tmp_path / "report"
    assert main(["report", "--checkpoint", str(ck), "--out", str(out)]) == EXIT_OK
    assert (out / "sweep.csv").exists() and (out / "rmse.svg").exists()


def test_config_errors_exit_1(data, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("profile = \n")
    assert main(["--config", str(bad), "sweep", "--checkpoint", str(tmp_path / "c")]) == EXIT_CONFIG
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("[sweep]\nbogus = 1\n")
    assert main(["--config", str(unknown), "sweep", "--checkpoint", str(tmp_path / "c")]) == EXIT_CONFIG
    assert main(["train", "--data", str(data), "--rho", "0.9", "--out", str(tmp_path / "m.npz")]) == EXIT_CONFIG
    assert main(["train", "--data", str(tmp_path / "missing.npz"), *HP,
                 "--out", str(tmp_path / "m.npz")]) == EXIT_CONFIG
    assert main(["report", "--checkpoint", str(tmp_path), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_numerical_failure_exit_2(data, tmp_path):
    model = tmp_path / "model.npz"
    assert main(["train", "--data", str(data), *HP, "--out", str(model)]) == EXIT_OK
    m = TrainedModel.load(model)
    m.W_out[:] = np.nan
    m.save(model)
    assert main(["predict", "--model", str(model), "--data", str(data), "--horizon", "10",
                 "--out", str(tmp_path / "p.csv")]) == EXIT_NUMERIC


@pytest.mark.parametrize("argv", [["gen"], ["fly"], ["train", "--data"]])
def test_bad_arguments_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_CONFIG
