import json
import os

import pytest

from resdob.cli import main


def _ini(tmp_path, mode="cbf"):
    path = tmp_path / "cfg.ini"
    path.write_text(f"[run]\nfilter_mode = {mode}\niterations = 1\n[task]\nepisode_length = 50\n"
                    "[dob]\nerror_bound = 0.3\n[rl]\nminibatch = 25\nepochs = 1\n")
    return str(path)


def test_gradcheck_and_qp_check_exit_zero(capsys):
    assert main(["gradcheck", "--nets", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]
    assert main(["qp-check", "--instances", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["failures"] == 0


def test_train_eval_plot_cycle(tmp_path, capsys):
    out = str(tmp_path / "run")
    cfg = _ini(tmp_path)
    assert main(["train", "--config", cfg, "--out", out]) == 0
    assert json.loads(capsys.readouterr().out)["iterations"] == 1
    assert main(["eval", "--config", cfg, "--out", out, "--episodes", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["episodes"] == 1
    assert main(["plot", out, "--out", str(tmp_path / "plots")]) == 0
    assert os.path.exists(tmp_path / "plots" / "mean_episode_reward.svg")
    text = (tmp_path / "plots" / "mean_episode_reward.svg").read_text()
    assert 'data-mode="cbf"' in text


def test_missing_checkpoint_reports_and_exits_two(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "nope.json"), "--episodes", "1"])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("resdob eval: error:") and err.count("\n") == 1


def test_bad_config_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nseeed = 1\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_unknown_mode_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--mode", "shield"])
    assert exc.value.code == 2


def test_calibrate_reports_bound(tmp_path, capsys):
    assert main(["calibrate-dob", "--config", _ini(tmp_path, "dob_cbf"), "--steps", "200"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["error_bound"] >= 0.0 and out["samples"] > 0
