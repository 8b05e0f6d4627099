"""Config validation, CLI subcommands and output round trips."""

import os

import numpy as np
import pytest
import yaml

from stackpinn.cli import (ConfigError, bundled_config_path, load_config, main,
                           train_config_from)
from stackpinn.util import read_csv

TINY_CFG = {
    "problem": "multiscale",
    "seed": 1,
    "decomposition": {"levels": 1, "overlap": 2.0},
    "training": {
        "level0": {"width": 8, "layers": 2, "activation": "swish",
                   "iterations": 5, "learning_rate": 1.0e-3, "decay_rate": 0.99},
        "mf": {"nonlinear_width": 8, "nonlinear_layers": 2, "linear_sizes": [1, 4, 1],
               "activation": "swish", "iterations": 5, "learning_rate": 5.0e-3,
               "decay_rate": 0.95},
        "residual_batch": 16,
        "bc_batch": 1,
        "weights": {"residual": 10.0, "bc": 1.0, "alpha": 1.0},
    },
}


def write_cfg(tmp_path, cfg, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_bundled_configs_parse():
    for name in ("pendulum-paper.cfg", "pendulum-desk.cfg", "multiscale-paper.cfg",
                 "multiscale-desk.cfg", "allen-cahn-paper.cfg", "allen-cahn-desk.cfg",
                 "fbdon-paper.cfg", "fbdon-desk.cfg"):
        assert bundled_config_path(name) is not None, name
        raw = load_config(name)
        assert raw["problem"] in ("pendulum", "multiscale", "allen-cahn",
                                  "pendulum-operator")


def test_unknown_key_rejected(tmp_path):
    cfg = dict(TINY_CFG)
    cfg["surprise"] = 1
    with pytest.raises(ConfigError, match="config.surprise"):
        load_config(write_cfg(tmp_path, cfg))


def test_nested_unknown_key_rejected(tmp_path):
    cfg = yaml.safe_load(yaml.safe_dump(TINY_CFG))
    cfg["training"]["level0"]["momentum"] = 0.9
    with pytest.raises(ConfigError, match="config.training.level0.momentum"):
        load_config(write_cfg(tmp_path, cfg))


def test_missing_required_key(tmp_path):
    cfg = yaml.safe_load(yaml.safe_dump(TINY_CFG))
    del cfg["problem"]
    with pytest.raises(ConfigError, match="config.problem"):
        load_config(write_cfg(tmp_path, cfg))


def test_type_errors_are_anchored(tmp_path):
    cfg = yaml.safe_load(yaml.safe_dump(TINY_CFG))
    cfg["training"]["residual_batch"] = "many"
    with pytest.raises(ConfigError, match="config.training.residual_batch"):
        load_config(write_cfg(tmp_path, cfg))


def test_yaml_parse_error_carries_line(tmp_path):
    path = tmp_path / "broken.cfg"
    path.write_text("problem: multiscale\n  bad indent: [\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(str(path))


def test_train_config_mapping():
    cfg = train_config_from(TINY_CFG)
    assert cfg.level0_width == 8
    assert cfg.weights.lambda_r == 10.0
    assert cfg.seed == 1
    assert cfg.decay_steps == 2000


def test_cmd_train_missing_problem_exits_2(tmp_path, capsys):
    cfg = yaml.safe_load(yaml.safe_dump(TINY_CFG))
    del cfg["problem"]
    rc = main(["train", "--config", write_cfg(tmp_path, cfg)])
    assert rc == 2
    assert "config.problem" in capsys.readouterr().err


def test_cmd_train_eval_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--config", write_cfg(tmp_path, TINY_CFG), "--out", str(out)])
    assert rc == 0
    assert (out / "errors.csv").exists() and (out / "stack.npz").exists()
    errors = read_csv(out / "errors.csv")
    capsys.readouterr()

    rc = main(["eval", str(out / "stack.npz"), "--problem", "multiscale"])
    assert rc == 0
    printed = capsys.readouterr().out
    # eval reproduces the recorded final error exactly
    final = errors["relative_l2"][-1]
    assert f"{final:.6e}" in printed
    assert (out / "solution.csv").exists()
    sol = read_csv(out / "solution.csv")
    assert np.allclose(sol["predicted0"] - sol["oracle0"], sol["error0"])


def test_cmd_eval_rejects_bad_checkpoint(tmp_path, capsys):
    path = tmp_path / "bad.npz"
    np.savez(path, format="not-a-stack")
    assert main(["eval", str(path)]) == 2


def test_cmd_eval_identity_oracle_is_zero():
    # evaluating the oracle against itself (predicted == oracle) gives 0
    from stackpinn.problems import make_problem
    from stackpinn.trainer import relative_l2
    prob = make_problem("multiscale")
    oracle = prob.reference()
    vals = oracle.eval(prob.eval_grid())
    assert relative_l2(vals, vals) == 0.0


def test_cmd_oracle_multiscale_and_pendulum(capsys):
    assert main(["oracle", "multiscale"]) == 0
    assert "closed-form" in capsys.readouterr().out
    assert main(["oracle", "pendulum"]) == 0
    out = capsys.readouterr().out
    assert "energy increase" in out


def test_cmd_inspect(tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", write_cfg(tmp_path, TINY_CFG), "--out", str(out)])
    capsys.readouterr()
    rc = main(["inspect", str(out / "stack.npz")])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "stackpinn-stack-v1" in printed
    assert main(["inspect", str(tmp_path / "nope.npz")]) == 2


def test_cmd_train_operator_tiny(tmp_path, capsys):
    cfg = {
        "problem": "pendulum-operator",
        "seed": 0,
        "decomposition": {"levels": 1, "overlap": 2.0},
        "training": {
            "level0": {"width": 8, "layers": 2, "iterations": 3,
                       "learning_rate": 5.0e-3, "decay_rate": 0.9},
            "mf": {"nonlinear_width": 8, "nonlinear_layers": 2, "linear_width": 4,
                   "linear_layers": 1, "iterations": 3, "learning_rate": 5.0e-3,
                   "decay_rate": 0.9},
            "activation": "sin",
            "n_train_ics": 32,
            "residual_batch": 16,
            "bc_batch": 8,
            "weights": {"residual": 1.0, "bc": 1.0, "alpha": 1.0},
        },
    }
    out = tmp_path / "oprun"
    rc = main(["train", "--config", write_cfg(tmp_path, cfg, "op.cfg"), "--out", str(out)])
    assert rc == 0
    assert (out / "operator.npz").exists()
    capsys.readouterr()
    rc = main(["eval", str(out / "operator.npz"), "--ic", "1.0", "1.0"])
    assert rc == 0
    assert (out / "trajectory.csv").exists()


def test_seed_override_changes_outputs(tmp_path):
    out1, out2, out3 = (tmp_path / n for n in ("s1", "s2", "s3"))
    path = write_cfg(tmp_path, TINY_CFG)
    main(["train", "--config", path, "--out", str(out1)])
    main(["train", "--config", path, "--out", str(out2), "--seed", "99"])
    main(["train", "--config", path, "--out", str(out3)])
    a = read_csv(out1 / "errors.csv")["relative_l2"]
    b = read_csv(out2 / "errors.csv")["relative_l2"]
    c = read_csv(out3 / "errors.csv")["relative_l2"]
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
