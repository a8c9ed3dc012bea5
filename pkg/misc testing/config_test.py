import os

import pytest

from errors import ConfigError, LabIOError
from config import (ExperimentConfig, build_config, read_config_file,
                    KEYS, SEED_ENV)

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..",
                          "configs")


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults():
    cfg = build_config("table1", environ={})

    assert cfg.p == 6
    assert cfg.k == [25, 36, 49, 64, 81, 100]
    assert cfg.ratio_grid == [0.0, 1.0, 4.0, 9.0, 16.0, 25.0]
    assert cfg.trials == 100
    assert cfg.seed == 0
    assert (cfg.tol_a, cfg.tol_phi) == (1e-3, 1e-2)
    assert cfg.schedule().epochs[0].noise_w == 36.0
    assert set(cfg.get_config_dict()) == set(KEYS)


def test_file_values_and_comments(tmp_path):
    path = write(tmp_path, "# grid\nk = 4, 8\nratio_grid = 0, 2.5  # two\n"
                           "\ntrials = 7\nalgorithm = gd\n")
    cfg = build_config("table1", path, environ={})

    assert cfg.k == [4, 8]
    assert cfg.ratio_grid == [0.0, 2.5]
    assert cfg.trials == 7
    assert cfg.resolved_init() == "random"


def test_unknown_key(tmp_path):
    path = write(tmp_path, "colour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        ExperimentConfig({'colour': 'blue'})


def test_malformed_line(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(write(tmp_path, "trials 5\n"))


def test_bad_values():
    with pytest.raises(ConfigError):
        ExperimentConfig({'trials': 'many'})
    with pytest.raises(ConfigError):
        ExperimentConfig({'trials': 0})
    with pytest.raises(ConfigError):
        ExperimentConfig({'ratio_grid': '-1'})
    with pytest.raises(ConfigError):
        ExperimentConfig({'algorithm': 'adam'})
    with pytest.raises(ConfigError):
        ExperimentConfig({'eta_decay': 1.5})


def test_missing_file():
    with pytest.raises(LabIOError):
        build_config("table1", "/nonexistent/run.cfg", environ={})


def test_custom_init_needs_existing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig({'init': 'custom'})
    with pytest.raises(ConfigError):
        ExperimentConfig({'init': 'custom',
                          'init_file': str(tmp_path / "none.json")})


def test_seed_precedence(tmp_path):
    env = {SEED_ENV: "17"}

    assert build_config("verify", environ=env).seed == 17
    assert build_config("verify", overrides={'seed': 3}, environ=env).seed == 3
    path = write(tmp_path, "seed = 5\n")
    assert build_config("verify", path, environ={}).seed == 5
    assert build_config("verify", path, environ=env).seed == 17
    assert build_config("verify", path, {'seed': 9}, env).seed == 9


def test_none_overrides_are_ignored():
    cfg = build_config("table1", overrides={'trials': None, 'workers': 2},
                       environ={})

    assert cfg.trials == 100
    assert cfg.workers == 2


def test_shipped_configs_parse():
    for name in ("table1", "trajectory", "overparam", "verify"):
        cfg = build_config(name, os.path.join(CONFIG_DIR, name + ".cfg"),
                           environ={})
        assert cfg.experiment == name


def test_shipped_seed_yields_to_environment():
    path = os.path.join(CONFIG_DIR, "table1.cfg")

    assert build_config("table1", path, environ={SEED_ENV: "23"}).seed == 23


def test_convergence_settings(tmp_path):
    cfg = build_config("table1", environ={})
    conv = cfg.convergence()

    assert conv.reheats == 15
    assert conv.polish_iters == 20000
    assert conv.reheat_loss == 1e-2

    path = write(tmp_path, "reheats = 0\npolish_iters = 50\n")
    conv = build_config("table1", path, environ={}).convergence()
    assert (conv.reheats, conv.polish_iters) == (0, 50)

    with pytest.raises(ConfigError):
        ExperimentConfig({'reheats': -1})
    with pytest.raises(ConfigError):
        ExperimentConfig({'polish_eta': 0})
