import json
import logging

import numpy as np
import pytest

from errors import InvalidDimensionError, ConfigError, DimensionMismatchError
from config import ExperimentConfig
from sphere import RngStream
from trials import (build_teacher, load_custom_init, TrialJob, TrialRunner,
                    run_trial, STREAM_STRIDE)

logger = logging.getLogger("trials_test")


def small_config(**values):
    base = {'p': 3, 'k': '4', 'ratio_grid': '0, 1', 'trials': 3,
            'epochs': 2, 'iters': 10, 'record_every': 5, 'gd_iters': 20,
            'sgd_epochs': 2, 'sgd_iters': 10, 'polish_iters': 50, 'reheats': 1}
    base.update(values)
    return ExperimentConfig(base)


def test_balanced_teacher():
    t = build_teacher(6, 100, 0.0, RngStream(0))

    assert np.array_equal(t.a_star[:50], np.full(50, -0.1))
    assert np.array_equal(t.a_star[50:], np.full(50, 0.1))
    assert np.sum(t.a_star) == pytest.approx(0.0, abs=1e-12)


def test_constant_teachers():
    t = build_teacher(6, 25, 1.0, RngStream(0))
    assert np.array_equal(t.a_star, np.ones(25))

    t = build_teacher(6, 36, 4.0, RngStream(0))
    assert np.array_equal(t.a_star, np.full(36, 0.25))
    assert np.sum(t.a_star) / np.dot(t.a_star, t.a_star) == pytest.approx(4.0)


def test_odd_k_balanced_teacher():
    with pytest.raises(InvalidDimensionError):
        build_teacher(6, 25, 0.0, RngStream(0))

    t = build_teacher(6, 25, 0.0, RngStream(0), pad_odd=True)
    assert t.k == 25
    assert t.a_star[12] == 0.0
    assert np.sum(t.a_star) == 0.0


def test_negative_ratio():
    with pytest.raises(InvalidDimensionError):
        build_teacher(6, 10, -1.0, RngStream(0))


def test_stream_ids():
    job = TrialJob(small_config(), 2, 7, 3, 4, 0.0)

    assert job.stream_id == 2 * STREAM_STRIDE + 7


def test_trial_is_reproducible():
    cfg = small_config()
    first = run_trial(TrialJob(cfg, 0, 1, 3, 4, 0.0, logger=logger))
    second = run_trial(TrialJob(cfg, 0, 1, 3, 4, 0.0, logger=logger))

    assert np.array_equal(first.result.final.w, second.result.final.w)
    assert first.result.trajectory == second.result.trajectory
    assert first.result.stream_id == 1


def test_results_do_not_depend_on_workers():
    serial = TrialRunner(small_config(workers=1), logger).run_cell(
        1, 3, 4, 1.0)
    pooled = TrialRunner(small_config(workers=2), logger).run_cell(
        1, 3, 4, 1.0)

    assert [r.trial for r in pooled] == [0, 1, 2]
    for a, b in zip(serial, pooled):
        assert np.array_equal(a.result.final.w, b.result.final.w)
        assert np.array_equal(a.result.final.a, b.result.final.a)
        assert a.result.trajectory == b.result.trajectory


def test_teacher_per_cell_is_shared():
    runner = TrialRunner(small_config(teacher_per="cell"), logger)
    results = runner.run_cell(0, 3, 4, 0.0)

    first = results[0].teacher
    assert all(np.array_equal(r.teacher.w_star, first.w_star)
               for r in results)

    per_trial = TrialRunner(small_config(), logger).run_cell(0, 3, 4, 0.0)
    assert not np.array_equal(per_trial[0].teacher.w_star,
                              per_trial[1].teacher.w_star)


@pytest.mark.parametrize("algorithm", ["pgd", "gd", "psgd"])
def test_every_algorithm_runs(algorithm):
    results = TrialRunner(small_config(algorithm=algorithm), logger).run_cell(
        0, 3, 4, 1.0, trials=2)

    assert len(results) == 2
    assert all(isinstance(r.succeeded, bool) for r in results)


def test_custom_init(tmp_path):
    t = build_teacher(3, 4, 1.0, RngStream(0))
    path = tmp_path / "init.json"
    path.write_text(json.dumps({'w': [1.0, 0.0, 0.0],
                                'a': [0.1, 0.2, 0.3, 0.4]}))

    s = load_custom_init(str(path), t)
    assert np.array_equal(s.a, [0.1, 0.2, 0.3, 0.4])

    path.write_text(json.dumps({'w': [1.0, 0.0, 0.0]}))
    with pytest.raises(ConfigError):
        load_custom_init(str(path), t)

    path.write_text(json.dumps({'w': [1.0, 0.0], 'a': [0.1, 0.2, 0.3, 0.4]}))
    with pytest.raises(DimensionMismatchError):
        load_custom_init(str(path), t)


def test_custom_init_trial(tmp_path):
    path = tmp_path / "init.json"
    path.write_text(json.dumps({'w': [0.0, 1.0, 0.0],
                                'a': [0.5, 0.5, 0.5, 0.5]}))
    cfg = small_config(init="custom", init_file=str(path))

    result = run_trial(TrialJob(cfg, 0, 0, 3, 4, 1.0, logger=logger))
    assert result.result.final.k == 4


def test_custom_init_is_normalised(tmp_path):
    t = build_teacher(3, 4, 1.0, RngStream(0))
    path = tmp_path / "init.json"
    path.write_text(json.dumps({'w': [3.0, 0.0, 4.0],
                                'a': [0.1, 0.2, 0.3, 0.4]}))

    s = load_custom_init(str(path), t)
    assert np.allclose(s.w, [0.6, 0.0, 0.8])
    assert np.linalg.norm(s.w) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("w", [[0.0, 0.0, 0.0], [[1.0, 0.0, 0.0]],
                               ["x", 1.0, 0.0], [1.0]])
def test_custom_init_rejects_bad_filters(tmp_path, w):
    t = build_teacher(3, 4, 1.0, RngStream(0))
    path = tmp_path / "init.json"
    path.write_text(json.dumps({'w': w, 'a': [0.1, 0.2, 0.3, 0.4]}))

    with pytest.raises(ConfigError):
        load_custom_init(str(path), t)


def test_sgd_radius_below_teacher_norm_is_a_config_error():
    cfg = small_config(algorithm="psgd", sgd_radius=1.0)

    with pytest.raises(ConfigError):
        run_trial(TrialJob(cfg, 0, 0, 3, 4, 1.0, logger=logger))


def test_stuck_run_uses_every_reheat():
    cfg = small_config(reheats=2, init="spurious", rho_w0=0, rho_a0=0)
    result = run_trial(TrialJob(cfg, 0, 0, 3, 4, 1.0, logger=logger))

    assert result.result.reheats == 2
    assert not result.succeeded
