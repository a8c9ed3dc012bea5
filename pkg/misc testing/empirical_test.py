import numpy as np
import pytest

from errors import EmptyBatchError, DimensionMismatchError, LabIOError
from param_types import TeacherParams, StudentParams, OverparamStudent
from sphere import RngStream, random_unit_vector
from empirical import (Dataset, forward, sample_input, sample_inputs,
                       sample_dataset, sample_grad, minibatch_grad,
                       factored_grad_w, batch_factored_grad_w, overparam_loss,
                       overparam_loss_at, overparam_grad, kink_margin)
from analysis import finite_diff_check, LOSS_OVERPARAM
from verifier import overparam_fd_points


def random_pair(rng, p=4, k=3):
    t = TeacherParams(random_unit_vector(p, rng),
                      rng.generator.standard_normal(k))
    s = StudentParams(random_unit_vector(p, rng),
                      rng.generator.standard_normal(k))
    return s, t


def test_forward_by_hand():
    z = np.array([[1.0, -1.0], [2.0, 0.5]])
    w = np.array([0.6, 0.8])
    a = np.array([2.0, 3.0])

    # Z_1'w = 2.2, Z_2'w = -0.2.
    assert forward(z, w, a) == pytest.approx(4.4)
    assert np.allclose(forward(np.stack([z, -z]), w, a), [4.4, 0.6])


def test_forward_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        forward(np.ones((3, 2)), np.array([0.6, 0.8]), np.ones(2))


def test_sample_grad_a_component_is_exact_difference():
    # The per-sample loss is quadratic in a, so central differences are exact.
    rng = RngStream(0)
    s, t = random_pair(rng)
    z = sample_input(s.p, s.k, rng)
    _, ga = sample_grad(z, s, t)

    def loss(a):
        return 0.5 * (forward(z, s.w, a) - forward(z, t.w_star, t.a_star)) ** 2

    h = 1e-4
    for j in range(s.k):
        e = np.zeros(s.k)
        e[j] = h
        assert (loss(s.a + e) - loss(s.a - e)) / (2 * h) == pytest.approx(
            ga[j], abs=1e-8)


def test_minibatch_grad_is_mean_of_sample_grads():
    rng = RngStream(1)
    s, t = random_pair(rng)
    batch = sample_inputs(7, s.p, s.k, rng)

    gw, ga = minibatch_grad(batch, s, t)
    per = [sample_grad(z, s, t) for z in batch]
    assert np.allclose(gw, np.mean([g[0] for g in per], axis=0))
    assert np.allclose(ga, np.mean([g[1] for g in per], axis=0))


def test_minibatch_of_one_is_sample_grad():
    rng = RngStream(2)
    s, t = random_pair(rng)
    z = sample_input(s.p, s.k, rng)

    for got, want in zip(minibatch_grad(z[None], s, t), sample_grad(z, s, t)):
        assert np.array_equal(got, want)


def test_empty_batch():
    s, t = random_pair(RngStream(3))
    with pytest.raises(EmptyBatchError):
        minibatch_grad([], s, t)


def test_dataset_round_trip(tmp_path):
    d = sample_dataset(25, 5, 3, RngStream(4, 2))
    path = str(tmp_path / "data.bin")
    d.save(path)
    loaded = Dataset.load(path)

    assert np.array_equal(loaded.samples, d.samples)
    assert (loaded.n, loaded.p, loaded.k, loaded.seed) == (25, 5, 3, 4)
    with open(path, 'rb') as f:
        assert f.readline() == b"CNNLAB-DATASET v1 n=25 p=5 k=3 seed=4\n"


def test_dataset_load_errors(tmp_path):
    with pytest.raises(LabIOError):
        Dataset.load(str(tmp_path / "missing.bin"))

    d = sample_dataset(4, 2, 2, RngStream(5))
    path = str(tmp_path / "short.bin")
    d.save(path)
    with open(path, 'rb') as f:
        data = f.read()
    with open(path, 'wb') as f:
        f.write(data[:-8])
    with pytest.raises(LabIOError):
        Dataset.load(path)


def test_dataset_concat():
    d = sample_dataset(3, 2, 2, RngStream(6))
    both = d.concat(sample_dataset(2, 2, 2, RngStream(7)))

    assert both.n == 5
    with pytest.raises(DimensionMismatchError):
        d.concat(sample_dataset(2, 3, 2, RngStream(7)))


def test_overparam_with_zero_b_is_single_filter_loss():
    rng = RngStream(8)
    s, t = random_pair(rng)
    d = sample_dataset(50, s.p, s.k, rng)
    two = OverparamStudent(s.w, random_unit_vector(s.p, rng), s.a,
                           np.zeros(s.k))

    single = np.mean(0.5 * (forward(d.samples, s.w, s.a) -
                            forward(d.samples, t.w_star, t.a_star)) ** 2)
    assert overparam_loss(d, two, t) == pytest.approx(single, rel=1e-12)
    assert overparam_loss_at(d, two.w, two.v, two.a, two.b, t) == \
        overparam_loss(d, two, t)


def test_overparam_grad_finite_differences():
    for s, t, d in overparam_fd_points(5, RngStream(9)):
        assert finite_diff_check(LOSS_OVERPARAM, s, 1e-5, t, d) <= 1e-6


def test_overparam_grad_shapes():
    rng = RngStream(10)
    s, t = random_pair(rng)
    d = sample_dataset(10, s.p, s.k, rng)
    two = OverparamStudent(s.w, s.w, s.a, s.a)

    shapes = [g.shape for g in overparam_grad(d, two, t)]
    assert shapes == [(s.p,), (s.p,), (s.k,), (s.k,)]


def test_factored_grad_batch_matches_single():
    rng = RngStream(11)
    s, t = random_pair(rng)
    zs = sample_inputs(6, s.p, s.k, rng)

    batch = batch_factored_grad_w(zs, s, t)
    assert batch.shape == (6, s.p)
    for i, z in enumerate(zs):
        assert np.allclose(batch[i], factored_grad_w(z, s, t))


def test_kink_margin():
    z = np.array([[1.0, -3.0], [0.0, 0.0]])

    assert kink_margin(z, np.array([1.0, 0.0])) == 1.0
    assert kink_margin(z, np.array([1.0, 0.0]),
                       np.array([0.0, 1.0])) == 0.0
