import numpy as np
import pytest
from scipy.linalg import null_space

import analysis
from errors import DomainError
from param_types import TeacherParams, StudentParams
from sphere import RngStream, random_unit_vector, angle
from population import (PI, g_phi, population_loss, grad_a, manifold_grad_w,
                        spurious_optimum)
from analysis import (McEstimate, mc_expected_gphi, mc_expected_phi,
                      mc_symmetry_term, tangent_residual_norm,
                      gamma_ratio_limit, sin_power_integral, RegionSpec,
                      in_region, mc_perturbed_grads, mc_smoothed_loss,
                      dissipativity_a, dissipativity_w, small_noise_bounds,
                      sample_angle_bracket, perturbed_angles,
                      central_difference, finite_diff_check,
                      minibatch_standard_error, compare_factored_grad,
                      sample_region_a, sample_region_k, LOSS_POPULATION_A,
                      LOSS_POPULATION_W)
from verifier import population_fd_points, ratio_zero_teacher
from trials import build_teacher

BOUND_DIMS = (4, 6, 10)


def orthogonal_direction(w_star, rng):
    u = random_unit_vector(w_star.shape[0], rng)
    u = u - np.dot(u, w_star) * w_star
    return u / np.linalg.norm(u)


def test_estimate_from_samples():
    values = RngStream(0).generator.standard_normal(1000)
    est = McEstimate.from_samples(values)

    assert est.mean == pytest.approx(np.mean(values))
    assert est.std_error == pytest.approx(np.std(values, ddof=1) /
                                          np.sqrt(1000))
    assert est.n_samples == 1000


def test_chunked_accumulator_matches_single_pass():
    values = RngStream(1).generator.standard_normal((5000, 3)) + 2.0
    acc = analysis._Accumulator()
    for chunk in np.split(values, [700, 2000, 4999]):
        acc.add(chunk)
    est = acc.estimate()

    assert np.allclose(est.mean, values.mean(axis=0), rtol=1e-12)
    assert np.allclose(est.std_error,
                       values.std(axis=0, ddof=1) / np.sqrt(5000), rtol=1e-9)


def test_zero_radius_is_exact():
    rng = RngStream(4)
    w_star, w = random_unit_vector(6, rng), random_unit_vector(6, rng)
    est = mc_expected_gphi(w, w_star, 0.0, 10, rng)

    assert est.mean == g_phi(angle(w, w_star))
    assert est.std_error == 0.0
    e1 = np.array([1.0, 0.0, 0.0])
    assert mc_expected_phi(e1, e1, 0.0, 10, rng).mean == 0.0


def test_negative_radius_rejected():
    w = random_unit_vector(6, RngStream(5))
    with pytest.raises(DomainError):
        mc_expected_gphi(w, w, -1.0, 10, RngStream(5))
    with pytest.raises(DomainError):
        mc_expected_phi(w, w, 1.0, 0, RngStream(5))


def test_gamma_ratio_limit():
    assert gamma_ratio_limit(6) == pytest.approx(1.0865, abs=1e-4)
    assert gamma_ratio_limit(2) == pytest.approx(4 / PI)
    with pytest.raises(DomainError):
        gamma_ratio_limit(1)


def test_sin_power_integral():
    assert sin_power_integral(0) == pytest.approx(PI)
    assert sin_power_integral(1) == pytest.approx(2.0)
    assert sin_power_integral(2) == pytest.approx(PI / 2)
    assert sin_power_integral(3) == pytest.approx(4 / 3)


@pytest.mark.parametrize("p", BOUND_DIMS)
def test_large_noise_limit(p):
    rng = RngStream(6)
    w_star, w = random_unit_vector(p, rng), random_unit_vector(p, rng)
    est = mc_expected_gphi(w, w_star, 1e4, 200000, rng)
    assert abs(est.mean - gamma_ratio_limit(p)) <= 3 * est.std_error + 0.01

    est = mc_expected_phi(w, w_star, 1e4, 200000, rng)
    assert abs(est.mean - PI / 2) <= 3 * est.std_error + 0.05


@pytest.mark.parametrize("p", BOUND_DIMS)
def test_noise_scale_bounds(p):
    rng = RngStream(30 + p)
    w_star = random_unit_vector(p, rng)
    ortho = orthogonal_direction(w_star, rng)

    for w in (w_star, -w_star, ortho):
        g = mc_expected_gphi(w, w_star, float(p * p), 200000, rng)
        assert g.mean - 3 * g.std_error > 1
        assert g.mean + 3 * g.std_error <= PI + 0.01
        phi = mc_expected_phi(w, w_star, float(p * p), 200000, rng)
        assert phi.mean - 3 * phi.std_error <= 3 * PI / 4


def test_symmetry_term_vanishes():
    rng = RngStream(7)
    w_star, w = random_unit_vector(6, rng), random_unit_vector(6, rng)
    est = mc_symmetry_term(w, w_star, 5.0, 200000, rng)

    assert abs(est.mean) <= 4 * est.std_error


def test_tangent_residual_norm():
    rng = RngStream(8)
    w_star, w = random_unit_vector(6, rng), random_unit_vector(6, rng)

    assert tangent_residual_norm(w, w_star) == pytest.approx(
        np.sqrt(1 - np.dot(w, w_star) ** 2))
    assert tangent_residual_norm(-w_star, w_star) == pytest.approx(0.0,
                                                                   abs=1e-15)


def test_small_noise_bounds():
    u1, u2, u3 = small_noise_bounds(PI / 3, 0.1)

    assert u1 == pytest.approx(PI / 3 + np.arcsin(0.1))
    assert u3 == pytest.approx(g_phi(u1))
    assert u2 == pytest.approx((PI - u3) ** 2)
    assert small_noise_bounds(0.4, 0.0)[0] == pytest.approx(0.4)
    with pytest.raises(DomainError):
        small_noise_bounds(2.0, 0.1)
    with pytest.raises(DomainError):
        small_noise_bounds(0.5, 1.0)


@pytest.mark.parametrize("p", BOUND_DIMS)
def test_angle_bracket_contains_every_draw(p):
    rng = RngStream(9)
    w_star = random_unit_vector(p, rng)
    u = orthogonal_direction(w_star, rng)
    phi = PI / 3
    w = np.cos(phi) * w_star + np.sin(phi) * u

    lower, upper = sample_angle_bracket(phi, 0.1)
    phis = perturbed_angles(w, w_star, 0.1, 20000, rng)
    assert np.all((phis >= lower) & (phis <= upper))

    assert sample_angle_bracket(0.05, 0.2)[0] == 0.0


def test_region_spec_validation():
    with pytest.raises(DomainError):
        RegionSpec('Q', (1.0,))
    with pytest.raises(DomainError):
        RegionSpec('A', (1.0,))
    with pytest.raises(DomainError):
        RegionSpec('K', (0.1, 0.5, 0.2))


def test_region_membership():
    t = build_teacher(6, 10, 0.0, RngStream(10))
    sq = np.dot(t.a_star, t.a_star)

    assert in_region(t.as_student(), t, RegionSpec('K', (0.5, sq / 2, sq)))
    assert not in_region(spurious_optimum(t), t,
                         RegionSpec('K', (0.5, sq / 2, sq)))
    assert in_region(t.as_student(), t, RegionSpec('R', (sq / 2, sq, 1.0,
                                                         0.1)))
    assert in_region(StudentParams(t.w_star, np.zeros(10)), t,
                     RegionSpec('A', (0.05, 1.0)))


def test_region_samplers_return_members():
    t = ratio_zero_teacher(6, 25, RngStream(11))
    spec_a = RegionSpec('A', (0.05, 1.0))
    spec_k = RegionSpec('K', (0.1, 0.05, 0.5))

    for s in sample_region_a(t, 5, RngStream(12)):
        assert in_region(s, t, spec_a)
    for s in sample_region_k(t, 5, RngStream(13)):
        assert in_region(s, t, spec_k)
        assert np.sum((s.w - t.w_star) ** 2) >= 0.5


def test_zero_noise_expectations_are_exact():
    rng = RngStream(14)
    t = TeacherParams(random_unit_vector(6, rng),
                      rng.generator.standard_normal(8))
    s = StudentParams(random_unit_vector(6, rng),
                      rng.generator.standard_normal(8))

    gw, ga = mc_perturbed_grads(s, t, 0.0, 0.0, 5, rng)
    assert np.array_equal(ga.mean, grad_a(s, t))
    assert mc_smoothed_loss(s, t, 0.0, 0.0, 5, rng).mean == \
        population_loss(s, t)
    assert dissipativity_a(s, t, 0.0, 0.0, 5, rng).mean == pytest.approx(
        -np.dot(grad_a(s, t), t.a_star - s.a))
    assert dissipativity_w(s, t, 0.0, 0.0, 5, rng).mean == pytest.approx(
        -np.dot(manifold_grad_w(s, t), t.w_star - s.w))


def test_smoothed_loss_tends_to_loss_for_small_noise():
    rng = RngStream(15)
    t = build_teacher(6, 10, 1.0, rng)
    s = StudentParams(random_unit_vector(6, rng), np.full(10, 0.5))
    est = mc_smoothed_loss(s, t, 1e-4, 1e-4, 2000, rng)

    assert est.mean == pytest.approx(population_loss(s, t), rel=1e-3)


def test_central_difference_on_quadratic():
    grad = central_difference(lambda x: np.dot(x, x), np.array([1.0, -2.0]),
                              1e-3)

    assert np.allclose(grad, [2.0, -4.0])


def test_population_finite_differences():
    rng = RngStream(16)
    for s, t in population_fd_points(10, rng):
        assert finite_diff_check(LOSS_POPULATION_A, s, 1e-5, t) <= 1e-6
        assert finite_diff_check(LOSS_POPULATION_W, s, 1e-6, t) <= 1e-5
        assert finite_diff_check(LOSS_POPULATION_W, s, 1e-6, t, rng=rng,
                                 random_directions=5) <= 1e-5


def test_random_tangent_directions():
    rng = RngStream(40)
    s, t = population_fd_points(1, rng)[0]
    g = manifold_grad_w(s, t)

    units = analysis._tangent_directions(s, t, None, rng, 6)
    assert len(units) == 7
    assert np.allclose(units[0], g / np.linalg.norm(g))
    for u in units:
        assert abs(np.linalg.norm(u) - 1) <= 1e-12
        assert abs(np.dot(u, s.w)) <= 1e-12
        assert abs(np.dot(u, g)) >= 0.1 * np.linalg.norm(g) - 1e-12
    with pytest.raises(DomainError):
        finite_diff_check(LOSS_POPULATION_W, s, 1e-6, t, random_directions=2)


def test_random_directions_catch_a_wrong_tangent_component(monkeypatch):
    s, t = population_fd_points(1, RngStream(41))[0]

    def skewed(s, t):
        g = manifold_grad_w(s, t)
        v = null_space(np.vstack([s.w, g]))[:, 0]
        return g + np.linalg.norm(g) * v

    monkeypatch.setattr(analysis, "manifold_grad_w", skewed)
    err = finite_diff_check(LOSS_POPULATION_W, s, 1e-6, t, rng=RngStream(42),
                            random_directions=5)
    assert err > 1e-2


def test_finite_diff_check_errors():
    s, t = population_fd_points(1, RngStream(17))[0]
    with pytest.raises(DomainError):
        finite_diff_check(LOSS_POPULATION_A, s, 0.0, t)
    with pytest.raises(DomainError):
        finite_diff_check("hessian", s, 1e-5, t)
    with pytest.raises(DomainError):
        finite_diff_check("overparam", s, 1e-5, t)


def test_minibatch_error_shrinks_with_batch_size():
    rng = RngStream(18)
    t = build_teacher(6, 10, 1.0, rng)
    s = StudentParams(random_unit_vector(6, rng), np.full(10, 0.5))

    small = minibatch_standard_error(s, t, 100, 400, rng)
    large = minibatch_standard_error(s, t, 10000, 400, rng)
    assert 0.08 <= large / small <= 0.125


def test_exact_sample_gradient_is_unbiased():
    rng = RngStream(19)
    t = build_teacher(6, 10, 1.0, rng)
    s = StudentParams(random_unit_vector(6, rng), np.full(10, 0.5))
    out = compare_factored_grad(s, t, 200000, rng)

    z = np.abs(out['exact'].mean - out['population']) / out['exact'].std_error
    assert np.max(z) <= 5
    assert out['factored'].mean.shape == (6,)


@pytest.mark.parametrize("p", BOUND_DIMS)
def test_dissipativity_signs(p):
    rng = RngStream(50 + p)
    t = ratio_zero_teacher(p, 25, rng)

    for s in sample_region_a(t, 5, rng):
        est = dissipativity_a(s, t, float(p * p), 1.0, 20000, rng)
        assert est.mean - 3 * est.std_error > 0
    for s in sample_region_k(t, 5, rng):
        est = dissipativity_w(s, t, 0.01, 0.1, 20000, rng)
        assert est.mean - 3 * est.std_error > 0
