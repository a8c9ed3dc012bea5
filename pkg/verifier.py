"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from errors import LabError
from param_types import TeacherParams, StudentParams, OverparamStudent
from sphere import RngStream, random_unit_vector, project_to_sphere
from population import (PI, population_loss, grad_a, grad_w, manifold_grad_w,
                        spurious_optimum)
from empirical import sample_dataset, kink_margin, overparam_grad
from analysis import (mc_expected_gphi, mc_expected_phi, gamma_ratio_limit,
                      sin_power_integral, dissipativity_a, dissipativity_w,
                      small_noise_bounds, sample_angle_bracket,
                      perturbed_angles, finite_diff_check, mc_symmetry_term,
                      tangent_residual_norm, mc_empirical_loss, mc_sample_grad,
                      sample_region_a, sample_region_k, mc_perturbed_grads,
                      mc_smoothed_loss, compare_factored_grad,
                      minibatch_standard_error, LOSS_POPULATION_A,
                      LOSS_POPULATION_W, LOSS_OVERPARAM)
import numpy as np


# Claims needing extra independent streams derive them from
# SUBSTREAM_BASE * (claim stream id + 1) + j.
SUBSTREAM_BASE = 1000


class Claim:
    """
    Outcome of one verification claim.
    """

    def __init__(self, claim_id: str, estimate: float, std_error: float,
                 tolerance: float, passed: bool, detail: str = ""):
        self.claim_id = claim_id
        self.estimate = float(estimate)
        self.std_error = float(std_error)
        self.tolerance = float(tolerance)
        self.passed = bool(passed)
        self.detail = detail

    def get_claim_dict(self):
        return {
            'claim_id': self.claim_id,
            'estimate': self.estimate,
            'std_error': self.std_error,
            'tolerance': self.tolerance,
            'pass': self.passed,
            'detail': self.detail}


def random_teacher(p: int, k: int, rng: RngStream):
    return TeacherParams(random_unit_vector(p, rng),
                         rng.generator.standard_normal(k))


def ratio_zero_teacher(p: int, k: int, rng: RngStream):
    half = k // 2
    return TeacherParams(random_unit_vector(p, rng),
                         np.concatenate([np.full(half, -0.1),
                                         np.full(k - half, 0.1)]))


def population_fd_points(count: int, rng: RngStream, p=6, k=5,
                         min_grad=1e-2):
    """
    (student, teacher) pairs for population finite differences: w uniform on
    the sphere, a uniform in [-2, 2]^k. Points whose a-gradient or manifold
    w-gradient has a component below min_grad are redrawn, since relative
    error is ill-conditioned there.
    """

    points = []
    while len(points) < count:
        t = random_teacher(p, k, rng)
        s = StudentParams(random_unit_vector(p, rng),
                          rng.generator.uniform(-2, 2, k))
        if (np.min(np.abs(grad_a(s, t))) >= min_grad and
                np.linalg.norm(manifold_grad_w(s, t)) >= min_grad):
            points.append((s, t))

    return points


def overparam_fd_points(count: int, rng: RngStream, n=10, p=6, k=4,
                        margin=1e-3, min_grad=1e-4):
    """
    (student, teacher, dataset) triples at least margin away from every
    ReLU kink of both filters, with no gradient component in (0, min_grad).
    """

    points = []
    while len(points) < count:
        t = random_teacher(p, k, rng)
        d = sample_dataset(n, p, k, rng)
        s = OverparamStudent(random_unit_vector(p, rng),
                             random_unit_vector(p, rng),
                             rng.generator.uniform(-1, 1, k),
                             rng.generator.uniform(-1, 1, k))
        if kink_margin(d.samples, s.w, s.v) < margin:
            continue
        g = np.abs(np.concatenate(overparam_grad(d, s, t)))
        if np.any((g > 0) & (g < min_grad)):
            continue
        points.append((s, t, d))

    return points


class Verifier:
    """
    Runs the claim suite with fixed seeds. Each claim draws from its own
    stream, so claims are independent of the order they run in.
    """

    CLAIMS = [
        'spurious_stationarity',
        'fd_population_a',
        'fd_population_w',
        'fd_overparam',
        'loss_bridge',
        'unbiased_sample_grad',
        'gphi_lower_bound',
        'gphi_upper_bound',
        'phi_upper_bound',
        'large_noise_gphi',
        'large_noise_phi',
        'gamma_ratio_monotone',
        'sin_power_integral',
        'small_noise_identity',
        'small_noise_bracket',
        'symmetry_zero',
        'tangent_residual',
        'dissipativity_a',
        'dissipativity_w',
        'perturbed_grads_consistency',
        'gphi_cross_module',
        'smoothed_loss_limit',
        'factored_grad_report',
        'minibatch_se_scaling']

    # Filter dimensions for the noise-scale bounds, each at rho_w = p^2.
    BOUND_DIMS = (4, 6, 10)

    def __init__(self, logger, seed=0, n_samples=1000000):
        self.logger = logger
        self.seed = int(seed)
        self.n_samples = int(n_samples)

    def stream(self, claim_id):
        return RngStream(self.seed, self.CLAIMS.index(claim_id))

    def run(self, only=None):
        """
        Evaluate claims (all, or those named in only) in suite order.

        Returns:
            list of Claim.
        """

        claims = []
        for claim_id in self.CLAIMS:
            if only is not None and claim_id not in only:
                continue

            try:
                claim = getattr(self, 'check_' + claim_id)(
                    self.stream(claim_id))
            except LabError as e:
                claim = Claim(claim_id, float('nan'), 0.0, float('nan'),
                              False, "raised " + type(e).__name__ + ": " +
                              str(e))

            self.logger.info(
                ("PASS " if claim.passed else "FAIL ") + claim_id +
                ": estimate=" + repr(claim.estimate) + " tolerance=" +
                repr(claim.tolerance) +
                (" (" + claim.detail + ")" if claim.detail else ""))
            claims.append(claim)

        return claims

    def check_spurious_stationarity(self, rng):
        worst = 0.0
        for i in range(20):
            t = random_teacher(6, (10, 25, 100)[i % 3], rng)
            s = spurious_optimum(t)
            worst = max(worst, np.linalg.norm(grad_a(s, t)),
                        np.linalg.norm(manifold_grad_w(s, t)))

        return Claim('spurious_stationarity', worst, 0.0, 1e-10,
                     worst <= 1e-10, "max gradient norm, 20 teachers")

    def check_fd_population_a(self, rng):
        worst = max(finite_diff_check(LOSS_POPULATION_A, s, 1e-5, t)
                    for s, t in population_fd_points(100, rng))

        return Claim('fd_population_a', worst, 0.0, 1e-6, worst <= 1e-6,
                     "max relative error, 100 points")

    def check_fd_population_w(self, rng):
        worst = max(finite_diff_check(LOSS_POPULATION_W, s, 1e-6, t,
                                      rng=rng, random_directions=5)
                    for s, t in population_fd_points(100, rng))

        return Claim('fd_population_w', worst, 0.0, 1e-5, worst <= 1e-5,
                     "max relative error over the gradient and 5 random "
                     "tangent directions, 100 points")

    def check_fd_overparam(self, rng):
        worst = max(finite_diff_check(LOSS_OVERPARAM, s, 1e-5, t, d)
                    for s, t, d in overparam_fd_points(100, rng))

        return Claim('fd_overparam', worst, 0.0, 1e-6, worst <= 1e-6,
                     "max relative error at kink-safe points")

    def check_loss_bridge(self, rng):
        worst = 0.0
        for _ in range(10):
            t = random_teacher(6, 10, rng)
            s = StudentParams(random_unit_vector(6, rng),
                              rng.generator.standard_normal(10))
            est = mc_empirical_loss(s, t, self.n_samples, rng)
            worst = max(worst, abs(est.mean - population_loss(s, t)) /
                        est.std_error)

        return Claim('loss_bridge', worst, 0.0, 4.0, worst <= 4.0,
                     "max |MC - closed form| in standard errors")

    def check_unbiased_sample_grad(self, rng):
        worst = 0.0
        for _ in range(5):
            t = random_teacher(6, 10, rng)
            s = StudentParams(random_unit_vector(6, rng),
                              rng.generator.standard_normal(10))
            est_w, est_a = mc_sample_grad(s, t, self.n_samples, rng)
            for est, exact in ((est_w, grad_w(s, t)), (est_a, grad_a(s, t))):
                z = np.abs(est.mean - exact) / np.maximum(est.std_error,
                                                          1e-300)
                worst = max(worst, float(np.max(z)))

        return Claim('unbiased_sample_grad', worst, 0.0, 4.0, worst <= 4.0,
                     "max per-coordinate z-score, 5 states")

    def _bound_points(self, rng, p):
        w_star = random_unit_vector(p, rng)
        ortho = random_unit_vector(p, rng)
        ortho = project_to_sphere(ortho - np.dot(ortho, w_star) * w_star)

        return w_star, (w_star, -w_star, ortho)

    def _bound_estimates(self, rng, fn):
        """
        fn at w in {w*, -w*, orthogonal to w*} with rho_w = p^2, for every p
        in BOUND_DIMS.
        """

        ests = []
        for p in self.BOUND_DIMS:
            w_star, ws = self._bound_points(rng, p)
            ests.extend(fn(w, w_star, float(p * p), self.n_samples, rng)
                        for w in ws)

        return ests

    def check_gphi_lower_bound(self, rng):
        ests = self._bound_estimates(rng, mc_expected_gphi)
        low = min(e.mean - 3 * e.std_error for e in ests)

        return Claim('gphi_lower_bound', low, max(e.std_error for e in ests),
                     1.0, low > 1.0,
                     "min(mean - 3 SE), p in " + str(self.BOUND_DIMS) +
                     ", rho_w = p^2")

    def check_gphi_upper_bound(self, rng):
        ests = self._bound_estimates(rng, mc_expected_gphi)
        high = max(e.mean + 3 * e.std_error for e in ests)

        return Claim('gphi_upper_bound', high, max(e.std_error for e in ests),
                     PI + 0.01, high <= PI + 0.01,
                     "max(mean + 3 SE), p in " + str(self.BOUND_DIMS) +
                     ", rho_w = p^2")

    def check_phi_upper_bound(self, rng):
        ests = self._bound_estimates(rng, mc_expected_phi)
        low = max(e.mean - 3 * e.std_error for e in ests)

        return Claim('phi_upper_bound', low, max(e.std_error for e in ests),
                     3 * PI / 4, low <= 3 * PI / 4,
                     "max(mean - 3 SE), p in " + str(self.BOUND_DIMS) +
                     ", rho_w = p^2")

    def check_large_noise_gphi(self, rng):
        worst, se = float('-inf'), 0.0
        for p in self.BOUND_DIMS:
            w_star = random_unit_vector(p, rng)
            est = mc_expected_gphi(random_unit_vector(p, rng), w_star, 1e4,
                                   self.n_samples, rng)
            gap = abs(est.mean - gamma_ratio_limit(p)) - 3 * est.std_error
            if gap >= worst:
                worst, se = gap, est.std_error

        return Claim('large_noise_gphi', worst, se, 0.01, worst <= 0.01,
                     "max(|mean - limit| - 3 SE), p in " +
                     str(self.BOUND_DIMS))

    def check_large_noise_phi(self, rng):
        worst, se = float('-inf'), 0.0
        for p in self.BOUND_DIMS:
            w_star = random_unit_vector(p, rng)
            est = mc_expected_phi(random_unit_vector(p, rng), w_star, 1e4,
                                  self.n_samples, rng)
            gap = abs(est.mean - PI / 2) - 3 * est.std_error
            if gap >= worst:
                worst, se = gap, est.std_error

        return Claim('large_noise_phi', worst, se, 0.05, worst <= 0.05,
                     "max(|mean - pi/2| - 3 SE), p in " +
                     str(self.BOUND_DIMS))

    def check_gamma_ratio_monotone(self, rng):
        values = np.array([gamma_ratio_limit(p) for p in range(2, 65)])
        steps = np.diff(values)
        ok = bool(np.all(steps < 0) and np.all(values > 1))

        return Claim('gamma_ratio_monotone', float(np.max(steps)), 0.0, 0.0,
                     ok, "largest successive difference on p = 2..64")

    def check_sin_power_integral(self, rng):
        expected = {0: PI, 1: 2.0, 2: PI / 2, 3: 4.0 / 3.0}
        err = max(abs(sin_power_integral(n) - v) for n, v in expected.items())

        return Claim('sin_power_integral', err, 0.0, 1e-12, err <= 1e-12,
                     "max error against I_0..I_3")

    def check_small_noise_identity(self, rng):
        err = 0.0
        for phi in np.linspace(0, PI / 2, 25):
            for rho in np.linspace(0, 0.95, 20):
                err = max(err, abs(small_noise_bounds(phi, rho)[0] -
                                   (phi + np.arcsin(rho))))

        return Claim('small_noise_identity', err, 0.0, 1e-12, err <= 1e-12,
                     "U1 against phi + arcsin(rho) on a grid")

    def check_small_noise_bracket(self, rng):
        phi, rho = PI / 3, 0.1
        lower, upper = sample_angle_bracket(phi, rho)
        violations = 0
        for p in self.BOUND_DIMS:
            w_star = random_unit_vector(p, rng)
            u = random_unit_vector(p, rng)
            u = project_to_sphere(u - np.dot(u, w_star) * w_star)
            w = project_to_sphere(np.cos(phi) * w_star + np.sin(phi) * u)

            phis = perturbed_angles(w, w_star, rho, 100000, rng)
            violations += int(np.sum((phis < lower) | (phis > upper)))

        return Claim('small_noise_bracket', violations, 0.0, 0.0,
                     violations == 0,
                     "draws outside [phi -+ arcsin(rho)], p in " +
                     str(self.BOUND_DIMS))

    def check_symmetry_zero(self, rng):
        worst = 0.0
        for _ in range(10):
            w, w_star = random_unit_vector(6, rng), random_unit_vector(6, rng)
            for rho in (0.5, 5.0, 50.0):
                est = mc_symmetry_term(w, w_star, rho, self.n_samples // 10,
                                       rng)
                worst = max(worst, abs(est.mean) / est.std_error)

        return Claim('symmetry_zero', worst, 0.0, 4.0, worst <= 4.0,
                     "max |mean| in standard errors, 30 cases")

    def check_tangent_residual(self, rng):
        err = 0.0
        for _ in range(20):
            w, w_star = random_unit_vector(6, rng), random_unit_vector(6, rng)
            err = max(err, abs(tangent_residual_norm(w, w_star) -
                               np.sqrt(max(1 - np.dot(w, w_star) ** 2, 0))))
        err = max(err, tangent_residual_norm(-w_star, w_star))

        return Claim('tangent_residual', err, 0.0, 1e-12, err <= 1e-12,
                     "norm identity, including w = -w*")

    def check_dissipativity_a(self, rng):
        low = float('inf')
        for p in self.BOUND_DIMS:
            t = ratio_zero_teacher(p, 25, rng)
            low = min(low, min(
                e.mean - 3 * e.std_error for e in
                (dissipativity_a(s, t, float(p * p), 1.0, 100000, rng)
                 for s in sample_region_a(t, 20, rng))))

        return Claim('dissipativity_a', low, 0.0, 0.0, low > 0,
                     "min(mean - 3 SE) over 20 members of A, rho_w = p^2, "
                     "p in " + str(self.BOUND_DIMS))

    def check_dissipativity_w(self, rng):
        low = float('inf')
        for p in self.BOUND_DIMS:
            t = ratio_zero_teacher(p, 25, rng)
            low = min(low, min(
                e.mean - 3 * e.std_error for e in
                (dissipativity_w(s, t, 0.01, 0.1, 100000, rng)
                 for s in sample_region_k(t, 20, rng))))

        return Claim('dissipativity_w', low, 0.0, 0.0, low > 0,
                     "min(mean - 3 SE) over 20 members of K, p in " +
                     str(self.BOUND_DIMS))

    @staticmethod
    def substream(rng, j: int):
        return rng.derive(SUBSTREAM_BASE * (rng.stream_id + 1) + j)

    def check_perturbed_grads_consistency(self, rng):
        t = random_teacher(6, 25, rng)
        s = StudentParams(random_unit_vector(6, rng),
                          rng.generator.standard_normal(25))

        first = self.substream(rng, 0)
        est = mc_perturbed_grads(s, t, 36.0, 1.0, self.n_samples, first)
        again = mc_perturbed_grads(s, t, 36.0, 1.0, self.n_samples,
                                   first.replay())
        other = mc_perturbed_grads(s, t, 36.0, 1.0, self.n_samples,
                                   self.substream(rng, 1))

        replayed = all(np.array_equal(x.mean, y.mean)
                       for x, y in zip(est, again))
        worst = 0.0
        for x, y in zip(est, other):
            z = np.abs(x.mean - y.mean) / np.sqrt(x.std_error ** 2 +
                                                  y.std_error ** 2)
            worst = max(worst, float(np.max(z)))

        return Claim('perturbed_grads_consistency', worst, 0.0, 4.0,
                     replayed and worst <= 4.0,
                     "max z between two streams, p=6, k=25, rho=(36, 1); "
                     "replay " + ("identical" if replayed else "differs"))

    def check_gphi_cross_module(self, rng):
        t = random_teacher(6, 25, rng)
        s = StudentParams(random_unit_vector(6, rng), np.zeros(25))

        # With a = 0 and rho_a = 0, coordinate j of E grad_a is
        # -(1'a* + (E g - 1) a*_j) / 2pi.
        j = int(np.argmax(np.abs(t.a_star)))
        est_a = mc_perturbed_grads(s, t, 36.0, 0.0, self.n_samples,
                                   self.substream(rng, 0))[1]
        from_grads = 1 - (2 * PI * est_a.mean[j] +
                          np.sum(t.a_star)) / t.a_star[j]
        se_grads = 2 * PI * est_a.std_error[j] / abs(t.a_star[j])

        direct = mc_expected_gphi(s.w, t.w_star, 36.0, self.n_samples,
                                  self.substream(rng, 1))
        se = np.sqrt(se_grads ** 2 + direct.std_error ** 2)
        z = abs(from_grads - direct.mean) / se

        return Claim('gphi_cross_module', z, se, 4.0, z <= 4.0,
                     "E g(phi_xi) from smoothed grad_a " + repr(from_grads) +
                     " against direct " + repr(direct.mean))

    def check_smoothed_loss_limit(self, rng):
        worst = 0.0
        for _ in range(5):
            t = random_teacher(6, 10, rng)
            s = StudentParams(random_unit_vector(6, rng),
                              rng.generator.standard_normal(10))
            exact = mc_smoothed_loss(s, t, 0.0, 0.0, 1, rng)
            est = mc_smoothed_loss(s, t, 1e-4, 1e-4, 2000, rng)
            loss = population_loss(s, t)
            if exact.mean != loss:
                worst = float('inf')
            worst = max(worst, abs(est.mean - loss) / loss)

        return Claim('smoothed_loss_limit', worst, 0.0, 1e-3, worst <= 1e-3,
                     "relative gap of E L(w + xi, a + eps) to L at "
                     "rho = 1e-4, 5 states")

    def check_factored_grad_report(self, rng):
        t = random_teacher(6, 10, rng)
        s = StudentParams(random_unit_vector(6, rng),
                          rng.generator.standard_normal(10))
        out = compare_factored_grad(s, t, self.n_samples, rng)

        exact = out['exact']
        z = float(np.max(np.abs(exact.mean - out['population']) /
                         np.maximum(exact.std_error, 1e-300)))
        gap = float(np.max(np.abs(out['factored'].mean - exact.mean)))

        return Claim('factored_grad_report', z, 0.0, 4.0, z <= 4.0,
                     "exact estimator max z " + repr(round(z, 3)) +
                     "; factored mean differs from exact by up to " +
                     repr(gap))

    def check_minibatch_se_scaling(self, rng):
        t = random_teacher(6, 10, rng)
        s = StudentParams(random_unit_vector(6, rng),
                          rng.generator.standard_normal(10))
        small = minibatch_standard_error(s, t, 100, 400, rng)
        large = minibatch_standard_error(s, t, 10000, 400, rng)
        ratio = large / small

        return Claim('minibatch_se_scaling', ratio, 0.0, 0.125,
                     0.08 <= ratio <= 0.125, "SE(m=1e4) / SE(m=1e2)")
