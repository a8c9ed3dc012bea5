"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Monte-Carlo and closed-form checks of the smoothing and dissipativity
properties behind noise-annealed gradient descent: expectations over the
filter noise xi ~ unif(B_0(rho_w)), Gamma-function oracles, region
predicates, the small-noise angle bounds and finite-difference gradient
checks.
"""

from errors import DomainError
from param_types import TeacherParams, StudentParams
from sphere import (RngStream, sample_ball_batch, random_unit_vector,
                    project_to_sphere, tangent_project, angle, batch_angles)
from population import (PI, g_phi, population_loss, grad_a, grad_w,
                        manifold_grad_w, batch_loss, batch_grad_a,
                        batch_grad_w)
from empirical import (sample_inputs, forward, batch_sample_grads,
                       batch_factored_grad_w, minibatch_grad, overparam_loss_at,
                       overparam_grad)
from scipy.special import gammaln
from scipy.linalg import null_space
import numpy as np


# Draws per vectorised Monte-Carlo chunk.
CHUNK = 100000

# Denominator floor of the finite-difference relative error.
REL_FLOOR = 1e-8

# Smallest |cos| between a random tangent direction and the gradient.
MIN_ALIGNMENT = 0.1

LOSS_POPULATION_A = "population_a"
LOSS_POPULATION_W = "population_w"
LOSS_OVERPARAM = "overparam"
LOSS_IDS = (LOSS_POPULATION_A, LOSS_POPULATION_W, LOSS_OVERPARAM)


class McEstimate:
    """
    Monte-Carlo estimate: mean, standard error (sample std / sqrt(n)) and
    sample count. mean and std_error are floats or arrays of equal shape.
    """

    def __init__(self, mean, std_error, n_samples: int):
        self.mean = mean
        self.std_error = std_error
        self.n_samples = int(n_samples)

    def __repr__(self):
        return ("McEstimate(mean=" + repr(self.mean) + ", std_error=" +
                repr(self.std_error) + ", n_samples=" +
                str(self.n_samples) + ")")

    @classmethod
    def exact(cls, value, n: int):
        """
        A point-mass estimate: the value itself with zero error.
        """

        value = np.asarray(value, dtype=float)
        zero = np.zeros_like(value)
        if value.ndim == 0:
            return cls(float(value), 0.0, n)
        return cls(value, zero, n)

    @classmethod
    def from_samples(cls, values):
        acc = _Accumulator()
        acc.add(values)

        return acc.estimate()

    def get_estimate_dict(self):
        return {
            'mean': np.asarray(self.mean).tolist(),
            'std_error': np.asarray(self.std_error).tolist(),
            'n_samples': self.n_samples}


class _Accumulator:
    """
    Running mean and sum of squared deviations, merged chunk by chunk.
    """

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, values):
        values = np.asarray(values, dtype=float)
        m = values.shape[0]
        if m == 0:
            return
        mean = values.mean(axis=0)
        m2 = ((values - mean) ** 2).sum(axis=0)

        total = self.n + m
        delta = mean - self.mean
        self.mean = self.mean + delta * (m / total)
        self.m2 = self.m2 + m2 + delta ** 2 * (self.n * m / total)
        self.n = total

    def estimate(self):
        if self.n < 1:
            raise DomainError("Monte-Carlo estimate needs n >= 1.")
        if self.n == 1:
            se = np.zeros_like(np.asarray(self.mean, dtype=float))
        else:
            se = np.sqrt(self.m2 / (self.n - 1) / self.n)

        if np.ndim(self.mean) == 0:
            return McEstimate(float(self.mean), float(se), self.n)
        return McEstimate(self.mean, se, self.n)


def _chunks(n: int):
    if int(n) < 1:
        raise DomainError("Monte-Carlo sample count must be >= 1.")
    left = int(n)
    while left > 0:
        size = min(CHUNK, left)
        yield size
        left -= size


def _check_radius(*radii):
    for r in radii:
        if r < 0:
            raise DomainError("Noise radii must be nonnegative.")


def perturbed_angles(w, w_star, rho_w: float, n: int, rng: RngStream):
    """
    n draws of phi_xi = angle(w + xi, w*) with xi ~ unif(B_0(rho_w)).
    """

    w = np.asarray(w, dtype=float)
    _check_radius(rho_w)
    xi = sample_ball_batch(w.shape[0], rho_w, int(n), rng)

    return batch_angles(w + xi, w_star)


def _mc_over_angles(w, w_star, rho_w, n, rng, fn):
    _check_radius(rho_w)
    if rho_w == 0:
        return McEstimate.exact(fn(angle(w, w_star)), n)

    acc = _Accumulator()
    for size in _chunks(n):
        acc.add(fn(perturbed_angles(w, w_star, rho_w, size, rng)))

    return acc.estimate()


def mc_expected_gphi(w, w_star, rho_w: float, n: int, rng: RngStream):
    """
    Monte-Carlo estimate of E_xi g(angle(w + xi, w*)).

    rho_w = 0 gives g(angle(w, w*)) with zero standard error.
    """

    return _mc_over_angles(w, w_star, rho_w, n, rng, g_phi)


def mc_expected_phi(w, w_star, rho_w: float, n: int, rng: RngStream):
    """
    Monte-Carlo estimate of E_xi angle(w + xi, w*).
    """

    return _mc_over_angles(w, w_star, rho_w, n, rng, lambda phi: phi)


def mc_symmetry_term(w, w_star, rho_w: float, n: int, rng: RngStream):
    """
    Monte-Carlo estimate of E_xi (w* - (w'w*) w)' xi / ||w + xi||, which
    vanishes by the reflection symmetry of the ball about span(w).
    """

    w = np.asarray(w, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    _check_radius(rho_w)
    if rho_w == 0:
        return McEstimate.exact(0.0, n)

    direction = w_star - np.dot(w, w_star) * w
    acc = _Accumulator()
    for size in _chunks(n):
        xi = sample_ball_batch(w.shape[0], rho_w, size, rng)
        acc.add((xi @ direction) / np.linalg.norm(w + xi, axis=1))

    return acc.estimate()


def tangent_residual_norm(w, w_star):
    """
    ||(I - ww')(w* - w)||, equal to sqrt(1 - (w'w*)^2) for unit vectors.
    """

    return float(np.linalg.norm(tangent_project(w, np.asarray(w_star) -
                                                np.asarray(w))))


def gamma_ratio_limit(p: int):
    """
    Large-noise limit of E_xi g(phi_xi) in R^p:
        Gamma(p/2) Gamma((p+2)/2) / Gamma((p+1)/2)^2,
    evaluated through log-Gamma.
    """

    if int(p) < 2:
        raise DomainError("gamma_ratio_limit needs p >= 2, got " +
                          str(p) + ".")
    p = float(p)

    return float(np.exp(gammaln(p / 2) + gammaln((p + 2) / 2) -
                        2 * gammaln((p + 1) / 2)))


def sin_power_integral(n: int):
    """
    I_n = int_0^pi sin^n(x) dx = sqrt(pi) Gamma((1+n)/2) / Gamma(1+n/2).
    """

    if n < 0:
        raise DomainError("sin_power_integral needs n >= 0, got " +
                          str(n) + ".")

    return float(np.sqrt(PI) * np.exp(gammaln((1 + n) / 2) -
                                      gammaln(1 + n / 2)))


class RegionSpec:
    """
    Parameter-space region used in the dissipativity checks.

    kind "A":      params (C2, C3)
    kind "K":      params (C4, m, M)
    kind "R":      params (m, M, C10, gamma)
    kind "A_init": params (C3,), the random-initialisation superset of A
    """

    ARITY = {'A': 2, 'K': 3, 'R': 4, 'A_init': 1}

    def __init__(self, kind: str, params):
        if kind not in self.ARITY:
            raise DomainError("Unknown region kind " + repr(kind) + ".")
        params = tuple(float(x) for x in params)
        if len(params) != self.ARITY[kind]:
            raise DomainError(
                "Region " + kind + " takes " + str(self.ARITY[kind]) +
                " parameters, got " + str(len(params)) + ".")

        if kind == 'A' and (params[0] <= 0 or params[1] <= 0):
            raise DomainError("Region A needs C2, C3 > 0.")
        if kind == 'A_init' and params[0] <= 0:
            raise DomainError("Region A_init needs C3 > 0.")
        if kind == 'K':
            c4, m, big_m = params
            if not -1 < c4 <= 1 or not m > 0 or not big_m > m:
                raise DomainError(
                    "Region K needs C4 in (-1, 1], m > 0, M > m.")
        if kind == 'R':
            m, big_m, c10, gamma = params
            if not m > 0 or not big_m > m or not c10 > 0 or not gamma > 0:
                raise DomainError(
                    "Region R needs m > 0, M > m, C10 > 0, gamma > 0.")

        self.kind = kind
        self.params = params

    def __repr__(self):
        return "RegionSpec(" + repr(self.kind) + ", " + repr(self.params) + ")"


def _bracket_ok(s: StudentParams, t: TeacherParams, c3):
    sum_star = np.sum(t.a_star)
    middle = sum_star * np.sum(s.a) - sum_star ** 2

    return bool(-4 * sum_star ** 2 <= middle <=
                c3 / t.p * np.dot(t.a_star, t.a_star))


def in_region(s: StudentParams, t: TeacherParams, spec: RegionSpec):
    """
    Literal membership test for the region's defining inequalities.
    """

    s.check_matches(t)
    inner = np.dot(s.a, t.a_star)
    sq_star = np.dot(t.a_star, t.a_star)

    if spec.kind == 'A':
        c2, c3 = spec.params
        small = (inner <= c2 / t.p * sq_star or
                 np.sum((s.a - t.a_star / 2) ** 2) >= sq_star)
        return bool(small) and _bracket_ok(s, t, c3)

    if spec.kind == 'A_init':
        return _bracket_ok(s, t, spec.params[0])

    if spec.kind == 'K':
        c4, m, big_m = spec.params
        return bool(m <= inner <= big_m and np.dot(s.w, t.w_star) >= c4)

    m, big_m, c10, gamma = spec.params
    return bool(m <= inner <= big_m and
                np.sum((s.w - t.w_star) ** 2) <= c10 * gamma)


def _noise_pairs(s: StudentParams, rho_w, rho_a, n, rng):
    for size in _chunks(n):
        xi = sample_ball_batch(s.p, rho_w, size, rng)
        eps = sample_ball_batch(s.k, rho_a, size, rng)
        yield s.w + xi, s.a + eps


def mc_perturbed_grads(s: StudentParams, t: TeacherParams, rho_w: float,
                       rho_a: float, n: int, rng: RngStream):
    """
    Monte-Carlo means of the gradients at (w + xi, a + eps).

    Returns:
        (McEstimate for grad_w, McEstimate for grad_a), vector valued.
    """

    s.check_matches(t)
    _check_radius(rho_w, rho_a)
    if rho_w == 0 and rho_a == 0:
        return McEstimate.exact(grad_w(s, t), n), McEstimate.exact(
            grad_a(s, t), n)

    acc_w, acc_a = _Accumulator(), _Accumulator()
    for wvs, avs in _noise_pairs(s, rho_w, rho_a, n, rng):
        acc_w.add(batch_grad_w(wvs, avs, t))
        acc_a.add(batch_grad_a(batch_angles(wvs, t.w_star), avs, t))

    return acc_w.estimate(), acc_a.estimate()


def mc_smoothed_loss(s: StudentParams, t: TeacherParams, rho_w: float,
                     rho_a: float, n: int, rng: RngStream):
    """
    Monte-Carlo value of the smoothed objective E L(w + xi, a + eps).
    """

    s.check_matches(t)
    _check_radius(rho_w, rho_a)
    if rho_w == 0 and rho_a == 0:
        return McEstimate.exact(population_loss(s, t), n)

    acc = _Accumulator()
    for wvs, avs in _noise_pairs(s, rho_w, rho_a, n, rng):
        acc.add(batch_loss(wvs, avs, t))

    return acc.estimate()


def dissipativity_a(s: StudentParams, t: TeacherParams, rho_w: float,
                    rho_a: float, n: int, rng: RngStream):
    """
    Monte-Carlo estimate of <-E grad_a L(w + xi, a + eps), a* - a>.
    """

    s.check_matches(t)
    _check_radius(rho_w, rho_a)
    gap = t.a_star - s.a
    if rho_w == 0 and rho_a == 0:
        return McEstimate.exact(-np.dot(grad_a(s, t), gap), n)

    acc = _Accumulator()
    for wvs, avs in _noise_pairs(s, rho_w, rho_a, n, rng):
        phis = batch_angles(wvs, t.w_star)
        acc.add(-(batch_grad_a(phis, avs, t) @ gap))

    return acc.estimate()


def dissipativity_w(s: StudentParams, t: TeacherParams, rho_w: float,
                    rho_a: float, n: int, rng: RngStream):
    """
    Monte-Carlo estimate of <-E (I - ww') grad_w L(w + xi, a + eps), w* - w>.
    """

    s.check_matches(t)
    _check_radius(rho_w, rho_a)
    gap = t.w_star - s.w
    if rho_w == 0 and rho_a == 0:
        return McEstimate.exact(-np.dot(manifold_grad_w(s, t), gap), n)

    acc = _Accumulator()
    for wvs, avs in _noise_pairs(s, rho_w, rho_a, n, rng):
        g = batch_grad_w(wvs, avs, t)
        tangent = g - np.outer(g @ s.w, s.w)
        acc.add(-(tangent @ gap))

    return acc.estimate()


def _check_small_noise(phi, rho):
    if not 0 <= phi <= PI / 2:
        raise DomainError("Small-noise bounds need phi in [0, pi/2].")
    if not 0 <= rho < 1:
        raise DomainError("Small-noise bounds need rho in [0, 1).")


def small_noise_bounds(phi: float, rho: float):
    """
    Deterministic bounds for small filter noise (||w|| = 1, ||xi|| <= rho):

        U1 = arccos(cos(phi) sqrt(1 - rho^2) - rho sin(phi))  >= phi_xi
        U2 = (pi - g(U1))^2                                   >= (pi - g)^2
        U3 = g(U1)                                            <= g(phi_xi)

    Returns:
        (U1, U2, U3).

    Raises:
        DomainError unless phi in [0, pi/2] and rho in [0, 1).
    """

    _check_small_noise(phi, rho)
    c = np.cos(phi) * np.sqrt(1 - rho ** 2) - rho * np.sin(phi)
    u1 = float(np.arccos(np.clip(c, -1.0, 1.0)))
    u3 = g_phi(u1)

    return u1, (PI - u3) ** 2, u3


def sample_angle_bracket(phi: float, rho: float):
    """
    Interval containing every phi_xi for ||w|| = 1 and ||xi|| <= rho:
    [max(phi - arcsin(rho), 0), phi + arcsin(rho)].
    """

    _check_small_noise(phi, rho)
    upper = small_noise_bounds(phi, rho)[0]
    lower = float(np.arccos(np.clip(
        np.cos(phi) * np.sqrt(1 - rho ** 2) + rho * np.sin(phi), -1.0, 1.0)))
    if phi < np.arcsin(rho):
        lower = 0.0

    return lower, upper


def central_difference(func, x, h: float, directions=None):
    """
    Centered differences (func(x + h u) - func(x - h u)) / 2h along each
    direction u (the coordinate axes by default).
    """

    x = np.asarray(x, dtype=float)
    if directions is None:
        directions = np.eye(x.shape[0])

    grad = np.zeros(len(directions))
    for j, u in enumerate(directions):
        grad[j] = (func(x + h * u) - func(x - h * u)) / (2 * h)

    return grad


def relative_error(fd, analytic):
    fd = np.asarray(fd, dtype=float)
    analytic = np.asarray(analytic, dtype=float)

    return float(np.max(np.abs(fd - analytic) /
                        np.maximum(np.abs(analytic), REL_FLOOR)))


def _tangent_directions(s: StudentParams, t: TeacherParams, directions=None,
                        rng: RngStream = None, count: int = 0):
    """
    Unit tangent directions at s.w: the given ones (default the normalised
    manifold gradient), then count random tangent directions from rng.
    Random draws nearly orthogonal to the gradient are redrawn, since the
    relative error is ill-conditioned where u' grad is close to 0.
    """

    g = manifold_grad_w(s, t)
    norm = np.linalg.norm(g)
    g_unit = g / norm if norm > 0 else None

    out = []
    if directions is None:
        out.append(g_unit if g_unit is not None
                   else null_space(s.w[None, :])[:, 0])
    else:
        for u in directions:
            u = tangent_project(s.w, u)
            out.append(u / np.linalg.norm(u))

    accepted = 0
    while accepted < int(count):
        u = tangent_project(s.w, rng.generator.standard_normal(s.p))
        u = u / np.linalg.norm(u)
        if g_unit is not None and abs(np.dot(u, g_unit)) < MIN_ALIGNMENT:
            continue
        out.append(u)
        accepted += 1

    return out


def finite_diff_check(loss_id: str, point, h: float, teacher: TeacherParams,
                      dataset=None, directions=None, rng: RngStream = None,
                      random_directions: int = 0):
    """
    Compare central differences with the analytic gradient.

    loss_id:
        "population_a"  population loss in a, coordinate-wise.
        "population_w"  population loss along the sphere: for tangent unit
                        u, [L(Proj(w + hu), a) - L(Proj(w - hu), a)] / 2h
                        against u' manifold_grad_w. u runs over
                        directions (default the normalised manifold
                        gradient) plus random_directions random tangent
                        directions drawn from rng.
        "overparam"     two-filter empirical loss in (w, v, a, b); point
                        must sit away from ReLU kinks.

    Returns:
        Max per-coordinate relative error |fd - an| / max(|an|, 1e-8).

    Raises:
        DomainError for h <= 0 or an unknown loss_id.
    """

    if not h > 0:
        raise DomainError("Finite-difference step must be > 0.")
    t = teacher

    if loss_id == LOSS_POPULATION_A:
        w = point.w

        def loss(av):
            return population_loss(StudentParams(w, av), t)

        return relative_error(central_difference(loss, point.a, h),
                              grad_a(point, t))

    if loss_id == LOSS_POPULATION_W:
        a = point.a
        if random_directions and rng is None:
            raise DomainError("Random tangent directions need an rng.")
        units = _tangent_directions(point, t, directions, rng,
                                    random_directions)

        def loss(wv):
            return population_loss(StudentParams(project_to_sphere(wv), a), t)

        analytic = np.array(units) @ manifold_grad_w(point, t)
        return relative_error(central_difference(loss, point.w, h, units),
                              analytic)

    if loss_id == LOSS_OVERPARAM:
        if dataset is None:
            raise DomainError("Overparameterized check needs a dataset.")
        p, k = point.p, point.k
        cuts = np.cumsum([p, p, k])

        def loss(x):
            w, v, a, b = np.split(x, cuts)
            return overparam_loss_at(dataset, w, v, a, b, t)

        x0 = np.concatenate([point.w, point.v, point.a, point.b])
        analytic = np.concatenate(overparam_grad(dataset, point, t))
        return relative_error(central_difference(loss, x0, h), analytic)

    raise DomainError("Unknown loss id " + repr(loss_id) + ", expected one "
                      "of " + ", ".join(LOSS_IDS) + ".")


def mc_empirical_loss(s: StudentParams, t: TeacherParams, n: int,
                      rng: RngStream):
    """
    Monte-Carlo average of 1/2 (f(Z, w, a) - f(Z, w*, a*))^2 over Gaussian Z.
    """

    s.check_matches(t)
    acc = _Accumulator()
    for size in _chunks(n):
        zs = sample_inputs(size, s.p, s.k, rng)
        acc.add(0.5 * (forward(zs, s.w, s.a) -
                       forward(zs, t.w_star, t.a_star)) ** 2)

    return acc.estimate()


def mc_sample_grad(s: StudentParams, t: TeacherParams, n: int,
                   rng: RngStream):
    """
    Monte-Carlo means of the per-sample gradients over Gaussian inputs.

    Returns:
        (McEstimate for gw, McEstimate for ga), vector valued.
    """

    s.check_matches(t)
    acc_w, acc_a = _Accumulator(), _Accumulator()
    for size in _chunks(n):
        gw, ga = batch_sample_grads(sample_inputs(size, s.p, s.k, rng),
                                    s.w, s.a, t)
        acc_w.add(gw)
        acc_a.add(ga)

    return acc_w.estimate(), acc_a.estimate()


def compare_factored_grad(s: StudentParams, t: TeacherParams, n: int,
                          rng: RngStream):
    """
    Monte-Carlo means of the factored w-gradient and of the exact
    per-sample w-gradient on the same inputs, next to the closed form.

    Returns:
        dict with keys 'factored', 'exact' (McEstimate) and 'population'.
    """

    s.check_matches(t)
    acc_factored, acc_exact = _Accumulator(), _Accumulator()
    for size in _chunks(n):
        zs = sample_inputs(size, s.p, s.k, rng)
        acc_factored.add(batch_factored_grad_w(zs, s, t))
        acc_exact.add(batch_sample_grads(zs, s.w, s.a, t)[0])

    return {
        'factored': acc_factored.estimate(),
        'exact': acc_exact.estimate(),
        'population': grad_w(s, t)}


def minibatch_standard_error(s: StudentParams, t: TeacherParams, m: int,
                             repeats: int, rng: RngStream):
    """
    Spread of the mini-batch gradient across repeated batches of size m:
    sqrt of the summed per-coordinate variances of (gw, ga).
    """

    if int(repeats) < 2:
        raise DomainError("Need at least two repeated batches.")

    grads = []
    for _ in range(int(repeats)):
        gw, ga = minibatch_grad(sample_inputs(m, s.p, s.k, rng), s, t)
        grads.append(np.concatenate([gw, ga]))

    return float(np.sqrt(np.sum(np.var(np.array(grads), axis=0, ddof=1))))


def sample_region_a(t: TeacherParams, count: int, rng: RngStream, c2=0.05,
                    c3=1.0, scale=0.3, max_tries=100000):
    """
    Members of region A(C2, C3): a uniform in B_0(scale ||a*||), w uniform on
    the sphere, non-members rejected.
    """

    spec = RegionSpec('A', (c2, c3))
    radius = scale * np.linalg.norm(t.a_star)
    members = []
    for _ in range(int(max_tries)):
        s = StudentParams(random_unit_vector(t.p, rng),
                          sample_ball_batch(t.k, radius, 1, rng)[0])
        if in_region(s, t, spec):
            members.append(s)
            if len(members) == count:
                return members

    raise DomainError("Region A sampler found only " + str(len(members)) +
                      " members.")


def sample_region_k(t: TeacherParams, count: int, rng: RngStream, c4=0.1,
                    m=0.05, big_m=0.5, min_sep=0.5, max_tries=100000):
    """
    Members of region K(C4, m, M) with ||w - w*||^2 >= min_sep.

    w'w* is drawn uniformly from [C4, 1 - min_sep/2]; a'a* uniformly from
    [m, M] plus a random component orthogonal to a*.
    """

    spec = RegionSpec('K', (c4, m, big_m))
    top = 1 - min_sep / 2
    if top < c4:
        raise DomainError("No filter satisfies both C4 and the separation.")

    sq_star = np.dot(t.a_star, t.a_star)
    members = []
    for _ in range(int(max_tries)):
        c = rng.generator.uniform(c4, top)
        u = tangent_project(t.w_star, random_unit_vector(t.p, rng))
        if np.linalg.norm(u) == 0:
            continue
        w = project_to_sphere(c * t.w_star +
                              np.sqrt(1 - c ** 2) * u / np.linalg.norm(u))

        tau = rng.generator.uniform(m, big_m)
        noise = rng.generator.standard_normal(t.k) * 0.1
        noise = noise - np.dot(noise, t.a_star) / sq_star * t.a_star
        s = StudentParams(w, tau / sq_star * t.a_star + noise)

        if in_region(s, t, spec) and np.sum((w - t.w_star) ** 2) >= min_sep:
            members.append(s)
            if len(members) == count:
                return members

    raise DomainError("Region K sampler found only " + str(len(members)) +
                      " members.")
