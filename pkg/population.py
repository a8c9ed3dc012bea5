"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Closed-form population loss of the non-overlapping CNN under Gaussian
input, its gradients, the angle kernel g(phi), and the analytically known
global and spurious optima.

Notation: phi is the angle between w and w*, 1 the all-ones k-vector,
    g(phi) = (pi - phi) cos(phi) + sin(phi).
For ||w|| = ||w*|| = 1:
    L(w, a) = 1/2 [ (pi-1)/(2pi) ||a*||^2 + (pi-1)/(2pi) ||a||^2
                    - (g(phi)-1)/pi a'a* + (1'a*)^2/(2pi) + (1'a)^2/(2pi)
                    - (1'a*)(1'a)/pi ]
"""

from errors import DomainError, DegenerateAngleError
from param_types import TeacherParams, StudentParams
from sphere import (BallSpec, RngStream, sample_unit_ball, tangent_project,
                    angle, batch_angles)
from scipy.linalg import cho_factor, cho_solve
import numpy as np


PI = np.pi


def g_phi(phi):
    """
    Angle kernel g(phi) = (pi - phi) cos(phi) + sin(phi).

    Nonincreasing on [0, pi] with g(0) = pi and g(pi) = 0. Accepts scalars
    or arrays.

    Raises:
        DomainError if any phi lies outside [0, pi].
    """

    phi_arr = np.asarray(phi, dtype=float)
    if np.any(phi_arr < 0) or np.any(phi_arr > PI) or np.any(
            np.isnan(phi_arr)):
        raise DomainError("g(phi) is defined on [0, pi] only.")

    value = (PI - phi_arr) * np.cos(phi_arr) + np.sin(phi_arr)

    if np.ndim(value) == 0:
        return float(value)
    return value


def student_phi(s: StudentParams, t: TeacherParams):
    """
    Angle between the student filter and the teacher filter.
    """

    s.check_matches(t)

    return angle(s.w, t.w_star)


def population_loss(s: StudentParams, t: TeacherParams):
    """
    Closed-form population loss L(w, a) for unit-norm w.

    Args:
        s: student parameters.
        t: teacher parameters.

    Returns:
        Nonnegative float.

    Raises:
        DimensionMismatchError if (p, k) differ.
    """

    phi = student_phi(s, t)
    a, a_star = s.a, t.a_star
    sum_a, sum_star = np.sum(a), np.sum(a_star)
    c = (PI - 1) / (2 * PI)

    value = 0.5 * (
        c * np.dot(a_star, a_star)
        + c * np.dot(a, a)
        - (g_phi(phi) - 1) / PI * np.dot(a, a_star)
        + sum_star ** 2 / (2 * PI)
        + sum_a ** 2 / (2 * PI)
        - sum_star * sum_a / PI)

    return max(float(value), 0.0)


def loss_at(wv, a, t: TeacherParams):
    """
    Population loss with the filter wv off the sphere (any nonzero norm).

    The ||w|| factors of the Gaussian ReLU moments are kept, so this is the
    expectation of 1/2 (f(Z, wv, a) - f(Z, w*, a*))^2 for arbitrary wv; it
    reduces to population_loss on the sphere. Used for the smoothed
    objective E L(w + xi, a + eps).
    """

    return float(batch_loss(np.asarray(wv, dtype=float)[None, :],
                            np.asarray(a, dtype=float)[None, :], t)[0])


def batch_loss(wvs, avs, t: TeacherParams):
    """
    Row-wise loss_at for stacked filters (n, p) and output weights (n, k).
    """

    norms = np.linalg.norm(wvs, axis=1)
    if np.any(norms == 0):
        raise DegenerateAngleError("Loss undefined at a zero filter.")

    g = g_phi(batch_angles(wvs, t.w_star))
    a_star = t.a_star
    sum_a = avs.sum(axis=1)
    sum_star = np.sum(a_star)
    c = (PI - 1) / (2 * PI)

    value = 0.5 * (
        c * np.dot(a_star, a_star)
        + norms ** 2 * (c * np.einsum('ij,ij->i', avs, avs)
                        + sum_a ** 2 / (2 * PI))
        - norms / PI * ((g - 1) * (avs @ a_star) + sum_star * sum_a)
        + sum_star ** 2 / (2 * PI))

    return np.maximum(value, 0.0)


def grad_a_at(phi: float, a, t: TeacherParams):
    """
    a-gradient (1/2pi)(11'+(pi-1)I)a - (1/2pi)(11'+(g(phi)-1)I)a* for a
    given angle phi. Depends on the filter only through phi.
    """

    a = np.asarray(a, dtype=float)
    a_star = t.a_star

    return (np.sum(a) + (PI - 1) * a
            - np.sum(a_star) - (g_phi(phi) - 1) * a_star) / (2 * PI)


def grad_a(s: StudentParams, t: TeacherParams):
    """
    Closed-form gradient of the population loss with respect to a.

    Returns:
        ndarray of shape (k,).

    Raises:
        DimensionMismatchError if (p, k) differ.
    """

    return grad_a_at(student_phi(s, t), s.a, t)


def grad_w_at(wv, a, t: TeacherParams):
    """
    Closed-form w-gradient at a filter wv of any nonzero norm:

        -(a'a* (pi - phi) / 2pi) w*
        + [ ||a||^2/2 + ((1'a)^2 - ||a||^2)/2pi
            - (a'a* sin(phi)) / (2pi ||wv||)
            - ((1'a)(1'a*) - a'a*) / (2pi ||wv||) ] wv

    with phi = angle(wv, w*) and ||w*|| = 1.

    Raises:
        DegenerateAngleError if wv is the zero vector.
    """

    wv = np.asarray(wv, dtype=float)
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(wv)
    if norm == 0:
        raise DegenerateAngleError("w-gradient undefined at a zero filter.")

    phi = angle(wv, t.w_star)
    inner = np.dot(a, t.a_star)
    sq = np.dot(a, a)
    sum_a, sum_star = np.sum(a), np.sum(t.a_star)

    radial = (sq / 2 + (sum_a ** 2 - sq) / (2 * PI)
              - inner * np.sin(phi) / (2 * PI * norm)
              - (sum_a * sum_star - inner) / (2 * PI * norm))

    return -inner * (PI - phi) / (2 * PI) * t.w_star + radial * wv


def grad_w(s: StudentParams, t: TeacherParams):
    """
    Closed-form Euclidean gradient of the population loss with respect to w.

    Returns:
        ndarray of shape (p,).
    """

    s.check_matches(t)

    return grad_w_at(s.w, s.a, t)


def manifold_grad_w(s: StudentParams, t: TeacherParams):
    """
    Riemannian gradient on the sphere: (I - ww') grad_w.
    """

    return tangent_project(s.w, grad_w(s, t))


def perturbed_grads_with(s: StudentParams, t: TeacherParams, xi, eps):
    """
    Gradients evaluated at the perturbed point (w + xi, a + eps) for a given
    noise pair.

    Returns:
        (grad_w_vec, grad_a_vec) where grad_w_vec keeps the 1/||w + xi||
        factors and grad_a_vec depends on the filter only through
        phi_xi = angle(w + xi, w*).

    Raises:
        DegenerateAngleError if w + xi is the zero vector.
    """

    s.check_matches(t)
    wv = s.w + xi
    av = s.a + eps
    if not np.any(wv):
        raise DegenerateAngleError(
            "Perturbed filter w + xi is the zero vector.")

    phi_xi = angle(wv, t.w_star)

    return grad_w_at(wv, av, t), grad_a_at(phi_xi, av, t)


def perturbed_grads(s: StudentParams, t: TeacherParams, rho_w: float,
                    rho_a: float, rng: RngStream):
    """
    Sample xi ~ unif(B_0(rho_w)) then eps ~ unif(B_0(rho_a)) and return the
    gradients at (w + xi, a + eps).

    Returns:
        (grad_w_vec, grad_a_vec).

    Raises:
        DomainError for negative radii.
        DegenerateAngleError if w + xi is the zero vector.
    """

    if rho_w < 0 or rho_a < 0:
        raise DomainError("Noise radii must be nonnegative.")

    xi = sample_unit_ball(BallSpec(s.p, rho_w), rng)
    eps = sample_unit_ball(BallSpec(s.k, rho_a), rng)

    return perturbed_grads_with(s, t, xi, eps)


def batch_grad_a(phis, avs, t: TeacherParams):
    """
    Row-wise grad_a_at for angles (n,) and output weights (n, k).
    """

    a_star = t.a_star
    g = g_phi(phis)

    return (avs.sum(axis=1, keepdims=True) + (PI - 1) * avs
            - np.sum(a_star) - (g - 1)[:, None] * a_star) / (2 * PI)


def batch_grad_w(wvs, avs, t: TeacherParams):
    """
    Row-wise grad_w_at for filters (n, p) and output weights (n, k).
    """

    norms = np.linalg.norm(wvs, axis=1)
    if np.any(norms == 0):
        raise DegenerateAngleError("w-gradient undefined at a zero filter.")

    phis = batch_angles(wvs, t.w_star)
    inner = avs @ t.a_star
    sq = np.einsum('ij,ij->i', avs, avs)
    sum_a = avs.sum(axis=1)
    sum_star = np.sum(t.a_star)

    radial = (sq / 2 + (sum_a ** 2 - sq) / (2 * PI)
              - inner * np.sin(phis) / (2 * PI * norms)
              - (sum_a * sum_star - inner) / (2 * PI * norms))

    return (-(inner * (PI - phis) / (2 * PI))[:, None] * t.w_star
            + radial[:, None] * wvs)


def spurious_a(a_star):
    """
    Solve (11' + (pi-1)I) a~ = (11' - I) a* by Cholesky factorisation.
    """

    a_star = np.asarray(a_star, dtype=float)
    k = a_star.shape[0]
    system = np.ones((k, k)) + (PI - 1) * np.eye(k)
    rhs = np.sum(a_star) - a_star

    return cho_solve(cho_factor(system), rhs)


def spurious_optimum(t: TeacherParams):
    """
    The spurious local minimum (v*, a~) with v* = -w* and a~ solving
    (11' + (pi-1)I) a~ = (11' - I) a*.

    Returns:
        StudentParams.
    """

    return StudentParams(-t.w_star, spurious_a(t.a_star))
