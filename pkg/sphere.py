"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Geometry on the unit sphere and uniform sampling in Euclidean balls. These
are the noise-injection and retraction primitives used by every other module.
"""

from errors import (InvalidDimensionError, DimensionMismatchError,
                    DegenerateProjectionError, DegenerateAngleError)
import numpy as np


# Norm tolerance for anything treated as a point on the unit sphere.
UNIT_TOL = 1e-12

# Smallest norm project_to_sphere will divide by.
MIN_PROJECTION_NORM = 1e-300


class RngStream:
    """
    Reproducible random stream keyed by (seed, stream_id).

    Two streams built from the same pair produce identical sequences. Each
    worker or trial owns its own stream_id, so no generator is ever shared.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return ("RngStream(seed=" + str(self.seed) + ", stream_id=" +
                str(self.stream_id) + ")")

    def replay(self):
        """
        Return a fresh stream positioned at the start of this sequence.
        """

        return RngStream(self.seed, self.stream_id)

    def derive(self, stream_id: int):
        """
        Return an independent stream sharing this seed.
        """

        return RngStream(self.seed, stream_id)


class BallSpec:
    """
    Closed Euclidean ball B_0(radius) in R^dim.
    """

    def __init__(self, dim: int, radius: float):
        if int(dim) < 1:
            raise InvalidDimensionError(
                "Ball dimension must be positive, got " + str(dim) + ".")
        if radius < 0:
            raise InvalidDimensionError(
                "Ball radius must be nonnegative, got " + str(radius) + ".")
        self.dim = int(dim)
        self.radius = float(radius)

    def __repr__(self):
        return ("BallSpec(dim=" + str(self.dim) + ", radius=" +
                str(self.radius) + ")")


def sample_unit_ball(spec: BallSpec, rng: RngStream):
    """
    Draw one point uniformly from the ball described by spec.

    Direction is a normalised standard Gaussian, radius is R * U^(1/dim).

    Args:
        spec: BallSpec giving dimension and radius.
        rng: RngStream to draw from.

    Returns:
        x: ndarray of shape (dim,) with ||x|| <= radius.

    Raises:
        InvalidDimensionError if dim is zero.
    """

    if spec.dim < 1:
        raise InvalidDimensionError("Ball dimension must be positive.")

    # Point mass at the origin, no draws consumed.
    if spec.radius == 0:
        return np.zeros(spec.dim)

    return sample_ball_batch(spec.dim, spec.radius, 1, rng)[0]


def sample_ball_batch(dim: int, radius: float, n: int, rng: RngStream):
    """
    Draw n points uniformly from B_0(radius) in R^dim.

    Returns:
        ndarray of shape (n, dim).
    """

    if int(dim) < 1:
        raise InvalidDimensionError(
            "Ball dimension must be positive, got " + str(dim) + ".")

    if radius == 0:
        return np.zeros((n, dim))

    gen = rng.generator
    directions = gen.standard_normal((n, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * gen.random((n, 1)) ** (1.0 / dim)
    points = directions / norms * radii

    # Guard the (float) boundary so ||x|| <= radius holds for every draw.
    lengths = np.linalg.norm(points, axis=1, keepdims=True)
    over = lengths > radius
    if np.any(over):
        points = np.where(over, points * (radius / lengths), points)

    return points


def random_unit_vector(dim: int, rng: RngStream):
    """
    Draw a point uniformly from the unit sphere S_0(1) in R^dim.
    """

    if int(dim) < 2:
        raise InvalidDimensionError(
            "Sphere dimension must be at least 2, got " + str(dim) + ".")

    while True:
        v = rng.generator.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > MIN_PROJECTION_NORM:
            return v / norm


def unit_vector(entries):
    """
    Validate entries as a UnitVector and return them as a float array.

    Raises:
        InvalidDimensionError if d < 2 or the norm differs from 1 by more
        than UNIT_TOL.
    """

    v = np.asarray(entries, dtype=float)
    if v.ndim != 1 or v.shape[0] < 2:
        raise InvalidDimensionError(
            "Unit vectors need dimension >= 2, got shape " +
            str(v.shape) + ".")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise InvalidDimensionError(
            "Vector is not on the unit sphere (norm " +
            repr(float(np.linalg.norm(v))) + ").")

    return v


def project_to_sphere(v):
    """
    Radial retraction onto the unit sphere, v / ||v||.

    Raises:
        DegenerateProjectionError for vectors with norm below 1e-300.
    """

    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not norm >= MIN_PROJECTION_NORM:
        raise DegenerateProjectionError(
            "Cannot project a zero vector onto the unit sphere.")

    return v / norm


def project_to_ball(v, radius: float):
    """
    Euclidean projection onto B_0(radius): v unchanged inside the ball,
    rescaled to the boundary outside. The result never exceeds radius.
    """

    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= radius:
        return v.copy()

    out = v * (radius / norm)
    # Rounding can leave the rescaled norm one ulp above radius.
    while np.linalg.norm(out) > radius:
        out = out * np.nextafter(1.0, 0.0)

    return out


def tangent_project(w, g):
    """
    Project g onto the tangent space of the sphere at w: g - (w'g) w.

    Raises:
        DimensionMismatchError if w and g differ in length.
    """

    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    if w.shape != g.shape:
        raise DimensionMismatchError(
            "Tangent projection needs matching shapes, got " +
            str(w.shape) + " and " + str(g.shape) + ".")

    return g - np.dot(w, g) * w


def angle(u, v):
    """
    Angle between two nonzero vectors, in [0, pi].

    The normalised inner product is clamped to [-1, 1] before arccos, so
    identical and antipodal inputs give exactly 0 and pi.

    Raises:
        DegenerateAngleError if either argument is the zero vector.
        DimensionMismatchError if the lengths differ.
    """

    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatchError(
            "Angle needs matching shapes, got " + str(u.shape) + " and " +
            str(v.shape) + ".")

    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateAngleError("Angle undefined for a zero vector.")

    cos = np.dot(u, v) / (nu * nv)

    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def batch_angles(points, v):
    """
    Angles between each row of points and v, clamped as in angle().

    Raises:
        DegenerateAngleError if any row (or v) is zero.
    """

    points = np.asarray(points, dtype=float)
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(points, axis=1)
    nv = np.linalg.norm(v)
    if nv == 0 or np.any(norms == 0):
        raise DegenerateAngleError("Angle undefined for a zero vector.")

    cos = (points @ v) / (norms * nv)

    return np.arccos(np.clip(cos, -1.0, 1.0))
