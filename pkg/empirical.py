"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Finite-sample side of the model: Gaussian inputs, the forward pass
f(Z, w, a) = a' relu(Z' w), exact per-sample and mini-batch gradients, and
the two-filter finite-sample loss F_n with its gradients.

An input sample Z is a (p, k) array whose columns Z_j are the k
non-overlapping patches. Stacks of samples are (n, p, k) arrays.
"""

from errors import (InvalidDimensionError, DimensionMismatchError,
                    EmptyBatchError, LabIOError)
from param_types import TeacherParams, StudentParams, OverparamStudent
from sphere import RngStream
import numpy as np


# Dataset file header tag, first token of the ASCII header line.
DATASET_TAG = "CNNLAB-DATASET"
DATASET_VERSION = "v1"


class Dataset:
    """
    In-memory collection of n input samples sharing (p, k).

    File format (see README): one ASCII header line
        CNNLAB-DATASET v1 n=<n> p=<p> k=<k> seed=<seed>\\n
    followed by n*p*k little-endian float64 values, row-major per sample
    (sample i, row r of Z_i, column j).
    """

    def __init__(self, samples, seed: int = 0):
        samples = np.ascontiguousarray(samples, dtype=float)
        if samples.ndim != 3:
            raise InvalidDimensionError(
                "Dataset samples must be an (n, p, k) array, got shape " +
                str(samples.shape) + ".")
        if samples.shape[0] < 1:
            raise EmptyBatchError("A dataset needs at least one sample.")
        self.samples = samples
        self.seed = int(seed)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def p(self):
        return self.samples.shape[1]

    @property
    def k(self):
        return self.samples.shape[2]

    def concat(self, other):
        """
        Return a dataset holding this dataset's samples followed by other's.
        """

        if other.p != self.p or other.k != self.k:
            raise DimensionMismatchError(
                "Cannot concatenate datasets of different (p, k).")

        return Dataset(np.concatenate([self.samples, other.samples]),
                       self.seed)

    def save(self, path):
        """
        Write the dataset to path in the documented binary format.

        Raises:
            LabIOError on any file-system failure.
        """

        header = (DATASET_TAG + " " + DATASET_VERSION + " n=" + str(self.n) +
                  " p=" + str(self.p) + " k=" + str(self.k) + " seed=" +
                  str(self.seed) + "\n")
        try:
            with open(path, 'wb') as f:
                f.write(header.encode('ascii'))
                f.write(self.samples.astype('<f8').tobytes(order='C'))
        except OSError as e:
            raise LabIOError(path, e)

    @classmethod
    def load(cls, path):
        """
        Read a dataset written by save().

        Raises:
            LabIOError if the file is missing, truncated or malformed.
        """

        try:
            with open(path, 'rb') as f:
                header = f.readline().decode('ascii').split()
                payload = f.read()
        except (OSError, UnicodeDecodeError) as e:
            raise LabIOError(path, e)

        if len(header) != 6 or header[0] != DATASET_TAG:
            raise LabIOError(path, "not a dataset file")

        try:
            fields = dict(item.split('=') for item in header[2:])
            n, p, k = int(fields['n']), int(fields['p']), int(fields['k'])
            seed = int(fields['seed'])
        except (KeyError, ValueError) as e:
            raise LabIOError(path, "bad dataset header: " + str(e))

        values = np.frombuffer(payload, dtype='<f8')
        if values.size != n * p * k:
            raise LabIOError(
                path, "expected " + str(n * p * k) + " values, found " +
                str(values.size))

        return cls(values.reshape(n, p, k).astype(float), seed)


def relu(x):
    return np.maximum(x, 0.0)


def sample_input(p: int, k: int, rng: RngStream):
    """
    Draw one (p, k) input of i.i.d. standard normals.

    Raises:
        InvalidDimensionError for nonpositive dimensions.
    """

    return sample_inputs(1, p, k, rng)[0]


def sample_inputs(n: int, p: int, k: int, rng: RngStream):
    """
    Draw n independent (p, k) inputs as an (n, p, k) array.
    """

    if int(p) < 1 or int(k) < 1 or int(n) < 1:
        raise InvalidDimensionError(
            "Input dimensions must be positive, got n=" + str(n) + ", p=" +
            str(p) + ", k=" + str(k) + ".")

    return rng.generator.standard_normal((int(n), int(p), int(k)))


def sample_dataset(n: int, p: int, k: int, rng: RngStream):
    """
    Draw and freeze a dataset of n samples, tagged with the stream's seed.
    """

    return Dataset(sample_inputs(n, p, k, rng), rng.seed)


def _check_dims(z, w, a):
    z = np.asarray(z, dtype=float)
    if z.ndim < 2 or z.shape[-2] != np.shape(w)[0] or z.shape[-1] != np.shape(
            a)[0]:
        raise DimensionMismatchError(
            "Input of shape " + str(z.shape) + " does not match w " +
            str(np.shape(w)) + " and a " + str(np.shape(a)) + ".")

    return z


def forward(z, w, a):
    """
    Network output f(Z, w, a) = sum_j a_j relu(Z_j' w).

    Accepts a single (p, k) sample (returns a float) or a stack (n, p, k)
    (returns an (n,) array).

    Raises:
        DimensionMismatchError if shapes disagree.
    """

    z = _check_dims(z, w, a)
    out = relu(np.einsum('...pk,p->...k', z, w)) @ np.asarray(a, dtype=float)

    if np.ndim(out) == 0:
        return float(out)
    return out


def batch_sample_grads(zs, wv, av, t: TeacherParams):
    """
    Per-sample gradients of 1/2 (f(Z, wv, av) - f(Z, w*, a*))^2 for a stack
    of inputs.

    Returns:
        (gw, ga): arrays of shape (m, p) and (m, k).
    """

    zs = _check_dims(zs, wv, av)
    if zs.ndim == 2:
        zs = zs[None]
    if zs.shape[-2] != t.p or zs.shape[-1] != t.k:
        raise DimensionMismatchError("Inputs do not match the teacher.")

    proj = np.einsum('mpk,p->mk', zs, wv)
    act = relu(proj)
    residual = act @ av - relu(np.einsum('mpk,p->mk', zs, t.w_star)) @ t.a_star

    ga = residual[:, None] * act

    # Strict indicator: the ReLU subgradient at exactly 0 is taken as 0.
    gated = (proj > 0) * av
    gw = residual[:, None] * np.einsum('mpk,mk->mp', zs, gated)

    return gw, ga


def sample_grad(z, s: StudentParams, t: TeacherParams):
    """
    Exact gradient of the single-sample squared loss at (w, a).

    With r = f(Z, w, a) - f(Z, w*, a*):
        ga = r relu(Z' w)
        gw = r sum_j a_j 1(Z_j' w > 0) Z_j

    Returns:
        (gw, ga) with shapes (p,) and (k,).
    """

    s.check_matches(t)
    gw, ga = batch_sample_grads(np.asarray(z, dtype=float)[None], s.w, s.a, t)

    return gw[0], ga[0]


def minibatch_grad_at(batch, wv, av, t: TeacherParams):
    """
    Mean per-sample gradient over batch at an arbitrary (wv, av), e.g. the
    perturbed point (w + xi, a + eps).

    Raises:
        EmptyBatchError if the batch is empty.
    """

    zs = np.asarray(batch, dtype=float)
    if zs.size == 0 or zs.ndim != 3 or zs.shape[0] == 0:
        raise EmptyBatchError("Mini-batch must hold at least one sample.")

    gw, ga = batch_sample_grads(zs, wv, av, t)

    return gw.mean(axis=0), ga.mean(axis=0)


def minibatch_grad(batch, s: StudentParams, t: TeacherParams):
    """
    Arithmetic mean of sample_grad over a nonempty batch of inputs.

    Returns:
        (gw, ga) with shapes (p,) and (k,).

    Raises:
        EmptyBatchError if the batch is empty.
    """

    if len(batch) == 0:
        raise EmptyBatchError("Mini-batch must hold at least one sample.")
    s.check_matches(t)

    return minibatch_grad_at(batch, s.w, s.a, t)


def factored_grad_w(z, s: StudentParams, t: TeacherParams):
    """
    Per-sample w-gradient in the factored form that pulls w* out of both sums:

        ( sum_j a_j a*_j Z_j Z_j' 1(Z_j'w >= 0, Z_j'w* >= 0)
          + sum_{j != i} a_i a*_j Z_i Z_j' 1(Z_j'w >= 0, Z_j'w* >= 0) ) w*

    Diagnostic only. It is not the gradient of the per-sample loss and is
    never used by an optimizer.
    """

    return batch_factored_grad_w(np.asarray(z, dtype=float)[None], s, t)[0]


def batch_factored_grad_w(zs, s: StudentParams, t: TeacherParams):
    """
    factored_grad_w for a stack of inputs, shape (m, p).
    """

    zs = _check_dims(zs, s.w, s.a)
    s.check_matches(t)

    proj_star = np.einsum('mpk,p->mk', zs, t.w_star)
    gate = (np.einsum('mpk,p->mk', zs, s.w) >= 0) & (proj_star >= 0)
    weights = (t.a_star * gate * proj_star).sum(axis=1)

    # Full double sum over (i, j), including i == j, equals both terms.
    return np.einsum('mpk,k->mp', zs, s.a) * weights[:, None]


def overparam_residuals(d: Dataset, s: OverparamStudent, t: TeacherParams):
    """
    Residuals h(Z_i, w, v, a, b) - f(Z_i, w*, a*) plus the activations.
    """

    s.check_matches(t)

    return _residuals_at(d, s.w, s.v, s.a, s.b, t)


def _residuals_at(d: Dataset, w, v, a, b, t: TeacherParams):
    if d.p != t.p or d.k != t.k:
        raise DimensionMismatchError(
            "Dataset (p=" + str(d.p) + ", k=" + str(d.k) +
            ") does not match the teacher.")

    proj_w = np.einsum('npk,p->nk', d.samples, w)
    proj_v = np.einsum('npk,p->nk', d.samples, v)
    act_w, act_v = relu(proj_w), relu(proj_v)
    target = relu(np.einsum('npk,p->nk', d.samples, t.w_star)) @ t.a_star
    residual = act_w @ a + act_v @ b - target

    return residual, proj_w, proj_v, act_w, act_v


def overparam_loss_at(d: Dataset, w, v, a, b, t: TeacherParams):
    """
    F_n at raw arrays, filters of any norm. Finite differences in w and v
    step off the sphere through this.
    """

    residual = _residuals_at(d, np.asarray(w, dtype=float),
                             np.asarray(v, dtype=float),
                             np.asarray(a, dtype=float),
                             np.asarray(b, dtype=float), t)[0]

    return float(0.5 * np.mean(residual ** 2))


def overparam_loss(d: Dataset, s: OverparamStudent, t: TeacherParams):
    """
    F_n(w, v, a, b) = 1/(2n) sum_i (h(Z_i, w, v, a, b) - f(Z_i, w*, a*))^2.
    """

    residual = overparam_residuals(d, s, t)[0]

    return float(0.5 * np.mean(residual ** 2))


def overparam_grad(d: Dataset, s: OverparamStudent, t: TeacherParams):
    """
    Exact (Euclidean) gradient of overparam_loss.

    Returns:
        (gw, gv, ga, gb) with shapes (p,), (p,), (k,), (k,).
    """

    residual, proj_w, proj_v, act_w, act_v = overparam_residuals(d, s, t)
    z = d.samples
    r = residual[:, None]

    ga = (r * act_w).mean(axis=0)
    gb = (r * act_v).mean(axis=0)
    gw = (r * np.einsum('npk,nk->np', z, (proj_w > 0) * s.a)).mean(axis=0)
    gv = (r * np.einsum('npk,nk->np', z, (proj_v > 0) * s.b)).mean(axis=0)

    return gw, gv, ga, gb


def kink_margin(zs, *filters):
    """
    Smallest |Z_j' u| over all samples, patches and the given filters; the
    distance of a point from the nearest ReLU activation boundary.
    """

    zs = np.asarray(zs, dtype=float)
    if zs.ndim == 2:
        zs = zs[None]

    return float(min(np.min(np.abs(np.einsum('npk,p->nk', zs, u)))
                     for u in filters))
