"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from concurrent.futures import ProcessPoolExecutor
from errors import (ConfigError, InvalidDimensionError, LabIOError,
                    DegenerateProjectionError)
from param_types import TeacherParams, StudentParams
from sphere import RngStream, random_unit_vector, project_to_sphere
from population import spurious_optimum
from optimizer import PerturbedGD, VanillaGD, PerturbedSGD
import numpy as np
import json


# Trials per cell are addressed as cell * STREAM_STRIDE + trial.
STREAM_STRIDE = 1000000

# Reserved per-cell slot for the shared teacher when teacher_per = cell.
TEACHER_SLOT = STREAM_STRIDE - 1


def build_teacher(p: int, k: int, ratio: float, rng: RngStream,
                  pad_odd=False):
    """
    Teacher with w* uniform on the sphere and a* chosen so that
    1'a* / ||a*||^2 equals ratio.

    ratio = 0: first k/2 entries -0.1, last k/2 entries +0.1. With pad_odd,
    an odd k gets a single 0 in the middle so that 1'a* = 0 still holds.
    ratio r > 0: a* = (1/r) 1.

    Raises:
        InvalidDimensionError for ratio = 0 with odd k (unless pad_odd) or a
        negative ratio.
    """

    if ratio < 0:
        raise InvalidDimensionError("ratio must be >= 0, got " +
                                    str(ratio) + ".")

    k = int(k)
    if ratio == 0:
        if k % 2 and not pad_odd:
            raise InvalidDimensionError(
                "ratio = 0 teacher needs an even k, got " + str(k) + ".")
        half = k // 2
        a_star = np.concatenate([np.full(half, -0.1), np.zeros(k % 2),
                                 np.full(half, 0.1)])
    else:
        a_star = np.full(k, 1.0 / ratio)

    return TeacherParams(random_unit_vector(p, rng), a_star)


def load_custom_init(path, t: TeacherParams):
    """
    Read a JSON {"w": [...], "a": [...]} initial point. A nonzero w of any
    norm is retracted onto the unit sphere.

    Raises:
        LabIOError if unreadable, ConfigError if malformed or w is zero,
        DimensionMismatchError if (p, k) disagree with the teacher.
    """

    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except OSError as e:
        raise LabIOError(path, e)
    except ValueError as e:
        raise ConfigError("init_file " + str(path) + " is not JSON: " +
                          str(e))

    try:
        w = np.asarray(data['w'], dtype=float)
        a = data['a']
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("init_file " + str(path) +
                          " needs numeric keys 'w' and 'a': " + str(e))

    if w.ndim != 1:
        raise ConfigError("init_file " + str(path) +
                          ": w must be a flat list of numbers.")
    try:
        s = StudentParams(project_to_sphere(w), a)
    except DegenerateProjectionError:
        raise ConfigError("init_file " + str(path) +
                          ": w is the zero vector and has no direction.")
    except (TypeError, ValueError) as e:
        raise ConfigError("init_file " + str(path) + ": " + str(e))
    s.check_matches(t)

    return s


class TrialJob:
    """
    Everything one worker needs to run one trial.
    """

    def __init__(self, cfg, cell: int, trial: int, p: int, k: int,
                 ratio: float, teacher=None, logger=None, pad_odd=False):
        self.cfg = cfg
        self.cell = cell
        self.trial = trial
        self.p = p
        self.k = k
        self.ratio = ratio
        self.teacher = teacher
        self.logger = logger
        self.pad_odd = pad_odd

    @property
    def stream_id(self):
        return self.cell * STREAM_STRIDE + self.trial


class TrialResult:
    """
    A trial's coordinates plus the optimizer's RunResult and the teacher it
    ran against.
    """

    def __init__(self, cell, trial, k, ratio, teacher, result):
        self.cell = cell
        self.trial = trial
        self.k = k
        self.ratio = ratio
        self.teacher = teacher
        self.result = result

    @property
    def succeeded(self):
        return self.result.succeeded


def run_trial(job: TrialJob):
    """
    Run a single trial. Module-level so the process pool can pickle it.
    """

    cfg = job.cfg
    rng = RngStream(cfg.seed, job.stream_id)
    t = job.teacher
    if t is None:
        t = build_teacher(job.p, job.k, job.ratio, rng, job.pad_odd)

    init = cfg.resolved_init()
    if init == "spurious":
        start = spurious_optimum(t)
    elif init == "random":
        start = VanillaGD.random_init(t, rng)
    else:
        start = load_custom_init(cfg.init_file, t)

    if cfg.algorithm == "pgd":
        opt = PerturbedGD(job.logger, cfg.tol_a, cfg.tol_phi)
        result = opt.run(start, cfg.schedule(), t, cfg.record_every, rng,
                         cfg.convergence())
    elif cfg.algorithm == "gd":
        opt = VanillaGD(job.logger, cfg.tol_a, cfg.tol_phi)
        result = opt.run(start, t, cfg.gd_eta, cfg.gd_iters,
                         cfg.record_every, rng.seed, rng.stream_id)
    else:
        opt = PerturbedSGD(job.logger, cfg.tol_a, cfg.tol_phi)
        result = opt.run(start, t, cfg.sgd_config(), cfg.record_every, rng,
                         cfg.convergence())

    return TrialResult(job.cell, job.trial, job.k, job.ratio, t, result)


class TrialRunner:
    """
    Control layer fanning independent trials out to a process pool. Each
    trial owns its RngStream, so results do not depend on the worker count.
    """

    def __init__(self, cfg, logger):
        self.cfg = cfg
        self.logger = logger

        if cfg.trials >= TEACHER_SLOT:
            raise ConfigError("trials must be < " + str(TEACHER_SLOT) + ".")

    def cell_teacher(self, cell: int, p: int, k: int, ratio: float,
                     pad_odd=False):
        """
        Shared teacher for a cell, drawn from the cell's reserved stream.
        """

        rng = RngStream(self.cfg.seed, cell * STREAM_STRIDE + TEACHER_SLOT)

        return build_teacher(p, k, ratio, rng, pad_odd)

    def run_cell(self, cell: int, p: int, k: int, ratio: float,
                 trials=None, pad_odd=False):
        """
        Run all trials of one (k, ratio) cell.

        Returns:
            list of TrialResult in trial order.
        """

        trials = self.cfg.trials if trials is None else int(trials)
        teacher = None
        if self.cfg.teacher_per == "cell":
            teacher = self.cell_teacher(cell, p, k, ratio, pad_odd)

        jobs = [TrialJob(self.cfg, cell, trial, p, k, ratio, teacher,
                         self.logger, pad_odd) for trial in range(trials)]

        if self.cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=self.cfg.workers) as pool:
                results = list(pool.map(run_trial, jobs))
        else:
            results = [run_trial(job) for job in jobs]

        successes = sum(r.succeeded for r in results)
        reheats = sum(r.result.reheats for r in results)
        self.logger.info(
            "Cell k=" + str(k) + " ratio=" + str(ratio) + ": " +
            str(successes) + "/" + str(trials) + " succeeded, " +
            str(reheats) + " reheats.")

        return results
