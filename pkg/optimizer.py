"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from abc import ABC, abstractmethod
from errors import ConfigError, ScheduleError
from param_types import TeacherParams, StudentParams, OverparamStudent
from run_types import (AnnealingSchedule, TrajectoryRecord, RunResult,
                       SgdConfig, ConvergenceConfig, OverparamRecord,
                       OverparamRunResult)
from sphere import (BallSpec, RngStream, sample_unit_ball, random_unit_vector,
                    project_to_sphere, project_to_ball, tangent_project, angle)
from population import (population_loss, grad_a, grad_w_at,
                        perturbed_grads, student_phi, PI)
from empirical import (sample_inputs, minibatch_grad_at, overparam_loss,
                       overparam_grad)
import numpy as np


def success_check(final: StudentParams, t: TeacherParams, tol_a=1e-3,
                  tol_phi=1e-2):
    """
    True iff ||a - a*||^2 <= tol_a ||a*||^2 and angle(w, w*) <= tol_phi.
    """

    final.check_matches(t)
    err = np.sum((final.a - t.a_star) ** 2)

    return bool(err <= tol_a * np.dot(t.a_star, t.a_star) and
                angle(final.w, t.w_star) <= tol_phi)


def descend(s: StudentParams, gw, ga, eta: float):
    """
    One update from gradients (gw, ga): a plain step for a, a tangent step
    followed by sphere retraction for w.
    """

    a = s.a - eta * ga
    w = project_to_sphere(s.w - eta * tangent_project(s.w, gw))

    return StudentParams(w, a)


def make_record(epoch: int, step: int, s: StudentParams, t: TeacherParams):
    return TrajectoryRecord(epoch, step, np.dot(s.a, t.a_star),
                            student_phi(s, t), population_loss(s, t))


def needs_reheat(s: StudentParams, t: TeacherParams,
                 convergence: ConvergenceConfig):
    """
    True when s sits above the global-minimum loss level, i.e. the
    population loss exceeds reheat_loss * ||a*||^2.
    """

    level = convergence.reheat_loss * np.dot(t.a_star, t.a_star)

    return population_loss(s, t) > level


class _Progress:
    """
    Step counter, epoch tag and record cadence shared by every phase of
    an annealed run.
    """

    def __init__(self, t: TeacherParams, record_every: int):
        self.t = t
        self.record_every = int(record_every)
        self.records = []
        self.executed = 0
        self.epoch = 0

    def step(self, state: StudentParams):
        self.executed += 1
        if self.executed % self.record_every == 0:
            self.records.append(make_record(self.epoch, self.executed, state,
                                            self.t))


class Optimizer(ABC):
    """
    Base class for the optimizers run by the lab.
    """

    def __init__(self, logger, tol_a=1e-3, tol_phi=1e-2):
        super().__init__()

        self.logger = logger

        # Success tolerances applied to every final iterate.
        self.tol_a = tol_a
        self.tol_phi = tol_phi

    def success(self, final: StudentParams, t: TeacherParams):
        return success_check(final, t, self.tol_a, self.tol_phi)

    def get_name(self):
        """
        Return optimizer name.
        """

        return self.name

    @abstractmethod
    def step(self):
        """
        Apply one update and return the new state.
        """

    @abstractmethod
    def run(self):
        """
        Run the optimizer to completion and return its result.
        """

    def anneal(self, init: StudentParams, schedule: AnnealingSchedule,
               t: TeacherParams, record_every: int, rng: RngStream,
               step_fn, convergence: ConvergenceConfig = None):
        """
        Epoch loop shared by the annealed algorithms. Epoch s runs T_s - 1
        steps of step_fn(state, eta, rho_w, rho_a) and the next epoch starts
        from its last iterate.

        Without convergence settings the run ends with the last epoch. With
        them, the last iterate is polished and, while it is stuck above the
        global-minimum loss level, the schedule is run again from there.
        Polish steps count towards record_every and are tagged with their
        own epoch number.

        Returns:
            (final state, list of TrajectoryRecord, reheats used).
        """

        if int(record_every) < 1:
            raise ScheduleError("record_every must be >= 1.")
        init.check_matches(t)

        state = init.copy()
        progress = _Progress(t, record_every)
        reheats = 0

        while True:
            for epoch in schedule.epochs:
                progress.epoch += 1
                for _ in range(epoch.iters - 1):
                    state = step_fn(state, epoch.step, epoch.noise_w,
                                    epoch.noise_a)
                    progress.step(state)

                self.logger.debug(
                    self.get_name() + " epoch " + str(progress.epoch) +
                    ": eta=" + str(epoch.step) + " rho_w=" +
                    str(epoch.noise_w) + " rho_a=" + str(epoch.noise_a) +
                    " phi=" + str(round(student_phi(state, t), 6)) +
                    " a'a*=" + str(round(float(np.dot(state.a, t.a_star)),
                                         6)))

            if convergence is None:
                break

            state = self.polish(state, t, convergence, progress)
            if not needs_reheat(state, t, convergence):
                break
            if reheats == convergence.reheats:
                self.logger.debug(
                    self.get_name() + " still stuck after " + str(reheats) +
                    " reheats.")
                break

            reheats += 1
            self.logger.debug(
                self.get_name() + " stuck at loss " +
                str(round(population_loss(state, t), 6)) + ", reheat " +
                str(reheats) + "/" + str(convergence.reheats) + ".")

        return state, progress.records, reheats

    @staticmethod
    def polish_step(t: TeacherParams, convergence: ConvergenceConfig):
        """
        polish_eta, capped so that eta * curvature stays below 1 around the
        teacher: the w-curvature there is ||a*||^2 / 2 and the largest
        a-curvature is (k + pi - 1) / 2pi.
        """

        curvature = max(np.dot(t.a_star, t.a_star),
                        (t.k + PI - 1) / (2 * PI))

        return min(convergence.polish_eta, 1.0 / curvature)

    def polish(self, s: StudentParams, t: TeacherParams,
               convergence: ConvergenceConfig, progress: _Progress):
        """
        Noiseless gradient descent on the population loss until the stacked
        (tangent w, a) gradient norm is at most polish_tol, capped at
        polish_iters steps.
        """

        progress.epoch += 1
        eta = self.polish_step(t, convergence)
        for _ in range(convergence.polish_iters):
            gw = tangent_project(s.w, grad_w_at(s.w, s.a, t))
            ga = grad_a(s, t)
            if np.sqrt(np.dot(gw, gw) + np.dot(ga, ga)) <= \
                    convergence.polish_tol:
                break
            s = descend(s, gw, ga, eta)
            progress.step(s)

        return s


class PerturbedGD(Optimizer):
    """
    Perturbed gradient descent with noise annealing on the population loss.

    Each step draws one xi ~ unif(B_0(rho_w)) and one eps ~ unif(B_0(rho_a))
    and uses the gradients at (w + xi, a + eps) for both coordinate updates.
    """

    name = "Perturbed GD"

    def step(self, s: StudentParams, t: TeacherParams, eta: float,
             rho_w: float, rho_a: float, rng: RngStream):
        """
        One perturbed update. Radii of 0 draw nothing from rng and reduce
        this to a VanillaGD step, bit for bit.
        """

        if not eta > 0:
            raise ScheduleError("Step size must be > 0.")

        gw, ga = perturbed_grads(s, t, rho_w, rho_a, rng)

        return descend(s, gw, ga, eta)

    def run(self, init: StudentParams, schedule: AnnealingSchedule,
            t: TeacherParams, record_every: int, rng: RngStream,
            convergence: ConvergenceConfig = None):
        """
        Run every epoch of schedule from init, then polish and reheat as
        convergence says (nothing more when it is None).

        Returns:
            RunResult.
        """

        final, records, reheats = self.anneal(
            init, schedule, t, record_every, rng,
            lambda s, eta, rw, ra: self.step(s, t, eta, rw, ra, rng),
            convergence)

        return RunResult(final, records, self.success(final, t), rng.seed,
                         rng.stream_id, reheats)


class VanillaGD(Optimizer):
    """
    Noiseless projected gradient descent baseline.
    """

    name = "GD"

    @staticmethod
    def random_init(t: TeacherParams, rng: RngStream):
        """
        Random initialisation w0 ~ unif(S_0(1)), a0 ~ unif(B_0(|1'a*|/sqrt(k))).
        The ball collapses to a0 = 0 when 1'a* = 0.
        """

        w = random_unit_vector(t.p, rng)
        radius = abs(np.sum(t.a_star)) / np.sqrt(t.k)
        a = sample_unit_ball(BallSpec(t.k, radius), rng)

        return StudentParams(w, a)

    def step(self, s: StudentParams, t: TeacherParams, eta: float):
        if not eta > 0:
            raise ScheduleError("Step size must be > 0.")
        s.check_matches(t)

        return descend(s, grad_w_at(s.w, s.a, t), grad_a(s, t), eta)

    def run(self, init: StudentParams, t: TeacherParams, eta: float,
            iters: int, record_every: int, seed: int = 0, stream_id: int = 0):
        """
        Run iters steps at constant step size eta. Records are tagged epoch 1.

        Returns:
            RunResult.
        """

        if int(iters) < 0:
            raise ScheduleError("Iteration count must be nonnegative.")
        if int(record_every) < 1:
            raise ScheduleError("record_every must be >= 1.")
        init.check_matches(t)

        state = init.copy()
        records = []
        for j in range(1, int(iters) + 1):
            state = self.step(state, t, eta)
            if j % record_every == 0:
                records.append(make_record(1, j, state, t))

        self.logger.debug(
            self.get_name() + " finished " + str(iters) + " steps: phi=" +
            str(round(student_phi(state, t), 6)))

        return RunResult(state, records, self.success(state, t), seed,
                         stream_id)


class PerturbedSGD(Optimizer):
    """
    Perturbed mini-batch SGD: a fresh batch of m Gaussian inputs per step,
    gradients at the perturbed point, output weights projected onto B_0(R).
    """

    name = "Perturbed SGD"

    def step(self, s: StudentParams, t: TeacherParams, cfg: SgdConfig,
             eta: float, rho_w: float, rho_a: float, rng: RngStream):
        """
        One update. Draw order from rng: xi, eps, then the batch.
        """

        if not eta > 0:
            raise ScheduleError("Step size must be > 0.")
        s.check_matches(t)

        xi = sample_unit_ball(BallSpec(s.p, rho_w), rng)
        eps = sample_unit_ball(BallSpec(s.k, rho_a), rng)
        batch = sample_inputs(cfg.batch_size, s.p, s.k, rng)
        gw, ga = minibatch_grad_at(batch, s.w + xi, s.a + eps, t)

        a = project_to_ball(s.a - eta * ga, cfg.radius)
        w = project_to_sphere(s.w - eta * tangent_project(s.w, gw))

        return StudentParams(w, a)

    def run(self, init: StudentParams, t: TeacherParams, cfg: SgdConfig,
            record_every: int, rng: RngStream,
            convergence: ConvergenceConfig = None):
        """
        Run the SGD schedule from init, then polish and reheat as
        convergence says.

        Raises:
            ConfigError if the projection radius R is below ||a*||, so that
            the teacher's output weights lie outside B_0(R).
        """

        norm = float(np.linalg.norm(t.a_star))
        if cfg.radius < norm:
            raise ConfigError(
                "SGD projection radius R=" + str(cfg.radius) +
                " is smaller than ||a*|| = " + str(round(norm, 6)) + ".")

        final, records, reheats = self.anneal(
            init, cfg.schedule, t, record_every, rng,
            lambda s, eta, rw, ra: self.step(s, t, cfg, eta, rw, ra, rng),
            convergence)

        return RunResult(final, records, self.success(final, t), rng.seed,
                         rng.stream_id, reheats)


class OverparamGD(Optimizer):
    """
    Full-batch gradient descent on the two-filter finite-sample loss F_n,
    with both filters kept on the unit sphere.
    """

    name = "Overparameterized GD"

    @staticmethod
    def stationarity(d, s: OverparamStudent, t: TeacherParams):
        """
        Loss, sphere-tangent gradients and the norm of the stacked
        (tangent w, tangent v, a, b) gradient at s.
        """

        gw, gv, ga, gb = overparam_grad(d, s, t)
        tw = tangent_project(s.w, gw)
        tv = tangent_project(s.v, gv)
        norm = np.sqrt(np.sum(tw ** 2) + np.sum(tv ** 2) + np.sum(ga ** 2) +
                       np.sum(gb ** 2))

        return overparam_loss(d, s, t), (tw, tv, ga, gb), float(norm)

    def step(self, d, s: OverparamStudent, t: TeacherParams, eta: float,
             grads=None):
        """
        One full-batch update; grads, when given, are the tangent
        gradients already computed at s.
        """

        if grads is None:
            grads = self.stationarity(d, s, t)[1]

        return self.descend(s, grads, eta)

    @staticmethod
    def descend(s: OverparamStudent, grads, eta: float):
        tw, tv, ga, gb = grads

        return OverparamStudent(project_to_sphere(s.w - eta * tw),
                                project_to_sphere(s.v - eta * tv),
                                s.a - eta * ga, s.b - eta * gb)

    def run(self, d, init: OverparamStudent, t: TeacherParams, eta: float,
            iters: int, record_every: int):
        """
        Run iters full-batch steps from init, recording (loss, grad_norm)
        every record_every steps.

        Returns:
            OverparamRunResult.
        """

        if not eta > 0:
            raise ScheduleError("Step size must be > 0.")
        if int(iters) < 0 or int(record_every) < 1:
            raise ScheduleError(
                "Need iters >= 0 and record_every >= 1 for GD.")

        state = init.copy()
        loss, grads, norm = self.stationarity(d, state, t)
        initial_loss, initial_norm = loss, norm
        self.logger.info(
            self.get_name() + " start: F_n=" + str(round(loss, 6)) +
            " |grad|=" + str(round(norm, 6)))

        records = []
        for j in range(1, int(iters) + 1):
            state = self.step(d, state, t, eta, grads)
            loss, grads, norm = self.stationarity(d, state, t)
            if j % record_every == 0:
                records.append(OverparamRecord(j, loss, norm))

        self.logger.info(
            self.get_name() + " end: F_n=" + str(round(loss, 6)) +
            " |grad|=" + str(round(norm, 6)))

        return OverparamRunResult(state, records, initial_loss, initial_norm,
                                  loss, norm)
