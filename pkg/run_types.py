"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from errors import ScheduleError
from param_types import StudentParams, OverparamStudent


class EpochSpec:
    """
    One epoch of an annealing schedule: T_s iterations at step size eta_s
    with noise radii (rho_w^s, rho_a^s).
    """

    def __init__(self, iters: int, step: float, noise_w: float,
                 noise_a: float):
        self.iters = int(iters)         # T_s, the loop runs T_s - 1 steps.
        self.step = float(step)         # eta_s.
        self.noise_w = float(noise_w)   # rho_w^s, filter noise radius.
        self.noise_a = float(noise_a)   # rho_a^s, output-weight noise radius.

        if self.iters < 1:
            raise ScheduleError("Epoch length must be >= 1.")
        if not self.step > 0:
            raise ScheduleError("Epoch step size must be > 0.")
        if self.noise_w < 0 or self.noise_a < 0:
            raise ScheduleError("Noise radii must be nonnegative.")

    def __repr__(self):
        return ("EpochSpec(iters=" + str(self.iters) + ", step=" +
                str(self.step) + ", noise_w=" + str(self.noise_w) +
                ", noise_a=" + str(self.noise_a) + ")")

    def get_epoch_dict(self):
        return {
            'iters': self.iters,
            'step': self.step,
            'noise_w': self.noise_w,
            'noise_a': self.noise_a}


class AnnealingSchedule:
    """
    Ordered epochs driving perturbed gradient descent. Noise radii never
    increase from one epoch to the next.
    """

    def __init__(self, epochs):
        self.epochs = list(epochs)

        if not self.epochs:
            raise ScheduleError("A schedule needs at least one epoch.")

        for prev, cur in zip(self.epochs, self.epochs[1:]):
            if cur.noise_w > prev.noise_w or cur.noise_a > prev.noise_a:
                raise ScheduleError(
                    "Noise radii must be nonincreasing across epochs.")

    @classmethod
    def geometric(cls, epochs: int, iters: int, eta0: float,
                  eta_decay: float, rho_w0: float, rho_a0: float,
                  rho_decay: float):
        """
        Epoch-wise geometric annealing: epoch s (from 0) uses
        eta0 * eta_decay^s and radii rho0 * rho_decay^s.
        """

        if int(epochs) < 1:
            raise ScheduleError("A schedule needs at least one epoch.")
        if not 0 < eta_decay <= 1 or not 0 < rho_decay <= 1:
            raise ScheduleError("Decay ratios must lie in (0, 1].")

        return cls([EpochSpec(iters, eta0 * eta_decay ** s,
                              rho_w0 * rho_decay ** s,
                              rho_a0 * rho_decay ** s)
                    for s in range(int(epochs))])

    def total_steps(self):
        """
        Number of optimizer steps the schedule executes, sum(T_s - 1).
        """

        return sum(e.iters - 1 for e in self.epochs)

    def get_schedule_dict(self):
        return {'epochs': [e.get_epoch_dict() for e in self.epochs]}


class TrajectoryRecord:
    """
    Diagnostics recorded along a run for phase-transition analysis.
    """

    FIELDS = ['epoch', 'iter', 'inner_aa', 'phi', 'loss']

    def __init__(self, epoch: int, iter: int, inner_aa: float, phi: float,
                 loss: float):
        self.epoch = int(epoch)         # Epoch index, from 1.
        self.iter = int(iter)           # Steps executed so far in the run.
        self.inner_aa = float(inner_aa)  # a_t' a*.
        self.phi = float(phi)           # Angle between w_t and w*.
        self.loss = float(loss)         # Population loss at (w_t, a_t).

    def __repr__(self):
        return ("TrajectoryRecord(epoch=" + str(self.epoch) + ", iter=" +
                str(self.iter) + ", inner_aa=" + repr(self.inner_aa) +
                ", phi=" + repr(self.phi) + ", loss=" + repr(self.loss) + ")")

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return self.get_record_dict() == other.get_record_dict()

    def get_record_dict(self):
        return {
            'epoch': self.epoch,
            'iter': self.iter,
            'inner_aa': self.inner_aa,
            'phi': self.phi,
            'loss': self.loss}


class RunResult:
    """
    Outcome of one optimizer run.
    """

    def __init__(self, final: StudentParams, trajectory, succeeded: bool,
                 seed: int, stream_id: int = 0, reheats: int = 0):
        self.final = final                  # Final iterate.
        self.trajectory = trajectory        # List of TrajectoryRecord, or None.
        self.succeeded = bool(succeeded)    # success_check on final.
        self.seed = int(seed)               # Seed of the run's stream.
        self.stream_id = int(stream_id)     # Stream id of the run's stream.
        self.reheats = int(reheats)         # Extra passes of the schedule.

    def get_result_dict(self):
        return {
            'final': self.final.get_params_dict(),
            'succeeded': self.succeeded,
            'seed': self.seed,
            'stream_id': self.stream_id,
            'reheats': self.reheats,
            'records': (len(self.trajectory) if self.trajectory is not None
                        else 0)}


class ConvergenceConfig:
    """
    What an annealed run does once its schedule is exhausted.

    The final iterate is polished by noiseless gradient descent at step
    polish_eta (smaller if the teacher's basin is steeper) until the
    stacked (tangent w, a) gradient norm drops to polish_tol or
    polish_iters steps have run. If the polished point is a
    stationary point with population loss above reheat_loss * ||a*||^2
    (the global minimum has loss 0), the whole schedule is run again from
    there, at most reheats times.
    """

    def __init__(self, polish_eta: float = 0.1, polish_iters: int = 20000,
                 polish_tol: float = 1e-9, reheats: int = 0,
                 reheat_loss: float = 1e-2):
        self.polish_eta = float(polish_eta)
        self.polish_iters = int(polish_iters)
        self.polish_tol = float(polish_tol)
        self.reheats = int(reheats)
        self.reheat_loss = float(reheat_loss)

        if not self.polish_eta > 0:
            raise ScheduleError("Polish step size must be > 0.")
        if self.polish_iters < 0 or self.reheats < 0:
            raise ScheduleError(
                "polish_iters and reheats must be nonnegative.")
        if self.polish_tol < 0 or not self.reheat_loss > 0:
            raise ScheduleError(
                "Need polish_tol >= 0 and reheat_loss > 0.")

    def get_convergence_dict(self):
        return {
            'polish_eta': self.polish_eta,
            'polish_iters': self.polish_iters,
            'polish_tol': self.polish_tol,
            'reheats': self.reheats,
            'reheat_loss': self.reheat_loss}


class SgdConfig:
    """
    Perturbed mini-batch SGD settings: batch size m, ball radius R for the
    output weights, and the annealing schedule.
    """

    def __init__(self, batch_size: int, radius: float,
                 schedule: AnnealingSchedule):
        self.batch_size = int(batch_size)   # m.
        self.radius = float(radius)         # R, a is kept in B_0(R).
        self.schedule = schedule

        if self.batch_size < 1:
            raise ScheduleError("Batch size must be >= 1.")
        if not self.radius > 0:
            raise ScheduleError("Projection radius R must be > 0.")


class OverparamRecord:
    """
    Loss and gradient norm along a two-filter gradient descent run.
    """

    FIELDS = ['iter', 'loss', 'grad_norm']

    def __init__(self, iter: int, loss: float, grad_norm: float):
        self.iter = int(iter)
        self.loss = float(loss)
        self.grad_norm = float(grad_norm)

    def get_record_dict(self):
        return {
            'iter': self.iter,
            'loss': self.loss,
            'grad_norm': self.grad_norm}


class OverparamRunResult:
    """
    Outcome of gradient descent on the two-filter finite-sample loss.
    """

    def __init__(self, final: OverparamStudent, trajectory, initial_loss,
                 initial_grad_norm, final_loss, final_grad_norm):
        self.final = final
        self.trajectory = trajectory
        self.initial_loss = float(initial_loss)
        self.initial_grad_norm = float(initial_grad_norm)
        self.final_loss = float(final_loss)
        self.final_grad_norm = float(final_grad_norm)

    def get_result_dict(self):
        return {
            'final': self.final.get_params_dict(),
            'initial_loss': self.initial_loss,
            'initial_grad_norm': self.initial_grad_norm,
            'final_loss': self.final_loss,
            'final_grad_norm': self.final_grad_norm}
