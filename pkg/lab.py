"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from itertools import product
import logging

from param_types import TeacherParams, OverparamStudent
from sphere import RngStream, random_unit_vector
from population import spurious_a, spurious_optimum, population_loss
from empirical import sample_dataset
from optimizer import OverparamGD
from trials import TrialRunner, STREAM_STRIDE
from reports import SuccessTable, ReportWriter
from verifier import Verifier
import numpy as np


def overparam_teacher(p: int, k: int, rng: RngStream):
    """
    Two-filter experiment teacher: first half of a* equal to 1/sqrt(k), the
    rest -1/sqrt(k), w* uniform on the sphere.
    """

    half = k // 2
    a_star = np.concatenate([np.full(half, 1.0), np.full(k - half, -1.0)])

    return TeacherParams(random_unit_vector(p, rng), a_star / np.sqrt(k))


class Lab:
    """
    Lab owns the logger, the configuration and the report writer, and
    dispatches one experiment:

        table1      success-rate grid over (k, ratio)
        trajectory  per-trial and mean (a'a*, phi, loss) trajectories
        overparam   gradient descent on the two-filter finite-sample loss
        verify      Monte-Carlo and closed-form claim suite
    """

    def __init__(self, cfg, verbose=False):
        self.cfg = cfg

        self.log_level = logging.DEBUG if verbose else logging.INFO
        self.logger = self.setup_logger()

        self.writer = ReportWriter(cfg.out_dir, self.logger)
        self.runner = TrialRunner(cfg, self.logger)

    def run(self):
        """
        Run the configured experiment.

        Returns:
            0 on success, 1 if any verification claim failed.
        """

        self.logger.info(
            "Starting " + self.cfg.experiment + " (seed " +
            str(self.cfg.seed) + ", output " + self.cfg.out_dir + ").")

        if self.cfg.experiment == "table1":
            self.run_table1()
        elif self.cfg.experiment == "trajectory":
            self.run_trajectory()
        elif self.cfg.experiment == "overparam":
            self.run_overparam()
        else:
            claims = self.run_verify()
            if not all(c.passed for c in claims):
                return 1

        return 0

    def meta(self):
        """
        Run metadata echoed into JSON outputs.
        """

        cfg = self.cfg
        return {
            'algorithm': cfg.algorithm,
            'init': cfg.resolved_init(),
            'seed': cfg.seed,
            'stream_id': "cell * " + str(STREAM_STRIDE) + " + trial",
            'teacher_per': cfg.teacher_per,
            'tol_a': cfg.tol_a,
            'tol_phi': cfg.tol_phi,
            'config': cfg.get_config_dict()}

    def run_table1(self):
        """
        Run every (k, ratio) cell and write the success table.

        Returns:
            SuccessTable.
        """

        cfg = self.cfg
        table = SuccessTable(cfg.k, cfg.ratio_grid)
        for cell, (k, ratio) in enumerate(product(cfg.k, cfg.ratio_grid)):
            results = self.runner.run_cell(cell, cfg.p, k, ratio,
                                           pad_odd=True)
            table.add_cell(k, ratio, sum(r.succeeded for r in results),
                           len(results))

        self.writer.write_table(table, self.meta())
        self.logger.info("\n" + table.summary())

        return table

    def run_trajectory(self):
        """
        Run the trajectory experiment on the first configured (k, ratio)
        and write per-trial and mean trajectory files.

        Returns:
            list of TrialResult.
        """

        cfg = self.cfg
        k, ratio = cfg.k[0], cfg.ratio_grid[0]
        results = self.runner.run_cell(0, cfg.p, k, ratio)

        self.writer.write_trajectories(
            {r.trial: r.result.trajectory for r in results})
        self.writer.write_json('trajectory_summary.json', {
            'meta': self.meta(),
            'trials': [{'trial': r.trial, 'succeeded': r.succeeded,
                        'reheats': r.result.reheats} for r in results]})

        return results

    def run_overparam(self):
        """
        Freeze a dataset, start both filters at -w* with a = a~ and b = 0,
        and run full-batch gradient descent.

        Returns:
            OverparamRunResult.
        """

        cfg = self.cfg
        rng = RngStream(cfg.seed, 0)
        p, k = cfg.overparam_p, cfg.overparam_k

        t = overparam_teacher(p, k, rng)
        d = sample_dataset(cfg.n_samples, p, k, rng)
        init = OverparamStudent(-t.w_star, -t.w_star, spurious_a(t.a_star),
                                np.zeros(k))

        opt = OverparamGD(self.logger)
        result = opt.run(d, init, t, cfg.overparam_eta, cfg.overparam_iters,
                         cfg.record_every)

        meta = self.meta()
        meta['teacher'] = t.get_params_dict()
        meta['population_loss_at_spurious'] = population_loss(
            spurious_optimum(t), t)
        self.writer.write_overparam(result, meta, d)

        return result

    def run_verify(self):
        """
        Run the claim suite and write the verification report.

        Returns:
            list of Claim.
        """

        verifier = Verifier(self.logger, self.cfg.seed,
                            self.cfg.verify_samples)
        claims = verifier.run()
        self.writer.write_verify(claims)

        failed = [c.claim_id for c in claims if not c.passed]
        if failed:
            self.logger.info("Failed claims: " + ", ".join(failed) + ".")
        else:
            self.logger.info("All " + str(len(claims)) + " claims passed.")

        return claims

    def setup_logger(self):
        """
        Create and configure logger.

        Returns:
            logger: configured logger object.
        """

        logger = logging.getLogger()
        logger.setLevel(self.log_level)
        if not logger.handlers:
            ch = logging.StreamHandler()
            formatter = logging.Formatter(
                "%(asctime)s:%(levelname)s:%(module)s - %(message)s",
                datefmt="%d-%m-%Y %H:%M:%S")
            ch.setFormatter(formatter)
            logger.addHandler(ch)

        return logger
