"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""

from errors import LabIOError
from run_types import TrajectoryRecord
import pandas as pd
import json
import os


TRAJECTORY_COLUMNS = ['trial', 'epoch', 'iter', 'inner_aa', 'phi', 'loss']
OVERPARAM_COLUMNS = ['iter', 'loss', 'grad_norm']

# Trial label of the across-trial mean trajectory.
MEAN_TRIAL = -1


def ratio_label(ratio):
    """
    Column label for a ratio: integral values print without decimals.
    """

    ratio = float(ratio)
    return str(int(ratio)) if ratio.is_integer() else repr(ratio)


class SuccessTable:
    """
    Success rates over the (k, ratio) grid. Each cell holds the number of
    successful trials and the number run.
    """

    def __init__(self, ks, ratios):
        self.ks = list(ks)
        self.ratios = list(ratios)
        self.cells = {}

    def add_cell(self, k, ratio, successes: int, trials: int):
        if not 0 <= successes <= trials or trials < 1:
            raise ValueError("Cell counts out of range: " + str(successes) +
                             "/" + str(trials) + ".")
        self.cells[(k, float(ratio))] = (int(successes), int(trials))

    def rate(self, k, ratio):
        successes, trials = self.cells[(k, float(ratio))]
        return successes / trials

    def to_frame(self):
        """
        DataFrame indexed by k with one column per ratio. Missing cells are
        NaN.
        """

        rows = []
        for k in self.ks:
            rows.append([self.rate(k, r) if (k, float(r)) in self.cells
                         else float('nan') for r in self.ratios])

        frame = pd.DataFrame(rows, index=self.ks,
                             columns=[ratio_label(r) for r in self.ratios])
        frame.index.name = 'k'

        return frame

    def get_table_dict(self):
        return {
            'ks': self.ks,
            'ratios': self.ratios,
            'cells': [
                {'k': k, 'ratio': r, 'successes': s, 'trials': n,
                 'rate': s / n}
                for (k, r), (s, n) in sorted(self.cells.items())]}

    def summary(self):
        """
        Plain-text rendering of the grid.
        """

        return ("Success rates (rows k, columns 1'a*/||a*||^2)\n" +
                self.to_frame().to_string(float_format=lambda x: "%.2f" % x)
                + "\n")


class ReportWriter:
    """
    Single writer for every file the lab produces under out_dir.
    """

    def __init__(self, out_dir, logger):
        self.out_dir = out_dir
        self.logger = logger

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def ensure_dir(self):
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise LabIOError(self.out_dir, e)

    def write_text(self, name, text):
        path = self.path(name)
        try:
            with open(path, 'w') as f:
                f.write(text)
        except OSError as e:
            raise LabIOError(path, e)
        self.logger.info("Wrote " + path + ".")

        return path

    def write_json(self, name, data):
        return self.write_text(
            name, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_frame(self, name, frame, **kwargs):
        path = self.path(name)
        try:
            frame.to_csv(path, **kwargs)
        except OSError as e:
            raise LabIOError(path, e)
        self.logger.info("Wrote " + path + ".")

        return path

    def write_table(self, table: SuccessTable, meta: dict):
        """
        table1.csv (rates, 2 decimals), table1.json (counts and metadata)
        and table1_summary.txt.
        """

        self.ensure_dir()
        self.write_frame('table1.csv', table.to_frame(), float_format='%.2f')
        data = table.get_table_dict()
        data['meta'] = meta
        self.write_json('table1.json', data)
        self.write_text('table1_summary.txt', table.summary())

    def write_trajectories(self, trajectories: dict, prefix="trajectory"):
        """
        One CSV per trial plus <prefix>_mean.csv averaging records at equal
        (epoch, iter). trajectories maps trial index to a record list.
        """

        self.ensure_dir()
        frames = []
        for trial in sorted(trajectories):
            frame = trajectory_frame(trial, trajectories[trial])
            self.write_frame(prefix + "_trial_" + str(trial) + ".csv", frame,
                             index=False)
            frames.append(frame)

        if frames:
            mean = (pd.concat(frames)
                    .groupby(['epoch', 'iter'], sort=True)[
                        ['inner_aa', 'phi', 'loss']].mean()
                    .reset_index())
            mean.insert(0, 'trial', MEAN_TRIAL)
            self.write_frame(prefix + "_mean.csv", mean[TRAJECTORY_COLUMNS],
                             index=False)

    def write_overparam(self, result, meta: dict, dataset=None):
        """
        overparam_trajectory.csv, overparam_report.json and, when given, the
        frozen dataset as overparam_dataset.bin.
        """

        self.ensure_dir()
        frame = pd.DataFrame([r.get_record_dict() for r in result.trajectory],
                             columns=OVERPARAM_COLUMNS)
        self.write_frame('overparam_trajectory.csv', frame, index=False)

        data = result.get_result_dict()
        data['meta'] = meta
        self.write_json('overparam_report.json', data)

        if dataset is not None:
            path = self.path('overparam_dataset.bin')
            dataset.save(path)
            self.logger.info("Wrote " + path + ".")

    def write_verify(self, claims):
        """
        verify_report.json (one entry per claim) and verify_report.txt.
        """

        self.ensure_dir()
        self.write_json('verify_report.json',
                        [c.get_claim_dict() for c in claims])

        lines = []
        for c in claims:
            lines.append(("PASS" if c.passed else "FAIL") + "  " +
                         c.claim_id.ljust(24) + " estimate=" +
                         repr(c.estimate) + " se=" + repr(c.std_error) +
                         " tolerance=" + repr(c.tolerance) +
                         ("  # " + c.detail if c.detail else ""))
        failed = sum(not c.passed for c in claims)
        lines.append(str(len(claims) - failed) + "/" + str(len(claims)) +
                     " claims passed.")
        self.write_text('verify_report.txt', "\n".join(lines) + "\n")


def trajectory_frame(trial: int, records):
    rows = [[trial, r.epoch, r.iter, r.inner_aa, r.phi, r.loss]
            for r in records]

    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def read_trajectory(path):
    """
    Read a trajectory CSV back into (trial, TrajectoryRecord) pairs, with
    floats parsed exactly.

    Raises:
        LabIOError if the file is missing or has the wrong header.
    """

    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError) as e:
        raise LabIOError(path, e)

    if list(frame.columns) != TRAJECTORY_COLUMNS:
        raise LabIOError(path, "unexpected header " + str(list(frame.columns)))

    return [(int(row.trial), TrajectoryRecord(row.epoch, row.iter,
                                              row.inner_aa, row.phi, row.loss))
            for row in frame.itertuples(index=False)]
