"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Experiment configuration. Values are resolved from (lowest to highest
precedence) built-in defaults, a flat "key = value" config file, the
LAB_SEED environment variable and command-line flags.
"""

from errors import ConfigError, LabIOError, ScheduleError
from run_types import AnnealingSchedule, SgdConfig, ConvergenceConfig
import os


EXPERIMENTS = ["table1", "trajectory", "overparam", "verify"]
ALGORITHMS = ["pgd", "gd", "psgd"]
INITS = ["auto", "spurious", "random", "custom"]
TEACHER_MODES = ["trial", "cell"]

SEED_ENV = "LAB_SEED"


def _int(value):
    return int(str(value).strip())


def _float(value):
    return float(str(value).strip())


def _str(value):
    return str(value).strip()


def _int_list(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(',') if v.strip()]


def _float_list(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(',') if v.strip()]


# key: (parser, default)
KEYS = {
    'experiment': (_str, "table1"),
    'p': (_int, 6),
    'k': (_int_list, [25, 36, 49, 64, 81, 100]),
    'ratio_grid': (_float_list, [0.0, 1.0, 4.0, 9.0, 16.0, 25.0]),
    'trials': (_int, 100),
    'algorithm': (_str, "pgd"),
    'init': (_str, "auto"),
    'init_file': (_str, ""),
    'seed': (_int, 0),
    'tol_a': (_float, 1e-3),
    'tol_phi': (_float, 1e-2),
    'record_every': (_int, 10),
    'out_dir': (_str, "results"),
    'workers': (_int, 1),

    # Perturbed GD schedule.
    'epochs': (_int, 20),
    'iters': (_int, 400),
    'eta0': (_float, 0.1),
    'eta_decay': (_float, 0.8),
    'rho_w0': (_float, 36.0),
    'rho_a0': (_float, 1.0),
    'rho_decay': (_float, 0.4),

    # Noiseless GD baseline.
    'gd_eta': (_float, 0.1),
    'gd_iters': (_int, 8000),

    # Perturbed SGD.
    'batch_size': (_int, 4),
    'sgd_radius': (_float, 20.0),
    'sgd_epochs': (_int, 10),
    'sgd_iters': (_int, 4000),
    'sgd_eta0': (_float, 0.1),
    'sgd_eta_decay': (_float, 0.4),
    'sgd_rho_w0': (_float, 0.0),
    'sgd_rho_a0': (_float, 0.0),
    'sgd_rho_decay': (_float, 0.4),

    # Polish and reheat after an annealed schedule.
    'polish_eta': (_float, 0.1),
    'polish_iters': (_int, 20000),
    'polish_tol': (_float, 1e-9),
    'reheats': (_int, 15),
    'reheat_loss': (_float, 1e-2),

    'teacher_per': (_str, "trial"),

    # Two-filter experiment.
    'n_samples': (_int, 10000),
    'overparam_p': (_int, 15),
    'overparam_k': (_int, 10),
    'overparam_eta': (_float, 1e-5),
    'overparam_iters': (_int, 100000),

    'verify_samples': (_int, 1000000)}


def read_config_file(path):
    """
    Parse a "key = value" file. Blank lines and text after '#' are ignored.

    Returns:
        dict of raw string values.

    Raises:
        LabIOError if the file cannot be read.
        ConfigError for malformed lines or unknown keys.
    """

    try:
        with open(path, 'r') as f:
            lines = f.readlines()
    except OSError as e:
        raise LabIOError(path, e)

    raw = {}
    for number, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(
                str(path) + ":" + str(number) + ": expected 'key = value'.")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in KEYS:
            raise ConfigError(
                str(path) + ":" + str(number) + ": unknown key " +
                repr(key) + ".")
        raw[key] = value

    return raw


class ExperimentConfig:
    """
    Fully resolved, validated settings for one lab run.
    """

    def __init__(self, values=None):
        values = dict(values or {})
        for key in values:
            if key not in KEYS:
                raise ConfigError("Unknown config key " + repr(key) + ".")

        for key, (parse, default) in KEYS.items():
            raw = values.get(key, default)
            try:
                setattr(self, key, parse(raw))
            except (TypeError, ValueError):
                raise ConfigError(
                    "Bad value " + repr(raw) + " for key " + repr(key) + ".")

        self.validate()

    def validate(self):
        """
        Raise ConfigError if any setting is out of range.
        """

        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment must be one of " +
                              ", ".join(EXPERIMENTS) + ".")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm must be one of " +
                              ", ".join(ALGORITHMS) + ".")
        if self.init not in INITS:
            raise ConfigError("init must be one of " + ", ".join(INITS) + ".")
        if self.teacher_per not in TEACHER_MODES:
            raise ConfigError("teacher_per must be trial or cell.")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1.")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1.")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1.")
        if self.p < 2 or not self.k or min(self.k) < 2:
            raise ConfigError("Need p >= 2 and every k >= 2.")
        if not self.ratio_grid or min(self.ratio_grid) < 0:
            raise ConfigError("ratio_grid values must be >= 0.")
        if self.tol_a <= 0 or self.tol_phi <= 0:
            raise ConfigError("Success tolerances must be > 0.")
        if self.init == "custom":
            if not self.init_file:
                raise ConfigError("init = custom needs init_file.")
            if not os.path.isfile(self.init_file):
                raise ConfigError("init_file " + repr(self.init_file) +
                                  " does not exist.")
        if self.n_samples < 1 or self.verify_samples < 1:
            raise ConfigError("Sample counts must be >= 1.")

        try:
            self.schedule()
            self.sgd_config()
            self.convergence()
        except ScheduleError as e:
            raise ConfigError("Bad schedule settings: " + str(e))

    def resolved_init(self):
        """
        Initialisation actually used: auto means spurious for the perturbed
        algorithms and random for noiseless GD.
        """

        if self.init != "auto":
            return self.init
        return "random" if self.algorithm == "gd" else "spurious"

    def schedule(self):
        return AnnealingSchedule.geometric(
            self.epochs, self.iters, self.eta0, self.eta_decay, self.rho_w0,
            self.rho_a0, self.rho_decay)

    def sgd_config(self):
        schedule = AnnealingSchedule.geometric(
            self.sgd_epochs, self.sgd_iters, self.sgd_eta0,
            self.sgd_eta_decay, self.sgd_rho_w0, self.sgd_rho_a0,
            self.sgd_rho_decay)

        return SgdConfig(self.batch_size, self.sgd_radius, schedule)

    def convergence(self):
        return ConvergenceConfig(self.polish_eta, self.polish_iters,
                                 self.polish_tol, self.reheats,
                                 self.reheat_loss)

    def get_config_dict(self):
        return {key: getattr(self, key) for key in KEYS}


def build_config(experiment, path=None, overrides=None, environ=None):
    """
    Resolve an ExperimentConfig for experiment.

    Args:
        experiment: subcommand name.
        path: optional config file.
        overrides: dict of command-line values; None entries are ignored.
        environ: environment mapping (os.environ by default).

    Returns:
        ExperimentConfig.

    Raises:
        ConfigError, LabIOError.
    """

    environ = os.environ if environ is None else environ
    values = read_config_file(path) if path else {}
    values['experiment'] = experiment

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    if 'seed' not in overrides:
        env_seed = environ.get(SEED_ENV)
        if env_seed is not None and env_seed.strip():
            values['seed'] = env_seed

    values.update(overrides)

    return ExperimentConfig(values)
