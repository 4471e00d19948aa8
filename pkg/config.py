"""
run configuration for the command-line tool

values are resolved with the precedence: command-line flags, then the json
file given by --config, then the built-in defaults. defaults that depend on
the setting (learning rates, pretraining, rank preprocessing) are filled in
once the setting and sparsity are known.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Mapping, Optional

from estimator import ArchitectureConfig
from generators import SETTINGS
from optim import AdamConfig
from scenarios import LINEAR_VARIANTS, parse_flam_variant
from trainer import TrainConfig, default_rates

COMMANDS = ("train", "check", "eval")
ESTIMATORS = ("amc", "amc-sym", "ols", "lasso", "lasso-min", "mean", "stacked")
NETWORK_ESTIMATORS = ("amc", "amc-sym")


class UsageError(ValueError):
    """conflicting or missing options, raised before any computation"""


# field -> (help text, provenance of the default)
FIELD_HELP = {
    "setting": ("regression setting: linear or flam", "experiment settings"),
    "sparsity": ("number of active features s", "sparse linear experiments use s=1 and s=5"),
    "p": ("number of features", "all experiments use p=10"),
    "n_train": ("observations per synthetic training dataset", "training runs use n=100"),
    "iterations": ("adversarial iterations K", "desk-scale default"),
    "pretrain_iterations": ("estimator-only iterations before adversarial updates",
                            "5000 for linear settings, 0 for flam or when --iters is 0"),
    "batch_datasets": ("datasets per batch", "batches of 100 datasets"),
    "eval_points": ("evaluation points per dataset", "performance evaluated at 100 values of x0"),
    "estimator_rate": ("estimator adam base rate", "0.0002 (linear s=1), 0.001 (linear s=5, flam)"),
    "prior_rate": ("prior adam base rate", "0.0002 (linear s=1), 0.001 (linear s=5), 0.005 (flam)"),
    "width": ("hidden width of every module (overrides the default architecture)",
              "default architecture: w_k=100, o1=o2=50, o3=10"),
    "depth": ("hidden layers of every module (overrides the default architecture)",
              "default architecture: h1=h3=10, h2=h4=3"),
    "rank_preprocess": ("replace features by their ranks before standardizing", "on for flam, off for linear"),
    "knots": ("knots per flam generator component", "500 knots"),
    "seed": ("root random seed", "built-in"),
    "threads": ("worker threads; 1 gives bit-reproducible runs", "logical cores"),
    "out_dir": ("output directory", "built-in"),
    "checkpoint": ("checkpoint path (without suffix)", "<out_dir>/checkpoint"),
    "checkpoint_every": ("iterations between checkpoints (0: only at the end)", "built-in"),
    "resume": ("continue training from --checkpoint", "off"),
    "variant": ("evaluation prior: boundary/interior/null or scenario<k>-<sparse|dense>",
                "boundary (linear), scenario1-sparse (flam)"),
    "estimators": ("estimators to evaluate", "ols"),
    "n": ("training sample sizes to evaluate at", "100"),
    "n_eval": ("evaluation points per replication", "100"),
    "reps": ("monte carlo replications", "5000 linear, 2000 flam are the reference counts; default 1000"),
    "scenario_config": ("json file replacing the flam scenario shapes", "built-in shapes"),
    "data": ("csv file for the feature-noising harness", "none"),
    "outcome": ("outcome column of --data", "none"),
    "features": ("real features kept per harness replication", "s"),
    "p_total": ("total features after adding noise columns in the harness", "10"),
    "plot_fits": ("write svg plots of fitted component curves", "off"),
    "cases": ("random cases per equivariance check", "100"),
    "samples": ("prior draws per constraint check", "10000"),
}


@dataclass
class RunConfig:
    command: str = "train"
    setting: str = "linear"
    sparsity: int = 1
    p: int = 10
    n_train: int = 100
    iterations: int = 1000
    pretrain_iterations: Optional[int] = None
    batch_datasets: int = 100
    eval_points: int = 100
    estimator_rate: Optional[float] = None
    prior_rate: Optional[float] = None
    width: Optional[int] = None
    depth: Optional[int] = None
    rank_preprocess: Optional[bool] = None
    knots: int = 500
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out_dir: str = "runs/default"
    checkpoint: Optional[str] = None
    checkpoint_every: int = 0
    resume: bool = False
    variant: Optional[str] = None
    estimators: List[str] = field(default_factory=lambda: ["ols"])
    n: List[int] = field(default_factory=lambda: [100])
    n_eval: int = 100
    reps: int = 1000
    scenario_config: Optional[str] = None
    data: Optional[str] = None
    outcome: Optional[str] = None
    features: Optional[int] = None
    p_total: int = 10
    plot_fits: bool = False
    cases: int = 100
    samples: int = 10000

    def fill_setting_defaults(self) -> "RunConfig":
        est_rate, prior_rate = default_rates(self.setting, self.sparsity)
        if self.estimator_rate is None:
            self.estimator_rate = est_rate
        if self.prior_rate is None:
            self.prior_rate = prior_rate
        if self.pretrain_iterations is None:
            # pretraining only precedes adversarial iterations
            self.pretrain_iterations = 5000 if self.setting == "linear" and self.iterations > 0 else 0
        if self.rank_preprocess is None:
            self.rank_preprocess = self.setting == "flam"
        if self.variant is None:
            self.variant = "boundary" if self.setting == "linear" else "scenario1-sparse"
        if self.checkpoint is None and self.command == "train":
            self.checkpoint = str(Path(self.out_dir) / "checkpoint")
        if self.features is None:
            self.features = self.sparsity
        return self

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command '{self.command}', expected one of {COMMANDS}")
        if self.setting not in SETTINGS:
            raise UsageError(f"unknown setting '{self.setting}', expected one of {SETTINGS}")
        if not 1 <= self.sparsity <= self.p:
            raise UsageError(f"--sparsity must lie in [1, p={self.p}], got {self.sparsity}")
        if self.setting == "linear" and self.variant not in LINEAR_VARIANTS:
            raise UsageError(f"variant '{self.variant}' does not apply to the linear setting "
                             f"(expected one of {LINEAR_VARIANTS})")
        if self.setting == "flam":
            try:
                parse_flam_variant(self.variant)
            except ValueError as err:
                raise UsageError(f"variant '{self.variant}' does not apply to the flam setting: {err}") from None
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise UsageError(f"unknown estimators {unknown}, expected a subset of {ESTIMATORS}")
        if self.command == "eval" and self.checkpoint is None and any(e in NETWORK_ESTIMATORS for e in self.estimators):
            raise UsageError("evaluating amc needs --checkpoint")
        if self.resume and self.checkpoint is None:
            raise UsageError("--resume needs --checkpoint")
        if self.data is not None and self.outcome is None:
            raise UsageError("--data needs --outcome")
        if self.data is not None and not 1 <= self.features <= self.p_total:
            raise UsageError(f"--features must lie in [1, --p-total={self.p_total}], got {self.features}")
        if (self.width is None) != (self.depth is None):
            raise UsageError("--width and --depth must be given together")
        for name in ("iterations", "pretrain_iterations", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise UsageError(f"--{name.replace('_', '-')} must be non-negative")
        for name in ("n_train", "batch_datasets", "eval_points", "threads", "n_eval", "knots", "cases", "samples"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if self.reps < 2:
            raise UsageError(f"--reps must be at least 2, got {self.reps}")
        if any(n < 2 for n in self.n):
            raise UsageError(f"--n values must be at least 2, got {self.n}")
        if self.estimator_rate <= 0 or self.prior_rate < 0:
            raise UsageError("--estimator-rate must be positive and --prior-rate non-negative")
        return self

    def architecture(self) -> ArchitectureConfig:
        if self.width is not None:
            return ArchitectureConfig.uniform(self.width, self.depth, rank_preprocess=self.rank_preprocess)
        return ArchitectureConfig(rank_preprocess=self.rank_preprocess)

    def train_config(self, progress: bool = False) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_datasets=self.batch_datasets,
            eval_points=self.eval_points,
            n_train=self.n_train,
            estimator_adam=AdamConfig(self.estimator_rate, beta1=0.25, decay_exponent=0.15),
            prior_adam=AdamConfig(self.prior_rate, beta1=0.0, decay_exponent=0.25),
            pretrain_iterations=self.pretrain_iterations,
            seed=self.seed,
            threads=self.threads,
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=self.checkpoint,
            log_path=str(Path(self.out_dir) / "train_log.csv"),
            progress=progress,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def field_names() -> List[str]:
    return [f.name for f in fields(RunConfig)]


def load_config_file(path) -> dict:
    """read a json object of RunConfig fields"""
    try:
        with open(Path(path), "r") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: expected a JSON object of options")
    unknown = sorted(set(raw) - set(field_names()))
    if unknown:
        raise UsageError(f"{path}: unknown options {unknown}")
    return raw


def resolve(command: str, flags: Mapping[str, object], file_values: Optional[Mapping[str, object]] = None) -> RunConfig:
    """
    merge defaults, config file and explicit flags into a validated RunConfig

    args:
        command: subcommand name
        flags: options given on the command line (absent options omitted)
        file_values: options read from the --config file
    """
    values = dict(file_values or {})
    values.update({k: v for k, v in flags.items() if v is not None})
    values["command"] = command
    config = RunConfig(**values)
    return config.fill_setting_defaults().validate()


def write_resolved_config(config: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
