"""
command-line entry point

    python cli.py train --setting linear --sparsity 1 --iters 2000 --out-dir runs/lin1
    python cli.py check --checkpoint runs/lin1/checkpoint
    python cli.py eval --estimator ols lasso --setting linear --variant boundary --n 100 --reps 5000

exit codes: 0 success, 1 check failure, 2 usage error, 3 runtime or numeric failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from baselines import LassoCVProcedure, LassoGridMinimumProcedure, MeanProcedure, OLSProcedure, StackedProcedure
from checkpoint import CheckpointError, load_params, rebuild_generator, restore_checkpoint
from checks import run_checks
from config import FIELD_HELP, RunConfig, UsageError, field_names, load_config_file, resolve, write_resolved_config
from estimator import EquivariantProcedure, init_params, symmetrize
from evaluation import estimate_risk, feature_noising_harness, read_csv_dataset, write_results_csv
from generators import init_generator, sample_dataset
from plotting import plot_fits
from scenarios import evaluation_prior, load_scenario_shapes
from trainer import amc_train

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _help(name: str) -> str:
    text, source = FIELD_HELP[name]
    default = getattr(RunConfig(), name)
    shown = "setting-dependent" if default is None else default
    return f"{text} (default: {shown}; {source})"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="json file of options; flags override it")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging level (default: INFO)")

    prior = common.add_argument_group("prior")
    prior.add_argument("--setting", choices=["linear", "flam"], help=_help("setting"))
    prior.add_argument("--sparsity", type=int, help=_help("sparsity"))
    prior.add_argument("--p", type=int, help=_help("p"))
    prior.add_argument("--knots", type=int, help=_help("knots"))
    prior.add_argument("--variant", help=_help("variant"))
    prior.add_argument("--scenario-config", dest="scenario_config", help=_help("scenario_config"))

    net = common.add_argument_group("estimator")
    net.add_argument("--width", type=int, help=_help("width"))
    net.add_argument("--depth", type=int, help=_help("depth"))
    net.add_argument("--rank-preprocess", dest="rank_preprocess", action=argparse.BooleanOptionalAction,
                     default=None, help=_help("rank_preprocess"))
    net.add_argument("--checkpoint", help=_help("checkpoint"))

    run = common.add_argument_group("run")
    run.add_argument("--seed", type=int, help=_help("seed"))
    run.add_argument("--threads", type=int, help=_help("threads"))
    run.add_argument("--out-dir", dest="out_dir", help=_help("out_dir"))
    run.add_argument("--n-train", dest="n_train", type=int, help=_help("n_train"))

    parser = argparse.ArgumentParser(prog="amc", description="adversarially learned regression estimators")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="train an estimator against a prior generator")
    train.add_argument("--iters", "--iterations", dest="iterations", type=int, help=_help("iterations"))
    train.add_argument("--pretrain-iterations", dest="pretrain_iterations", type=int,
                       help=_help("pretrain_iterations"))
    train.add_argument("--batch-datasets", dest="batch_datasets", type=int, help=_help("batch_datasets"))
    train.add_argument("--eval-points", dest="eval_points", type=int, help=_help("eval_points"))
    train.add_argument("--estimator-rate", dest="estimator_rate", type=float, help=_help("estimator_rate"))
    train.add_argument("--prior-rate", dest="prior_rate", type=float, help=_help("prior_rate"))
    train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, help=_help("checkpoint_every"))
    train.add_argument("--resume", action="store_const", const=True, default=None, help=_help("resume"))

    check = sub.add_parser("check", parents=[common], help="run the invariant and gradient suites")
    check.add_argument("--cases", type=int, help=_help("cases"))
    check.add_argument("--samples", type=int, help=_help("samples"))

    ev = sub.add_parser("eval", parents=[common], help="monte carlo risk or real-data harness")
    ev.add_argument("--estimator", "--estimators", dest="estimators", nargs="+", help=_help("estimators"))
    ev.add_argument("--n", type=int, nargs="+", help=_help("n"))
    ev.add_argument("--n-eval", dest="n_eval", type=int, help=_help("n_eval"))
    ev.add_argument("--reps", type=int, help=_help("reps"))
    ev.add_argument("--data", help=_help("data"))
    ev.add_argument("--outcome", help=_help("outcome"))
    ev.add_argument("--features", type=int, help=_help("features"))
    ev.add_argument("--p-total", dest="p_total", type=int, help=_help("p_total"))
    ev.add_argument("--plot-fits", dest="plot_fits", action="store_const", const=True, default=None,
                    help=_help("plot_fits"))
    return parser


# commands

def cmd_train(config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(config, out_dir)
    train_config = config.train_config(progress=logger.isEnabledFor(logging.INFO))

    state = None
    if config.resume:
        state = restore_checkpoint(config.checkpoint)
        estimator = state.estimator
        prior = rebuild_generator(state)
        if prior is None:
            raise UsageError(f"checkpoint {config.checkpoint} holds no prior generator to resume")
        logger.info("resuming from iteration %d", state.iteration)
    else:
        log_path = Path(train_config.log_path)
        if log_path.exists():
            log_path.unlink()
        estimator = init_params(config.architecture(), config.seed)
        prior = init_generator(config.setting, config.sparsity, config.p, config.seed + 1, knots=config.knots)

    logger.info("training %s s=%d: %d parameters, %d pretraining + %d adversarial iterations",
                config.setting, config.sparsity, estimator.n_parameters,
                train_config.pretrain_iterations, train_config.iterations)
    _, _, log = amc_train(train_config, estimator, prior, resume=state)
    if len(log):
        tail = log.column("est_loss")[-max(1, len(log) // 10):]
        print(f"final estimator loss (last {tail.size} iterations): {tail.mean():.6f}")
    print(f"checkpoint: {config.checkpoint}")
    return EXIT_OK


def cmd_check(config: RunConfig) -> int:
    params = load_params(config.checkpoint) if config.checkpoint else None
    report = run_checks(params, seed=config.seed, cases=config.cases, samples=config.samples)
    print(report.table())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_procedures(config: RunConfig) -> Dict[str, object]:
    procedures: Dict[str, object] = {}
    params = None
    if any(name in ("amc", "amc-sym") for name in config.estimators):
        params = load_params(config.checkpoint)
    for name in config.estimators:
        if name == "amc":
            procedures[name] = EquivariantProcedure(params)
        elif name == "amc-sym":
            procedures[name] = symmetrize(params)
        elif name == "ols":
            procedures[name] = OLSProcedure()
        elif name == "lasso":
            procedures[name] = LassoCVProcedure(seed=config.seed)
        elif name == "lasso-min":
            procedures[name] = LassoGridMinimumProcedure()
        elif name == "mean":
            procedures[name] = MeanProcedure()
    if "stacked" in config.estimators:
        bases: List[object] = list(procedures.values()) or [OLSProcedure(), LassoCVProcedure(seed=config.seed)]
        procedures["stacked"] = StackedProcedure(bases, seed=config.seed)
    return procedures


def cmd_eval(config: RunConfig) -> int:
    procedures = build_procedures(config)
    out_dir = Path(config.out_dir)
    rows = []

    if config.data is not None:
        _, x, y = read_csv_dataset(config.data, config.outcome)
        results = feature_noising_harness(x, y, procedures, config.features, config.p_total, config.n_train,
                                          config.reps, config.seed, config.threads,
                                          setting=f"{Path(config.data).stem} s={config.features}")
        rows = [est.row(name, config.n_train) for name, est in results.items()]
    else:
        shapes = load_scenario_shapes(config.scenario_config) if config.scenario_config else None
        sampler = evaluation_prior(config.setting, config.sparsity, config.variant, config.p, shapes)
        setting = f"{config.setting}/{config.variant}/s={config.sparsity}"
        for n in config.n:
            for name, proc in procedures.items():
                est = estimate_risk(proc, sampler, n, config.n_eval, config.reps, config.seed,
                                    config.threads, setting)
                rows.append(est.row(name, n))

        if config.plot_fits:
            rng = np.random.default_rng(config.seed)
            dist = sampler(rng)
            sample = sample_dataset(dist, config.n[0], config.n_eval, rng)
            plot_fits(procedures, dist, sample.dataset, out_dir / f"fits_{config.variant}.svg", title=setting)

    path = write_results_csv(out_dir / "results.csv", rows)
    for row in rows:
        print(f"{row['estimator']:<10} {row['setting']:<32} n={row['n']:<5} "
              f"mse={row['mean_mse']:.4f} se={row['std_error']:.4f} reps={row['reps']}")
    print(f"results: {path}")
    return EXIT_OK


COMMAND_FUNCTIONS = {"train": cmd_train, "check": cmd_check, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    given = vars(args)
    try:
        file_values = load_config_file(args.config) if args.config else None
        flags = {name: given[name] for name in field_names() if name in given and name != "command"}
        config = resolve(args.command, flags, file_values)
        return COMMAND_FUNCTIONS[args.command](config)
    except UsageError as err:
        logger.error("usage error: %s", err)
        return EXIT_USAGE
    except CheckpointError as err:
        logger.error("checkpoint error: %s", err)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, ArithmeticError, OSError, np.linalg.LinAlgError) as err:
        logger.error("%s: %s", type(err).__name__, err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
