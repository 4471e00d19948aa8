"""
executable invariant suites behind the `check` command

each suite returns CheckResult rows carrying the largest deviation seen and
the tolerance it was held to, so the command can print one table and exit
nonzero on any failure.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from autodiff import (Tape, Tensor, absolute, concat, div, exp, leaky_relu, leaves, matmul, mean_axis,
                      no_tape, repeat, reshape, sqrt, square, sum_axis)
from core import Dataset, standardize, tree_sum
from estimator import ArchitectureConfig, EstimatorParams, forward, group_layers, init_params, predict_many
from generators import (TOTAL_VARIATION, FeaturePriorConfig, init_generator, sample_feature_prior,
                        sample_regression_flam, sample_regression_linear)
from layers import apply_stack
from scenarios import LINEAR_VARIANTS, SCENARIOS, evaluation_prior

logger = logging.getLogger(__name__)

EQUIVARIANCE_TOL = 1e-8
LAYER_TOL = 1e-10
RELATIVE_FLOOR = 1e-12
GRADIENT_STEP = 1e-6
GRADIENT_RTOL = 1e-5
GRADIENT_ATOL = 1e-8
ROUND_TRIP_TOL = 1e-12
TV_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    detail: str = ""


@dataclass
class CheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def table(self) -> str:
        width = max([len(r.name) for r in self.results] + [5])
        lines = [f"{'check':<{width}}  status  max_deviation  tolerance  detail"]
        for r in self.results:
            status = "pass" if r.passed else "FAIL"
            lines.append(f"{r.name:<{width}}  {status:<6}  {r.max_deviation:13.3e}  {r.tolerance:9.1e}  {r.detail}")
        return "\n".join(lines)


def _result(name: str, deviation: float, tolerance: float, detail: str = "") -> CheckResult:
    deviation = float(deviation)
    passed = bool(np.isfinite(deviation) and deviation <= tolerance)
    if not passed:
        logger.warning("check %s failed: deviation %.3e > %.1e", name, deviation, tolerance)
    return CheckResult(name, passed, deviation, tolerance, detail)


def relative_deviation(actual: np.ndarray, expected: np.ndarray, floor: float = RELATIVE_FLOOR) -> float:
    """max |actual - expected| / max(floor, |expected|) over all entries"""
    actual, expected = np.asarray(actual), np.asarray(expected)
    return float(np.max(np.abs(actual - expected) / np.maximum(floor, np.abs(expected))))


# equivariance

def equivariance_suite(params: EstimatorParams, rng: np.random.Generator,
                       cases: int = 100, tol: float = EQUIVARIANCE_TOL) -> List[CheckResult]:
    """
    permutation and affine transformation properties of the network

    each case draws n in 3..12, p in 1..6, a dataset, three evaluation
    points, row and column permutations, feature shifts and positive
    scales, and an outcome shift and positive scale.
    """
    perm_dev = affine_dev = 0.0
    for _ in range(cases):
        n, p, m = int(rng.integers(3, 13)), int(rng.integers(1, 7)), 3
        x, y, x0 = rng.standard_normal((n, p)), rng.standard_normal(n), rng.standard_normal((m, p))
        base = predict_many(params, Dataset(x, y), x0)

        rows, cols = rng.permutation(n), rng.permutation(p)
        permuted = predict_many(params, Dataset(x[rows][:, cols], y[rows]), x0[:, cols])
        perm_dev = max(perm_dev, relative_deviation(permuted, base))

        a, b = rng.standard_normal(p), rng.uniform(0.5, 2.0, p)
        a_y, b_y = float(rng.standard_normal()), float(rng.uniform(0.5, 2.0))
        moved = predict_many(params, Dataset(a + b * x, a_y + b_y * y), a + b * x0)
        affine_dev = max(affine_dev, relative_deviation(moved, a_y + b_y * base))

    return [_result("equivariance/permutation", perm_dev, tol, f"{cases} cases"),
            _result("equivariance/affine", affine_dev, tol, f"{cases} cases")]


def _increasing_maps():
    return [lambda v: v ** 3 + v, np.exp, lambda v: np.arctan(v) * 5.0 - 1.0]


def rank_invariance_suite(params: EstimatorParams, rng: np.random.Generator, cases: int = 50) -> List[CheckResult]:
    """with rank preprocessing, strictly increasing per-feature maps leave predictions unchanged"""
    ranked = EstimatorParams(dataclasses.replace(params.config, rank_preprocess=True), params.weights)
    maps = _increasing_maps()
    deviation = 0.0
    for _ in range(cases):
        n, p = int(rng.integers(3, 13)), int(rng.integers(1, 7))
        x, y, x0 = rng.standard_normal((n, p)), rng.standard_normal(n), rng.standard_normal((2, p))
        choice = rng.integers(len(maps), size=p)
        tx = np.column_stack([maps[c](x[:, j]) for j, c in enumerate(choice)])
        tx0 = np.column_stack([maps[c](x0[:, j]) for j, c in enumerate(choice)])
        base = predict_many(ranked, Dataset(x, y), x0)
        moved = predict_many(ranked, Dataset(tx, y), tx0)
        deviation = max(deviation, float(np.max(np.abs(moved - base))))
    return [_result("equivariance/rank_monotone", deviation, 0.0, f"{cases} cases")]


def layer_suite(params: EstimatorParams, rng: np.random.Generator, cases: int = 10,
                tol: float = LAYER_TOL) -> List[CheckResult]:
    """module-level permutation contracts using the modules of params"""
    cfg = params.config
    w = params.leaves(requires_grad=False)
    dev = {1: 0.0, 2: 0.0, 3: 0.0}
    with no_tape():
        for _ in range(cases):
            n, p = int(rng.integers(2, 9)), int(rng.integers(1, 7))
            rows, cols = rng.permutation(n), rng.permutation(p)

            v = rng.standard_normal((n, p, 2))
            out = apply_stack(Tensor(v), "exchangeable", group_layers(w, 1)).data
            moved = apply_stack(Tensor(v[rows][:, cols]), "exchangeable", group_layers(w, 1)).data
            dev[1] = max(dev[1], float(np.max(np.abs(moved - out[rows][:, cols]))))

            for k, width in ((2, cfg.o1), (3, cfg.o2 + 1)):
                u = rng.standard_normal((p, width))
                out = apply_stack(Tensor(u), "deep_set", group_layers(w, k)).data
                moved = apply_stack(Tensor(u[cols]), "deep_set", group_layers(w, k)).data
                dev[k] = max(dev[k], float(np.max(np.abs(moved - out[cols]))))

    return [_result("layers/exchangeable_m1", dev[1], tol),
            _result("layers/deep_set_m2", dev[2], tol),
            _result("layers/deep_set_m3", dev[3], tol)]


# gradients

def _kink_signature(tape: Tape) -> np.ndarray:
    parts = [(a > 0).ravel() for a in tape.inputs_of("leaky_relu") + tape.inputs_of("abs")]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def _evaluate(fn: Callable[[Dict[str, Tensor]], Tensor], arrays: Mapping[str, np.ndarray]) -> Tuple[float, np.ndarray]:
    named = leaves(arrays, requires_grad=True)
    with Tape() as tape:
        out = fn(named)
    return out.item(), _kink_signature(tape)


def gradient_check(fn: Callable[[Dict[str, Tensor]], Tensor], arrays: Mapping[str, np.ndarray],
                   h: float = GRADIENT_STEP, rtol: float = GRADIENT_RTOL,
                   atol: float = GRADIENT_ATOL) -> Tuple[float, int, int]:
    """
    analytic gradient of a scalar fn against central differences

    a coordinate whose +h or -h perturbation changes the sign pattern of
    any leaky-relu or abs input crosses a kink and is skipped.

    returns:
        (max relative error, coordinates compared, coordinates skipped)
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    named = leaves(arrays, requires_grad=True)
    with Tape() as tape:
        out = fn(named)
    base_signature = _kink_signature(tape)
    if out._node is not None:
        tape.backward(out)

    worst, compared, skipped = 0.0, 0, 0
    floor = atol / rtol
    for name, value in arrays.items():
        analytic = named[name].grad if named[name].grad is not None else np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            original = value[idx]
            value[idx] = original + h
            f_plus, sig_plus = _evaluate(fn, arrays)
            value[idx] = original - h
            f_minus, sig_minus = _evaluate(fn, arrays)
            value[idx] = original
            if not (np.array_equal(sig_plus, base_signature) and np.array_equal(sig_minus, base_signature)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
            compared += 1
    return worst, compared, skipped


def _weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    return sum_axis(t * weights)


def primitive_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable, Dict[str, np.ndarray]]]:
    """name -> (scalar function of named tensors, input arrays); inputs kept away from kinks"""
    def away(shape, gap=1e-3):
        v = rng.standard_normal(shape)
        return np.where(np.abs(v) < gap, np.sign(v + 0.5) * (gap + np.abs(v)), v)

    r = {s: rng.standard_normal(s) for s in [(3, 4), (4,), (4, 2), (2, 3, 4), (4, 5), (3, 1)]}
    out_w = {k: rng.standard_normal(k) for k in [(3, 4), (3, 2), (2, 3, 5), (3,), (4,), (3, 8), (3, 5), (12,)]}
    return {
        "add": (lambda t: _weighted_sum(t["a"] + t["b"], out_w[(3, 4)]), {"a": r[(3, 4)], "b": r[(4,)]}),
        "sub": (lambda t: _weighted_sum(t["a"] - t["b"], out_w[(3, 4)]), {"a": r[(3, 4)], "b": r[(3, 1)]}),
        "mul": (lambda t: _weighted_sum(t["a"] * t["b"], out_w[(3, 4)]), {"a": r[(3, 4)], "b": r[(4,)]}),
        "div": (lambda t: _weighted_sum(div(t["a"], t["b"]), out_w[(3, 4)]),
                {"a": r[(3, 4)], "b": 1.5 + np.abs(r[(4,)])}),
        "matmul": (lambda t: _weighted_sum(matmul(t["a"], t["b"]), out_w[(3, 2)]), {"a": r[(3, 4)], "b": r[(4, 2)]}),
        "matmul_batched": (lambda t: _weighted_sum(matmul(t["a"], t["b"]), out_w[(2, 3, 5)]),
                           {"a": r[(2, 3, 4)], "b": r[(4, 5)]}),
        "sum_axis": (lambda t: _weighted_sum(sum_axis(t["a"], axis=1), out_w[(3,)]), {"a": r[(3, 4)]}),
        "mean_axis": (lambda t: _weighted_sum(mean_axis(t["a"], axis=0), out_w[(4,)]), {"a": r[(3, 4)]}),
        "repeat": (lambda t: _weighted_sum(repeat(t["a"], 2, axis=1), out_w[(3, 8)]), {"a": r[(3, 4)]}),
        "concat": (lambda t: _weighted_sum(concat([t["a"], t["b"]], axis=1), out_w[(3, 5)]),
                   {"a": r[(3, 4)], "b": r[(3, 1)]}),
        "reshape": (lambda t: _weighted_sum(reshape(t["a"], (12,)), out_w[(12,)]), {"a": r[(3, 4)]}),
        "exp": (lambda t: _weighted_sum(exp(t["a"]), out_w[(3, 4)]), {"a": r[(3, 4)]}),
        "abs": (lambda t: _weighted_sum(absolute(t["a"]), out_w[(3, 4)]), {"a": away((3, 4))}),
        "sqrt": (lambda t: _weighted_sum(sqrt(t["a"]), out_w[(3, 4)]), {"a": 0.5 + np.abs(r[(3, 4)])}),
        "square": (lambda t: _weighted_sum(square(t["a"]), out_w[(3, 4)]), {"a": r[(3, 4)]}),
        "leaky_relu": (lambda t: _weighted_sum(leaky_relu(t["a"]), out_w[(3, 4)]), {"a": away((3, 4))}),
    }


def network_gradient_case(rng: np.random.Generator, n: int = 5, p: int = 3, width: int = 6, depth: int = 2):
    """squared-error loss of a small network as a function of its weights"""
    params = init_params(ArchitectureConfig.uniform(width, depth), int(rng.integers(2 ** 31)))
    x, y = rng.standard_normal((1, n, p)), rng.standard_normal((1, n))
    x0, target = rng.standard_normal((1, 4, p)), rng.standard_normal((1, 4))

    def loss(w: Dict[str, Tensor]) -> Tensor:
        return mean_axis(square(forward(w, params.config, x, y, x0) - target))

    return loss, params.weights


def prior_gradient_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable, Dict[str, np.ndarray]]]:
    """scalar functionals of sampled regressions as functions of generator weights, noise frozen"""
    p = 3
    flam = init_generator("flam", 2, p, int(rng.integers(2 ** 31)), knots=20, hidden_width=5, hidden_layers=1)
    linear = init_generator("linear", 2, p, int(rng.integers(2 ** 31)), hidden_width=5, hidden_layers=1)
    _, chol = sample_feature_prior(FeaturePriorConfig(p), rng)
    _, flam_noise = sample_regression_flam(flam, chol, rng)
    _, linear_noise = sample_regression_linear(linear, rng)
    points = rng.standard_normal((6, p))

    def flam_value(w):
        mu, _ = sample_regression_flam(flam, chol, rng, weights=w, noise=flam_noise)
        return sum_axis(square(mu(points)))

    def linear_value(w):
        beta, _ = sample_regression_linear(linear, rng, weights=w, noise=linear_noise)
        return sum_axis(square(matmul(Tensor(points), beta.reshape(-1, 1))))

    return {"prior_flam": (flam_value, flam.weights), "prior_linear": (linear_value, linear.weights)}


def gradient_suite(rng: np.random.Generator, rtol: float = GRADIENT_RTOL) -> List[CheckResult]:
    results = []
    for name, (fn, arrays) in primitive_cases(rng).items():
        worst, compared, skipped = gradient_check(fn, arrays, rtol=rtol)
        results.append(_result(f"gradients/{name}", worst, rtol, f"{compared} coords"))

    loss, weights = network_gradient_case(rng)
    worst, compared, skipped = gradient_check(loss, weights, rtol=rtol)
    results.append(_result("gradients/network", worst, rtol, f"{compared} coords, {skipped} kink skips"))

    for name, (fn, arrays) in prior_gradient_cases(rng).items():
        worst, compared, skipped = gradient_check(fn, arrays, rtol=1e-4)
        results.append(_result(f"gradients/{name}", worst, 1e-4, f"{compared} coords, {skipped} kink skips"))
    return results


# standardization and priors

def standardization_suite(rng: np.random.Generator, cases: int = 20,
                          tol: float = ROUND_TRIP_TOL) -> List[CheckResult]:
    round_trip = moments = 0.0
    for _ in range(cases):
        n, p = int(rng.integers(2, 12)), int(rng.integers(1, 6))
        x, y, x0 = rng.standard_normal((n, p)), rng.standard_normal(n), rng.standard_normal(p)
        z = standardize(Dataset(x, y), x0)
        rx, ry, rx0 = z.restore()
        round_trip = max(round_trip, float(np.max(np.abs(rx - x))), float(np.max(np.abs(ry - y))),
                         float(np.max(np.abs(rx0 - x0))))
        # a constant column standardizes to zero and is excluded from the sd check
        x[:, 0] = 7.0
        z = standardize(Dataset(x, y), x0)
        live = z.s_x > 0
        moments = max(moments, float(np.max(np.abs(z.x_std.mean(axis=0)))) / n,
                      float(np.max(np.abs(np.sqrt((z.x_std[:, live] ** 2).mean(axis=0)) - 1.0), initial=0.0)))
    return [_result("standardization/round_trip", round_trip, tol),
            _result("standardization/moments", moments, 1e-10)]


def step_total_variation(mu, component: int, p: int) -> float:
    """
    total variation of one additive component by evaluating the function

    points sit at the sorted knots of the component (plus one point below
    all of them) with every other coordinate at -inf, so only this
    component contributes.
    """
    knots = np.sort(mu.knots[:, component])
    z = np.full((knots.size + 1, p), -np.inf)
    z[1:, component] = knots
    values = mu(z).data
    return float(np.abs(np.diff(values)).sum())


def prior_constraint_suite(rng: np.random.Generator, samples: int = 1000, p: int = 10,
                           sparsity: int = 5, knots: int = 500) -> List[CheckResult]:
    """feature, linear and flam prior constraints over `samples` draws each"""
    config = FeaturePriorConfig(p)
    diag_dev, min_eig = 0.0, np.inf
    for _ in range(samples):
        sigma, _ = sample_feature_prior(config, rng)
        diag_dev = max(diag_dev, float(np.max(np.abs(np.diag(sigma) - 1.0))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(sigma).min()))

    linear = init_generator("linear", sparsity, p, int(rng.integers(2 ** 31)))
    l1_dev = l0_excess = bound_excess = 0.0
    for _ in range(samples):
        beta, noise = sample_regression_linear(linear, rng)
        b = beta.data
        l1_dev = max(l1_dev, abs(np.abs(b).sum() - abs(noise["u0"])))
        l0_excess = max(l0_excess, float(np.count_nonzero(b) - sparsity))
        bound_excess = max(bound_excess, np.abs(b).sum() - 5.0)

    flam = init_generator("flam", sparsity, p, int(rng.integers(2 ** 31)), knots=knots)
    tv_dev, active_excess = 0.0, 0.0
    for _ in range(samples):
        dist = flam.sample_distribution(rng)
        mu = dist.mu
        total = tree_sum([step_total_variation(mu, j, p) for j in range(mu.active)])
        tv_dev = max(tv_dev, abs(total - TOTAL_VARIATION))
        active_excess = max(active_excess, float(mu.active - sparsity))

    eval_dev = 0.0
    for variant in LINEAR_VARIANTS[:1]:
        sample = evaluation_prior("linear", sparsity, variant, p)
        for _ in range(min(samples, 200)):
            eval_dev = max(eval_dev, abs(np.abs(sample(rng).mu.beta.data).sum() - 5.0))
    for scenario in SCENARIOS:
        sample = evaluation_prior("flam", 4, f"{scenario}-dense", p)
        tv = sample(rng).mu.component_total_variation()
        eval_dev = max(eval_dev, abs(tv.sum() - TOTAL_VARIATION), float(np.sum(tv > 0) != 4))

    return [
        _result("priors/sigma_unit_diagonal", diag_dev, 1e-12, f"{samples} draws"),
        _result("priors/sigma_positive_definite", 0.0 if min_eig > 0 else 1.0, 0.0, f"min eigenvalue {min_eig:.3e}"),
        _result("priors/linear_l1_norm", l1_dev, 1e-12, f"s={sparsity}"),
        _result("priors/linear_sparsity", max(l0_excess, 0.0), 0.0),
        _result("priors/linear_l1_bound", max(bound_excess, 0.0), 1e-12),
        _result("priors/flam_total_variation", tv_dev, TV_TOL, f"{knots} knots"),
        _result("priors/flam_active_components", max(active_excess, 0.0), 0.0),
        _result("priors/evaluation_priors", eval_dev, TV_TOL),
    ]


def run_checks(params: Optional[EstimatorParams] = None, seed: int = 0, cases: int = 100,
               samples: int = 1000) -> CheckReport:
    """run every suite; params default to a freshly initialized small network"""
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(ArchitectureConfig.uniform(8, 1), seed)
    report = CheckReport()
    suites = [
        ("equivariance", lambda: equivariance_suite(params, rng, cases)),
        ("rank invariance", lambda: rank_invariance_suite(params, rng, max(1, cases // 2))),
        ("layers", lambda: layer_suite(params, rng)),
        ("gradients", lambda: gradient_suite(rng)),
        ("standardization", lambda: standardization_suite(rng)),
        ("priors", lambda: prior_constraint_suite(rng, samples)),
    ]
    for label, suite in suites:
        logger.info("running %s checks", label)
        report.results.extend(suite())
    logger.info("%d of %d checks passed", len(report.results) - len(report.failures), len(report.results))
    return report
