"""Numerical verification of the smoothing guarantees.

Each check compares the Monte-Carlo smoothing path against an analytic
bound or an independent oracle and returns a structured result that can be
serialized to JSON.  The checks:

* global output-gap bound: |smoothed(W1)(x) - smoothed(W2)(x)| never exceeds
  ||W1 - W2||_2 / (sqrt(2 pi) sigma) plus Monte-Carlo tolerance;
* small-sigma convergence of the smoothed classifier to its base classifier;
* first-order expansion: the score-form derivative estimate leaves a
  quadratically shrinking remainder;
* coverage of the Monte-Carlo error interval against a closed-form value;
* the parameter-averaging distance bound behind the fairness certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import Architecture, default_architecture, forward, forward_many, init_params
from .oracles import (
    normal_cdf,
    quadrature_smoothed,
    quadrature_smoothed_directional,
    threshold_linear_smoothed,
)
from .smoothing import SeedPolicy, SmoothedClassifier, smooth_predict_matrix

LIPSCHITZ_FACTOR = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class CheckResult:
    """Outcome of one verification check."""

    name: str
    passed: bool
    params: dict
    measured: dict
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "params": self.params,
            "measured": self.measured,
            "failures": self.failures,
        }


def lipschitz_bound(distance: float, sigma: float) -> float:
    """Certified bound on the smoothed output gap for a parameter distance."""
    return LIPSCHITZ_FACTOR * distance / sigma


def check_lipschitz(
    sc1: SmoothedClassifier,
    sc2: SmoothedClassifier,
    xs: np.ndarray,
    a: float = 4.0,
    eval_id: object = "lipschitz",
) -> CheckResult:
    """Paired-noise check of the output-gap bound on given inputs.

    Both classifiers must share architecture, sigma, sample count and seed
    policy so their noise draws pair up exactly.
    """
    if sc1.arch != sc2.arch:
        raise ValueError("classifier pair must share one architecture")
    if sc1.sigma != sc2.sigma:
        raise ValueError(f"sigma mismatch in pair: {sc1.sigma} vs {sc2.sigma}")
    if sc1.n_samples != sc2.n_samples or sc1.seeds != sc2.seeds:
        raise ValueError("classifier pair must share sample count and seed policy")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    distance = float(np.linalg.norm(sc1.params - sc2.params))
    bound = lipschitz_bound(distance, sc1.sigma)
    v1, var1 = smooth_predict_matrix(sc1, xs, eval_id=eval_id)
    v2, var2 = smooth_predict_matrix(sc2, xs, eval_id=eval_id)
    root_n = math.sqrt(sc1.n_samples)
    tol = a * (np.sqrt(var1) + np.sqrt(var2)) / root_n
    gaps = np.abs(v1 - v2)
    over = gaps > bound + tol
    failures = [
        {"x_index": int(i), "gap": float(gaps[i]), "bound": bound, "tolerance": float(tol[i])}
        for i in np.nonzero(over)[0]
    ]
    return CheckResult(
        name="lipschitz-bound",
        passed=not failures,
        params={
            "sigma": sc1.sigma,
            "n_samples": sc1.n_samples,
            "distance": distance,
            "a": a,
            "inputs": int(xs.shape[0]),
        },
        measured={
            "bound": bound,
            "max_gap": float(gaps.max()),
            "max_slack": float((bound + tol - gaps).min()),
        },
        failures=failures,
    )


def lipschitz_random_trial(
    arch: Architecture,
    sigma: float,
    n_triples: int,
    n_samples: int,
    master_seed: int,
    a: float = 4.0,
    weight_scale: float = 1.0,
) -> CheckResult:
    """Output-gap bound over random (W1, W2, x) triples.

    Pair distances are drawn log-uniformly up to 2.5 sigma so the bound is
    exercised where it is not trivially slack.
    """
    gen = rng.generator(master_seed, "lipschitz-triples", sigma)
    m = arch.n_params
    failures = []
    max_gap = 0.0
    min_slack = math.inf
    for t in range(n_triples):
        w1 = gen.normal(scale=weight_scale, size=m)
        direction = gen.normal(size=m)
        direction /= np.linalg.norm(direction)
        distance = math.exp(gen.uniform(math.log(1e-3), math.log(2.5 * sigma)))
        w2 = w1 + distance * direction
        x = gen.normal(size=arch.input_dim)
        seeds = SeedPolicy(master_seed, "mc-verify")
        sc1 = SmoothedClassifier(arch, w1, sigma=sigma, n_samples=n_samples, seeds=seeds)
        sc2 = SmoothedClassifier(arch, w2, sigma=sigma, n_samples=n_samples, seeds=seeds)
        result = check_lipschitz(sc1, sc2, x[None, :], a=a, eval_id=("triple", sigma, t))
        max_gap = max(max_gap, result.measured["max_gap"])
        min_slack = min(min_slack, result.measured["max_slack"])
        if not result.passed:
            failures.append({"triple": t, **result.failures[0], "distance": distance})
    return CheckResult(
        name="lipschitz-random-triples",
        passed=not failures,
        params={
            "sigma": sigma,
            "n_triples": n_triples,
            "n_samples": n_samples,
            "a": a,
            "arch": arch.to_dict(),
        },
        measured={"max_gap": max_gap, "min_slack": min_slack, "violations": len(failures)},
        failures=failures,
    )


def lipschitz_threshold_oracle(
    sigma: float,
    n_pairs: int,
    master_seed: int,
    dim: int = 2,
) -> CheckResult:
    """Analytic (noise-free) form of the gap bound for threshold units.

    The smoothed threshold unit has the closed form Phi(w.x / (sigma ||x||)),
    so the bound can be verified without any sampling error.
    """
    gen = rng.generator(master_seed, "lipschitz-oracle")
    worst = -math.inf
    failures = []
    for t in range(n_pairs):
        w1 = gen.normal(size=dim)
        w2 = w1 + gen.normal(size=dim) * math.exp(gen.uniform(math.log(1e-3), math.log(2.0)))
        x = gen.normal(size=dim)
        v1 = threshold_linear_smoothed(w1, x, sigma)
        v2 = threshold_linear_smoothed(w2, x, sigma)
        gap = abs(v1 - v2)
        bound = lipschitz_bound(float(np.linalg.norm(w1 - w2)), sigma)
        worst = max(worst, gap - bound)
        if gap > bound + 1e-12:
            failures.append({"pair": t, "gap": gap, "bound": bound})
    return CheckResult(
        name="lipschitz-threshold-oracle",
        passed=not failures,
        params={"sigma": sigma, "n_pairs": n_pairs, "dim": dim},
        measured={"max_excess": worst},
        failures=failures,
    )


def check_sigma_convergence(
    arch: Architecture,
    w: np.ndarray,
    xs: np.ndarray,
    sigmas: list[float],
    n_samples: int,
    master_seed: int,
    a: float = 3.0,
    final_gap_threshold: float = 0.02,
) -> CheckResult:
    """Mean gap to the base classifier shrinks as the noise scale shrinks.

    All noise scales share one set of standard normal draws (the scale is
    applied afterwards), so the gap sequence is compared under paired noise.
    """
    sigmas = [float(s) for s in sigmas]
    if any(s <= 0.0 for s in sigmas):
        raise ValueError(f"noise scales must be positive, got {sigmas}")
    if any(s2 >= s1 for s1, s2 in zip(sigmas, sigmas[1:])):
        raise ValueError(f"noise scales must be strictly decreasing, got {sigmas}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    base = forward_many(arch, w[None, :], xs)[0]
    gaps = []
    tols = []
    root_n = math.sqrt(n_samples)
    for sigma in sigmas:
        sc = SmoothedClassifier(
            arch, w, sigma=sigma, n_samples=n_samples, seeds=SeedPolicy(master_seed, "mc-verify")
        )
        values, variances = smooth_predict_matrix(sc, xs, eval_id="sigma-convergence")
        gaps.append(float(np.mean(np.abs(values - base))))
        tols.append(float(np.mean(a * np.sqrt(variances) / root_n)))
    failures = []
    for i in range(len(sigmas) - 1):
        allowed = 2.0 * (tols[i] + tols[i + 1])
        if gaps[i + 1] > gaps[i] + allowed:
            failures.append(
                {
                    "sigma_from": sigmas[i],
                    "sigma_to": sigmas[i + 1],
                    "gap_from": gaps[i],
                    "gap_to": gaps[i + 1],
                    "allowed_increase": allowed,
                }
            )
    final_ok = gaps[-1] <= final_gap_threshold
    if not final_ok:
        failures.append({"final_gap": gaps[-1], "threshold": final_gap_threshold})
    return CheckResult(
        name="sigma-convergence",
        passed=not failures,
        params={
            "sigmas": sigmas,
            "n_samples": n_samples,
            "a": a,
            "inputs": int(xs.shape[0]),
            "final_gap_threshold": final_gap_threshold,
        },
        measured={"gaps": gaps, "tolerances": tols},
        failures=failures,
    )


def sigma_convergence_threshold_oracle(margin: float, sigmas: list[float]) -> CheckResult:
    """Closed-form gap |Phi(margin / sigma) - 1| for a unit-margin threshold.

    For a threshold unit with w.x = margin > 0 and ||x|| = 1 the smoothed
    value is Phi(margin / sigma), so the gap to the base output 1 is exactly
    the normal tail mass.
    """
    gaps = [0.5 * math.erfc((margin / s) / math.sqrt(2.0)) for s in sigmas]
    monotone = all(g2 <= g1 for g1, g2 in zip(gaps, gaps[1:]))
    return CheckResult(
        name="sigma-convergence-threshold-oracle",
        passed=monotone,
        params={"margin": margin, "sigmas": list(sigmas)},
        measured={"gaps": gaps},
        failures=[] if monotone else [{"gaps": gaps}],
    )


def frechet_residual_quadrature(
    arch: Architecture,
    w: np.ndarray,
    delta: np.ndarray,
    xs: np.ndarray,
    sigma: float,
    nodes: int = 64,
) -> float:
    """Max-over-inputs remainder of the first-order expansion, by quadrature."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    residuals = []
    for x in xs:
        v_shift = quadrature_smoothed(arch, w + delta, x, sigma, nodes=nodes)
        v_base = quadrature_smoothed(arch, w, x, sigma, nodes=nodes)
        linear = quadrature_smoothed_directional(arch, w, delta, x, sigma, nodes=nodes)
        residuals.append(abs(v_shift - v_base - linear))
    return float(max(residuals))


def frechet_residual_mc(
    arch: Architecture,
    w: np.ndarray,
    delta: np.ndarray,
    xs: np.ndarray,
    sigma: float,
    n_samples: int,
    master_seed: int,
    eval_id: object = "frechet",
) -> tuple[float, float]:
    """Remainder of the first-order expansion with paired noise draws.

    The derivative term is estimated in score form as
    mean_j f(x; W + D_j) (D_j . delta) / sigma^2 with the same draws used
    for both smoothed values.  Returns (max residual, max tolerance).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    m = arch.n_params
    sum_shift = np.zeros(xs.shape[0])
    sum_base = np.zeros(xs.shape[0])
    sum_lin = np.zeros(xs.shape[0])
    sum_res = np.zeros(xs.shape[0])
    sum_res_sq = np.zeros(xs.shape[0])
    labels = ("mc-verify", eval_id)
    for index, _, count in rng.chunk_bounds(n_samples):
        noise = sigma * rng.chunk_normal(master_seed, labels, index, (count, m))
        f_shift = forward_many(arch, (w + delta)[None, :] + noise, xs)
        f_base = forward_many(arch, w[None, :] + noise, xs)
        score = noise @ delta / (sigma * sigma)
        lin = f_base * score[:, None]
        res = f_shift - f_base - lin
        sum_shift += f_shift.sum(axis=0)
        sum_base += f_base.sum(axis=0)
        sum_lin += lin.sum(axis=0)
        sum_res += res.sum(axis=0)
        sum_res_sq += np.square(res).sum(axis=0)
    mean_res = sum_res / n_samples
    var_res = np.maximum(sum_res_sq / n_samples - mean_res * mean_res, 0.0)
    tol = 3.0 * np.sqrt(var_res) / math.sqrt(n_samples)
    return float(np.max(np.abs(mean_res))), float(np.max(tol))


def check_frechet_derivative(
    arch: Architecture,
    w: np.ndarray,
    delta: np.ndarray,
    xs: np.ndarray,
    sigma: float,
    method: str = "quadrature",
    halvings: int = 3,
    n_samples: int = 200_000,
    master_seed: int = 0,
    ratio_range: tuple[float, float] = (3.0, 5.0),
) -> CheckResult:
    """Quadratic shrinkage of the first-order remainder under halved steps.

    Halving the step should shrink the remainder by about 4x; each observed
    ratio must land in ``ratio_range`` (after Monte-Carlo tolerance when the
    sampled estimator is used).
    """
    delta = np.asarray(delta, dtype=np.float64)
    if float(np.linalg.norm(delta)) == 0.0:
        raise ValueError("direction must have nonzero norm")
    if method not in ("quadrature", "mc"):
        raise ValueError(f"unknown method {method!r}")
    residuals = []
    tolerances = []
    for level in range(halvings + 1):
        step = delta / (2.0**level)
        if method == "quadrature":
            residuals.append(frechet_residual_quadrature(arch, w, step, xs, sigma))
            tolerances.append(0.0)
        else:
            res, tol = frechet_residual_mc(
                arch, w, step, xs, sigma, n_samples, master_seed, eval_id=("frechet", level)
            )
            residuals.append(res)
            tolerances.append(tol)
    ratios = []
    failures = []
    lo, hi = ratio_range
    for i in range(halvings):
        ratio = residuals[i] / residuals[i + 1] if residuals[i + 1] > 0 else math.inf
        ratios.append(ratio)
        ratio_lo = (residuals[i] - tolerances[i]) / (residuals[i + 1] + tolerances[i + 1])
        ratio_hi = (residuals[i] + tolerances[i]) / max(residuals[i + 1] - tolerances[i + 1], 1e-300)
        if ratio_hi < lo or ratio_lo > hi:
            failures.append(
                {"halving": i, "ratio": ratio, "ratio_range": [ratio_lo, ratio_hi]}
            )
    return CheckResult(
        name="frechet-derivative",
        passed=not failures,
        params={
            "sigma": sigma,
            "method": method,
            "halvings": halvings,
            "step_norm": float(np.linalg.norm(delta)),
            "ratio_range": list(ratio_range),
        },
        measured={"residuals": residuals, "ratios": ratios, "tolerances": tolerances},
        failures=failures,
    )


def mc_coverage_check(
    n_replications: int,
    n_samples: int,
    master_seed: int,
    sigma: float = 1.0,
    a: float = 3.0,
    error_threshold: float = 0.01,
    min_rate: float = 0.99,
) -> CheckResult:
    """Coverage of the Monte-Carlo error interval against a closed form.

    Independent replications estimate the smoothed value of a threshold unit
    whose exact value is Phi(w.x / (sigma ||x||)); the share of estimates
    within ``error_threshold`` of the truth and the share of intervals
    est +/- a sqrt(V)/sqrt(N) covering the truth must both reach ``min_rate``.
    """
    arch = Architecture(input_dim=2, hidden=(), output="step", bias=False)
    w = np.array([1.0, 0.0])
    x = np.array([1.0, 0.0])
    truth = threshold_linear_smoothed(w, x, sigma)
    within = 0
    covered = 0
    max_err = 0.0
    for r in range(n_replications):
        sc = SmoothedClassifier(
            arch, w, sigma=sigma, n_samples=n_samples,
            seeds=SeedPolicy(master_seed, "mc-coverage"),
        )
        values, variances = smooth_predict_matrix(sc, x[None, :], eval_id=("rep", r))
        err = abs(float(values[0]) - truth)
        max_err = max(max_err, err)
        if err < error_threshold:
            within += 1
        hw = a * math.sqrt(float(variances[0])) / math.sqrt(n_samples)
        if err <= hw:
            covered += 1
    within_rate = within / n_replications
    covered_rate = covered / n_replications
    passed = within_rate >= min_rate and covered_rate >= min_rate
    return CheckResult(
        name="mc-error-coverage",
        passed=passed,
        params={
            "n_replications": n_replications,
            "n_samples": n_samples,
            "sigma": sigma,
            "a": a,
            "error_threshold": error_threshold,
            "min_rate": min_rate,
            "truth": truth,
        },
        measured={
            "within_rate": within_rate,
            "interval_coverage": covered_rate,
            "max_abs_error": max_err,
        },
        failures=[] if passed else [{"within_rate": within_rate, "coverage": covered_rate}],
    )


def averaging_bound_check(
    n_sets: int,
    group_counts: tuple[int, ...] = (2, 3, 5),
    dim: int = 50,
    master_seed: int = 0,
) -> CheckResult:
    """max_k ||mean(W) - W_k|| <= (K-1)/K * max pairwise distance, always."""
    gen = rng.generator(master_seed, "averaging-bound")
    violations = 0
    worst_margin = math.inf
    per_count = n_sets // len(group_counts)
    for k in group_counts:
        ws = gen.normal(size=(per_count, k, dim))
        centers = ws.mean(axis=1)
        max_to_center = np.linalg.norm(ws - centers[:, None, :], axis=2).max(axis=1)
        diffs = ws[:, :, None, :] - ws[:, None, :, :]
        max_pairwise = np.linalg.norm(diffs, axis=3).max(axis=(1, 2))
        bound = (k - 1) / k * max_pairwise
        margin = bound - max_to_center
        worst_margin = min(worst_margin, float(margin.min()))
        violations += int(np.sum(margin < -1e-12))
    return CheckResult(
        name="averaging-distance-bound",
        passed=violations == 0,
        params={"n_sets": n_sets, "group_counts": list(group_counts), "dim": dim},
        measured={"violations": violations, "worst_margin": worst_margin},
        failures=[] if violations == 0 else [{"violations": violations}],
    )


def run_verification(level: str = "fast", master_seed: int = 0, input_dim: int = 18) -> dict:
    """Run the built-in synthetic check suite and return a JSON-able report."""
    if level not in ("fast", "full"):
        raise ValueError(f"unknown verification level {level!r}")
    full = level == "full"
    arch = default_architecture(input_dim)
    gen = rng.generator(master_seed, "verify-inputs")
    # Unit-scale weights saturate the base outputs, so the gap to the base
    # classifier decays cleanly as the noise scale shrinks.
    w = gen.normal(size=arch.n_params)
    xs = gen.normal(size=(100 if full else 30, input_dim))

    checks = []
    for sigma in (0.5, 1.0):
        checks.append(
            lipschitz_random_trial(
                arch, sigma,
                n_triples=1000 if full else 100,
                n_samples=4096 if full else 2048,
                master_seed=master_seed,
            )
        )
    checks.append(lipschitz_threshold_oracle(sigma=1.0, n_pairs=2000, master_seed=master_seed))
    checks.append(
        check_sigma_convergence(
            arch, w, xs, sigmas=[1.0, 0.3, 0.1, 0.03],
            n_samples=40_000 if full else 10_000, master_seed=master_seed,
        )
    )
    checks.append(sigma_convergence_threshold_oracle(margin=1.0, sigmas=[1.0, 0.3, 0.1, 0.03]))
    toy = Architecture(input_dim=2, hidden=(), output="sigmoid", bias=False)
    checks.append(
        check_frechet_derivative(
            toy, np.array([0.6, -0.4]), np.array([0.08, 0.06]),
            np.array([[1.0, 2.0], [0.5, -1.0], [-1.5, 0.3]]),
            sigma=0.5, method="quadrature",
        )
    )
    checks.append(
        mc_coverage_check(
            n_replications=200 if full else 50,
            n_samples=100_000 if full else 10_000,
            master_seed=master_seed,
        )
    )
    checks.append(
        averaging_bound_check(n_sets=9999 if full else 999, master_seed=master_seed)
    )
    report = {
        "schema_version": 1,
        "level": level,
        "master_seed": master_seed,
        "checks": [c.to_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
    return report
