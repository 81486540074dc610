"""Command-line surface: train, certify, evaluate, sweep, verify.

Configuration precedence, highest first: command-line flags, then a JSON
config file (--config), then the FAIRSMOOTH_DATA_DIR environment variable
(raw-data location only), then built-in defaults.  Every subcommand is a
pure function of its resolved config and master seed; outputs are JSON and
CSV files with a schema_version field.

Variants: ``full`` trains smoothed classifiers with the parameter-coupling
term; ``smoothing-only`` drops the coupling (alpha forced to 0);
``disparity-only`` keeps the coupling but trains and evaluates the plain
unsmoothed classifier (our reading of the smoothing-free ablation).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .data import (
    DATA_DIR_ENV,
    GroupedDataset,
    load_adult,
    load_compas,
    partition_test,
    save_processed,
)
from .metrics import EvaluationReport, epsilon_fairness, evaluate_predictions
from .model import Architecture, default_architecture, forward_many, load_model, save_model
from .smoothing import (
    EVAL_SAMPLES,
    TRAIN_SAMPLES,
    SeedPolicy,
    SmoothedClassifier,
    smooth_predict_matrix,
)
from .training import (
    TrainingConfig,
    average_params,
    certify,
    check_certificate_empirically,
    implied_sigma,
    train_fair,
)
from .verify import run_verification

DATASETS = ("adult", "compas")
ATTRIBUTES = ("sex", "race")
VARIANTS = ("full", "smoothing-only", "disparity-only")
DEFAULT_PARTITIONS = (0.05, 0.10, 0.15, 0.30, 0.40)
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "adult"
    attribute: str = "sex"
    alpha: float = 1.0
    eta: float = 0.05
    epochs: int = 320
    batch_size: int = 128
    sigma: float = 0.5
    n_train_samples: int = TRAIN_SAMPLES
    n_eval_samples: int = EVAL_SAMPLES
    master_seed: int = 0
    variant: str = "full"
    output_dir: str = "runs/default"
    data_dir: str = "data"

    def __post_init__(self) -> None:
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute!r}; expected one of {ATTRIBUTES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "smoothing-only" and self.alpha != 0.0:
            object.__setattr__(self, "alpha", 0.0)
        if self.n_eval_samples < 1:
            raise ValueError("n_eval_samples must be positive")

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            alpha=self.alpha,
            eta=self.eta,
            epochs=self.epochs,
            batch_size=self.batch_size,
            sigma=self.sigma,
            n_train_samples=self.n_train_samples,
            master_seed=self.master_seed,
        )

    @property
    def smoothed(self) -> bool:
        return self.variant != "disparity-only"

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **{f.name: getattr(self, f.name) for f in fields(self)}}


def resolve_config(flag_values: dict, config_path: str | None) -> RunConfig:
    """Merge defaults, environment, config file and explicit flags."""
    merged: dict = {}
    env_dir = os.environ.get(DATA_DIR_ENV)
    if env_dir:
        merged["data_dir"] = env_dir
    if config_path:
        with open(config_path, "r", encoding="utf-8") as handle:
            file_values = json.load(handle)
        file_values.pop("schema_version", None)
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise ValueError(f"invalid config keys in {config_path}: {unknown}")
        merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return RunConfig(**merged)


def load_dataset(cfg: RunConfig) -> GroupedDataset:
    if cfg.dataset == "adult":
        return load_adult(
            os.path.join(cfg.data_dir, "adult"),
            attribute=cfg.attribute,
            split_seed=cfg.master_seed,
        )
    return load_compas(
        os.path.join(cfg.data_dir, "compas", "compas-scores-two-years.csv"),
        attribute=cfg.attribute,
        split_seed=cfg.master_seed,
    )


def predict_rows(
    arch: Architecture,
    w: np.ndarray,
    x_mat: np.ndarray,
    cfg: RunConfig,
    eval_id: object = "eval",
) -> np.ndarray:
    """Smoothed (or, for the unsmoothed variant, plain) outputs on rows."""
    if not cfg.smoothed:
        return forward_many(arch, np.asarray(w)[None, :], x_mat)[0]
    sc = SmoothedClassifier(
        arch,
        w,
        sigma=cfg.sigma,
        n_samples=cfg.n_eval_samples,
        seeds=SeedPolicy(cfg.master_seed, "mc-eval"),
    )
    values, _ = smooth_predict_matrix(sc, x_mat, eval_id=eval_id)
    return values


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def train_run(cfg: RunConfig, ds: GroupedDataset | None = None) -> dict:
    """Train per-group classifiers and write all run artifacts.

    Returns a summary dict with artifact paths.  Training resumes from the
    newest checkpoint in the output directory if one exists.
    """
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    if ds is None:
        ds = load_dataset(cfg)
    save_processed(ds, os.path.join(out, "processed"))
    arch = default_architecture(ds.n_features)
    result = train_fair(
        ds,
        arch,
        cfg.training_config(),
        use_smoothing=cfg.smoothed,
        log_path=os.path.join(out, "train.log.jsonl"),
        checkpoint_dir=os.path.join(out, "checkpoints"),
    )
    model_paths = []
    for name, w in zip(result.group_names, result.params):
        path = os.path.join(out, f"model_group_{name}.txt")
        save_model(path, arch, w)
        model_paths.append(path)
    averaged_path = os.path.join(out, "model_overall.txt")
    save_model(averaged_path, arch, result.averaged())
    cert = result.certificate(cfg.sigma)
    cert_payload = cert.to_dict()
    cert_payload["variant"] = cfg.variant
    cert_payload["group_names"] = list(result.group_names)
    _write_json(os.path.join(out, "certificate.json"), cert_payload)
    return {
        "output_dir": out,
        "model_paths": model_paths,
        "averaged_path": averaged_path,
        "certificate": cert_payload,
        "log_entries": len(result.log),
    }


def certify_run(
    model_paths: list[str],
    sigma: float,
    out_path: str | None = None,
    target_epsilon: float | None = None,
) -> dict:
    """Certificate for saved models; optionally report the implied sigma
    that would be needed to certify a target bound at the measured d."""
    archs = []
    ws = []
    for path in model_paths:
        arch, w = load_model(path)
        archs.append(arch)
        ws.append(w)
    if any(a != archs[0] for a in archs):
        raise ValueError("model architectures differ; cannot certify together")
    cert = certify(ws, sigma)
    payload = cert.to_dict()
    payload["models"] = list(model_paths)
    if target_epsilon is not None:
        payload["implied_sigma_for_target"] = {
            "target_epsilon": target_epsilon,
            "sigma": implied_sigma(cert.n_groups, cert.max_distance, target_epsilon),
        }
    if out_path:
        _write_json(out_path, payload)
    return payload


def evaluate_run(
    cfg: RunConfig,
    model_dir: str | None = None,
    partitions: tuple[float, ...] = (),
    ds: GroupedDataset | None = None,
    out_path: str | None = None,
) -> dict:
    """Evaluate trained models on the test split and optional partitions.

    Predictions for the full test split are computed once per model (with
    shared noise draws) and partition reports reuse them, so identical rows
    receive identical predictions in every partition.
    """
    model_dir = model_dir or cfg.output_dir
    if ds is None:
        ds = load_dataset(cfg)
    arch_overall, w_overall = load_model(os.path.join(model_dir, "model_overall.txt"))
    group_models = {}
    for gid, name in enumerate(ds.group_names):
        path = os.path.join(model_dir, f"model_group_{name}.txt")
        if os.path.exists(path):
            arch_g, w_g = load_model(path)
            if arch_g != arch_overall:
                raise ValueError(f"architecture mismatch between {path} and overall model")
            group_models[gid] = w_g

    test_rows = ds.test_rows()
    if len(test_rows) == 0:
        raise ValueError("test split is empty")
    x_test = ds.features[test_rows]
    preds = predict_rows(arch_overall, w_overall, x_test, cfg, eval_id="eval-test")

    labels = ds.labels[test_rows]
    groups = ds.groups[test_rows]
    report = evaluate_predictions(preds, labels, groups, n_groups=ds.n_groups)

    eps_measured: dict[str, float] = {}
    cert_payload = None
    if group_models and len(group_models) == ds.n_groups:
        cert = certify([group_models[g] for g in range(ds.n_groups)], cfg.sigma)
        cert_payload = cert.to_dict()
        bound_holds = True
        for gid in range(ds.n_groups):
            mask = groups == gid
            preds_k = predict_rows(
                arch_overall, group_models[gid], x_test[mask], cfg, eval_id="eval-test"
            )
            for p in (1.0, 2.0, math.inf):
                key = f"p={'inf' if math.isinf(p) else int(p)},group={ds.group_names[gid]}"
                eps_measured[key] = epsilon_fairness(preds[mask], preds_k, p)
            if cfg.smoothed:
                tol = 4.0 * 2.0 * 0.5 / math.sqrt(cfg.n_eval_samples)
                if eps_measured[f"p=inf,group={ds.group_names[gid]}"] > cert.epsilon + tol:
                    bound_holds = False
        report.epsilon_fairness = eps_measured
        report.extra["certificate"] = cert_payload
        if cfg.smoothed:
            report.extra["certificate_bound_holds"] = bound_holds

    partition_reports = []
    if partitions:
        for fraction, rows in zip(partitions, partition_test(ds, list(partitions), cfg.master_seed)):
            locate = np.searchsorted(test_rows, rows)
            sub = evaluate_predictions(
                preds[locate], labels[locate], groups[locate], n_groups=ds.n_groups
            )
            sub.extra["fraction"] = fraction
            partition_reports.append(sub)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "dataset": ds.name,
        "variant": cfg.variant,
        "n_eval_samples": cfg.n_eval_samples if cfg.smoothed else 0,
        "full_test": report.to_dict(),
        "partitions": [r.to_dict() for r in partition_reports],
    }
    if out_path:
        _write_json(out_path, payload)
    return payload


def sweep_run(
    ds: GroupedDataset,
    base_cfg: RunConfig,
    sigma_grid: tuple[float, ...],
    alpha_grid: tuple[float, ...],
    seeds: tuple[int, ...],
    out_path: str | None = None,
    arch: Architecture | None = None,
) -> list[dict]:
    """Grid of trainings over sigma and/or alpha; one row per point per seed
    plus per-point medians, written as CSV."""
    if not sigma_grid and not alpha_grid:
        raise ValueError("sweep grid is empty")
    sigma_values = sigma_grid or (base_cfg.sigma,)
    alpha_values = alpha_grid or (base_cfg.alpha,)
    arch = arch or default_architecture(ds.n_features)
    # A swept alpha makes "smoothing-only" meaningless (it pins alpha to 0),
    # so those cells run as the full variant; alpha=0 cells coincide anyway.
    variant = "disparity-only" if base_cfg.variant == "disparity-only" else "full"
    rows: list[dict] = []
    for sigma in sigma_values:
        for alpha in alpha_values:
            for seed in seeds:
                cfg = replace(
                    base_cfg, sigma=sigma, alpha=alpha, master_seed=seed, variant=variant,
                )
                result = train_fair(ds, arch, cfg.training_config(), use_smoothing=cfg.smoothed)
                cert = result.certificate(sigma)
                test_rows = ds.test_rows()
                preds = predict_rows(
                    arch, result.averaged(), ds.features[test_rows], cfg, eval_id="sweep"
                )
                report = evaluate_predictions(
                    preds, ds.labels[test_rows], ds.groups[test_rows], n_groups=ds.n_groups
                )
                rows.append(
                    {
                        "sigma": sigma,
                        "alpha": alpha,
                        "seed": seed,
                        "accuracy": report.accuracy,
                        "delta_dp": report.delta_dp,
                        "delta_eo": report.delta_eo,
                        "max_distance": cert.max_distance,
                        "epsilon": cert.epsilon,
                    }
                )
    aggregates = []
    for sigma in sigma_values:
        for alpha in alpha_values:
            cell = [r for r in rows if r["sigma"] == sigma and r["alpha"] == alpha]
            aggregates.append(
                {
                    "sigma": sigma,
                    "alpha": alpha,
                    "seed": "median",
                    "accuracy": float(np.median([r["accuracy"] for r in cell])),
                    "delta_dp": float(np.median([r["delta_dp"] for r in cell])),
                    "delta_eo": float(np.median([r["delta_eo"] for r in cell])),
                    "max_distance": float(np.median([r["max_distance"] for r in cell])),
                    "epsilon": float(np.median([r["epsilon"] for r in cell])),
                }
            )
    all_rows = rows + aggregates
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        columns = ["sigma", "alpha", "seed", "accuracy", "delta_dp", "delta_eo", "max_distance", "epsilon"]
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(",".join(columns) + "\n")
            for row in all_rows:
                handle.write(",".join(str(row[c]) for c in columns) + "\n")
    return all_rows


def verify_run(level: str, master_seed: int = 0, out_path: str | None = None) -> dict:
    report = run_verification(level, master_seed=master_seed)
    if out_path:
        _write_json(out_path, report)
    return report


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--dataset", choices=DATASETS)
    parser.add_argument("--attribute", choices=ATTRIBUTES)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--lr", type=float, dest="eta")
    parser.add_argument("--mc-train", type=int, dest="n_train_samples")
    parser.add_argument("--mc-eval", type=int, dest="n_eval_samples")
    parser.add_argument("--seed", type=int, dest="master_seed")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--data-dir", dest="data_dir")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    flag_values = {
        name: getattr(args, name, None)
        for name in (
            "dataset", "attribute", "sigma", "alpha", "epochs", "batch_size",
            "eta", "n_train_samples", "n_eval_samples", "master_seed",
            "variant", "output_dir", "data_dir",
        )
    }
    return resolve_config(flag_values, getattr(args, "config", None))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fairsmooth",
        description="Train and certify group-fair smoothed classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train per-group classifiers and certify")
    _add_config_flags(p_train)

    p_cert = sub.add_parser("certify", help="certificate for saved models")
    p_cert.add_argument("--models", nargs="+", required=True)
    p_cert.add_argument("--sigma", type=float, required=True)
    p_cert.add_argument("--target-epsilon", type=float, dest="target_epsilon")
    p_cert.add_argument("--out", dest="out_path")

    p_eval = sub.add_parser("evaluate", help="evaluate trained models on test data")
    _add_config_flags(p_eval)
    p_eval.add_argument("--models-dir", dest="models_dir")
    p_eval.add_argument(
        "--partitions",
        help="comma-separated test fractions (default %s)" % (",".join(map(str, DEFAULT_PARTITIONS))),
    )

    p_sweep = sub.add_parser("sweep", help="grid of trainings over sigma / alpha")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--sigma-grid", dest="sigma_grid")
    p_sweep.add_argument("--alpha-grid", dest="alpha_grid")
    p_sweep.add_argument("--seeds", default="0,1,2")

    p_verify = sub.add_parser("verify", help="run the built-in numerical checks")
    p_verify.add_argument("--level", choices=("fast", "full"), default="fast")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", dest="out_path")

    args = parser.parse_args(argv)
    started = time.perf_counter()
    if args.command == "train":
        cfg = _config_from_args(args)
        summary = train_run(cfg)
        print(json.dumps(summary["certificate"], indent=2))
        print(f"artifacts in {summary['output_dir']} ({time.perf_counter() - started:.1f}s)")
        return 0
    if args.command == "certify":
        payload = certify_run(
            args.models, args.sigma, out_path=args.out_path, target_epsilon=args.target_epsilon
        )
        print(json.dumps(payload, indent=2))
        return 0
    if args.command == "evaluate":
        cfg = _config_from_args(args)
        partitions = (
            tuple(float(f) for f in args.partitions.split(","))
            if args.partitions
            else DEFAULT_PARTITIONS
        )
        out_path = os.path.join(cfg.output_dir, "report.json")
        payload = evaluate_run(cfg, model_dir=args.models_dir, partitions=partitions, out_path=out_path)
        print(json.dumps(payload["full_test"], indent=2))
        print(f"report written to {out_path}")
        return 0
    if args.command == "sweep":
        cfg = _config_from_args(args)
        sigma_grid = tuple(float(v) for v in args.sigma_grid.split(",")) if args.sigma_grid else ()
        alpha_grid = tuple(float(v) for v in args.alpha_grid.split(",")) if args.alpha_grid else ()
        seeds = tuple(int(s) for s in args.seeds.split(","))
        ds = load_dataset(cfg)
        out_path = os.path.join(cfg.output_dir, "sweep.csv")
        rows = sweep_run(ds, cfg, sigma_grid, alpha_grid, seeds, out_path=out_path)
        print(f"{len(rows)} sweep rows written to {out_path}")
        return 0
    if args.command == "verify":
        report = verify_run(args.level, master_seed=args.seed, out_path=args.out_path)
        for check in report["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"{status} {check['name']}")
        print(f"verification {'passed' if report['passed'] else 'FAILED'} "
              f"({time.perf_counter() - started:.1f}s)")
        return 0 if report["passed"] else 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
