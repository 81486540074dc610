"""Coupled per-group training and the parameter-distance certificate.

One smoothed classifier is trained per group on that group's data alone.
Each step applies, synchronously for every group k,

    W_k <- W_k - eta * g_k - 2 * alpha * eta * sum_{l != k} (W_k - W_l)

where g_k is the Monte-Carlo gradient of group k's smoothed minibatch loss
and all parameter vectors on the right are read from the snapshot taken at
the start of the step.  The coupling term pulls the group parameters
together; the final maximum pairwise distance d yields the input-agnostic
certified bound

    epsilon = (K - 1) * d / (sqrt(2 pi) * K * sigma)

on the gap between the parameter-averaged overall classifier and any group's
own classifier, on any input.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import Architecture, init_params, load_model, save_model
from .smoothing import SeedPolicy, SmoothedClassifier, base_gradient, smooth_gradient, smooth_predict_matrix
from .verify import CheckResult

CHECKPOINT_EVERY = 10  # epochs


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the last finite state."""

    def __init__(self, message: str, params: list[np.ndarray], epoch: int):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


@dataclass(frozen=True)
class TrainingConfig:
    alpha: float = 1.0
    eta: float = 0.05
    epochs: int = 320
    batch_size: int = 128
    sigma: float = 0.5
    n_train_samples: int = 16
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError(f"coupling weight must be non-negative, got {self.alpha}")
        if not self.eta > 0.0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        if self.epochs < 1 or self.batch_size < 1 or self.n_train_samples < 1:
            raise ValueError("epochs, batch_size and n_train_samples must be positive")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def certificate_epsilon(n_groups: int, d: float, sigma: float) -> float:
    """Certified output-gap bound (K-1) d / (sqrt(2 pi) K sigma)."""
    return (n_groups - 1) * d / (math.sqrt(2.0 * math.pi) * n_groups * sigma)


def implied_sigma(n_groups: int, d: float, epsilon: float) -> float:
    """Noise scale at which a distance d would certify a target epsilon."""
    if not epsilon > 0.0:
        raise ValueError(f"target bound must be positive, got {epsilon}")
    return (n_groups - 1) * d / (math.sqrt(2.0 * math.pi) * n_groups * epsilon)


def average_params(ws: list[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean of parameter vectors of equal length."""
    if len(ws) < 1:
        raise ValueError("need at least one parameter vector")
    stack = _stack_params(ws)
    return stack.mean(axis=0)


def pairwise_max_distance(ws: list[np.ndarray]) -> float:
    """Maximum Euclidean distance over unordered pairs; 0 for a single vector."""
    if len(ws) < 1:
        raise ValueError("need at least one parameter vector")
    stack = _stack_params(ws)
    if stack.shape[0] == 1:
        return 0.0
    diffs = stack[:, None, :] - stack[None, :, :]
    return float(np.linalg.norm(diffs, axis=2).max())


def _stack_params(ws: list[np.ndarray]) -> np.ndarray:
    arrays = [np.asarray(w, dtype=np.float64) for w in ws]
    lengths = {a.shape for a in arrays}
    if len(lengths) != 1 or arrays[0].ndim != 1:
        raise ValueError(f"parameter vectors must share one length, got shapes {sorted(lengths)}")
    return np.stack(arrays)


@dataclass(frozen=True)
class FairnessCertificate:
    """Record of (K, sigma, d, epsilon) plus the per-group distances to the mean."""

    n_groups: int
    sigma: float
    max_distance: float
    epsilon: float
    per_group_distances: tuple[float, ...]
    average_distance: float

    def __post_init__(self) -> None:
        if self.epsilon != certificate_epsilon(self.n_groups, self.max_distance, self.sigma):
            raise ValueError("stored epsilon does not match the certificate formula")
        bound = (self.n_groups - 1) / self.n_groups * self.max_distance
        for k, dist in enumerate(self.per_group_distances):
            if dist > bound + 1e-12 * (1.0 + bound):
                raise ValueError(
                    f"group {k} distance {dist} exceeds averaging bound {bound}"
                )

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_groups": self.n_groups,
            "sigma": self.sigma,
            "max_distance": self.max_distance,
            "epsilon": self.epsilon,
            "per_group_distances": list(self.per_group_distances),
            "average_distance": self.average_distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessCertificate":
        return cls(
            n_groups=int(d["n_groups"]),
            sigma=float(d["sigma"]),
            max_distance=float(d["max_distance"]),
            epsilon=float(d["epsilon"]),
            per_group_distances=tuple(float(v) for v in d["per_group_distances"]),
            average_distance=float(d["average_distance"]),
        )


def certify(ws: list[np.ndarray], sigma: float) -> FairnessCertificate:
    """Build the certificate for trained per-group parameter vectors."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    stack = _stack_params(ws)
    k = stack.shape[0]
    d = pairwise_max_distance(ws)
    center = stack.mean(axis=0)
    per_group = tuple(float(np.linalg.norm(w - center)) for w in stack)
    if k == 1:
        avg = 0.0
    else:
        diffs = stack[:, None, :] - stack[None, :, :]
        dist = np.linalg.norm(diffs, axis=2)
        avg = float(dist[np.triu_indices(k, 1)].mean())
    return FairnessCertificate(
        n_groups=k,
        sigma=float(sigma),
        max_distance=d,
        epsilon=certificate_epsilon(k, d, float(sigma)),
        per_group_distances=per_group,
        average_distance=avg,
    )


class _GroupBatcher:
    """Cycles one group's rows in shuffled order, reshuffling each pass."""

    def __init__(self, n_rows: int, batch_size: int, master_seed: int, group_label: str):
        self.n_rows = n_rows
        self.batch_size = batch_size
        self.master_seed = master_seed
        self.group_label = group_label
        self.cycle = -1
        self.pos = 0
        self.order = np.empty(0, dtype=np.int64)

    def _next_cycle(self) -> None:
        self.cycle += 1
        gen = rng.generator(self.master_seed, "shuffle", self.group_label, self.cycle)
        self.order = gen.permutation(self.n_rows)
        self.pos = 0

    def next_batch(self) -> np.ndarray:
        taken: list[np.ndarray] = []
        need = self.batch_size
        while need > 0:
            if self.pos >= len(self.order):
                self._next_cycle()
            take = min(need, len(self.order) - self.pos)
            taken.append(self.order[self.pos : self.pos + take])
            self.pos += take
            need -= take
        return np.concatenate(taken)


@dataclass
class TrainResult:
    group_names: list[str]
    params: list[np.ndarray]
    log: list[dict] = field(default_factory=list)

    def certificate(self, sigma: float) -> FairnessCertificate:
        return certify(self.params, sigma)

    def averaged(self) -> np.ndarray:
        return average_params(self.params)


def _write_log_line(handle, entry: dict) -> None:
    if handle is not None:
        handle.write(json.dumps(entry) + "\n")
        handle.flush()


def train_fair(
    groups,
    arch: Architecture,
    cfg: TrainingConfig,
    use_smoothing: bool = True,
    log_path: str | None = None,
    checkpoint_dir: str | None = None,
) -> TrainResult:
    """Train K coupled per-group classifiers from one shared initialization.

    ``groups`` is a GroupedDataset; each group's classifier sees only that
    group's training rows.  ``use_smoothing=False`` replaces the Monte-Carlo
    gradient with the plain gradient at zero noise (the coupling term is
    kept), which realizes the disparity-only ablation.

    The training log records, per epoch and group, the mean minibatch loss
    plus the current maximum pairwise distance and its certified bound.
    Checkpoints every 10 epochs allow bitwise-identical resumption because
    all noise is addressed by absolute step index.
    """
    names = list(groups.group_names)
    k = len(names)
    data = []
    for gid, name in enumerate(names):
        x_g, y_g = groups.train_arrays(gid)
        if x_g.shape[0] == 0:
            raise ValueError(f"group {name!r} has no training rows")
        data.append((x_g, y_g))
    if arch.input_dim != groups.features.shape[1]:
        raise ValueError(
            f"architecture input_dim {arch.input_dim} does not match "
            f"feature count {groups.features.shape[1]}"
        )

    w0 = init_params(arch, cfg.master_seed)
    params = [w0.copy() for _ in range(k)]
    steps_per_epoch = max(
        int(math.ceil(x.shape[0] / cfg.batch_size)) for x, _ in data
    )
    batchers = [
        _GroupBatcher(x.shape[0], cfg.batch_size, cfg.master_seed, name)
        for (x, _), name in zip(data, names)
    ]
    log: list[dict] = []
    start_epoch = 0
    if checkpoint_dir is not None:
        loaded = _load_checkpoint(checkpoint_dir, arch, k)
        if loaded is not None:
            start_epoch, params = loaded
            # replay the batch cursors up to the checkpoint
            for batcher in batchers:
                for _ in range(start_epoch * steps_per_epoch):
                    batcher.next_batch()

    handle = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            epoch_loss = np.zeros(k)
            for step_in_epoch in range(steps_per_epoch):
                step = epoch * steps_per_epoch + step_in_epoch
                snapshot = [p.copy() for p in params]
                grads = []
                for gid, name in enumerate(names):
                    x_g, y_g = data[gid]
                    rows = batchers[gid].next_batch()
                    xb, yb = x_g[rows], y_g[rows]
                    if use_smoothing:
                        sc = SmoothedClassifier(
                            arch,
                            snapshot[gid],
                            sigma=cfg.sigma,
                            n_samples=cfg.n_train_samples,
                            seeds=SeedPolicy(cfg.master_seed, "mc-train"),
                        )
                        grad, loss = smooth_gradient(
                            sc, xb, yb, eval_id=(name, step), return_loss=True
                        )
                    else:
                        grad, loss = base_gradient(arch, snapshot[gid], xb, yb)
                    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                        raise TrainingDiverged(
                            f"non-finite loss for group {name!r} at epoch {epoch}",
                            params=snapshot,
                            epoch=epoch,
                        )
                    grads.append(grad)
                    epoch_loss[gid] += loss
                total = np.sum(snapshot, axis=0)
                for gid in range(k):
                    coupling = k * snapshot[gid] - total  # sum_{l != k} (W_k - W_l)
                    params[gid] = (
                        snapshot[gid]
                        - cfg.eta * grads[gid]
                        - 2.0 * cfg.alpha * cfg.eta * coupling
                    )
                if not all(np.all(np.isfinite(p)) for p in params):
                    raise TrainingDiverged(
                        f"parameters overflowed at epoch {epoch}",
                        params=snapshot,
                        epoch=epoch,
                    )
            d = pairwise_max_distance(params)
            eps = certificate_epsilon(k, d, cfg.sigma)
            for gid, name in enumerate(names):
                entry = {
                    "epoch": epoch,
                    "group": name,
                    "loss": float(epoch_loss[gid] / steps_per_epoch),
                    "max_distance": d,
                    "epsilon": eps,
                }
                log.append(entry)
                _write_log_line(handle, entry)
            if checkpoint_dir is not None and (epoch + 1) % CHECKPOINT_EVERY == 0:
                _save_checkpoint(checkpoint_dir, arch, params, epoch + 1)
    finally:
        if handle is not None:
            handle.close()
    return TrainResult(group_names=names, params=params, log=log)


def _checkpoint_paths(checkpoint_dir: str, k: int) -> tuple[str, list[str]]:
    marker = os.path.join(checkpoint_dir, "checkpoint.json")
    models = [os.path.join(checkpoint_dir, f"checkpoint_group{g}.txt") for g in range(k)]
    return marker, models


def _save_checkpoint(checkpoint_dir: str, arch: Architecture, params: list[np.ndarray], epoch: int) -> None:
    os.makedirs(checkpoint_dir, exist_ok=True)
    marker, models = _checkpoint_paths(checkpoint_dir, len(params))
    for path, w in zip(models, params):
        save_model(path, arch, w)
    with open(marker, "w", encoding="utf-8") as handle:
        json.dump({"epoch": epoch, "n_groups": len(params)}, handle)


def _load_checkpoint(checkpoint_dir: str, arch: Architecture, k: int):
    marker, models = _checkpoint_paths(checkpoint_dir, k)
    if not os.path.exists(marker):
        return None
    with open(marker, "r", encoding="utf-8") as handle:
        state = json.load(handle)
    if state.get("n_groups") != k:
        raise ValueError(
            f"checkpoint group count {state.get('n_groups')} does not match dataset ({k})"
        )
    params = []
    for path in models:
        saved_arch, w = load_model(path)
        if saved_arch != arch:
            raise ValueError(f"checkpoint architecture mismatch in {path}")
        params.append(w)
    return int(state["epoch"]), params


def check_certificate_empirically(
    ws: list[np.ndarray],
    sigma: float,
    xs_per_group: list[np.ndarray],
    arch: Architecture,
    n_samples: int,
    master_seed: int,
    a: float = 4.0,
) -> CheckResult:
    """Measure the smoothed output gap between the averaged and each group
    classifier on that group's inputs; every gap must stay within the
    certificate bound plus paired Monte-Carlo tolerance.
    """
    cert = certify(ws, sigma)
    center = average_params(ws)
    seeds = SeedPolicy(master_seed, "mc-certify")
    sc_center = SmoothedClassifier(arch, center, sigma=sigma, n_samples=n_samples, seeds=seeds)
    root_n = math.sqrt(n_samples)
    failures = []
    max_gap = 0.0
    max_over_bound = -math.inf
    for gid, xs in enumerate(xs_per_group):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[0] == 0:
            continue
        sc_k = SmoothedClassifier(arch, ws[gid], sigma=sigma, n_samples=n_samples, seeds=seeds)
        v_center, var_center = smooth_predict_matrix(sc_center, xs, eval_id=("cert", gid))
        v_k, var_k = smooth_predict_matrix(sc_k, xs, eval_id=("cert", gid))
        gaps = np.abs(v_center - v_k)
        tol = a * (np.sqrt(var_center) + np.sqrt(var_k)) / root_n
        over = gaps > cert.epsilon + tol
        max_gap = max(max_gap, float(gaps.max()))
        max_over_bound = max(max_over_bound, float((gaps - tol).max()))
        for i in np.nonzero(over)[0]:
            failures.append(
                {
                    "group": gid,
                    "x_index": int(i),
                    "gap": float(gaps[i]),
                    "epsilon": cert.epsilon,
                    "tolerance": float(tol[i]),
                }
            )
    return CheckResult(
        name="certificate-empirical",
        passed=not failures,
        params={
            "sigma": sigma,
            "n_samples": n_samples,
            "epsilon": cert.epsilon,
            "max_distance": cert.max_distance,
            "a": a,
        },
        measured={"max_gap": max_gap, "max_gap_minus_tolerance": max_over_bound},
        failures=failures,
    )
