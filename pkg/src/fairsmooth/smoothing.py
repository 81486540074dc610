"""Gaussian parameter smoothing by Monte-Carlo integration.

A smoothed classifier replaces the deterministic output f(x; W) by the
expectation of f(x; W + D) over isotropic parameter noise D ~ N(0, sigma^2 I),
estimated as an average over N sampled parameter perturbations.

Sampling is chunked: chunk c of evaluation e is a pure function of
(master_seed, stream, e, c), so paired comparisons (two parameter vectors
under identical noise) and parallel chunk evaluation are both exact.  Chunk
partial sums are reduced in chunk order, which keeps results bitwise
identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import Architecture, _forward_stack, _forward_stack_rows, backward_many, forward_many

EVAL_SAMPLES = 100_000  # certification / evaluation sample count
TRAIN_SAMPLES = 16      # per-gradient-step sample count inside training


@dataclass(frozen=True)
class SeedPolicy:
    """Counter-based randomness spec: all draws derive from (seed, stream)."""

    master_seed: int
    stream: str = "mc-eval"


@dataclass(frozen=True)
class McErrorReport:
    """Sample statistics of one Monte-Carlo integration.

    ``variance_estimate`` is the population variance of the sampled outputs,
    which for values in [0, 1] is at most 0.25.
    """

    sample_count: int
    variance_estimate: float

    def half_width(self, a: float) -> float:
        return a * math.sqrt(self.variance_estimate) / math.sqrt(self.sample_count)

    def confidence(self, a: float) -> float:
        """Gaussian mass of (-a, a): the probability the error bound holds."""
        return math.erf(a / math.sqrt(2.0))


@dataclass(frozen=True)
class SmoothedClassifier:
    """Base classifier plus noise scale, sample count and seed policy."""

    arch: Architecture
    params: np.ndarray
    sigma: float
    n_samples: int = EVAL_SAMPLES
    seeds: SeedPolicy = field(default_factory=lambda: SeedPolicy(0))
    workers: int = 1

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != self.arch.n_params:
            raise ValueError(
                f"parameter vector length mismatch: expected m={self.arch.n_params}, got {params.size}"
            )
        params = params.copy()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.n_samples < 1:
            raise ValueError(f"sample count must be at least 1, got {self.n_samples}")
        if self.workers < 1:
            raise ValueError(f"worker count must be at least 1, got {self.workers}")


def _noise_labels(sc: SmoothedClassifier, eval_id: object) -> tuple:
    return (sc.seeds.stream, eval_id)


# The prediction pass runs in single precision with double accumulation;
# Monte-Carlo half-widths exceed the float32 rounding by three orders of
# magnitude.  Small row counts use the stacked tensor forward; large ones a
# per-sample 2-d product loop whose intermediates stay cache-sized.
_ROW_CROSSOVER = 128


def _chunk_stats(sc: SmoothedClassifier, x32: np.ndarray, eval_id: object, chunk: tuple):
    index, _, count = chunk
    noise = rng.chunk_normal(
        sc.seeds.master_seed, _noise_labels(sc, eval_id), index, (count, sc.arch.n_params)
    )
    stack = (sc.params[None, :] + sc.sigma * noise).astype(np.float32)
    if x32.shape[0] <= _ROW_CROSSOVER:
        outs = _forward_stack(sc.arch, stack, x32, keep_trace=False)
    else:
        outs = _forward_stack_rows(sc.arch, stack, x32)
    return outs.sum(axis=0, dtype=np.float64), np.square(outs, dtype=np.float64).sum(axis=0)


def smooth_predict_matrix(
    sc: SmoothedClassifier,
    x_mat: np.ndarray,
    eval_id: object = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed values and per-input variance estimates over a matrix of inputs.

    The same noise draws are applied to every row, so two calls with equal
    (seed policy, eval_id) are paired sample by sample.
    """
    x_mat = np.asarray(x_mat, dtype=np.float64)
    if x_mat.ndim != 2 or x_mat.shape[1] != sc.arch.input_dim:
        raise ValueError(
            f"input matrix shape mismatch: expected (B, {sc.arch.input_dim}), got {x_mat.shape}"
        )
    # Duplicate rows (common with binary features) get identical noise, so
    # evaluating distinct rows once changes nothing but the cost.
    inverse = None
    if x_mat.shape[0] > 256:
        unique, inverse = np.unique(x_mat, axis=0, return_inverse=True)
        if unique.shape[0] == x_mat.shape[0]:
            inverse = None
        else:
            x_mat = unique
    x32 = x_mat.astype(np.float32)
    chunks = list(rng.chunk_bounds(sc.n_samples))
    if sc.workers == 1 or len(chunks) == 1:
        partials = [_chunk_stats(sc, x32, eval_id, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=sc.workers) as pool:
            partials = list(pool.map(lambda c: _chunk_stats(sc, x32, eval_id, c), chunks))
    total = np.zeros(x_mat.shape[0])
    total_sq = np.zeros(x_mat.shape[0])
    for part_sum, part_sq in partials:  # fixed reduction order over chunks
        total += part_sum
        total_sq += part_sq
    mean = total / sc.n_samples
    var = np.maximum(total_sq / sc.n_samples - mean * mean, 0.0)
    if inverse is not None:
        mean, var = mean[inverse], var[inverse]
    return mean, var


def smooth_predict(
    sc: SmoothedClassifier,
    x: np.ndarray,
    eval_id: object = 0,
) -> tuple[float, McErrorReport]:
    """Monte-Carlo estimate of the smoothed output at one input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d feature vector, got shape {x.shape}")
    values, variances = smooth_predict_matrix(sc, x[None, :], eval_id=eval_id)
    return float(values[0]), McErrorReport(sc.n_samples, float(variances[0]))


def smooth_gradient(
    sc: SmoothedClassifier,
    x_batch: np.ndarray,
    y_batch: np.ndarray,
    eval_id: object = 0,
    loss: str = "bce",
    return_loss: bool = False,
):
    """Gradient of the smoothed batch loss: mean over noise draws of exact
    per-draw gradients, each averaged over the batch.

    Every example in the batch sees the same noise draws (common random
    numbers), so finite differences of the smoothed loss under the same
    eval_id reproduce this gradient.
    """
    x_batch = np.asarray(x_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[0] == 0:
        raise ValueError("empty batch")
    total = np.zeros(sc.arch.n_params)
    total_loss = 0.0
    for index, _, count in rng.chunk_bounds(sc.n_samples):
        noise = rng.chunk_normal(
            sc.seeds.master_seed, _noise_labels(sc, eval_id), index, (count, sc.arch.n_params)
        )
        grads, losses = backward_many(
            sc.arch, sc.params[None, :] + sc.sigma * noise, x_batch, y_batch, loss=loss
        )
        total += grads.sum(axis=0)
        total_loss += float(losses.sum())
    grad = total / sc.n_samples
    if return_loss:
        return grad, total_loss / sc.n_samples
    return grad


def base_gradient(
    sc_or_arch,
    params: np.ndarray | None = None,
    x_batch: np.ndarray | None = None,
    y_batch: np.ndarray | None = None,
    loss: str = "bce",
) -> tuple[np.ndarray, float]:
    """Gradient and loss of the unsmoothed batch loss (single zero draw)."""
    if isinstance(sc_or_arch, SmoothedClassifier):
        arch, w = sc_or_arch.arch, sc_or_arch.params
    else:
        arch, w = sc_or_arch, np.asarray(params, dtype=np.float64)
    grads, losses = backward_many(arch, w[None, :], x_batch, y_batch, loss=loss)
    return grads[0], float(losses[0])


def mc_error_bound(
    n_samples: int,
    a: float,
    variance_bound: float = 1.0,
) -> tuple[float, float]:
    """Worst-case Monte-Carlo error interval half-width and its confidence.

    ``half_width`` is ``a * variance_bound / sqrt(N)`` for a supplied bound on
    the output variance (1 is the generic worst case; 0.25 is sharp for
    values in [0, 1]); ``confidence`` is the Gaussian mass of (-a, a).
    """
    if n_samples < 1:
        raise ValueError(f"sample count must be at least 1, got {n_samples}")
    if not a > 0.0:
        raise ValueError(f"confidence multiplier must be positive, got {a}")
    if not 0.0 < variance_bound <= 1.0:
        raise ValueError(f"variance bound must lie in (0, 1], got {variance_bound}")
    half_width = a * variance_bound / math.sqrt(n_samples)
    confidence = math.erf(a / math.sqrt(2.0))
    return half_width, confidence
