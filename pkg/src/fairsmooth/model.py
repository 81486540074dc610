"""Deterministic base classifier: a small fully connected network.

All trainable weights live in one flat 64-bit parameter vector.  The
flattening order is fixed and documented: layer by layer from input to
output, weight matrix first in row-major (C) order with shape
``(fan_in, fan_out)``, then the bias vector.  ``flatten_params`` and
``unflatten_params`` round-trip exactly.

Output kinds:

* ``sigmoid``        logistic squash, the default classifier head;
* ``step``           hard threshold ``1[z >= 0]``, used by closed-form
                     oracles (no gradient);
* ``clipped-linear`` ``clip(z, 0, 1)``, affine on its interior, used by
                     oracle checks that need a head linear in the weights.

Every head maps to [0, 1], so smoothed averages of outputs stay in [0, 1]
no matter how large the weights are.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng

ACTIVATIONS = ("relu", "tanh", "sigmoid")
OUTPUTS = ("sigmoid", "step", "clipped-linear")

# Probabilities are clamped away from {0, 1} before taking logs in the
# cross-entropy; the clamp has zero gradient outside its interior so exact
# gradients still match finite differences of the clamped loss.
PROB_FLOOR = 1e-7

DEFAULT_HIDDEN = (32, 16)


@dataclass(frozen=True)
class Architecture:
    """Shape and nonlinearity of the base classifier."""

    input_dim: int
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    activation: str = "relu"
    output: str = "sigmoid"
    bias: bool = True

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output {self.output!r}; expected one of {OUTPUTS}")

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        dims = (self.input_dim,) + self.hidden + (1,)
        return tuple(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(a * b + (b if self.bias else 0) for a, b in self.layer_dims)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "output": self.output,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            activation=str(d["activation"]),
            output=str(d["output"]),
            bias=bool(d["bias"]),
        )


def default_architecture(input_dim: int) -> Architecture:
    """Experiment default: input -> 32 -> 16 -> 1 with ReLU hidden units."""
    return Architecture(input_dim=input_dim)


def _check_params(arch: Architecture, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size != arch.n_params:
        raise ValueError(
            f"parameter vector length mismatch: expected m={arch.n_params}, got {w.size}"
        )
    if not np.all(np.isfinite(w)):
        raise ValueError("parameter vector contains non-finite entries")
    return w


def _check_input(arch: Architecture, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != arch.input_dim:
        raise ValueError(
            f"input dimension mismatch: expected n={arch.input_dim}, got {x.size}"
        )
    return x


def init_params(arch: Architecture, master_seed: int) -> np.ndarray:
    """Fan-in scaled uniform weights, zero biases, from the 'init' stream."""
    parts = []
    for index, (a, b) in enumerate(arch.layer_dims):
        gen = rng.generator(master_seed, "init", index)
        bound = 1.0 / np.sqrt(a)
        parts.append(gen.uniform(-bound, bound, size=a * b))
        if arch.bias:
            parts.append(np.zeros(b))
    return np.concatenate(parts)


def unflatten_params(arch: Architecture, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Split a flat vector into per-layer (weight, bias) arrays."""
    w = _check_params(arch, w)
    layers = []
    pos = 0
    for a, b in arch.layer_dims:
        mat = w[pos : pos + a * b].reshape(a, b)
        pos += a * b
        vec = None
        if arch.bias:
            vec = w[pos : pos + b]
            pos += b
        layers.append((mat, vec))
    return layers


def flatten_params(arch: Architecture, layers: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    parts = []
    for (a, b), (mat, vec) in zip(arch.layer_dims, layers):
        if mat.shape != (a, b):
            raise ValueError(f"layer weight shape mismatch: expected {(a, b)}, got {mat.shape}")
        parts.append(np.asarray(mat, dtype=np.float64).reshape(-1))
        if arch.bias:
            if vec is None or vec.shape != (b,):
                raise ValueError(f"layer bias shape mismatch: expected {(b,)}")
            parts.append(np.asarray(vec, dtype=np.float64))
    return np.concatenate(parts)


def _unflatten_many(arch: Architecture, w_stack: np.ndarray) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Per-layer views of stacked parameter rows, shapes (S, a, b) / (S, b)."""
    s = w_stack.shape[0]
    layers = []
    pos = 0
    for a, b in arch.layer_dims:
        mat = w_stack[:, pos : pos + a * b].reshape(s, a, b)
        pos += a * b
        vec = None
        if arch.bias:
            vec = w_stack[:, pos : pos + b]
            pos += b
        layers.append((mat, vec))
    return layers


def _hidden_activation(arch: Architecture, z: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return np.maximum(z, 0.0)
    if arch.activation == "tanh":
        return np.tanh(z)
    return _sigmoid(z)


def _activation_grad(arch: Architecture, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return (z > 0.0).astype(np.float64)
    if arch.activation == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _squash(arch: Architecture, z: np.ndarray) -> np.ndarray:
    if arch.output == "sigmoid":
        return _sigmoid(z)
    if arch.output == "step":
        return (z >= 0.0).astype(np.float64)
    return np.clip(z, 0.0, 1.0)


def _forward_stack(arch: Architecture, w_stack: np.ndarray, x_mat: np.ndarray, keep_trace: bool):
    """Forward pass for S parameter rows over B inputs.

    Returns outputs of shape (S, B); with ``keep_trace`` also the
    pre-activations and activations needed for backprop.
    """
    layers = _unflatten_many(arch, w_stack)
    pre = []
    act = []
    mat0, vec0 = layers[0]
    # One dense product for the first layer, then stacked products.
    z = np.tensordot(x_mat, mat0, axes=([1], [1]))  # (B, S, h)
    z = np.ascontiguousarray(z.transpose(1, 0, 2))  # (S, B, h)
    if vec0 is not None:
        z = z + vec0[:, None, :]
    for depth in range(len(layers)):
        is_output = depth == len(layers) - 1
        if depth > 0:
            mat, vec = layers[depth]
            z = np.matmul(h, mat)
            if vec is not None:
                z = z + vec[:, None, :]
        if is_output:
            z_out = z[..., 0]
            out = _squash(arch, z_out)
            if keep_trace:
                return out, z_out, pre, act, layers
            return out
        if keep_trace:
            pre.append(z)
        h = _hidden_activation(arch, z)
        if keep_trace:
            act.append(h)


def _forward_stack_rows(arch: Architecture, w_stack: np.ndarray, x_mat: np.ndarray) -> np.ndarray:
    """Row-major variant of the stacked forward pass: one set of 2-d products
    per parameter row, avoiding (S, B, width) intermediates.  Faster than the
    tensor path when B is large; bit-identical only to itself."""
    layers = _unflatten_many(arch, w_stack)
    s = w_stack.shape[0]
    out = np.empty((s, x_mat.shape[0]), dtype=w_stack.dtype)
    last = len(layers) - 1
    for i in range(s):
        h = x_mat
        for depth, (mat, vec) in enumerate(layers):
            z = h @ mat[i]
            if vec is not None:
                z += vec[i]
            if depth == last:
                out[i] = _squash(arch, z[:, 0])
            else:
                h = _hidden_activation(arch, z)
    return out


def forward_many(arch: Architecture, w_stack: np.ndarray, x_mat: np.ndarray) -> np.ndarray:
    """Outputs in [0, 1] for each of S parameter rows on each of B inputs."""
    w_stack = np.asarray(w_stack, dtype=np.float64)
    x_mat = np.asarray(x_mat, dtype=np.float64)
    if w_stack.ndim != 2 or w_stack.shape[1] != arch.n_params:
        raise ValueError(
            f"parameter stack shape mismatch: expected (S, {arch.n_params}), got {w_stack.shape}"
        )
    if x_mat.ndim != 2 or x_mat.shape[1] != arch.input_dim:
        raise ValueError(
            f"input matrix shape mismatch: expected (B, {arch.input_dim}), got {x_mat.shape}"
        )
    return _forward_stack(arch, w_stack, x_mat, keep_trace=False)


def forward(arch: Architecture, w: np.ndarray, x: np.ndarray) -> float:
    """Deterministic classifier output f(x; W) in [0, 1]."""
    w = _check_params(arch, w)
    x = _check_input(arch, x)
    return float(forward_many(arch, w[None, :], x[None, :])[0, 0])


def bce_loss(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Binary cross-entropy on clamped probabilities (elementwise)."""
    q = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -(y * np.log(q) + (1.0 - y) * np.log1p(-q))


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (0.0, 1.0))):
        bad = y[~np.isin(y, (0.0, 1.0))]
        raise ValueError(f"labels must be 0 or 1, got {bad[:5]!r}")
    return y


def backward_many(
    arch: Architecture,
    w_stack: np.ndarray,
    x_mat: np.ndarray,
    y_vec: np.ndarray,
    loss: str = "bce",
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of the batch-mean loss for each parameter row.

    Returns (grads, losses) with shapes (S, m) and (S,).  Gradients match
    central finite differences of the clamped cross-entropy.
    """
    if loss != "bce":
        raise ValueError(f"unsupported loss kind {loss!r}; only 'bce' is implemented")
    if arch.output == "step":
        raise ValueError("step output has no usable gradient; use sigmoid or clipped-linear")
    w_stack = np.asarray(w_stack, dtype=np.float64)
    x_mat = np.asarray(x_mat, dtype=np.float64)
    y_vec = _check_labels(y_vec)
    if y_vec.shape != (x_mat.shape[0],):
        raise ValueError(
            f"label vector shape mismatch: expected ({x_mat.shape[0]},), got {y_vec.shape}"
        )
    if x_mat.shape[0] == 0:
        raise ValueError("empty batch")

    out, z_out, pre, act, layers = _forward_stack(arch, w_stack, x_mat, keep_trace=True)
    s, b = out.shape
    losses = bce_loss(out, y_vec[None, :]).mean(axis=1)

    # d(mean loss)/dz at the output unit; zero wherever the probability
    # clamp or the clipped-linear head is saturated.
    interior = (out > PROB_FLOOR) & (out < 1.0 - PROB_FLOOR)
    if arch.output == "sigmoid":
        dz = np.where(interior, out - y_vec[None, :], 0.0)
    else:  # clipped-linear
        q = np.clip(out, PROB_FLOOR, 1.0 - PROB_FLOOR)
        dq = (q - y_vec[None, :]) / (q * (1.0 - q))
        slope = ((z_out > 0.0) & (z_out < 1.0)).astype(np.float64)
        dz = np.where(interior, dq * slope, 0.0)
    dz = dz / b

    grads = np.empty_like(w_stack)
    pos_end = arch.n_params
    delta = dz  # output layer: (S, B); hidden layers: (S, B, width)
    for depth in range(len(layers) - 1, -1, -1):
        inputs = act[depth - 1] if depth > 0 else None  # (S, B, d_in) or x_mat
        mat, _ = layers[depth]
        width = mat.shape[2]
        if depth == len(layers) - 1:
            if inputs is None:
                d_mat = np.einsum("bi,sb->si", x_mat, delta)[:, :, None]
            else:
                d_mat = np.einsum("sbi,sb->si", inputs, delta)[:, :, None]
            d_vec = delta.sum(axis=1)[:, None]
            delta_next = delta[:, :, None] * mat[:, None, :, 0]  # (S, B, d_in)
        else:
            if inputs is None:
                d_mat = np.einsum("bi,sbo->sio", x_mat, delta)
            else:
                d_mat = np.einsum("sbi,sbo->sio", inputs, delta)
            d_vec = delta.sum(axis=1)
            delta_next = np.matmul(delta, mat.transpose(0, 2, 1))
        if arch.bias:
            pos_end -= width
            grads[:, pos_end : pos_end + width] = d_vec.reshape(s, width)
        size = mat.shape[1] * width
        pos_end -= size
        grads[:, pos_end : pos_end + size] = d_mat.reshape(s, size)
        if depth > 0:
            delta = delta_next * _activation_grad(arch, pre[depth - 1], act[depth - 1])
    return grads, losses


def backward(
    arch: Architecture,
    w: np.ndarray,
    x: np.ndarray,
    y: float,
    loss: str = "bce",
) -> np.ndarray:
    """Gradient of the loss at one example; length m, bitwise deterministic."""
    w = _check_params(arch, w)
    x = _check_input(arch, x)
    grads, _ = backward_many(arch, w[None, :], x[None, :], np.asarray([y]), loss=loss)
    return grads[0]


def save_model(path, arch: Architecture, w: np.ndarray) -> None:
    """Write a self-describing text model file; round-trips exactly."""
    w = _check_params(arch, w)
    lines = [
        "fairsmooth-model v1",
        f"input_dim {arch.input_dim}",
        "hidden " + " ".join(str(h) for h in arch.hidden),
        f"activation {arch.activation}",
        f"output {arch.output}",
        f"bias {int(arch.bias)}",
        f"params {w.size}",
    ]
    lines.extend(repr(float(v)) for v in w)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def load_model(path) -> tuple[Architecture, np.ndarray]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle]
    if not lines or lines[0] != "fairsmooth-model v1":
        raise ValueError(f"{path}: not a fairsmooth v1 model file")
    header: dict[str, str] = {}
    for i, line in enumerate(lines[1:7], start=1):
        key, _, value = line.partition(" ")
        header[key] = value
    arch = Architecture(
        input_dim=int(header["input_dim"]),
        hidden=tuple(int(h) for h in header["hidden"].split()) if header["hidden"].strip() else (),
        activation=header["activation"],
        output=header["output"],
        bias=bool(int(header["bias"])),
    )
    count = int(header["params"])
    values = [float(v) for v in lines[7 : 7 + count]]
    if len(values) != count:
        raise ValueError(f"{path}: expected {count} parameter lines, found {len(values)}")
    w = np.asarray(values, dtype=np.float64)
    return arch, _check_params(arch, w)
