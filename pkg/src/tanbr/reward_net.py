"""Fully-connected reward predictor with analytic parameter gradients.

The network maps a length-K merging weight to a length-V per-task reward
estimate through L rectified hidden layers of width w:

    f(x) = sqrt(w) * W_out relu(H_{L-1} relu(... relu(H_1 relu(W_in x))))

Layer stack: one input map (w x K), L-1 square hidden blocks (w x w), one
output map (V x w), giving p = wK + w^2(L-1) + wV parameters. Everything is
plain numpy; gradients are reverse-mode by hand so the bandit can form the
exact per-arm gradient features it needs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the reward predictor."""

    input_dim: int   # K
    output_dim: int  # V
    width: int = 64  # w
    depth: int = 2   # L, number of rectified hidden layers

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")

    @property
    def param_count(self) -> int:
        """p = wK + w^2(L-1) + wV."""
        w, k, v, l = self.width, self.input_dim, self.output_dim, self.depth
        return w * k + w * w * (l - 1) + w * v

    def layer_shapes(self) -> list[tuple[int, int]]:
        w, k, v, l = self.width, self.input_dim, self.output_dim, self.depth
        return [(w, k)] + [(w, w)] * (l - 1) + [(v, w)]


@dataclass(frozen=True)
class TrainConfig:
    """Settings for the regularized squared-loss updates.

    normalize_gradient divides each step by the history length, i.e. the
    descent runs on the mean loss instead of the sum. The minimizer is
    unchanged; it keeps a fixed step size stable as the history grows
    (the sum loss needs step sizes shrinking like 1/t).

    seed is a reproducibility hook for subsampled training variants; the
    default full-batch update is deterministic and does not consume it.
    """

    step_size: float = 1e-3
    regularization: float = 1.0
    sgd_steps_per_round: int = 50
    history_cap: Optional[int] = None
    normalize_gradient: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not self.regularization > 0:
            raise ValueError("regularization must be > 0")
        if self.sgd_steps_per_round < 1:
            raise ValueError("sgd_steps_per_round must be >= 1")
        if self.history_cap is not None and self.history_cap < 1:
            raise ValueError("history_cap must be >= 1 when set")


class RewardNet:
    """Immutable parameter bundle; forward/gradient never mutate it."""

    __slots__ = ("config", "theta")

    def __init__(self, config: NetConfig, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (config.param_count,):
            raise ValueError(
                f"theta must have length {config.param_count}, got {theta.shape}"
            )
        self.config = config
        self.theta = theta

    def layers(self) -> list[np.ndarray]:
        """Views of the flat vector as layer matrices (no copies)."""
        mats = []
        offset = 0
        for shape in self.config.layer_shapes():
            size = shape[0] * shape[1]
            mats.append(self.theta[offset : offset + size].reshape(shape))
            offset += size
        return mats

    def with_theta(self, theta: np.ndarray) -> "RewardNet":
        return RewardNet(self.config, theta)


def flatten_layers(mats: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([m.ravel() for m in mats])


def init_params(config: NetConfig, rng: np.random.Generator) -> RewardNet:
    """Gaussian init: hidden entries variance 4/w, output entries variance 2/w."""
    w = config.width
    mats = []
    shapes = config.layer_shapes()
    for shape in shapes[:-1]:
        mats.append(rng.normal(0.0, np.sqrt(4.0 / w), size=shape))
    mats.append(rng.normal(0.0, np.sqrt(2.0 / w), size=shapes[-1]))
    return RewardNet(config, flatten_layers(mats))


def forward(net: RewardNet, x: np.ndarray) -> np.ndarray:
    """Predicted per-task reward vector for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.config.input_dim,):
        raise ValueError(f"x must have length {net.config.input_dim}, got {x.shape}")
    mats = net.layers()
    a = x
    for m in mats[:-1]:
        a = np.maximum(m @ a, 0.0)
    return np.sqrt(net.config.width) * (mats[-1] @ a)


def forward_batch(net: RewardNet, xs: np.ndarray) -> np.ndarray:
    """Predictions for a batch of inputs, shape (n, K) -> (n, V)."""
    xs = np.asarray(xs, dtype=np.float64)
    mats = net.layers()
    a = xs
    for m in mats[:-1]:
        a = np.maximum(a @ m.T, 0.0)
    return np.sqrt(net.config.width) * (a @ mats[-1].T)


def gradient(net: RewardNet, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Gradient of direction^T f(x, theta) w.r.t. the flat parameter vector.

    The scalarizing direction is the task-feature vector in the bandit's
    confidence computation, and the residual vector during training.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (net.config.output_dim,):
        raise ValueError(
            f"direction must have length {net.config.output_dim}, got {direction.shape}"
        )
    g = gradient_batch(net, np.asarray(x, dtype=np.float64)[None, :], direction[None, :])
    return g[0]


def gradient_batch(net: RewardNet, xs: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Rows of grad_theta(direction_i^T f(x_i)), shape (n, p)."""
    xs = np.asarray(xs, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.config.input_dim:
        raise ValueError(f"xs must have shape (n, {net.config.input_dim})")
    if directions.shape != (xs.shape[0], net.config.output_dim):
        raise ValueError("directions must have shape (n, V)")
    mats = net.layers()
    scale = np.sqrt(net.config.width)

    # Forward, keeping activations per layer. acts[j] feeds mats[j].
    acts = [xs]
    pres = []
    a = xs
    for m in mats[:-1]:
        z = a @ m.T
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)

    grads = [None] * len(mats)
    # Output map: d/dW_out (dir^T sqrt(w) W_out a_L) = sqrt(w) dir a_L^T.
    grads[-1] = scale * np.einsum("nv,nw->nvw", directions, acts[-1])
    # Backprop through the rectified stack.
    delta = scale * (directions @ mats[-1])          # (n, w): d s / d a_L
    for j in range(len(mats) - 2, -1, -1):
        delta = delta * (pres[j] > 0.0)              # d s / d z_{j+1}
        grads[j] = np.einsum("nw,nu->nwu", delta, acts[j])
        if j > 0:
            delta = delta @ mats[j]                  # d s / d a_j

    n = xs.shape[0]
    return np.concatenate([g.reshape(n, -1) for g in grads], axis=1)


def loss_value(
    net: RewardNet,
    xs: np.ndarray,
    targets: np.ndarray,
    regularization: float,
    theta0: np.ndarray,
) -> float:
    """Regularized squared loss sum_s 0.5 ||f(x_s) - y_s||^2 + (lam/2)||theta - theta0||^2."""
    preds = forward_batch(net, xs)
    resid = preds - targets
    data = 0.5 * float(np.sum(resid * resid))
    diff = net.theta - theta0
    return data + 0.5 * regularization * float(diff @ diff)


def summed_data_gradient(net: RewardNet, xs: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """sum_i grad_theta(direction_i^T f(x_i)) without per-sample expansion.

    Layer-level contraction of the same backprop as gradient_batch; used by
    training where only the sum over the batch is needed.
    """
    mats = net.layers()
    scale = np.sqrt(net.config.width)
    acts = [xs]
    pres = []
    a = xs
    for m in mats[:-1]:
        z = a @ m.T
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)

    grads = [None] * len(mats)
    grads[-1] = scale * (directions.T @ acts[-1])
    delta = scale * (directions @ mats[-1])
    for j in range(len(mats) - 2, -1, -1):
        delta = delta * (pres[j] > 0.0)
        grads[j] = delta.T @ acts[j]
        if j > 0:
            delta = delta @ mats[j]
    return flatten_layers(grads)


def sgd_update(
    net: RewardNet,
    history: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    theta0: np.ndarray,
) -> RewardNet:
    """Full-gradient descent steps on the regularized squared loss.

    history holds (merging weight, observed reward vector) pairs; the data
    term sums residuals over all V outputs. Raises on non-finite loss or
    parameters, which signals a step size past the stability threshold.
    """
    if len(history) == 0:
        raise ValueError("sgd_update requires a nonempty history")
    if config.history_cap is not None and len(history) > config.history_cap:
        history = history[-config.history_cap :]
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in history])
    ys = np.stack([np.asarray(y, dtype=np.float64) for _, y in history])
    theta0 = np.asarray(theta0, dtype=np.float64)

    step = config.step_size
    if config.normalize_gradient:
        step /= xs.shape[0]
    current = net
    for _ in range(config.sgd_steps_per_round):
        resid = forward_batch(current, xs) - ys
        grad = summed_data_gradient(current, xs, resid)
        grad += config.regularization * (current.theta - theta0)
        theta = current.theta - step * grad
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(
                "sgd_update diverged (non-finite parameters); reduce step_size"
            )
        current = current.with_theta(theta)
    final_loss = loss_value(current, xs, ys, config.regularization, theta0)
    if not np.isfinite(final_loss):
        raise FloatingPointError("sgd_update diverged (non-finite loss); reduce step_size")
    return current


def save_params(net: RewardNet, path, seed: Optional[int] = None) -> None:
    """Write a JSON header line then the flat vector as little-endian float64."""
    header = {
        "K": net.config.input_dim,
        "V": net.config.output_dim,
        "w": net.config.width,
        "L": net.config.depth,
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(net.theta.astype("<f8").tobytes())


def load_params(path) -> tuple[RewardNet, Optional[int]]:
    """Inverse of save_params; returns the net and the recorded seed."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    config = NetConfig(
        input_dim=header["K"],
        output_dim=header["V"],
        width=header["w"],
        depth=header["L"],
    )
    theta = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return RewardNet(config, theta), header.get("seed")
