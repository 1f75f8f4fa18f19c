"""Reward backends and the task-distribution monitor.

Synthetic reward surfaces (linear, gaussian-bump, piecewise) and a toy
expert-merging environment stand in for full MoE inference: each maps a
merging weight to a length-V per-task reward, optionally with additive
Gaussian observation noise clamped into the declared reward range.
Environments built with a grid resolution expose a brute-force simplex
lattice oracle used for regret bookkeeping.

The monitor side estimates the per-slot task distribution from an id
stream with a Count-Min Sketch and smooths it across slots with an
exponential moving average.
"""
from __future__ import annotations

import itertools
import math
from typing import Optional, Sequence

import numpy as np

from .partition import top_b_project

REWARD_KINDS = ("linear", "gaussian-bump", "piecewise")


def check_task_feature(psi: np.ndarray, v: Optional[int] = None, tol: float = 1e-9) -> np.ndarray:
    """Validate simplex membership of a task-feature vector."""
    psi = np.asarray(psi, dtype=np.float64)
    if v is not None and psi.shape != (v,):
        raise ValueError(f"task feature must have length {v}, got {psi.shape}")
    if np.any(psi < 0) or abs(float(psi.sum()) - 1.0) > tol:
        raise ValueError("task feature must be a probability vector")
    return psi


def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All lattice points {n/G : n nonneg integers, sum n = G}, lexicographic."""
    combos = itertools.combinations(range(resolution + k - 1), k - 1)
    points = np.empty((math.comb(resolution + k - 1, k - 1), k), dtype=np.float64)
    for row, dividers in enumerate(combos):
        prev = -1
        for j, d in enumerate(dividers):
            points[row, j] = d - prev - 1
            prev = d
        points[row, k - 1] = resolution + k - 2 - prev
    return points / resolution


class SyntheticEnvironment:
    """Closed-form reward surfaces with optional observation noise.

    linear:        r_v = a_v . x
    gaussian-bump: r_v = exp(-||x - c_v||^2 / (2 sigma_v^2))
    piecewise:     the bump, with coordinates permuted where x[0] > 0.5
    """

    reward_range = (0.0, 1.0)

    def __init__(
        self,
        kind: str,
        num_experts: int,
        num_tasks: int,
        params: Optional[dict] = None,
        noise_sigma: float = 0.05,
        seed: int = 0,
        grid_resolution: Optional[int] = None,
        max_experts_b: Optional[int] = None,
    ):
        if kind not in REWARD_KINDS:
            raise ValueError(f"unknown synthetic reward kind {kind!r}")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.kind = kind
        self.K = num_experts
        self.V = num_tasks
        self.noise_sigma = noise_sigma
        self.max_experts_b = max_experts_b
        self.grid_resolution = (
            grid_resolution
            if grid_resolution is not None
            else (20 if num_experts <= 4 else 8)
        )
        self._oracle_cache: dict = {}

        params = dict(params or {})
        rng = np.random.default_rng(seed)
        if kind == "linear":
            coeffs = params.get("coefficients")
            if coeffs is None:
                coeffs = rng.uniform(0.0, 1.0, size=(num_tasks, num_experts))
            self.coefficients = np.asarray(coeffs, dtype=np.float64)
            if self.coefficients.shape != (num_tasks, num_experts):
                raise ValueError("coefficients must have shape (V, K)")
        else:
            centers = params.get("centers")
            if centers is None:
                e = rng.exponential(1.0, size=(num_tasks, num_experts))
                centers = e / e.sum(axis=1, keepdims=True)
            self.centers = np.asarray(centers, dtype=np.float64)
            if self.centers.shape != (num_tasks, num_experts):
                raise ValueError("centers must have shape (V, K)")
            sigmas = params.get("sigmas", 0.5)
            self.sigmas = np.broadcast_to(
                np.asarray(sigmas, dtype=np.float64), (num_tasks,)
            ).copy()
            if np.any(self.sigmas <= 0):
                raise ValueError("sigmas must be > 0")
            if kind == "piecewise":
                perm = params.get("permutation")
                if perm is None:
                    perm = rng.permutation(num_experts)
                self.permutation = np.asarray(perm, dtype=np.int64)
                if sorted(self.permutation.tolist()) != list(range(num_experts)):
                    raise ValueError("permutation must be a permutation of 0..K-1")

    @property
    def has_oracle(self) -> bool:
        return self.grid_resolution is not None

    def noiseless(self, x: np.ndarray) -> np.ndarray:
        return self.noiseless_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def noiseless_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if self.kind == "linear":
            return xs @ self.coefficients.T
        if self.kind == "piecewise":
            xs = np.where(xs[:, :1] > 0.5, xs[:, self.permutation], xs)
        diff = xs[:, None, :] - self.centers[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        return np.exp(-sq / (2.0 * self.sigmas**2))

    def observe(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        r = self.noiseless(x)
        if self.noise_sigma > 0:
            r = r + rng.normal(0.0, self.noise_sigma, size=self.V)
        return np.clip(r, *self.reward_range)

    def oracle(self, psi: np.ndarray) -> tuple[np.ndarray, float]:
        """Memoized grid-search optimum for a given task feature."""
        psi = np.asarray(psi, dtype=np.float64)
        key = (psi.tobytes(), self.grid_resolution)
        if key not in self._oracle_cache:
            self._oracle_cache[key] = oracle_best(self, psi, self.grid_resolution)
        return self._oracle_cache[key]


class ToyMoEEnvironment:
    """Expert merging on linear maps with an analytic expected loss.

    Experts are m x m matrices; merging weight x yields W = sum_k x_k W_k.
    Task v has target map T_v and isotropic input covariance s_v * I, so the
    expected squared error E||W u - T_v u||^2 equals ||W - T_v||_F^2 * s_v.
    Reward is the negative loss, affinely rescaled to [0, 1] per task unless
    rescale=False is requested (then raw negative losses are emitted).
    """

    def __init__(
        self,
        experts: np.ndarray,
        targets: np.ndarray,
        covariance_scales: Optional[np.ndarray] = None,
        covariances: Optional[np.ndarray] = None,
        noise_sigma: float = 0.0,
        rescale: bool = True,
        grid_resolution: Optional[int] = None,
        max_experts_b: Optional[int] = None,
    ):
        self.experts = np.asarray(experts, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        if self.experts.ndim != 3 or self.experts.shape[1] != self.experts.shape[2]:
            raise ValueError("experts must have shape (K, m, m)")
        if self.targets.ndim != 3 or self.targets.shape[1:] != self.experts.shape[1:]:
            raise ValueError("targets must have shape (V, m, m)")
        if not (np.all(np.isfinite(self.experts)) and np.all(np.isfinite(self.targets))):
            raise ValueError("expert/target matrices must be finite")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.kind = "toy-moe"
        self.K = self.experts.shape[0]
        self.V = self.targets.shape[0]
        self.m = self.experts.shape[1]
        self.noise_sigma = noise_sigma
        self.rescale = rescale
        self.max_experts_b = max_experts_b
        self.grid_resolution = (
            grid_resolution if grid_resolution is not None else (20 if self.K <= 4 else 8)
        )
        self._oracle_cache: dict = {}

        if covariances is not None:
            self.covariances = np.asarray(covariances, dtype=np.float64)
            if self.covariances.shape != (self.V, self.m, self.m):
                raise ValueError("covariances must have shape (V, m, m)")
            if not np.allclose(self.covariances, self.covariances.transpose(0, 2, 1)):
                raise ValueError("covariances must be symmetric")
        else:
            scales = (
                np.ones(self.V)
                if covariance_scales is None
                else np.broadcast_to(
                    np.asarray(covariance_scales, dtype=np.float64), (self.V,)
                )
            )
            self.covariances = scales[:, None, None] * np.eye(self.m)[None, :, :]

        # Loss is convex in x, so its maximum over the simplex sits at a vertex.
        vertex_losses = np.array(
            [[self._loss_single(wk, v) for v in range(self.V)] for wk in self.experts]
        )
        self.max_loss = vertex_losses.max(axis=0)  # per task
        if self.rescale:
            self.reward_range = (0.0, 1.0)
        else:
            self.reward_range = (-float(self.max_loss.max()), 0.0)

    @property
    def has_oracle(self) -> bool:
        return self.grid_resolution is not None

    def _loss_single(self, w: np.ndarray, v: int) -> float:
        d = w - self.targets[v]
        return float(np.trace(d.T @ d @ self.covariances[v]))

    def merged(self, x: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(x, dtype=np.float64), self.experts, axes=1)

    def expected_loss(self, x: np.ndarray) -> np.ndarray:
        """Closed-form E||W u - T_v u||^2 per task, u ~ N(0, Sigma_v)."""
        w = self.merged(x)
        diffs = w[None, :, :] - self.targets
        return np.einsum("vij,vik,vjk->v", diffs, diffs, self.covariances)

    def noiseless(self, x: np.ndarray) -> np.ndarray:
        losses = self.expected_loss(x)
        if not self.rescale:
            return -losses
        safe_max = np.where(self.max_loss > 0, self.max_loss, 1.0)
        return np.where(self.max_loss > 0, 1.0 - losses / safe_max, 1.0)

    def noiseless_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.noiseless(x) for x in np.asarray(xs, dtype=np.float64)])

    def observe(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        r = self.noiseless(x)
        if self.noise_sigma > 0:
            r = r + rng.normal(0.0, self.noise_sigma, size=self.V)
        return np.clip(r, *self.reward_range)

    def oracle(self, psi: np.ndarray) -> tuple[np.ndarray, float]:
        psi = np.asarray(psi, dtype=np.float64)
        key = (psi.tobytes(), self.grid_resolution)
        if key not in self._oracle_cache:
            self._oracle_cache[key] = oracle_best(self, psi, self.grid_resolution)
        return self._oracle_cache[key]


def synthetic_reward(
    kind: str,
    params: dict,
    x: np.ndarray,
    rng: np.random.Generator,
    num_tasks: Optional[int] = None,
    noise_sigma: float = 0.0,
) -> np.ndarray:
    """One-shot noisy sample of a synthetic reward surface."""
    x = np.asarray(x, dtype=np.float64)
    if num_tasks is None:
        ref = params.get("coefficients", params.get("centers"))
        if ref is None:
            raise ValueError("params must define coefficients or centers")
        num_tasks = np.asarray(ref).shape[0]
    env = SyntheticEnvironment(
        kind, x.shape[0], num_tasks, params=params, noise_sigma=noise_sigma
    )
    return env.observe(x, rng)


def toy_moe_reward(env: ToyMoEEnvironment, x: np.ndarray) -> np.ndarray:
    """Noiseless per-task reward of the toy expert-merging environment."""
    return env.noiseless(x)


def oracle_best(env, psi: np.ndarray, grid_resolution: int) -> tuple[np.ndarray, float]:
    """Brute-force maximizer of psi . noiseless(x) over the simplex lattice.

    Each lattice point passes through top-B projection (if the environment
    carries an expert budget) before evaluation, so the oracle optimizes
    over the same constrained action set the router plays from.
    """
    if grid_resolution < env.K:
        raise ValueError(
            f"grid_resolution {grid_resolution} too coarse for K={env.K}"
        )
    psi = check_task_feature(psi, env.V)
    points = simplex_grid(env.K, grid_resolution)
    b = getattr(env, "max_experts_b", None)
    if b is not None and b < env.K:
        points = np.stack([top_b_project(pt, b) for pt in points])
    values = env.noiseless_batch(points) @ psi
    best = int(np.argmax(values))
    return points[best].copy(), float(values[best])


def monitor_ema(prev: np.ndarray, observed_counts: np.ndarray, alpha: float) -> np.ndarray:
    """Blend normalized counts into the previous feature, renormalized."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    prev = np.asarray(prev, dtype=np.float64)
    counts = np.asarray(observed_counts, dtype=np.float64)
    if counts.shape != prev.shape:
        raise ValueError("counts and prev must have equal length")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    total = counts.sum()
    if total == 0:
        return prev.copy()
    q = counts / total
    mixed = (1.0 - alpha) * prev + alpha * q
    return mixed / mixed.sum()


_MIX_1 = np.uint64(0x9E3779B97F4A7C15)
_MIX_2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_3 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z + _MIX_1).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(30))) * _MIX_2).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(27))) * _MIX_3).astype(np.uint64)
    return z ^ (z >> np.uint64(31))


class CountMinSketch:
    """Sublinear frequency counter: never undercounts, overcounts boundedly."""

    def __init__(self, width: int, depth: int, seed: int = 0):
        if width < 1 or depth < 1:
            raise ValueError("width and depth must be >= 1")
        self.width = width
        self.depth = depth
        self.counters = np.zeros((depth, width), dtype=np.int64)
        self._seeds = _splitmix64(
            np.arange(1, depth + 1, dtype=np.uint64) * np.uint64(seed * 2 + 1)
        )
        self._rows = np.arange(depth)

    def _indices(self, item: int) -> np.ndarray:
        hashed = _splitmix64(np.uint64(item & 0xFFFFFFFFFFFFFFFF) ^ self._seeds)
        return (hashed % np.uint64(self.width)).astype(np.int64)

    def insert(self, item: int, count: int = 1) -> None:
        if count < 0:
            raise ValueError("count must be >= 0")
        self.counters[self._rows, self._indices(item)] += count

    def estimate(self, item: int) -> int:
        return int(self.counters[self._rows, self._indices(item)].min())

    def reset(self) -> None:
        self.counters[:] = 0


class TaskMonitor:
    """Per-slot task-distribution estimator: CMS counts smoothed by EMA.

    The first observed slot yields its normalized estimates directly; later
    slots blend against the previous feature with weight alpha.
    """

    def __init__(
        self,
        num_tasks: int,
        alpha: float = 0.5,
        cms_width: int = 64,
        cms_depth: int = 4,
        seed: int = 0,
    ):
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.V = num_tasks
        self.alpha = alpha
        self.sketch = CountMinSketch(cms_width, cms_depth, seed=seed)
        self.previous: Optional[np.ndarray] = None

    def slot_feature(self, stream: Sequence[int]) -> np.ndarray:
        """Consume one slot's task-id stream and emit the feature vector."""
        if len(stream) == 0:
            if self.previous is not None:
                return self.previous.copy()
            return np.full(self.V, 1.0 / self.V)
        self.sketch.reset()
        ids, counts = np.unique(np.asarray(stream, dtype=np.int64), return_counts=True)
        for item, count in zip(ids, counts):
            self.sketch.insert(int(item), int(count))
        estimates = np.array(
            [self.sketch.estimate(v) for v in range(self.V)], dtype=np.float64
        )
        total = estimates.sum()
        if total == 0:
            feature = np.full(self.V, 1.0 / self.V)
        elif self.previous is None:
            feature = estimates / total
        else:
            feature = monitor_ema(self.previous, estimates, self.alpha)
        self.previous = feature
        return feature.copy()


def slot_feature(monitor: TaskMonitor, stream: Sequence[int]) -> np.ndarray:
    return monitor.slot_feature(stream)


def environment_from_spec(spec: dict, max_experts_b: Optional[int] = None):
    """Build an environment from its JSON description.

    Schema: {kind, K, V, params..., noise_sigma, seed, grid_resolution}.
    Synthetic kinds generate any missing surface parameters from the seed;
    toy-moe generates expert/target matrices the same way.
    """
    spec = dict(spec)
    kind = spec.get("kind")
    if kind in REWARD_KINDS:
        return SyntheticEnvironment(
            kind,
            num_experts=int(spec["K"]),
            num_tasks=int(spec["V"]),
            params=spec.get("params"),
            noise_sigma=float(spec.get("noise_sigma", 0.05)),
            seed=int(spec.get("seed", 0)),
            grid_resolution=spec.get("grid_resolution"),
            max_experts_b=max_experts_b,
        )
    if kind == "toy-moe":
        k, v = int(spec["K"]), int(spec["V"])
        m = int(spec.get("m", 4))
        params = spec.get("params") or {}
        if "experts" in params:
            experts = np.asarray(params["experts"], dtype=np.float64)
            targets = np.asarray(params["targets"], dtype=np.float64)
        else:
            rng = np.random.default_rng(int(spec.get("seed", 0)))
            experts = rng.normal(0.0, 1.0, size=(k, m, m))
            targets = rng.normal(0.0, 1.0, size=(v, m, m))
        return ToyMoEEnvironment(
            experts,
            targets,
            covariance_scales=params.get("covariance_scales"),
            noise_sigma=float(spec.get("noise_sigma", 0.0)),
            rescale=bool(spec.get("rescale", True)),
            grid_resolution=spec.get("grid_resolution"),
            max_experts_b=max_experts_b,
        )
    raise ValueError(f"unknown environment kind {kind!r}")
