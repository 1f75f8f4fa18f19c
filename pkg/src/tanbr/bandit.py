"""Decision core: UCB scoring over tree candidates and online updates.

Each round scores every candidate weight with

    psi^T f(x, theta) + nu1 * rho^h + gamma * sqrt(g^T Z^{-1} g / w),

plays the argmax, then performs the rank-1 update Z += g g^T / w (via the
Sherman-Morrison identity on the maintained inverse), triggers tree
expansion, and takes regularized gradient steps on the reward net.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .partition import PartitionNode, PartitionTree, TreeConfig
from .reward_net import (
    RewardNet,
    TrainConfig,
    forward_batch,
    gradient,
    gradient_batch,
    sgd_update,
)


@dataclass(frozen=True)
class BanditConfig:
    """Confidence-radius and bookkeeping knobs."""

    regularization: float = 1.0    # lambda
    exploration_nu: float = 1.0    # upsilon
    norm_param: float = 1.0        # S
    confidence_delta: float = 1.0  # delta in (0, 1]
    gamma_mode: str = "practical"  # or "constant"
    gamma_constant: float = 1.0
    refresh_interval: int = 500    # direct re-inversion cadence, bounds SM drift
    diagonal_z: bool = False       # approximate Z by its diagonal (large p only)

    def __post_init__(self):
        if not self.regularization > 0:
            raise ValueError("regularization must be > 0")
        if not self.exploration_nu > 0:
            raise ValueError("exploration_nu must be > 0")
        if not self.norm_param > 0:
            raise ValueError("norm_param must be > 0")
        if not 0.0 < self.confidence_delta <= 1.0:
            raise ValueError("confidence_delta must be in (0, 1]")
        if self.gamma_mode not in ("practical", "constant"):
            raise ValueError(f"unknown gamma_mode {self.gamma_mode!r}")
        if self.gamma_mode == "constant" and not self.gamma_constant > 0:
            raise ValueError("gamma_constant must be > 0")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be >= 1")


@dataclass
class BanditState:
    """Everything the scorer needs at the start of a round.

    z/z_inverse are the accumulated design matrix lambda*I + sum g g^T / w
    and its maintained inverse; in diagonal mode only z_diag is kept.
    """

    net: RewardNet
    theta0: np.ndarray
    z: Optional[np.ndarray]
    z_inverse: Optional[np.ndarray]
    z_diag: Optional[np.ndarray]
    log_det_ratio: float
    round: int
    history: list = field(default_factory=list)


def new_state(net: RewardNet, config: BanditConfig) -> BanditState:
    """Round-zero state: Z = lambda I, log det ratio 0, empty history."""
    p = net.config.param_count
    lam = config.regularization
    if config.diagonal_z:
        return BanditState(
            net=net,
            theta0=net.theta.copy(),
            z=None,
            z_inverse=None,
            z_diag=np.full(p, lam),
            log_det_ratio=0.0,
            round=0,
        )
    return BanditState(
        net=net,
        theta0=net.theta.copy(),
        z=lam * np.eye(p),
        z_inverse=np.eye(p) / lam,
        z_diag=None,
        log_det_ratio=0.0,
        round=0,
    )


def gamma(state: BanditState, config: BanditConfig) -> float:
    """Confidence-radius scale.

    Practical mode keeps the dominant width-independent terms,
    upsilon * sqrt(log det(Z/lambda I) - 2 log delta) + sqrt(lambda) * S;
    a negative radicand (float noise at round 0 with delta = 1) clamps to 0.
    """
    if config.gamma_mode == "constant":
        return config.gamma_constant
    radicand = state.log_det_ratio - 2.0 * math.log(config.confidence_delta)
    radicand = max(0.0, radicand)
    return config.exploration_nu * math.sqrt(radicand) + math.sqrt(
        config.regularization
    ) * config.norm_param


def _quadratic_forms(state: BanditState, grads: np.ndarray) -> np.ndarray:
    """g^T Z^{-1} g for each row of grads, clipped at 0."""
    if state.z_diag is not None:
        q = np.sum(grads * grads / state.z_diag, axis=1)
    else:
        q = np.einsum("np,np->n", grads @ state.z_inverse, grads)
    return np.maximum(q, 0.0)


def ucb_scores(
    state: BanditState,
    xs: np.ndarray,
    depths: Optional[np.ndarray],
    psi: np.ndarray,
    tree_config: Optional[TreeConfig],
    bandit_config: BanditConfig,
) -> np.ndarray:
    """Vectorized UCB over candidate rows; depths=None drops the tree bonus.

    Pass depths=None for policies without a partition tree (the random-
    candidate comparator); the remaining terms are identical.
    """
    xs = np.asarray(xs, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    w = state.net.config.width
    preds = forward_batch(state.net, xs) @ psi
    if not np.all(np.isfinite(preds)):
        raise FloatingPointError("non-finite network output; training diverged")
    grads = gradient_batch(state.net, xs, np.broadcast_to(psi, (xs.shape[0], psi.shape[0])))
    widths = gamma(state, bandit_config) * np.sqrt(_quadratic_forms(state, grads) / w)
    scores = preds + widths
    if depths is not None:
        if tree_config is None:
            raise ValueError("tree_config required when depths are given")
        scores = scores + tree_config.smoothness_nu1 * tree_config.smoothness_rho ** np.asarray(depths)
    return scores


def ucb_score(
    state: BanditState,
    depth: Optional[int],
    x: np.ndarray,
    psi: np.ndarray,
    tree_config: Optional[TreeConfig],
    bandit_config: BanditConfig,
) -> float:
    """Single-candidate UCB; depth=None drops the nu1*rho^h term."""
    depths = None if depth is None else np.array([depth])
    return float(
        ucb_scores(state, np.asarray(x)[None, :], depths, psi, tree_config, bandit_config)[0]
    )


def select_arm(
    state: BanditState,
    candidates: Sequence[tuple[PartitionNode, np.ndarray]],
    psi: np.ndarray,
    tree_config: TreeConfig,
    bandit_config: BanditConfig,
) -> tuple[PartitionNode, np.ndarray]:
    """Argmax of the UCB over active-leaf candidates.

    Candidates arrive in (depth, index) order from active_leaves, so taking
    the first maximum breaks ties toward shallower, lower-index nodes.
    """
    if len(candidates) == 0:
        raise ValueError("select_arm requires a nonempty candidate list")
    xs = np.stack([x for _, x in candidates])
    depths = np.array([node.depth for node, _ in candidates])
    scores = ucb_scores(state, xs, depths, psi, tree_config, bandit_config)
    best = int(np.argmax(scores))
    return candidates[best]


def _apply_rank_one(
    state: BanditState, g: np.ndarray, config: BanditConfig, t: int
) -> tuple:
    """Z_t = Z_{t-1} + g g^T / w on the maintained pieces; returns new pieces."""
    w = state.net.config.width
    lam = config.regularization
    if state.z_diag is not None:
        z_diag = state.z_diag + g * g / w
        log_det = float(np.sum(np.log(z_diag / lam)))
        return None, None, z_diag, log_det

    u = g / math.sqrt(w)
    z = state.z + np.outer(u, u)
    zu = state.z_inverse @ u
    denom = 1.0 + float(u @ zu)
    if denom <= 0.0 or not np.isfinite(denom):
        # Numerically impossible for a PD inverse; rebuild from scratch.
        z_inv = np.linalg.inv(z)
        sign, logabs = np.linalg.slogdet(z)
        log_det = logabs - z.shape[0] * math.log(lam)
    else:
        z_inv = state.z_inverse - np.outer(zu, zu) / denom
        z_inv = 0.5 * (z_inv + z_inv.T)  # keep symmetry exact under drift
        log_det = state.log_det_ratio + math.log(denom)
    if t % config.refresh_interval == 0:
        z_inv = np.linalg.inv(z)
        z_inv = 0.5 * (z_inv + z_inv.T)
        _, logabs = np.linalg.slogdet(z)
        log_det = logabs - z.shape[0] * math.log(lam)
    return z, z_inv, None, log_det


def update_design_and_net(
    state: BanditState,
    x: np.ndarray,
    reward: np.ndarray,
    psi: np.ndarray,
    bandit_config: BanditConfig,
    train_config: TrainConfig,
) -> BanditState:
    """Tree-free part of the round update, shared with non-tree policies.

    Applies the rank-1 design update with the gradient taken at the
    pre-update parameters, appends to history, and retrains the reward net.
    """
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != (state.net.config.output_dim,):
        raise ValueError(
            f"reward must have length {state.net.config.output_dim}, got {reward.shape}"
        )
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward must be finite")
    t = state.round + 1

    g = gradient(state.net, x, np.asarray(psi, dtype=np.float64))
    z, z_inv, z_diag, log_det = _apply_rank_one(state, g, bandit_config, t)

    history = state.history + [
        (np.asarray(x, dtype=np.float64), reward, np.asarray(psi, dtype=np.float64))
    ]
    pairs = [(hx, hr) for hx, hr, _ in history]
    net = sgd_update(state.net, pairs, train_config, state.theta0)

    return BanditState(
        net=net,
        theta0=state.theta0,
        z=z,
        z_inverse=z_inv,
        z_diag=z_diag,
        log_det_ratio=log_det,
        round=t,
        history=history,
    )


def observe_and_update(
    state: BanditState,
    chosen: tuple[PartitionNode, np.ndarray],
    reward: np.ndarray,
    psi: np.ndarray,
    tree: PartitionTree,
    bandit_config: BanditConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
) -> BanditState:
    """Post-play bookkeeping for one round.

    Increments the chosen node's pull count, expands it if due, then runs
    the shared design/net update.
    """
    node, x = chosen
    t = state.round + 1
    node.pull_count += 1
    tree.maybe_expand(node, t, rng)
    return update_design_and_net(state, x, reward, psi, bandit_config, train_config)


@dataclass
class RoundRecord:
    """Everything logged for one round; regret is None without an oracle."""

    t: int
    chosen_depth: int
    chosen_index: int
    weight: np.ndarray
    scalar_reward: float
    per_task_reward: np.ndarray
    regret: Optional[float]
    n_candidates: int
    tree_max_depth: int
    gamma: float
    wall_clock: float = 0.0


def run_round(
    state: BanditState,
    tree: PartitionTree,
    psi: np.ndarray,
    environment,
    tree_config: TreeConfig,
    bandit_config: BanditConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
    env_rng: Optional[np.random.Generator] = None,
) -> tuple[BanditState, RoundRecord]:
    """One full iteration: candidates -> score -> play -> observe -> update."""
    start = time.perf_counter()
    if env_rng is None:
        env_rng = rng
    psi = np.asarray(psi, dtype=np.float64)
    candidates = tree.active_leaves()
    gamma_val = gamma(state, bandit_config)
    node, x = select_arm(state, candidates, psi, tree_config, bandit_config)
    reward = environment.observe(x, env_rng)

    regret = None
    if getattr(environment, "has_oracle", False):
        _, oracle_value = environment.oracle(psi)
        regret = oracle_value - float(psi @ environment.noiseless(x))

    new = observe_and_update(
        state, (node, x), reward, psi, tree, bandit_config, train_config, rng
    )
    record = RoundRecord(
        t=new.round,
        chosen_depth=node.depth,
        chosen_index=node.index,
        weight=x,
        scalar_reward=float(psi @ reward),
        per_task_reward=reward,
        regret=regret,
        n_candidates=len(candidates),
        tree_max_depth=tree.max_depth,
        gamma=gamma_val,
        wall_clock=time.perf_counter() - start,
    )
    return new, record
