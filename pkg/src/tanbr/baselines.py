"""Comparator policies sharing the router's environment interface.

Every policy exposes select(psi, t, rng) -> merging weight and
update(weight, reward, rng); stateless baselines ignore the update. The
random-candidate neural comparator reuses the exact scoring and update
code of the tree router, differing only in where candidates come from.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import bandit as _bandit
from .bandit import BanditConfig, BanditState, new_state, ucb_scores
from .partition import (
    PartitionTree,
    TreeConfig,
    new_tree,
    top_b_project,
)
from .reward_net import NetConfig, TrainConfig, init_params


def uniform_simplex_sample(rng: np.random.Generator, k: int) -> np.ndarray:
    """Uniform draw from the simplex via normalized exponentials."""
    e = rng.exponential(1.0, size=k)
    return e / e.sum()


class TanbrPolicy:
    """The tree router behind the uniform policy interface."""

    def __init__(
        self,
        tree_config: TreeConfig,
        net_config: NetConfig,
        bandit_config: BanditConfig,
        train_config: TrainConfig,
        init_rng: np.random.Generator,
    ):
        self.tree_config = tree_config
        self.bandit_config = bandit_config
        self.train_config = train_config
        self.tree: PartitionTree = new_tree(tree_config)
        self.state: BanditState = new_state(init_params(net_config, init_rng), bandit_config)
        self._last: Optional[tuple] = None

    def select(self, psi: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        candidates = self.tree.active_leaves()
        gamma_val = _bandit.gamma(self.state, self.bandit_config)
        node, x = _bandit.select_arm(
            self.state, candidates, psi, self.tree_config, self.bandit_config
        )
        self._last = (node, x, np.asarray(psi, dtype=np.float64), len(candidates), gamma_val)
        return x

    def update(self, weight: np.ndarray, reward: np.ndarray, rng: np.random.Generator) -> None:
        if self._last is None:
            raise RuntimeError("update called before select")
        node, x, psi, _, _ = self._last
        self.state = _bandit.observe_and_update(
            self.state,
            (node, x),
            reward,
            psi,
            self.tree,
            self.bandit_config,
            self.train_config,
            rng,
        )

    def info(self) -> dict:
        node, _, _, n_candidates, gamma_val = self._last
        return {
            "chosen_depth": node.depth,
            "chosen_index": node.index,
            "n_candidates": n_candidates,
            "tree_max_depth": self.tree.max_depth,
            "gamma": gamma_val,
        }


class NucbPolicy:
    """Neural UCB over freshly sampled random candidates (no tree).

    Each round draws n_candidates uniform simplex points, sparsifies them to
    the expert budget, and scores them with the router's UCB minus the tree
    granularity bonus. Design-matrix and network updates are identical to
    the router's.
    """

    def __init__(
        self,
        num_experts: int,
        net_config: NetConfig,
        bandit_config: BanditConfig,
        train_config: TrainConfig,
        init_rng: np.random.Generator,
        n_candidates: int = 20,
        max_experts_b: Optional[int] = None,
    ):
        if n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        self.K = num_experts
        self.B = max_experts_b if max_experts_b is not None else num_experts
        self.n_candidates = n_candidates
        self.bandit_config = bandit_config
        self.train_config = train_config
        self.state: BanditState = new_state(init_params(net_config, init_rng), bandit_config)
        self._last: Optional[tuple] = None

    def select(self, psi: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        xs = np.stack(
            [
                top_b_project(uniform_simplex_sample(rng, self.K), self.B)
                for _ in range(self.n_candidates)
            ]
        )
        gamma_val = _bandit.gamma(self.state, self.bandit_config)
        scores = ucb_scores(self.state, xs, None, psi, None, self.bandit_config)
        x = xs[int(np.argmax(scores))]
        self._last = (x, np.asarray(psi, dtype=np.float64), gamma_val)
        return x

    def update(self, weight: np.ndarray, reward: np.ndarray, rng: np.random.Generator) -> None:
        if self._last is None:
            raise RuntimeError("update called before select")
        x, psi, _ = self._last
        self.state = _bandit.update_design_and_net(
            self.state, x, reward, psi, self.bandit_config, self.train_config
        )

    def info(self) -> dict:
        return {
            "chosen_depth": None,
            "chosen_index": None,
            "n_candidates": self.n_candidates,
            "tree_max_depth": None,
            "gamma": self._last[2],
        }


class AveragePolicy:
    """Plays the uniform merging weight every round; stateless."""

    def __init__(self, num_experts: int, max_experts_b: Optional[int] = None):
        if num_experts < 2:
            raise ValueError("num_experts must be >= 2")
        x = np.full(num_experts, 1.0 / num_experts)
        b = max_experts_b if max_experts_b is not None else num_experts
        self._weight = top_b_project(x, b)

    def select(self, psi, t, rng) -> np.ndarray:
        return self._weight.copy()

    def update(self, weight, reward, rng) -> None:
        pass

    def info(self) -> dict:
        return {
            "chosen_depth": None,
            "chosen_index": None,
            "n_candidates": 1,
            "tree_max_depth": None,
            "gamma": None,
        }


class FixedExpertPolicy:
    """Always routes everything to one expert (1-based index)."""

    def __init__(self, expert: int, num_experts: int):
        if not 1 <= expert <= num_experts:
            raise ValueError(f"expert must be in [1, {num_experts}], got {expert}")
        self._weight = np.zeros(num_experts)
        self._weight[expert - 1] = 1.0

    def select(self, psi, t, rng) -> np.ndarray:
        return self._weight.copy()

    def update(self, weight, reward, rng) -> None:
        pass

    def info(self) -> dict:
        return {
            "chosen_depth": None,
            "chosen_index": None,
            "n_candidates": 1,
            "tree_max_depth": None,
            "gamma": None,
        }


class RandomPolicy:
    """Uniform simplex draw each round, sparsified to the expert budget."""

    def __init__(self, num_experts: int, max_experts_b: Optional[int] = None):
        self.K = num_experts
        self.B = max_experts_b if max_experts_b is not None else num_experts

    def select(self, psi, t, rng) -> np.ndarray:
        return top_b_project(uniform_simplex_sample(rng, self.K), self.B)

    def update(self, weight, reward, rng) -> None:
        pass

    def info(self) -> dict:
        return {
            "chosen_depth": None,
            "chosen_index": None,
            "n_candidates": 1,
            "tree_max_depth": None,
            "gamma": None,
        }


def make_policy(
    policy_id: str,
    tree_config: TreeConfig,
    net_config: NetConfig,
    bandit_config: BanditConfig,
    train_config: TrainConfig,
    init_rng: np.random.Generator,
    n_candidates: int = 20,
):
    """Instantiate a policy by its config string id.

    Known ids: "tanbr", "nucb", "average", "fixed:k" (1-based), "random".
    """
    k = tree_config.num_experts
    b = tree_config.max_experts_b
    if policy_id == "tanbr":
        return TanbrPolicy(tree_config, net_config, bandit_config, train_config, init_rng)
    if policy_id == "nucb":
        return NucbPolicy(
            k,
            net_config,
            bandit_config,
            train_config,
            init_rng,
            n_candidates=n_candidates,
            max_experts_b=b,
        )
    if policy_id == "average":
        return AveragePolicy(k, max_experts_b=b)
    if policy_id == "random":
        return RandomPolicy(k, max_experts_b=b)
    if policy_id.startswith("fixed:"):
        return FixedExpertPolicy(int(policy_id.split(":", 1)[1]), k)
    raise ValueError(f"unknown policy id {policy_id!r}")
