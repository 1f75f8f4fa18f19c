"""Adaptive binary cover tree over the expert-merging weight space.

The decision space is the unit box [0, 1]^K; feasible actions live on the
probability simplex inside it. The tree starts as a single root box and is
refined by midpoint bisection along randomly chosen dimensions once a leaf
has been pulled often enough. Each active leaf (one whose box meets the
simplex) contributes exactly one candidate weight, obtained by a
deterministic water-filling rule followed by top-B sparsification.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class TreeConfig:
    """Parameters controlling partitioning and candidate generation.

    num_experts: K, dimension of the weight space (K >= 2).
    smoothness_nu1 / smoothness_rho: diameter constants; rho in (0, 1).
    threshold_const: multiplicative constant C in the expansion threshold.
    confidence_delta: confidence parameter delta > 0.
    max_experts_b: B, the cap on simultaneously active experts (1 <= B <= K).
    """

    num_experts: int
    smoothness_nu1: float = 1.0
    smoothness_rho: float = 0.5
    threshold_const: float = 1.0
    confidence_delta: float = 1.0
    max_experts_b: Optional[int] = None

    def __post_init__(self):
        if self.num_experts < 2:
            raise ValueError(f"num_experts must be >= 2, got {self.num_experts}")
        if not self.smoothness_nu1 > 0:
            raise ValueError("smoothness_nu1 must be > 0")
        if not 0.0 < self.smoothness_rho < 1.0:
            raise ValueError(
                f"smoothness_rho must be in (0, 1), got {self.smoothness_rho}"
            )
        if not self.threshold_const > 0:
            raise ValueError("threshold_const must be > 0")
        if not self.confidence_delta > 0:
            raise ValueError("confidence_delta must be > 0")
        if self.max_experts_b is None:
            object.__setattr__(self, "max_experts_b", self.num_experts)
        if not 1 <= self.max_experts_b <= self.num_experts:
            raise ValueError(
                f"max_experts_b must be in [1, K={self.num_experts}], "
                f"got {self.max_experts_b}"
            )


class Box:
    """Axis-aligned box region, a sub-box of [0, 1]^K."""

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper):
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-d vectors of equal length")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper componentwise")
        if np.any(lower < 0.0) or np.any(upper > 1.0):
            raise ValueError("box must be contained in [0,1]^K")
        self.lower = lower
        self.upper = upper

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def bisect(self, dim: int) -> tuple["Box", "Box"]:
        """Split at the midpoint of `dim`; halves share the midpoint coordinate."""
        mid = 0.5 * (self.lower[dim] + self.upper[dim])
        lo_up = self.upper.copy()
        lo_up[dim] = mid
        hi_lo = self.lower.copy()
        hi_lo[dim] = mid
        return Box(self.lower.copy(), lo_up), Box(hi_lo, self.upper.copy())

    def __repr__(self):
        ivals = ", ".join(
            f"[{lo:g},{hi:g}]" for lo, hi in zip(self.lower, self.upper)
        )
        return f"Box({ivals})"


def is_feasible(box: Box) -> bool:
    """True iff the box contains a point of the simplex {sum x = 1, x >= 0}.

    For an axis-aligned box inside [0,1]^K this reduces to the closed form
    sum(lower) <= 1 <= sum(upper): the hyperplane sum x = 1 crosses the box
    exactly when 1 lies between the extreme coordinate sums.
    """
    return float(np.sum(box.lower)) <= 1.0 <= float(np.sum(box.upper))


def representative_point(box: Box) -> np.ndarray:
    """Deterministic feasible point of a simplex-intersecting box.

    Water-filling: start at the lower corner, then raise coordinates in
    index order toward their upper bounds until the total reaches 1.
    """
    if not is_feasible(box):
        raise ValueError(f"no feasible merging weight in {box!r}")
    x = box.lower.copy()
    deficit = 1.0 - float(np.sum(x))
    for k in range(box.dim):
        if deficit <= 0.0:
            break
        room = box.upper[k] - x[k]
        step = room if room < deficit else deficit
        x[k] += step
        deficit -= step
    return x


def top_b_project(x: np.ndarray, b: int) -> np.ndarray:
    """Keep the B largest entries, zero the rest, renormalize to sum 1.

    Ties are broken by retaining lower indices first. Idempotent.
    """
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[0]
    if not 1 <= b <= k:
        raise ValueError(f"b must be in [1, {k}], got {b}")
    if not np.any(x > 0.0):
        raise ValueError("top_b_project requires at least one positive entry")
    if b == k:
        return x.copy()
    # Stable sort of -x: equal values keep original order, so lower index wins.
    keep = np.argsort(-x, kind="stable")[:b]
    out = np.zeros_like(x)
    out[keep] = x[keep]
    total = out.sum()
    return out / total


def weight_is_valid(x: np.ndarray, b: Optional[int] = None, tol: float = 1e-9) -> bool:
    """Check the merging-weight invariants: nonneg, sums to 1, support <= B."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or not np.all(np.isfinite(x)):
        return False
    if abs(float(x.sum()) - 1.0) > tol:
        return False
    if b is not None and int(np.count_nonzero(x > 0.0)) > b:
        return False
    return True


def expansion_threshold(t: int, h: int, config: TreeConfig) -> float:
    """Pull-count bar a depth-h leaf must clear at round t before it splits.

    tau_h(t) = C^2 * log(t/delta) / nu1^2 * rho^(-2h), floored at 1 so a node
    is pulled at least once before splitting even when log(t/delta) <= 0.
    """
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if h < 0:
        raise ValueError(f"depth must be >= 0, got {h}")
    c, nu1, rho = config.threshold_const, config.smoothness_nu1, config.smoothness_rho
    raw = (c * c) * math.log(t / config.confidence_delta) / (nu1 * nu1) * rho ** (-2 * h)
    return max(1.0, raw)


@dataclass
class PartitionNode:
    """One box-shaped cell of the cover tree."""

    depth: int
    index: int
    region: Box
    pull_count: int = 0
    active: bool = True
    split_dim: Optional[int] = None
    children: Optional[tuple["PartitionNode", "PartitionNode"]] = None
    _candidate: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def candidate(self, b: int) -> np.ndarray:
        """The leaf's fixed candidate weight (computed once, cached)."""
        if not self.active:
            raise ValueError(f"inactive node ({self.depth},{self.index}) has no candidate")
        if self._candidate is None:
            self._candidate = top_b_project(representative_point(self.region), b)
        return self._candidate


@dataclass
class ExpansionReport:
    """Outcome of a maybe_expand call."""

    expanded: bool
    threshold: float
    split_dim: Optional[int] = None
    children: Optional[tuple[PartitionNode, PartitionNode]] = None


class PartitionTree:
    """Binary cover tree over [0,1]^K with per-leaf candidate weights.

    Single-writer: only the owning bandit loop mutates the tree via
    maybe_expand; traversal between mutations is read-only.
    """

    def __init__(self, config: TreeConfig):
        self.config = config
        root_box = Box(
            np.zeros(config.num_experts), np.ones(config.num_experts)
        )
        self.root = PartitionNode(depth=0, index=1, region=root_box, active=True)
        self.nodes: list[PartitionNode] = [self.root]
        self._active_leaves: list[PartitionNode] = [self.root]
        self.max_depth = 0

    def active_leaves(self) -> list[tuple[PartitionNode, np.ndarray]]:
        """All active leaves with their candidate weights, (depth, index) order."""
        b = self.config.max_experts_b
        leaves = sorted(self._active_leaves, key=lambda n: (n.depth, n.index))
        return [(node, node.candidate(b)) for node in leaves]

    def active_leaf_count(self) -> int:
        return len(self._active_leaves)

    def maybe_expand(self, node: PartitionNode, t: int, rng: np.random.Generator) -> ExpansionReport:
        """Bisect `node` if its pull count has reached the depth threshold.

        The split dimension is drawn uniformly from rng. Children get fresh
        pull counts and an activity flag from the closed-form feasibility
        test; inactive children are kept for audit but never expanded.
        """
        if not node.is_leaf:
            raise ValueError(f"cannot expand non-leaf ({node.depth},{node.index})")
        if not node.active:
            raise ValueError(f"cannot expand inactive node ({node.depth},{node.index})")
        threshold = expansion_threshold(t, node.depth, self.config)
        if node.pull_count < threshold:
            return ExpansionReport(expanded=False, threshold=threshold)

        dim = int(rng.integers(self.config.num_experts))
        lo_box, hi_box = node.region.bisect(dim)
        h, i = node.depth + 1, node.index
        left = PartitionNode(depth=h, index=2 * i - 1, region=lo_box, active=is_feasible(lo_box))
        right = PartitionNode(depth=h, index=2 * i, region=hi_box, active=is_feasible(hi_box))
        node.children = (left, right)
        node.split_dim = dim
        self.nodes.extend((left, right))
        self._active_leaves.remove(node)
        for child in (left, right):
            if child.active:
                self._active_leaves.append(child)
        self.max_depth = max(self.max_depth, h)
        return ExpansionReport(expanded=True, threshold=threshold, split_dim=dim, children=(left, right))

    def snapshot(self) -> dict:
        """JSON-serializable dump of every node, for debugging and fixtures."""
        entries = []
        for n in sorted(self.nodes, key=lambda n: (n.depth, n.index)):
            entry = {
                "depth": n.depth,
                "index": n.index,
                "lower": n.region.lower.tolist(),
                "upper": n.region.upper.tolist(),
                "pull_count": n.pull_count,
                "active": n.active,
            }
            if n.split_dim is not None:
                entry["split_dim"] = n.split_dim
            entries.append(entry)
        return {"num_experts": self.config.num_experts, "nodes": entries}

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), indent=2)


def new_tree(config: TreeConfig) -> PartitionTree:
    """Fresh tree: a single active root covering [0,1]^K with zero pulls."""
    return PartitionTree(config)


def candidate_count_bound(horizon: int, config: TreeConfig) -> float:
    """Upper bound N on the number of simultaneously active candidates.

    N = 2^(1/(1-rho)) * T * nu1^2 / (C^2 * log(T/delta)). Only meaningful
    when log(T/delta) > 0.
    """
    c, nu1, rho = config.threshold_const, config.smoothness_nu1, config.smoothness_rho
    log_term = math.log(horizon / config.confidence_delta)
    if log_term <= 0:
        return math.inf
    return 2.0 ** (1.0 / (1.0 - rho)) * horizon * nu1 * nu1 / (c * c * log_term)


def depth_bound(horizon: int, config: TreeConfig) -> float:
    """Upper bound on the tree depth after `horizon` rounds.

    H_max(T) = 1/(1-rho) * log(T * nu1^2 / (C^2 * log(T/delta))).
    """
    c, nu1, rho = config.threshold_const, config.smoothness_nu1, config.smoothness_rho
    log_term = math.log(horizon / config.confidence_delta)
    if log_term <= 0:
        return math.inf
    return math.log(horizon * nu1 * nu1 / (c * c * log_term)) / (1.0 - rho)
