"""Partition tree: feasibility, water-filling, thresholds, expansion."""
import itertools
import math

import numpy as np
import pytest

from tanbr.partition import (
    Box,
    PartitionTree,
    TreeConfig,
    candidate_count_bound,
    depth_bound,
    expansion_threshold,
    is_feasible,
    new_tree,
    representative_point,
    top_b_project,
    weight_is_valid,
)


def force_expand(tree, node, t, rng):
    """Drive pull_count to the threshold and expand."""
    node.pull_count = int(math.ceil(expansion_threshold(t, node.depth, tree.config)))
    report = tree.maybe_expand(node, t, rng)
    assert report.expanded
    return report


class TestTreeConfig:
    def test_valid(self):
        cfg = TreeConfig(num_experts=8, max_experts_b=8)
        assert cfg.max_experts_b == 8

    def test_b_defaults_to_k(self):
        assert TreeConfig(num_experts=5).max_experts_b == 5

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError):
            TreeConfig(num_experts=1)

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="smoothness_rho"):
            TreeConfig(num_experts=2, smoothness_rho=1.2)
        with pytest.raises(ValueError, match="smoothness_rho"):
            TreeConfig(num_experts=2, smoothness_rho=0.0)

    def test_b_above_k_rejected(self):
        with pytest.raises(ValueError, match="max_experts_b"):
            TreeConfig(num_experts=3, max_experts_b=4)


class TestNewTree:
    def test_single_active_root(self):
        tree = new_tree(TreeConfig(num_experts=2))
        assert len(tree.nodes) == 1
        root = tree.root
        assert (root.depth, root.index) == (0, 1)
        assert root.active and root.is_leaf and root.pull_count == 0
        assert root.region.lower.tolist() == [0.0, 0.0]
        assert root.region.upper.tolist() == [1.0, 1.0]

    def test_k8_root(self):
        tree = new_tree(TreeConfig(num_experts=8, max_experts_b=8))
        assert tree.root.depth == 0 and tree.root.active


class TestFeasibility:
    def test_unit_box_feasible(self):
        assert is_feasible(Box([0, 0], [1, 1]))

    def test_paper_inactive_region(self):
        # sum of lower bounds 1.25 > 1: no point can sum to 1
        assert not is_feasible(Box([0.5, 0.75], [1, 1]))

    def test_upper_sum_below_one(self):
        assert not is_feasible(Box([0, 0, 0], [0.3, 0.3, 0.3]))

    @pytest.mark.parametrize("k", [2, 3])
    def test_matches_grid_oracle(self, k):
        # brute-force: a box meets the simplex iff some 1e-3 grid point of the
        # box sums to 1 within 2e-3
        rng = np.random.default_rng(42)
        for _ in range(60):
            corners = np.sort(rng.integers(0, 1001, size=(2, k)), axis=0) / 1000.0
            box = Box(corners[0], corners[1])
            axes = [
                np.arange(box.lower[d], box.upper[d] + 5e-4, 1e-3)
                for d in range(k)
            ]
            sums = axes[0][:, None] + axes[1][None, :] if k == 2 else (
                axes[0][:, None, None] + axes[1][None, :, None] + axes[2][None, None, :]
            )
            grid_says = bool(np.any(np.abs(sums - 1.0) <= 2e-3))
            assert is_feasible(box) == grid_says, box


class TestRepresentativePoint:
    def test_unit_square_waterfill(self):
        assert representative_point(Box([0, 0], [1, 1])).tolist() == [1.0, 0.0]

    def test_deficit_absorbed_by_first_dim(self):
        assert representative_point(Box([0.5, 0], [1, 0.5])).tolist() == [1.0, 0.0]

    def test_zero_deficit_returns_lower(self):
        box = Box([0.25, 0.25, 0.5], [1, 1, 1])
        assert representative_point(box).tolist() == [0.25, 0.25, 0.5]

    def test_infeasible_rejected(self):
        with pytest.raises(ValueError):
            representative_point(Box([0.5, 0.75], [1, 1]))

    def test_stays_in_box_and_on_simplex(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            k = int(rng.integers(2, 7))
            corners = np.sort(rng.uniform(0, 1, size=(2, k)), axis=0)
            box = Box(corners[0], corners[1])
            if not is_feasible(box):
                continue
            x = representative_point(box)
            assert np.all(x >= box.lower - 1e-12)
            assert np.all(x <= box.upper + 1e-12)
            assert abs(x.sum() - 1.0) <= 1e-9


class TestTopBProject:
    def test_keep_two_of_four(self):
        out = top_b_project(np.array([0.4, 0.3, 0.2, 0.1]), 2)
        assert np.allclose(out, [0.4 / 0.7, 0.3 / 0.7, 0.0, 0.0])

    def test_b_equals_k_identity(self):
        x = np.array([0.25, 0.5, 0.25])
        assert top_b_project(x, 3).tolist() == x.tolist()

    def test_tie_breaks_toward_lower_index(self):
        out = top_b_project(np.array([0.5, 0.5, 0.0, 0.0]), 1)
        assert out.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_uniform_keeps_lowest_indices(self):
        out = top_b_project(np.full(4, 0.25), 2)
        assert out.tolist() == [0.5, 0.5, 0.0, 0.0]

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            k = int(rng.integers(2, 9))
            b = int(rng.integers(1, k + 1))
            e = rng.exponential(1.0, size=k)
            x = e / e.sum()
            once = top_b_project(x, b)
            twice = top_b_project(once, b)
            assert np.array_equal(once, twice)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            top_b_project(np.zeros(3), 2)


class TestExpansionThreshold:
    CFG = TreeConfig(num_experts=2, smoothness_nu1=1.0, smoothness_rho=0.5,
                     threshold_const=1.0, confidence_delta=1.0)

    def test_depth_zero_at_t_e(self):
        t = math.e
        raw = math.log(t) * 1.0
        assert expansion_threshold(3, 0, self.CFG) == max(1.0, math.log(3))
        # direct substitution at t = e gives exactly 1
        assert math.isclose((1.0 * math.log(t / 1.0)) / 1.0 * 0.5 ** 0, 1.0)
        assert raw == pytest.approx(1.0)

    def test_depth_one_quadruples(self):
        # rho^-2 = 4 at rho = 0.5; evaluate the unfloored formula
        cfg = self.CFG
        t = 100
        tau0 = expansion_threshold(t, 0, cfg)
        tau1 = expansion_threshold(t, 1, cfg)
        assert tau1 == pytest.approx(4.0 * tau0)

    def test_depth_two_at_t_100(self):
        assert expansion_threshold(100, 2, self.CFG) == pytest.approx(
            16.0 * math.log(100.0)
        )
        assert expansion_threshold(100, 2, self.CFG) == pytest.approx(73.6827, abs=1e-3)

    def test_floor_at_one(self):
        # log(t/delta) <= 0 at t=1, delta=1
        assert expansion_threshold(1, 0, self.CFG) == 1.0
        assert expansion_threshold(1, 3, self.CFG) == 1.0


class TestMaybeExpand:
    def test_below_threshold_no_expansion(self):
        tree = new_tree(TreeConfig(num_experts=2))
        tau = expansion_threshold(100, 0, tree.config)
        tree.root.pull_count = int(tau) - 1
        report = tree.maybe_expand(tree.root, 100, np.random.default_rng(0))
        assert not report.expanded and tree.root.is_leaf

    def test_root_split_both_halves_active(self):
        tree = new_tree(TreeConfig(num_experts=2))
        report = force_expand(tree, tree.root, 100, np.random.default_rng(0))
        left, right = report.children
        dim = report.split_dim
        assert left.index == 1 and right.index == 2 and left.depth == 1
        assert left.region.upper[dim] == 0.5 and right.region.lower[dim] == 0.5
        assert left.active and right.active
        assert not tree.root.is_leaf

    def test_expanding_non_leaf_rejected(self):
        tree = new_tree(TreeConfig(num_experts=2))
        force_expand(tree, tree.root, 100, np.random.default_rng(0))
        with pytest.raises(ValueError):
            tree.maybe_expand(tree.root, 101, np.random.default_rng(0))

    def test_expanding_inactive_rejected(self):
        # drive K=2 until an inactive child appears, then poke it
        tree = new_tree(TreeConfig(num_experts=2))
        rng = np.random.default_rng(7)
        inactive = None
        for t in range(100, 400):
            leaves = [n for n, _ in tree.active_leaves()]
            force_expand(tree, leaves[0], t, rng)
            inactive = next((n for n in tree.nodes if not n.active), None)
            if inactive is not None:
                break
        assert inactive is not None
        with pytest.raises(ValueError):
            tree.maybe_expand(inactive, 500, rng)


class TestActiveLeaves:
    def test_fresh_tree_single_candidate(self):
        tree = new_tree(TreeConfig(num_experts=3))
        leaves = tree.active_leaves()
        assert len(leaves) == 1
        node, x = leaves[0]
        assert node is tree.root
        assert x.tolist() == [1.0, 0.0, 0.0]

    def test_two_candidates_after_root_split(self):
        tree = new_tree(TreeConfig(num_experts=2))
        force_expand(tree, tree.root, 100, np.random.default_rng(0))
        leaves = tree.active_leaves()
        assert len(leaves) == 2
        # ordering by (depth, index)
        assert [n.index for n, _ in leaves] == [1, 2]

    def test_candidates_satisfy_weight_invariants(self):
        cfg = TreeConfig(num_experts=4, max_experts_b=2)
        tree = new_tree(cfg)
        rng = np.random.default_rng(5)
        for t in range(50, 250):
            leaves = [n for n, _ in tree.active_leaves()]
            force_expand(tree, leaves[int(rng.integers(len(leaves)))], t, rng)
        for _, x in tree.active_leaves():
            assert weight_is_valid(x, b=2)


class TestTreeStructureFuzz:
    def test_children_partition_parent_exactly(self):
        rng = np.random.default_rng(99)
        for trial in range(30):
            k = int(rng.integers(2, 9))
            tree = new_tree(TreeConfig(num_experts=k))
            for t in range(20, 120):
                leaves = [n for n, _ in tree.active_leaves()]
                node = leaves[int(rng.integers(len(leaves)))]
                report = force_expand(tree, node, t, rng)
                left, right = report.children
                dim = report.split_dim
                mid = 0.5 * (node.region.lower[dim] + node.region.upper[dim])
                # shared boundary at the exact midpoint, other dims untouched
                assert left.region.upper[dim] == mid == right.region.lower[dim]
                for d in range(k):
                    if d == dim:
                        assert left.region.lower[d] == node.region.lower[d]
                        assert right.region.upper[d] == node.region.upper[d]
                    else:
                        assert left.region.lower[d] == node.region.lower[d]
                        assert left.region.upper[d] == node.region.upper[d]
                        assert right.region.lower[d] == node.region.lower[d]
                        assert right.region.upper[d] == node.region.upper[d]
                assert (left.index, right.index) == (2 * node.index - 1, 2 * node.index)
                assert left.active == is_feasible(left.region)
                assert right.active == is_feasible(right.region)

    def test_determinism_same_seed_same_tree(self):
        def build(seed):
            tree = new_tree(TreeConfig(num_experts=3))
            rng = np.random.default_rng(seed)
            for t in range(10, 200):
                leaves = [n for n, _ in tree.active_leaves()]
                node = leaves[int(rng.integers(len(leaves)))]
                node.pull_count = 10**6
                tree.maybe_expand(node, t, rng)
            return tree.snapshot_json()

        assert build(123) == build(123)
        assert build(123) != build(124)


class TestBounds:
    def test_lemma_formulas(self):
        cfg = TreeConfig(num_experts=4, smoothness_rho=0.5)
        T = 10_000
        n = candidate_count_bound(T, cfg)
        assert n == pytest.approx(2.0**2 * T / math.log(T))
        h = depth_bound(T, cfg)
        assert h == pytest.approx(2.0 * math.log(T / math.log(T)))


class TestSnapshot:
    def test_snapshot_roundtrip_fields(self):
        tree = new_tree(TreeConfig(num_experts=2))
        force_expand(tree, tree.root, 100, np.random.default_rng(0))
        snap = tree.snapshot()
        assert snap["num_experts"] == 2
        assert len(snap["nodes"]) == 3
        root_entry = snap["nodes"][0]
        assert set(root_entry) == {
            "depth", "index", "lower", "upper", "pull_count", "active", "split_dim",
        }
        leaf_entry = snap["nodes"][1]
        assert "split_dim" not in leaf_entry
