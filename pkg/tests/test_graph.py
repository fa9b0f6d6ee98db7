"""Grouped KNN construction: oracle equivalence, tie rules, range and cost laws."""

import numpy as np
import pytest

from gkgnet.graph import (
    GroupedKnnGraph,
    NodeSet,
    group_knn,
    knn_indices,
    neighbor_union_size,
)
from gkgnet.numerics import constant


def nodes(arr, **kw):
    return NodeSet(constant(np.asarray(arr, dtype=np.float64)), **kw)


class TestKnnOracle:
    def test_identical_rows_tie_by_index(self):
        ns = nodes([[1.0, 2.0]] * 3)
        idx = knn_indices(ns, ns, 3)
        assert np.array_equal(idx, [[0, 1, 2]] * 3)

    def test_hand_cosines(self):
        dest = nodes([[1.0, 0.0]])
        src = nodes([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert np.array_equal(knn_indices(dest, src, 2), [[0, 1]])

    def test_cosine_ignores_magnitude(self):
        dest = nodes([[1.0, 1.0]])
        src = nodes([[2.0, 2.0], [1.0, 0.0]])
        assert np.array_equal(knn_indices(dest, src, 1), [[0]])

    def test_k_out_of_range(self):
        ns = nodes([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            knn_indices(ns, ns, 3)


class TestGroupKnn:
    def test_degenerate_grouping_equals_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(2, 30))
            c = int(rng.integers(1, 8)) * 2
            feats = rng.normal(size=(n, c))
            ns = nodes(feats)
            k = int(rng.integers(1, n + 1))
            assert np.array_equal(group_knn(ns, ns, 1, k).idx[0], knn_indices(ns, ns, k))

    def test_figure_style_disjoint_groups(self):
        # group-1 slices favor sources 0,1 and group-2 slices favor 2,3
        dest = nodes([[1.0, 0.0, 0.0, 1.0]])
        src = nodes(
            [
                [1.0, 0.0, -1.0, 0.0],
                [0.9, 0.1, 0.0, -1.0],
                [-1.0, 0.0, 0.0, 1.0],
                [0.0, -1.0, 0.1, 0.9],
            ]
        )
        g = group_knn(dest, src, 2, 2)
        assert set(g.idx[0][0]) == {0, 1}
        assert set(g.idx[1][0]) == {2, 3}
        assert neighbor_union_size(g, 0) == 4

    def test_figure_style_overlapping_groups(self):
        # both groups of the destination select source 1; union is 3 not 4
        dest = nodes([[1.0, 0.0, 1.0, 0.0]])
        src = nodes(
            [
                [1.0, 0.0, -1.0, 0.0],
                [0.9, 0.1, 0.0, -1.0],
                [-1.0, 0.0, 0.0, 1.0],
                [0.0, -1.0, 0.1, 0.9],
            ]
        )
        g = group_knn(dest, src, 2, 2)
        assert set(g.idx[0][0]) == {0, 1}
        assert set(g.idx[1][0]) == {1, 3}
        assert neighbor_union_size(g, 0) == 3

    def test_k_clamped_to_source_count(self):
        ns = nodes(np.random.default_rng(1).normal(size=(3, 4)))
        g = group_knn(ns, ns, 2, 9)
        assert g.k == 3 and g.idx.shape == (2, 3, 3)

    def test_width_not_divisible(self):
        ns = nodes(np.ones((3, 5)))
        with pytest.raises(ValueError, match="divisible"):
            group_knn(ns, ns, 2, 1)

    def test_distinct_indices_per_destination(self):
        rng = np.random.default_rng(2)
        ns = nodes(rng.normal(size=(20, 8)))
        g = group_knn(ns, ns, 4, 5)
        for gr in range(4):
            for i in range(20):
                assert len(set(g.idx[gr, i])) == 5

    def test_self_always_selected_for_patch_level(self):
        rng = np.random.default_rng(3)
        ns = nodes(rng.normal(size=(15, 6)))
        g = group_knn(ns, ns, 2, 4)
        for gr in range(2):
            for i in range(15):
                assert i in g.idx[gr, i]
                assert g.idx[gr, i, 0] == i  # self similarity ranks first


class TestUnionSize:
    def test_single_group_always_k(self):
        rng = np.random.default_rng(4)
        ns = nodes(rng.normal(size=(12, 6)))
        g = group_knn(ns, ns, 1, 5)
        assert all(neighbor_union_size(g, i) == 5 for i in range(12))

    def test_duplicated_slices_fully_overlap(self):
        rng = np.random.default_rng(5)
        half = rng.normal(size=(10, 3))
        ns = nodes(np.concatenate([half, half], axis=1))
        g = group_knn(ns, ns, 2, 4)
        assert all(neighbor_union_size(g, i) == 4 for i in range(10))

    def test_random_range_law(self):
        rng = np.random.default_rng(6)
        ns = nodes(rng.normal(size=(49, 8)))
        g = group_knn(ns, ns, 2, 9)
        sizes = [neighbor_union_size(g, i) for i in range(49)]
        assert all(9 <= s <= 18 for s in sizes)

    def test_out_of_range_destination(self):
        ns = nodes(np.ones((3, 2)))
        g = group_knn(ns, ns, 1, 1)
        with pytest.raises(IndexError):
            neighbor_union_size(g, 3)


class TestCostCounter:
    def test_independent_of_group_count(self):
        rng = np.random.default_rng(7)
        dest = nodes(rng.normal(size=(16, 24)))
        src = nodes(rng.normal(size=(20, 24)))
        for g_count in (1, 2, 4, 8):
            if 24 % g_count:
                continue
            g = group_knn(dest, src, g_count, 3)
            assert g.sim_multiply_count == 20 * 16 * 24


class TestInvariances:
    def test_positive_scaling_leaves_indices_unchanged(self):
        rng = np.random.default_rng(8)
        feats = rng.normal(size=(18, 8))
        base = group_knn(nodes(feats), nodes(feats), 2, 4).idx
        for scale in (2.0, 0.25, 3.7):
            scaled = feats.copy()
            scaled[5] *= scale
            got = group_knn(nodes(scaled), nodes(scaled), 2, 4).idx
            assert np.array_equal(base, got)

    def test_duplicate_rows_follow_index_rule_after_permutation(self):
        a = [1.0, 0.2]
        b = [-0.5, 1.0]
        dest = nodes([a])
        src1 = nodes([a, a, b])
        src2 = nodes([b, a, a])
        assert np.array_equal(group_knn(dest, src1, 1, 2).idx[0], [[0, 1]])
        assert np.array_equal(group_knn(dest, src2, 1, 2).idx[0], [[1, 2]])

    def test_batched_graphs_match_per_sample(self):
        rng = np.random.default_rng(9)
        f1 = rng.normal(size=(10, 6))
        f2 = rng.normal(size=(10, 6))
        single1 = group_knn(nodes(f1), nodes(f1), 2, 3)
        single2 = group_knn(nodes(f2), nodes(f2), 2, 3)
        both = nodes(np.concatenate([f1, f2]), batch=2)
        g = group_knn(both, both, 2, 3)
        assert np.array_equal(g.idx[:, :10, :], single1.idx)
        assert np.array_equal(g.idx[:, 10:, :], single2.idx + 10)
        assert g.sim_multiply_count == single1.sim_multiply_count + single2.sim_multiply_count


class TestNodeSet:
    def test_grid_must_cover_nodes(self):
        with pytest.raises(ValueError):
            NodeSet(constant(np.ones((5, 2))), grid=(2, 2))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            NodeSet(constant(np.ones((4, 2))), kind="edge")

    def test_empty_source_rejected(self):
        dest = nodes(np.ones((2, 2)))
        src = NodeSet(constant(np.ones((0, 2))))
        with pytest.raises(ValueError, match="empty"):
            group_knn(dest, src, 1, 1)
