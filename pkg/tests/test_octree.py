"""Octree construction, queries, restructuring primitives and metrics."""

import io

import numpy as np
import pytest

from octfuse.octree import (OctreeField, build_octree, densify,
                            full_tree_capacity, join_node, lookup_at_level,
                            mean_pyramid, propagate_means, quantization_error,
                            serialize, split_node, spread)


def blocky_field(rng, n=16, levels=4):
    """Random field with plateaus so builds produce mixed leaf depths."""
    return rng.integers(0, levels, (n, n, n)).astype(np.float64) * 0.5


def smooth_field(rng, n=16):
    g = rng.standard_normal((n, n, n))
    for axis in range(3):
        g = (g + np.roll(g, 1, axis) + np.roll(g, -1, axis)) / 3.0
    return g


def subvolume(grid, level, cell, d_max):
    s = d_max - level
    x, y, z = (int(c) << s for c in cell)
    w = 1 << s
    return grid[x:x + w, y:y + w, z:z + w]


class TestCapacity:
    def test_closed_form(self):
        assert full_tree_capacity(0) == 1
        assert full_tree_capacity(1) == 9
        assert full_tree_capacity(2) == 73
        assert full_tree_capacity(3) == 585

    def test_counts_all_levels(self):
        for d in range(6):
            assert full_tree_capacity(d) == sum(8 ** l for l in range(d + 1))


class TestSpread:
    def test_matches_subvolume_range(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((8, 8, 8))
        assert spread(g, 0, (0, 0, 0)) == pytest.approx(g.max() - g.min())
        sub = g[2:4, 4:6, 6:8]
        assert spread(g, 2, (1, 2, 3)) == pytest.approx(sub.max() - sub.min())

    def test_single_cell_is_flat(self):
        rng = np.random.default_rng(4)
        g = rng.standard_normal((8, 8, 8))
        assert spread(g, 3, (5, 1, 7)) == 0.0


class TestBuild:
    def test_zero_threshold_roundtrip_bitexact(self):
        rng = np.random.default_rng(11)
        g = blocky_field(rng)
        t = build_octree(g, tau=0.0)
        assert np.array_equal(densify(t), g)

    def test_negative_threshold_forces_full_depth(self):
        g = np.zeros((8, 8, 8))
        t = build_octree(g, tau=-1.0)
        assert t.node_count == full_tree_capacity(3)
        assert np.array_equal(densify(t), g)

    def test_zero_threshold_keeps_constant_blocks_coarse(self):
        g = np.zeros((8, 8, 8))
        g[:4, :4, :4] = 2.0
        t = build_octree(g, tau=0.0)
        # one root split: eight level-1 leaves cover the constant octants
        assert t.node_count == 9

    def test_quantization_error_vanishes_for_any_threshold(self):
        # leaf values are subvolume means by construction
        rng = np.random.default_rng(12)
        g = smooth_field(rng)
        for tau in (0.0, 0.05, 0.3, 1.0, 100.0):
            t = build_octree(g, tau=tau)
            total, weighted = quantization_error(t, g)
            assert total == 0.0 and weighted == 0.0

    def test_leaves_obey_spread_rule(self):
        rng = np.random.default_rng(13)
        g = smooth_field(rng)
        tau = 0.25
        t = build_octree(g, tau=tau)
        for node, lvl, x, y, z in t.leaves():
            if lvl < t.d_max:
                assert spread(g, lvl, (x, y, z)) <= tau
        # inner nodes exceeded the threshold, otherwise they are leaves
        for node, lvl, x, y, z in _inner_nodes(t):
            assert spread(g, lvl, (x, y, z)) > tau

    def test_inner_values_are_child_means(self):
        rng = np.random.default_rng(14)
        t = build_octree(smooth_field(rng), tau=0.2)
        for node, lvl, x, y, z in _inner_nodes(t):
            b = int(t.child[node])
            kids = t.value[b:b + 8]
            assert t.value[node] == pytest.approx(kids.mean(), rel=1e-12)

    def test_root_value_is_grid_mean(self):
        rng = np.random.default_rng(15)
        g = smooth_field(rng)
        t = build_octree(g, tau=0.3)
        assert t.value[0] == pytest.approx(g.mean(), rel=1e-12)

    def test_rejects_non_cubic_or_odd_sizes(self):
        with pytest.raises(ValueError):
            build_octree(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            build_octree(np.zeros((6, 6, 6)))
        with pytest.raises(ValueError):
            build_octree(np.zeros((4, 4, 8)))


class TestWeightedBuild:
    @pytest.fixture()
    def weighted(self):
        rng = np.random.default_rng(21)
        n = 16
        f = smooth_field(rng, n)
        w = np.zeros((n, n, n), dtype=np.uint8)
        w[:, : n // 2] = 1
        w[:4, :4, :4] = 0
        f[w == 0] = -1.0
        return f, w, build_octree(f, w, tau=0.3)

    def test_leaf_weights_are_pure(self, weighted):
        # mixed observation always splits, so leaves are fully observed or
        # fully unobserved
        f, w, t = weighted
        for node, lvl, x, y, z in t.leaves():
            sub = subvolume(w, lvl, (x, y, z), t.d_max)
            assert sub.min() == sub.max()
            assert t.weight[node] == sub.max()

    def test_values_are_weighted_means(self, weighted):
        # node values average only observed cells; plain means would leak
        # the -1 padding of unobserved cells into partially observed blocks
        f, w, t = weighted
        fw = f * w
        checked_mixed = 0
        for node, lvl, x, y, z in _all_nodes(t):
            subw = subvolume(w, lvl, (x, y, z), t.d_max)
            subfw = subvolume(fw, lvl, (x, y, z), t.d_max)
            subf = subvolume(f, lvl, (x, y, z), t.d_max)
            if subw.any():
                expect = subfw.sum() / subw.sum()
                checked_mixed += subw.min() != subw.max()
            else:
                expect = subf.mean()
            assert t.value[node] == pytest.approx(expect, rel=1e-12, abs=1e-12)
        assert checked_mixed > 0

    def test_node_weights_are_observed_fractions(self, weighted):
        f, w, t = weighted
        for node, lvl, x, y, z in _all_nodes(t):
            sub = subvolume(w, lvl, (x, y, z), t.d_max)
            assert t.weight[node] == pytest.approx(sub.mean(), rel=1e-6)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            build_octree(np.zeros((8, 8, 8)), np.zeros((4, 4, 4)))


class TestQueries:
    def test_lookup_at_finest_level_matches_densify(self):
        rng = np.random.default_rng(31)
        g = blocky_field(rng)
        t = build_octree(g, tau=0.0)
        d = densify(t)
        n = t.resolution
        for idx in ((0, 0, 0), (15, 15, 15), (7, 3, 12), (8, 8, 8)):
            assert lookup_at_level(t, idx, t.d_max) == d[idx]

    def test_subsumed_cells_answer_with_leaf_value(self):
        g = np.zeros((8, 8, 8))
        g[:4, :4, :4] = 1.0
        t = build_octree(g, tau=0.0)
        # inside a constant octant any finer query returns the leaf
        node, lvl = t.locate(3, (1, 2, 3))
        assert lvl == 1
        assert lookup_at_level(t, (1, 2, 3), 3) == 1.0
        assert lookup_at_level(t, (7, 6, 5), 3) == 0.0

    def test_coarse_lookup_returns_propagated_mean(self):
        rng = np.random.default_rng(32)
        g = smooth_field(rng, 8)
        t = build_octree(g, tau=0.0)
        assert lookup_at_level(t, (0, 0, 0), 0) == pytest.approx(g.mean(),
                                                                 rel=1e-12)
        oct_mean = g[:4, :4, 4:].mean()
        assert lookup_at_level(t, (0, 0, 1), 1) == pytest.approx(oct_mean,
                                                                 rel=1e-12)

    def test_locate_rejects_bad_queries(self):
        t = build_octree(np.zeros((8, 8, 8)))
        with pytest.raises(ValueError):
            t.locate(4, (0, 0, 0))
        with pytest.raises(ValueError):
            t.locate(1, (2, 0, 0))
        with pytest.raises(ValueError):
            t.locate(0, (0, -1, 0))

    def test_leaves_tile_the_volume(self):
        rng = np.random.default_rng(33)
        t = build_octree(smooth_field(rng), tau=0.4)
        covered = np.zeros((t.resolution,) * 3, dtype=np.int32)
        for node, lvl, x, y, z in t.leaves():
            subvolume(covered, lvl, (x, y, z), t.d_max)[:] += 1
        assert np.all(covered == 1)


class TestSplitJoin:
    def make_tree(self):
        g = np.zeros((8, 8, 8))
        g[:4, :4, :4] = 1.0
        return build_octree(g, tau=0.0)

    def test_split_creates_children_with_parent_value(self):
        t = self.make_tree()
        before = t.node_count
        b = split_node(t, 1, (0, 0, 0))
        assert t.node_count == before + 8
        assert np.all(t.value[b:b + 8] == 1.0)
        node, lvl = t.locate(2, (1, 1, 1))
        assert lvl == 2

    def test_split_records_presplit_snapshot(self):
        t = self.make_tree()
        node, _ = t.locate(1, (0, 0, 0))
        split_node(t, 1, (0, 0, 0))
        assert t.snap[node] == 1.0

    def test_join_restores_leaf_with_child_mean(self):
        t = self.make_tree()
        b = split_node(t, 1, (0, 0, 0))
        t.value[b:b + 8] = np.arange(8, dtype=np.float64)
        join_node(t, 1, (0, 0, 0))
        node, lvl = t.locate(1, (0, 0, 0))
        assert lvl == 1 and t.child[node] == -1
        assert t.value[node] == pytest.approx(np.arange(8).mean())

    def test_freed_block_is_recycled(self):
        t = self.make_tree()
        b = split_node(t, 1, (0, 0, 0))
        used_after_split = t.used
        join_node(t, 1, (0, 0, 0))
        b2 = split_node(t, 1, (0, 0, 1))
        assert b2 == b
        assert t.used == used_after_split

    def test_split_errors(self):
        t = self.make_tree()
        with pytest.raises(ValueError):
            split_node(t, 0, (0, 0, 0))          # inner node
        with pytest.raises(ValueError):
            split_node(t, 3, (0, 0, 0))          # finest level
        with pytest.raises(ValueError):
            split_node(t, 2, (7, 7, 7))          # subsumed, no leaf here

    def test_join_errors(self):
        t = self.make_tree()
        with pytest.raises(ValueError):
            join_node(t, 1, (0, 0, 0))           # already a leaf
        b = split_node(t, 1, (0, 0, 0))
        split_node(t, 2, (0, 0, 0))
        with pytest.raises(ValueError):
            join_node(t, 1, (0, 0, 0))           # grandchildren present


class TestCapacityGrowth:
    def test_growth_preserves_content(self):
        t = build_octree(np.zeros((8, 8, 8)), tau=0.0)
        old_vals = t.value.copy()
        old_children = t.child.copy()
        t.ensure_capacity(4 * t.capacity)
        assert t.capacity >= 4 * old_vals.shape[0]
        assert np.array_equal(t.value[:old_vals.shape[0]], old_vals)
        assert np.array_equal(t.child[:old_children.shape[0]], old_children)
        assert np.all(t.child[old_children.shape[0]:] == -1)

    def test_splits_grow_the_pool_on_demand(self):
        t = build_octree(np.zeros((16, 16, 16)), tau=0.0)
        assert t.node_count == 1
        for lvl, cell in ((0, (0, 0, 0)), (1, (0, 0, 0)), (2, (0, 0, 0)),
                          (3, (0, 0, 0))):
            split_node(t, lvl, cell)
        assert t.node_count == 33
        node, lvl = t.locate(4, (0, 0, 0))
        assert lvl == 4


class TestMetricsAndSerialization:
    def test_quantization_error_measures_leaf_deviation(self):
        g = np.zeros((8, 8, 8))
        t = build_octree(g, tau=0.0)
        # root leaf value off by 0.25 against the dense mean
        t.value[0] = 0.25
        total, weighted = quantization_error(t, g)
        assert total == pytest.approx(0.25)
        assert weighted == pytest.approx(0.25)

    def test_quantization_error_rejects_wrong_resolution(self):
        t = build_octree(np.zeros((8, 8, 8)))
        with pytest.raises(ValueError):
            quantization_error(t, np.zeros((16, 16, 16)))

    def test_serialize_format_and_count(self):
        rng = np.random.default_rng(41)
        t = build_octree(blocky_field(rng, 8), tau=0.0)
        buf = io.StringIO()
        count = serialize(t, buf)
        lines = buf.getvalue().splitlines()
        assert count == t.node_count == len(lines)
        first = lines[0].split()
        assert [int(v) for v in first[:4]] == [0, 0, 0, 0]
        leaf_flags = 0
        for line in lines:
            parts = line.split()
            assert len(parts) == 7
            lvl, x, y, z = (int(v) for v in parts[:4])
            assert 0 <= lvl <= t.d_max
            assert all(0 <= c < (1 << lvl) for c in (x, y, z))
            assert parts[4] in ("0", "1")
            float(parts[5]); float(parts[6])
            leaf_flags += parts[4] == "1"
        assert leaf_flags == sum(1 for _ in t.leaves())

    def test_serialize_roundtrips_leaf_values(self):
        rng = np.random.default_rng(42)
        g = blocky_field(rng, 8)
        t = build_octree(g, tau=0.0)
        buf = io.StringIO()
        serialize(t, buf)
        dense = np.empty((8, 8, 8))
        for line in buf.getvalue().splitlines():
            parts = line.split()
            if parts[4] != "1":
                continue
            lvl = int(parts[0])
            cell = tuple(int(v) for v in parts[1:4])
            subvolume(dense, lvl, cell, 3)[:] = float(parts[5])
        assert np.array_equal(dense, g)

    def test_propagate_means_refreshes_inner_values(self):
        rng = np.random.default_rng(43)
        t = build_octree(smooth_field(rng, 8), tau=0.0)
        d = densify(t)
        t.value[0] = 99.0
        propagate_means(t)
        assert t.value[0] == pytest.approx(d.mean(), rel=1e-12)


def _all_nodes(t: OctreeField):
    stack = [(0, 0, 0, 0, 0)]
    while stack:
        node, lvl, x, y, z = stack.pop()
        yield node, lvl, x, y, z
        b = int(t.child[node])
        if b >= 0:
            for c in range(8):
                stack.append((b + c, lvl + 1,
                              x * 2 + ((c >> 2) & 1),
                              y * 2 + ((c >> 1) & 1),
                              z * 2 + (c & 1)))


def _inner_nodes(t: OctreeField):
    for node, lvl, x, y, z in _all_nodes(t):
        if t.child[node] >= 0:
            yield node, lvl, x, y, z
