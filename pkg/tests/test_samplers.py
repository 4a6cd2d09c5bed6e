import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphfm.graph import build_csr, normalize_adjacency, sbm_generate
from graphfm.samplers import (SamplerConfig, full_batch_plan, iterate_plans, node_sampling_plan, partition_graph,
                              subgraph_batch)


def random_graph(seed, n, m):
    rng = np.random.default_rng(seed)
    return build_csr(rng.integers(0, n, size=(m, 2)), n)


def assert_submatrix(plan, adj):
    dense = adj.matrix.toarray()
    for l, block in enumerate(plan.blocks):
        rows, cols = plan.layer_nodes[l], plan.layer_nodes[l + 1]
        b = block.toarray()
        nz = b != 0
        np.testing.assert_array_equal(b[nz], dense[np.ix_(rows, cols)][nz])
        # every output keeps its self-loop at the same position
        assert np.all(np.diag(b[:, :len(rows)]) == dense[rows, rows])
        np.testing.assert_array_equal(cols[:len(rows)], rows)


class TestFullBatch:
    def test_shapes(self):
        g = random_graph(0, 10, 20)
        adj = normalize_adjacency(g)
        plan = full_batch_plan(g, adj, 2)
        assert plan.num_layers == 2
        assert all(len(b) == 10 for b in plan.layer_nodes)
        assert plan.blocks[0].shape == (10, 10)

    def test_zero_layers(self):
        g = random_graph(0, 5, 5)
        with pytest.raises(ValueError):
            full_batch_plan(g, normalize_adjacency(g), 0)


class TestNodeSampling:
    def test_star_fanout_two(self):
        g = build_csr([(0, i) for i in range(1, 6)], 6)
        plan = node_sampling_plan(g, normalize_adjacency(g), [0], [2], seed=3)
        assert len(plan.layer_nodes[1]) == 3
        assert plan.layer_nodes[1][0] == 0

    def test_exhaustive_is_one_hop_closure(self):
        g = random_graph(1, 30, 60)
        seeds = np.array([2, 7, 11])
        plan = node_sampling_plan(g, normalize_adjacency(g), seeds, [100], seed=0)
        expected = set(seeds.tolist())
        for s in seeds:
            expected |= set(g.neighbors(s).tolist())
        assert set(plan.layer_nodes[1].tolist()) == expected

    def test_isolated_seed(self):
        g = build_csr([(1, 2)], 3)
        plan = node_sampling_plan(g, normalize_adjacency(g), [0], [4, 4])
        assert [b.tolist() for b in plan.layer_nodes] == [[0], [0], [0]]
        assert plan.blocks[0].toarray().tolist() == [[1.0]]

    def test_bad_inputs(self):
        g = random_graph(0, 5, 5)
        adj = normalize_adjacency(g)
        with pytest.raises(ValueError):
            node_sampling_plan(g, adj, [], [2])
        with pytest.raises(ValueError):
            node_sampling_plan(g, adj, [9], [2])
        with pytest.raises(ValueError):
            node_sampling_plan(g, adj, [0], [0])

    @given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, seed, q, k):
        g = random_graph(seed, 40, 100)
        adj = normalize_adjacency(g)
        seeds = np.sort(np.random.default_rng(seed).choice(40, 6, replace=False))
        plan = node_sampling_plan(g, adj, seeds, [q] * k, seed=seed)
        assert plan.num_layers == k
        for l in range(k):
            prev, nxt = plan.layer_nodes[l], plan.layer_nodes[l + 1]
            np.testing.assert_array_equal(nxt[:len(prev)], prev)
            assert len(np.unique(nxt)) == len(nxt)
            # each output keeps min(Q, deg) sampled neighbors plus its self-loop
            per_row = np.diff(plan.blocks[l].indptr)
            np.testing.assert_array_equal(per_row, np.minimum(q, g.degrees()[prev]) + 1)
        assert_submatrix(plan, adj)

    def test_deterministic(self):
        g = random_graph(4, 50, 150)
        adj = normalize_adjacency(g)
        a = node_sampling_plan(g, adj, [1, 2, 3], [3, 3], seed=11)
        b = node_sampling_plan(g, adj, [1, 2, 3], [3, 3], seed=11)
        for x, y in zip(a.layer_nodes, b.layer_nodes):
            np.testing.assert_array_equal(x, y)


class TestPartition:
    def test_disjoint_triangles_zero_cut(self):
        edges = [(3 * t + i, 3 * t + j) for t in range(3) for i, j in ((0, 1), (1, 2), (0, 2))]
        g = build_csr(edges, 9)
        p = partition_graph(g, 3, seed=0)
        assert p.edge_cut(g) == 0
        assert sorted(np.bincount(p.assignment).tolist()) == [3, 3, 3]

    def test_k_equals_n_and_one(self):
        g = random_graph(2, 12, 20)
        p = partition_graph(g, 12)
        assert sorted(p.assignment.tolist()) == list(range(12))
        assert partition_graph(g, 1).assignment.tolist() == [0] * 12

    def test_invalid_k(self):
        g = random_graph(2, 5, 5)
        with pytest.raises(ValueError):
            partition_graph(g, 0)
        with pytest.raises(ValueError):
            partition_graph(g, 6)

    @pytest.mark.parametrize("k", [2, 4, 10])
    def test_balance_and_cover(self, k):
        b = sbm_generate(4, 100, 0.1, 0.005, feat_dim=4, feat_noise=0.0, seed=1)
        p = partition_graph(b.graph, k, seed=3)
        sizes = np.bincount(p.assignment, minlength=k)
        n = b.graph.num_nodes
        assert sizes.sum() == n and p.assignment.min() >= 0
        assert np.all(sizes >= 0.75 * n / k) and np.all(sizes <= 1.25 * n / k)

    def test_cut_beats_random(self):
        b = sbm_generate(4, 100, 0.1, 0.005, feat_dim=4, feat_noise=0.0, seed=1)
        p = partition_graph(b.graph, 4, seed=0)
        rand = np.random.default_rng(0).permutation(np.arange(400) % 4)
        e = b.graph.edge_array()
        assert p.edge_cut(b.graph) < np.sum(rand[e[:, 0]] != rand[e[:, 1]])

    def test_deterministic(self):
        g = random_graph(5, 60, 120)
        np.testing.assert_array_equal(partition_graph(g, 5, seed=2).assignment,
                                      partition_graph(g, 5, seed=2).assignment)


class TestSubgraph:
    def test_single_cluster_block(self):
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
        g = build_csr(edges, 6)
        adj = normalize_adjacency(g)
        from graphfm.samplers import Partition
        p = Partition(np.array([0, 0, 0, 1, 1, 1]), 2)
        plan = subgraph_batch(g, adj, p, [0], 2)
        assert plan.layer_nodes[0].tolist() == [0, 1, 2]
        np.testing.assert_array_equal(plan.blocks[0].toarray(), adj.matrix.toarray()[:3, :3])
        renorm = subgraph_batch(g, adj, p, [0], 2, renormalize=True)
        expected = normalize_adjacency(build_csr([(0, 1), (1, 2)], 3)).matrix.toarray()
        np.testing.assert_allclose(renorm.blocks[0].toarray(), expected, atol=1e-15)
        assert_submatrix(plan, adj)

    def test_bad_cluster(self):
        g = random_graph(0, 6, 6)
        p = partition_graph(g, 2)
        with pytest.raises(ValueError):
            subgraph_batch(g, normalize_adjacency(g), p, [5], 2)


class TestIteratePlans:
    def test_node_epoch_covers_every_node_once(self):
        g = random_graph(6, 70, 140)
        cfg = SamplerConfig("node", batch_size=16, fanouts=(3, 3))
        outs = [p.output_nodes for p in iterate_plans(cfg, g, normalize_adjacency(g), 2, epoch_seed=1)]
        assert len(outs) == 5
        assert sorted(np.concatenate(outs).tolist()) == list(range(70))

    def test_subgraph_epoch_and_determinism(self):
        g = random_graph(6, 70, 140)
        adj = normalize_adjacency(g)
        p = partition_graph(g, 7)
        cfg = SamplerConfig("subgraph", num_clusters=7, clusters_per_batch=2)
        a = [x.output_nodes for x in iterate_plans(cfg, g, adj, 2, epoch_seed=4, partition=p)]
        b = [x.output_nodes for x in iterate_plans(cfg, g, adj, 2, epoch_seed=4, partition=p)]
        assert len(a) == 4
        assert sorted(np.concatenate(a).tolist()) == list(range(70))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        with pytest.raises(ValueError):
            next(iterate_plans(cfg, g, adj, 2, epoch_seed=0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig("cluster")
        with pytest.raises(ValueError):
            SamplerConfig("subgraph", num_clusters=2, clusters_per_batch=3)
        with pytest.raises(ValueError):
            SamplerConfig("node", fanouts=(0,))
