import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcage.construction import (CapsuleGraphBuilder, DirectGraphBuilder,
                                    capsule_l2_penalty)
from graphcage.tensor import Tensor, ParameterRegistry, grad_check


def make_builder(fused_dim=2, d_c=2, n_nodes=2, max_len=4, p=2, seed=0,
                 modality="t"):
    reg = ParameterRegistry()
    builder = CapsuleGraphBuilder(reg, modality, fused_dim, d_c, n_nodes,
                                  max_len, p, np.random.default_rng(seed))
    return builder, reg


class TestMakeCapsules:
    def test_zero_weights_give_zero_capsules(self):
        builder, _ = make_builder()
        builder.caps_w.data[:] = 0.0
        caps = builder.make_capsules(Tensor(np.ones((1, 3, 2))))
        assert np.all(caps.data == 0.0)

    def test_identity_weights_copy_features(self):
        builder, _ = make_builder(fused_dim=2, d_c=2)
        builder.caps_w.data[:] = np.eye(2)
        z = np.random.default_rng(1).normal(size=(1, 4, 2))
        caps = builder.make_capsules(Tensor(z))
        for j in range(2):
            assert np.allclose(caps.data[0, :, j], z[0])

    def test_vs_per_pair_matmul_loop(self):
        builder, _ = make_builder(fused_dim=2, d_c=2, n_nodes=2, max_len=3,
                                  seed=2)
        z = np.random.default_rng(3).normal(size=(1, 3, 2))
        caps = builder.make_capsules(Tensor(z))
        for i in range(3):
            for j in range(2):
                expected = builder.caps_w.data[i, j] @ z[0, i]
                assert np.allclose(caps.data[0, i, j], expected)

    def test_overlong_sequence_rejected(self):
        builder, _ = make_builder(max_len=4)
        with pytest.raises(ValueError, match="maximum"):
            builder.make_capsules(Tensor(np.zeros((1, 5, 2))))


class TestDynamicRouting:
    def test_p1_uniform_coefficients(self):
        builder, _ = make_builder(n_nodes=4, seed=4)
        caps = Tensor(np.random.default_rng(5).normal(size=(1, 3, 4, 2)))
        nodes, trace = builder.route_nodes(caps, p=1)
        assert np.allclose(trace.iterations[0], 0.25)
        expected = caps.data.sum(axis=1) / 4.0  # (1/n) sum_i caps
        assert np.allclose(nodes.data, expected.transpose(0, 1, 2))

    def test_p1_closed_form_mean_scaled(self):
        # node set equals the capsule time-mean scaled by T/n
        builder, _ = make_builder(n_nodes=2, seed=6)
        T = 3
        caps = Tensor(np.random.default_rng(7).normal(size=(1, T, 2, 2)))
        nodes, _ = builder.route_nodes(caps, p=1)
        closed = caps.data.mean(axis=1) * (T / 2.0)
        assert np.array_equal(nodes.data, closed)

    def test_single_node_ignores_iterations(self):
        builder, _ = make_builder(n_nodes=1, seed=8)
        caps = Tensor(np.random.default_rng(9).normal(size=(1, 4, 1, 2)))
        for p in (1, 2, 5):
            nodes, trace = builder.route_nodes(caps, p=p)
            assert np.allclose(nodes.data[0, 0], caps.data[0, :, 0].sum(axis=0))
            for it in trace.iterations:
                assert np.allclose(it, 1.0)

    def test_hand_stepped_p2_oracle(self):
        # T=2, n=2, d_c=2, small integer capsules, Algorithm followed literally
        builder, _ = make_builder(n_nodes=2, seed=10)
        caps_arr = np.array([[[[1.0, 0.0], [0.0, 1.0]],
                              [[2.0, 0.0], [1.0, 1.0]]]])  # (1, T=2, n=2, 2)
        nodes, trace = builder.route_nodes(Tensor(caps_arr), p=2)

        b = np.zeros((2, 2))
        rs = []
        for _ in range(2):
            e = np.exp(b - b.max(axis=1, keepdims=True))
            r = e / e.sum(axis=1, keepdims=True)
            rs.append(r.copy())
            n_nodes = np.zeros((2, 2))
            for j in range(2):
                for i in range(2):
                    n_nodes[j] += r[i, j] * caps_arr[0, i, j]
            for i in range(2):
                for j in range(2):
                    b[i, j] += caps_arr[0, i, j] @ n_nodes[j]
        assert np.max(np.abs(nodes.data[0] - n_nodes)) < 1e-12
        for got, want in zip(trace.iterations, rs):
            assert np.max(np.abs(got[0] - want)) < 1e-12

    def test_row_sums_one_every_iteration(self):
        builder, _ = make_builder(n_nodes=5, seed=11)
        caps = Tensor(np.random.default_rng(12).normal(size=(2, 6, 5, 2)))
        _, trace = builder.route_nodes(caps, p=3)
        for it in trace.iterations:
            assert np.allclose(it.sum(axis=-1), 1.0, atol=1e-9)

    def test_masked_steps_get_zero_mass(self):
        builder, _ = make_builder(n_nodes=3, max_len=4, seed=13)
        caps = Tensor(np.random.default_rng(14).normal(size=(1, 4, 3, 2)))
        mask = np.array([[1.0, 1.0, 0.0, 0.0]])
        nodes, trace = builder.route_nodes(caps, p=2, mask=mask)
        for it in trace.iterations:
            assert np.all(it[0, 2:] == 0.0)
            assert np.allclose(it[0, :2].sum(axis=-1), 1.0, atol=1e-9)
        # nodes must ignore masked capsules entirely
        caps2 = caps.data.copy()
        caps2[0, 2:] += 50.0
        nodes2, _ = builder.route_nodes(Tensor(caps2), p=2, mask=mask)
        assert np.allclose(nodes.data, nodes2.data)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4),
           st.integers(0, 2 ** 31 - 1))
    def test_normalization_property(self, n_nodes, T, p, seed):
        # every real step's coefficients sum to 1 at every iteration,
        # regardless of shape, iteration count, or input scale
        builder, _ = make_builder(n_nodes=n_nodes, max_len=T, seed=0)
        rng = np.random.default_rng(seed)
        caps = Tensor(rng.normal(scale=rng.uniform(0.1, 10),
                                 size=(2, T, n_nodes, 2)))
        _, trace = builder.route_nodes(caps, p=p)
        for it in trace.iterations:
            assert np.allclose(it.sum(axis=-1), 1.0, atol=1e-9)
            assert np.all(it >= 0.0)

    def test_invalid_iteration_count(self):
        builder, _ = make_builder()
        with pytest.raises(ValueError):
            builder.route_nodes(Tensor(np.zeros((1, 2, 2, 2))), p=0)

    def test_time_permutation_with_paired_weights_invariant(self):
        builder, _ = make_builder(fused_dim=3, d_c=2, n_nodes=3, max_len=5,
                                  seed=15)
        z = np.random.default_rng(16).normal(size=(1, 5, 3))
        nodes, adj, _ = builder(Tensor(z))
        perm = np.random.default_rng(17).permutation(5)
        builder.caps_w.data = builder.caps_w.data[perm]
        nodes_p, adj_p, _ = builder(Tensor(z[:, perm]))
        assert np.max(np.abs(nodes.data - nodes_p.data)) < 1e-12
        assert np.max(np.abs(adj.data - adj_p.data)) < 1e-12

    def test_gradient_through_all_routing_iterations(self):
        builder, reg = make_builder(fused_dim=2, d_c=2, n_nodes=2, max_len=3,
                                    seed=18)
        z = Tensor(np.random.default_rng(19).normal(size=(1, 3, 2)))
        w = np.random.default_rng(20).normal(size=(1, 2, 2))

        def loss(caps_w):
            builder.caps_w = caps_w
            nodes, _ = builder.route_nodes(builder.make_capsules(z), p=3)
            return (nodes * Tensor(w)).sum()

        report = grad_check(loss, [builder.caps_w], tol=1e-4, max_entries=8,
                            rng=np.random.default_rng(21))
        assert report.passed, report


class TestBuildEdges:
    def test_identity_projections_orthonormal_nodes(self):
        builder, _ = make_builder(d_c=2, n_nodes=2)
        builder.wq.data = np.eye(2)
        builder.wk.data = np.eye(2)
        nodes = Tensor(np.eye(2)[None])  # orthonormal node vectors
        adj = builder.build_edges(nodes)
        assert np.allclose(adj.data[0], np.eye(2) / 2.0)

    def test_negative_inner_products_clipped(self):
        builder, _ = make_builder(d_c=2, n_nodes=2)
        builder.wq.data = np.eye(2)
        builder.wk.data = np.eye(2)
        nodes = Tensor(np.array([[[1.0, 0.0], [-1.0, 0.0]]]))
        adj = builder.build_edges(nodes)
        assert adj.data[0, 0, 1] == 0.0
        assert adj.data[0, 1, 0] == 0.0

    def test_vs_direct_matrix_oracle(self):
        builder, _ = make_builder(d_c=3, n_nodes=3, fused_dim=3, seed=22)
        nodes = np.random.default_rng(23).normal(size=(1, 3, 3))
        adj = builder.build_edges(Tensor(nodes))
        N = nodes[0].T  # columns are nodes
        raw = (builder.wq.data @ N).T @ (builder.wk.data @ N) / 3.0
        assert np.allclose(adj.data[0], np.maximum(raw, 0.0))

    def test_nonnegative_for_random_inputs(self):
        builder, _ = make_builder(d_c=4, n_nodes=6, fused_dim=4, seed=24)
        nodes = Tensor(np.random.default_rng(25).normal(size=(3, 6, 4)))
        assert np.all(builder.build_edges(nodes).data >= 0.0)


class TestL2Penalty:
    def test_zero_lambda(self):
        builder, _ = make_builder()
        assert capsule_l2_penalty({"t": builder}, 0.0).item() == 0.0

    def test_single_matrix_value(self):
        builder, _ = make_builder(fused_dim=2, d_c=2, n_nodes=1, max_len=1)
        builder.caps_w.data[:] = 1.0
        assert capsule_l2_penalty({"t": builder}, 0.5).item() == 2.0

    def test_vs_parameter_sum_oracle(self):
        builders = {}
        total = 0.0
        for i, m in enumerate("tav"):
            b, _ = make_builder(seed=30 + i, modality=m)
            builders[m] = b
            total += float((b.caps_w.data ** 2).sum())
        got = capsule_l2_penalty(builders, 1e-4).item()
        assert np.isclose(got, 1e-4 * total, rtol=1e-12)

    def test_excludes_edge_weights(self):
        builder, _ = make_builder(seed=33)
        before = capsule_l2_penalty({"t": builder}, 1.0).item()
        builder.wq.data += 10.0
        after = capsule_l2_penalty({"t": builder}, 1.0).item()
        assert before == after

    def test_negative_lambda_rejected(self):
        builder, _ = make_builder()
        with pytest.raises(ValueError):
            capsule_l2_penalty({"t": builder}, -1.0)


class TestDirectBuilder:
    def test_one_node_per_time_step(self):
        reg = ParameterRegistry()
        builder = DirectGraphBuilder(reg, "t", fused_dim=4, d_c=3,
                                     rng=np.random.default_rng(40))
        z = np.random.default_rng(41).normal(size=(1, 6, 4))
        nodes, adj, trace = builder(Tensor(z))
        assert trace is None
        assert nodes.shape == (1, 6, 3)
        assert adj.shape == (1, 6, 6)
        assert np.allclose(nodes.data[0], z[0] @ builder.proj.data)
