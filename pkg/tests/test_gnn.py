import numpy as np
import pytest

from skelgen import gnn
from skelgen.synth import random_tree_skeleton

from _reference import fd_param_grad, finite_diff_grad, grad_close

PATH3 = [(0, 1), (1, 2)]


class TestAdjacency:
    def test_symmetric_no_self(self):
        a = gnn.adjacency(3, PATH3)
        assert np.array_equal(a, a.T)
        assert not a.diagonal().any()

    def test_attention_mask_includes_self(self):
        m = gnn.attention_mask(3, PATH3)
        assert m.diagonal().all()
        assert m[0, 1] and not m[0, 2]

    def test_norm_adjacency_path_values(self):
        a = gnn.norm_adjacency(3, PATH3)
        # degrees with self-loop: 2, 3, 2
        assert a[0, 0] == pytest.approx(1 / 2)
        assert a[1, 1] == pytest.approx(1 / 3)
        assert a[0, 1] == pytest.approx(1 / np.sqrt(6))
        assert a[0, 2] == 0.0
        assert np.array_equal(a, a.T)

    def test_norm_adjacency_isolated_node(self):
        a = gnn.norm_adjacency(2, [])
        assert np.allclose(a, np.eye(2))


class TestGraphConv:
    def test_grads(self, rng):
        layer = gnn.GraphConv(rng, 4, 3)
        g = random_tree_skeleton(rng, 6)
        a_norm = gnn.norm_adjacency(6, g.edges)
        x = rng.normal(size=(6, 4))
        r = rng.normal(size=(6, 3))

        def loss(inp):
            y, _ = layer.forward(inp, a_norm)
            return float((y * r).sum())

        y, ctx = layer.forward(x, a_norm)
        layer.zero_grad()
        dx = layer.backward(ctx, r)
        assert grad_close(dx, finite_diff_grad(loss, x.copy()))
        for name, p in layer.named_params():
            assert grad_close(p.grad, fd_param_grad(lambda: loss(x), p)), name

    def test_permutation_equivariance(self, rng):
        layer = gnn.GraphConv(rng, 5, 5)
        g = random_tree_skeleton(rng, 8)
        x = rng.normal(size=(8, 5))
        perm = rng.permutation(8)
        edges_p = [(int(np.where(perm == i)[0][0]), int(np.where(perm == j)[0][0]))
                   for i, j in g.edges]
        a = gnn.norm_adjacency(8, g.edges)
        a_p = gnn.norm_adjacency(8, edges_p)
        y, _ = layer.forward(x, a)
        y_p, _ = layer.forward(x[perm], a_p)
        assert np.allclose(y_p, y[perm], atol=1e-12)

    def test_one_layer_locality(self, rng):
        # a path 0-1-2-3: node 0's output ignores node 3 after one layer
        layer = gnn.GraphConv(rng, 3, 3)
        a = gnn.norm_adjacency(4, [(0, 1), (1, 2), (2, 3)])
        x = rng.normal(size=(4, 3))
        y, _ = layer.forward(x, a)
        x2 = x.copy()
        x2[3] += 10.0
        y2, _ = layer.forward(x2, a)
        assert np.allclose(y[0], y2[0])
        assert not np.allclose(y[2], y2[2])


class TestMultiHeadAttention:
    def test_dim_divisibility(self, rng):
        with pytest.raises(ValueError):
            gnn.MultiHeadAttention(rng, 10, 3)

    def test_cross_attention_grads(self, rng):
        attn = gnn.MultiHeadAttention(rng, 8, 2)
        xq = rng.normal(size=(5, 8))
        xkv = rng.normal(size=(4, 8))
        r = rng.normal(size=(5, 8))

        def loss_q(inp):
            y, _ = attn.forward(inp, xkv)
            return float((y * r).sum())

        def loss_kv(inp):
            y, _ = attn.forward(xq, inp)
            return float((y * r).sum())

        y, ctx = attn.forward(xq, xkv)
        attn.zero_grad()
        dq, dkv = attn.backward(ctx, r)
        assert grad_close(dq, finite_diff_grad(loss_q, xq.copy()))
        assert grad_close(dkv, finite_diff_grad(loss_kv, xkv.copy()))
        for name, p in attn.named_params():
            assert grad_close(p.grad, fd_param_grad(lambda: loss_q(xq), p)), name

    def test_masked_self_attention_grads(self, rng):
        attn = gnn.ResidualSelfAttention(rng, 8, 4)
        g = random_tree_skeleton(rng, 6)
        mask = gnn.attention_mask(6, g.edges)
        x = rng.normal(size=(6, 8))
        r = rng.normal(size=(6, 8))

        def loss(inp):
            y, _ = attn.forward(inp, mask)
            return float((y * r).sum())

        y, ctx = attn.forward(x, mask)
        attn.zero_grad()
        dx = attn.backward(ctx, r)
        assert grad_close(dx, finite_diff_grad(loss, x.copy()))
        for name, p in attn.named_params():
            assert grad_close(p.grad, fd_param_grad(lambda: loss(x), p)), name

    def test_mask_blocks_information(self, rng):
        # path 0-1-2-3-4: node 0 sees only {0,1}; changing node 4 is invisible
        attn = gnn.ResidualSelfAttention(rng, 8, 2)
        edges = [(i, i + 1) for i in range(4)]
        mask = gnn.attention_mask(5, edges)
        x = rng.normal(size=(5, 8))
        y, _ = attn.forward(x, mask)
        x2 = x.copy()
        x2[4] += 3.0
        y2, _ = attn.forward(x2, mask)
        assert np.allclose(y[0], y2[0])
        assert not np.allclose(y[3], y2[3])

    def test_permutation_equivariance(self, rng):
        attn = gnn.ResidualSelfAttention(rng, 8, 2)
        g = random_tree_skeleton(rng, 7)
        mask = gnn.attention_mask(7, g.edges)
        x = rng.normal(size=(7, 8))
        perm = rng.permutation(7)
        y, _ = attn.forward(x, mask)
        y_p, _ = attn.forward(x[perm], mask[perm][:, perm])
        assert np.allclose(y_p, y[perm], atol=1e-12)

    def test_residual_at_zero_weights(self, rng):
        attn = gnn.ResidualSelfAttention(rng, 4, 2)
        for _, p in attn.named_params():
            p.value[...] = 0.0
        x = rng.normal(size=(3, 4))
        y, _ = attn.forward(x, gnn.attention_mask(3, [(0, 1), (1, 2)]))
        assert np.array_equal(y, x)
