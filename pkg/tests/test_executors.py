"""Tests for layer executors and model composition."""

import math

import numpy as np
import pytest
from scipy.interpolate import BSpline

from uhn import tensorcore as tc
from uhn.archspec import LayerSpec, param_layout
from uhn.descriptors import DescriptorTable, TaskDescriptor, compute_stats
from uhn.executors import (
    GAT_SLOPE,
    EvalMode,
    GraphContext,
    bspline_basis,
    conv_forward,
    embedding_forward,
    gat_forward,
    gcn_forward,
    kan_forward,
    linear_forward,
    mha_forward,
    model_forward,
    unpack,
)
from uhn.families import cnn, cnn8_mnist, gat, gcn, generated_uhn_template, kan, mlp, mlp_mnist, transformer
from uhn.generator import UHNConfig, generate_weights, init_uhn


def naive_conv(x, w, stride, padding):
    n, c, h, width = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            patch = xp[:, :, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out


def random_edges(rng, num_nodes, p=0.4):
    return [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes) if rng.random() < p]


def dense_with_loops(num_nodes, edges):
    adjacency = np.eye(num_nodes)
    for i, j in edges:
        adjacency[i, j] = adjacency[j, i] = 1.0
    return adjacency


def softmax_rows(scores):
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class TestLinear:
    """Linear layer."""

    def test_identity(self, rng):
        """W = I, b = 0 returns the input."""
        layer = LayerSpec("linear", input_size=4, output_size=4)
        x = rng.normal(size=(3, 4))

        np.testing.assert_allclose(linear_forward(x, np.eye(4), np.zeros(4), layer).data, x)

    def test_zero_weight_with_shortcut(self, rng):
        """W = 0, b = c with shortcut gives x + c."""
        layer = LayerSpec("linear", input_size=4, output_size=4, shortcut=True, norm="layer_norm", activation="relu")
        x = rng.normal(size=(3, 4))
        c = np.arange(4.0)

        np.testing.assert_allclose(linear_forward(x, np.zeros((4, 4)), c, layer).data, x + c)

    def test_flatten(self, rng):
        """Flatten pooling reshapes images to vectors."""
        layer = LayerSpec("linear", input_size=12, output_size=1, pooling="flatten", bias=False)
        x = rng.normal(size=(2, 3, 2, 2))

        np.testing.assert_allclose(linear_forward(x, np.ones((1, 12)), None, layer).data[:, 0], x.reshape(2, -1).sum(1))

    def test_dropout_only_in_train_mode(self, rng):
        """Eval mode is deterministic; train mode drops entries."""
        layer = LayerSpec("linear", input_size=4, output_size=4, dropout=0.5)
        x = rng.normal(size=(50, 4))
        w = np.eye(4)

        np.testing.assert_allclose(linear_forward(x, w, None, layer).data, x)
        dropped = linear_forward(x, w, None, layer, EvalMode(train=True, seed=0)).data
        assert (dropped == 0).any()


class TestConv:
    """Convolution layer."""

    def test_identity_1x1(self, rng):
        """A 1x1 identity kernel returns the input."""
        layer = LayerSpec("conv", input_size=3, output_size=3, kernel_size=1)
        x = rng.normal(size=(2, 3, 5, 5))

        np.testing.assert_allclose(conv_forward(x, np.eye(3)[:, :, None, None], None, layer).data, x)

    def test_matches_direct_convolution(self, rng):
        """3x3 same-padded convolution against a loop oracle."""
        layer = LayerSpec("conv", input_size=2, output_size=4, kernel_size=3)
        x, w, b = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)

        expected = naive_conv(x, w, 1, 1) + b[None, :, None, None]

        np.testing.assert_allclose(conv_forward(x, w, b, layer).data, expected, atol=1e-12)

    def test_stride_halves(self, rng):
        """Stride pooling halves the spatial extent."""
        layer = LayerSpec("conv", input_size=2, output_size=2, kernel_size=3, stage_pooling="stride")
        x, w = rng.normal(size=(1, 2, 8, 8)), rng.normal(size=(2, 2, 3, 3))

        out = conv_forward(x, w, None, layer).data

        assert out.shape == (1, 2, 4, 4)
        np.testing.assert_allclose(out, naive_conv(x, w, 2, 1), atol=1e-12)


class TestGraphLayers:
    """GCN and GAT message passing."""

    def test_gcn_two_nodes(self):
        """Two connected nodes: every coefficient is 1/2."""
        ctx = GraphContext.from_edges(2, [(0, 1)])
        layer = LayerSpec("gcn", input_size=1, output_size=1)

        np.testing.assert_allclose(ctx.gcn_coefficients, 0.5)
        out = gcn_forward(np.array([[2.0], [4.0]]), np.ones((1, 1)), None, ctx, layer).data
        np.testing.assert_allclose(out, [[3.0], [3.0]])

    def test_path_graph_edges(self):
        """A 3-node path has 3 self-loops plus 4 directed edges."""
        ctx = GraphContext.from_edges(3, [(0, 1), (1, 2)])

        assert ctx.num_edges == 7
        np.testing.assert_array_equal(ctx.degree, [2, 3, 2])

    def test_edge_out_of_range(self):
        """Edges must reference existing nodes."""
        with pytest.raises(ValueError, match="outside"):
            GraphContext.from_edges(2, [(0, 5)])

    def test_gat_zero_attention_is_uniform(self, rng):
        """Zero attention vectors average the neighbourhood."""
        ctx = GraphContext.from_edges(3, [(0, 1), (1, 2)])
        layer = LayerSpec("gat", input_size=2, output_size=4, num_heads=2)
        x, w = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))

        out = gat_forward(x, w, None, np.zeros((2, 2)), np.zeros((2, 2)), ctx, layer).data

        z = x @ w.T
        expected = ctx.dense_adjacency() @ z / ctx.degree[:, None]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_gcn_matches_dense_normalization(self, rng):
        """Message passing equals D^-1/2 (A + I) D^-1/2 X W^T + b on a random graph."""
        edges = random_edges(rng, 7)
        ctx = GraphContext.from_edges(7, edges)
        layer = LayerSpec("gcn", input_size=3, output_size=4)
        x, w, b = rng.normal(size=(7, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)

        adjacency = dense_with_loops(7, edges)
        inv_sqrt = 1.0 / np.sqrt(adjacency.sum(axis=1))
        expected = inv_sqrt[:, None] * adjacency * inv_sqrt[None, :] @ (x @ w.T) + b

        np.testing.assert_allclose(gcn_forward(x, w, b, ctx, layer).data, expected, atol=1e-12)

    def test_gat_matches_neighbour_loop(self, rng):
        """Two-head attention against a per-node, per-head loop over neighbours."""
        edges = random_edges(rng, 6)
        ctx = GraphContext.from_edges(6, edges)
        layer = LayerSpec("gat", input_size=3, output_size=4, num_heads=2)
        x, w, b = rng.normal(size=(6, 3)), rng.normal(size=(4, 3)), rng.normal(size=4)
        a_src, a_dst = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))

        out = gat_forward(x, w, b, a_src, a_dst, ctx, layer).data

        adjacency = dense_with_loops(6, edges)
        z = (x @ w.T).reshape(6, 2, 2)
        expected = np.zeros((6, 4))
        for i in range(6):
            neighbours = np.flatnonzero(adjacency[i])
            for h in range(2):
                logits = []
                for j in neighbours:
                    e = a_src[h] @ z[j, h] + a_dst[h] @ z[i, h]
                    logits.append(e if e > 0 else GAT_SLOPE * e)
                alpha = softmax_rows(np.array(logits))
                expected[i, 2 * h : 2 * h + 2] = alpha @ z[neighbours, h]
        np.testing.assert_allclose(out, expected + b, atol=1e-12)

    def test_gat_isolated_node(self, rng):
        """A node with only its self-loop returns its own projection."""
        ctx = GraphContext.from_edges(1, [])
        layer = LayerSpec("gat", input_size=2, output_size=2, num_heads=1)
        x, w = rng.normal(size=(1, 2)), rng.normal(size=(2, 2))

        out = gat_forward(x, w, None, rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), ctx, layer).data

        np.testing.assert_allclose(out, x @ w.T)


class TestSequenceLayers:
    """Embedding and attention."""

    def test_embedding(self, rng):
        """Token rows plus position rows."""
        layer = LayerSpec("embedding", output_size=3, embedding_num=5, max_seq_len=4)
        table, positions = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        tokens = np.array([[1, 4], [0, 0]])

        out = embedding_forward(tokens, table, positions, layer).data

        np.testing.assert_allclose(out, table[tokens] + positions[:2])

    def test_embedding_token_range(self, rng):
        """Out-of-vocabulary ids are rejected."""
        layer = LayerSpec("embedding", output_size=3, embedding_num=5, max_seq_len=4)
        with pytest.raises(ValueError, match="token id"):
            embedding_forward(np.array([[5]]), np.zeros((5, 3)), np.zeros((4, 3)), layer)

    def test_mha_single_token(self, rng):
        """With T = 1 the attention weight is 1."""
        layer = LayerSpec("mha", input_size=4, output_size=4, num_heads=2)
        x = rng.normal(size=(2, 1, 4))
        wq, wk, wv, wo = (rng.normal(size=(4, 4)) for _ in range(4))

        out = mha_forward(x, wq, wk, wv, wo, layer=layer).data

        np.testing.assert_allclose(out, x @ wv.T @ wo.T, atol=1e-12)

    def test_mha_uniform_attention(self, rng):
        """Wq = Wk = 0 averages the values."""
        layer = LayerSpec("mha", input_size=4, output_size=4, num_heads=2)
        x = rng.normal(size=(1, 3, 4))
        wv, wo = rng.normal(size=(4, 4)), np.eye(4)

        out = mha_forward(x, np.zeros((4, 4)), np.zeros((4, 4)), wv, wo, layer=layer).data

        np.testing.assert_allclose(out, np.repeat((x @ wv.T).mean(axis=1, keepdims=True), 3, axis=1), atol=1e-12)

    def test_mha_mask(self, rng):
        """Masked keys receive no weight."""
        layer = LayerSpec("mha", input_size=2, output_size=2, num_heads=1)
        x = rng.normal(size=(1, 3, 2))
        mask = np.array([[True, True, False]])

        out = mha_forward(x, np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.eye(2), layer=layer, mask=mask).data

        np.testing.assert_allclose(out[0, 0], x[0, :2].mean(axis=0), atol=1e-12)

    def test_mha_matches_per_head_loop(self, rng):
        """Each head attends over its own slice of the projections."""
        layer = LayerSpec("mha", input_size=6, output_size=6, num_heads=3)
        x = rng.normal(size=(2, 4, 6))
        wq, wk, wv, wo = (rng.normal(size=(6, 6)) for _ in range(4))
        bq, bk, bv, bo = (rng.normal(size=6) for _ in range(4))

        out = mha_forward(x, wq, wk, wv, wo, bq, bk, bv, bo, layer=layer).data

        q, k, v = x @ wq.T + bq, x @ wk.T + bk, x @ wv.T + bv
        heads = np.zeros_like(q)
        for n in range(2):
            for h in range(3):
                cols = slice(2 * h, 2 * h + 2)
                weights = softmax_rows(q[n, :, cols] @ k[n, :, cols].T / math.sqrt(2.0))
                heads[n, :, cols] = weights @ v[n, :, cols]
        np.testing.assert_allclose(out, heads @ wo.T + bo, atol=1e-12)

    def test_fully_masked_row(self, rng):
        """A sequence whose keys are all hidden is rejected."""
        layer = LayerSpec("mha", input_size=2, output_size=2, num_heads=1)
        mask = np.array([[True, False], [False, False]])

        with pytest.raises(ValueError, match="sequence 1"):
            mha_forward(rng.normal(size=(2, 2, 2)), *(np.eye(2) for _ in range(4)), layer=layer, mask=mask)

    def test_mask_shape(self, rng):
        """The mask covers every (sequence, position) pair."""
        layer = LayerSpec("mha", input_size=2, output_size=2, num_heads=1)

        with pytest.raises(ValueError, match="mask has shape"):
            mha_forward(rng.normal(size=(1, 3, 2)), *(np.eye(2) for _ in range(4)), layer=layer, mask=np.ones((1, 2), bool))


class TestKan:
    """B-spline basis and KAN layer."""

    def test_partition_of_unity(self, rng):
        """Cubic bases sum to one inside the knot span."""
        knots = np.tile(np.linspace(-2.0, 2.0, 12), (2, 1))
        x = rng.uniform(knots[0, 3], knots[0, 8] - 1e-9, size=(20, 2))

        bases = bspline_basis(x, knots, 3).data

        assert bases.shape == (20, 2, 8)
        np.testing.assert_allclose(bases.sum(axis=-1), 1.0)
        assert (bases >= 0).all()

    def test_cubic_matches_scipy(self, rng):
        """Cubic bases on non-uniform knots agree with scipy's basis elements."""
        knots = np.sort(rng.uniform(-2.0, 2.0, size=(2, 10)), axis=1)
        x = np.stack([rng.uniform(k[0], k[-1], size=50) for k in knots], axis=1)

        bases = bspline_basis(x, knots, 3).data

        assert bases.shape == (50, 2, 6)
        for d in range(2):
            for j in range(6):
                element = BSpline.basis_element(knots[d, j : j + 5], extrapolate=False)
                expected = np.nan_to_num(element(x[:, d]))
                np.testing.assert_allclose(bases[:, d, j], expected, atol=1e-12)

    def test_outside_span_is_zero(self):
        """Inputs left of the first knot have no spline support."""
        knots = np.tile(np.linspace(-1.0, 1.0, 8), (1, 1))

        assert bspline_basis(np.array([[-3.0]]), knots, 2).data.sum() == 0.0

    def test_unsorted_knots(self):
        """Knots must increase."""
        with pytest.raises(ValueError, match="increasing"):
            bspline_basis(np.zeros((1, 1)), np.array([[0.0, 2.0, 1.0, 3.0]]), 1)

    def test_zero_spline_is_base_branch(self, rng):
        """With W_spline = 0 the layer is silu(x) W_base + b."""
        layer = LayerSpec("kan", input_size=2, output_size=3, activation="silu", grid_size=5, spline_order=3)
        x = rng.normal(size=(4, 2))
        base, bias = rng.normal(size=(2, 3)), rng.normal(size=3)

        out = kan_forward(
            x, base, bias, np.zeros((2, 8, 3)), np.ones((2, 3)), np.full(2, -2.0), np.zeros(2), np.zeros((2, 12)), layer
        ).data

        silu = x / (1.0 + np.exp(-x))
        np.testing.assert_allclose(out, silu @ base + bias, atol=1e-12)


class TestModelForward:
    """Whole-model evaluation from packed weights."""

    def test_zero_mlp_gives_uniform_logits(self, rng):
        """MLP-MNIST with w = 0: cross-entropy is ln 10."""
        spec = mlp_mnist()
        logits = model_forward(spec, np.zeros(param_layout(spec).total), rng.normal(size=(5, 1, 28, 28)))
        log_probs = tc.log_softmax(logits).data

        np.testing.assert_allclose(-log_probs[:, 3], math.log(10.0))

    def test_cnn8_composition(self, rng):
        """CNN-8 is its seven convolutions and the pooled head applied in order."""
        spec = cnn8_mnist()
        layout = param_layout(spec)
        w = rng.normal(scale=0.1, size=layout.total)
        x = rng.normal(size=(2, 1, 28, 28))

        params = unpack(tc.Tensor(w), layout, spec.num_layers)
        h, shapes = tc.Tensor(x), []
        for layer, p in zip(spec.layers, params):
            if layer.layer_type == "conv":
                h = conv_forward(h, p["weight"], p.get("bias"), layer)
            else:
                h = linear_forward(h, p["weight"], p.get("bias"), layer)
            shapes.append(h.shape)

        assert layout.total == 74762
        assert shapes == [(2, 16, 28, 28)] * 3 + [(2, 32, 14, 14)] * 2 + [(2, 64, 7, 7)] * 2 + [(2, 10)]
        np.testing.assert_allclose(model_forward(spec, w, x).data, h.data, rtol=1e-12, atol=1e-12)

    def test_weight_length_checked(self):
        """The packed vector must have length N."""
        with pytest.raises(ValueError, match="118282 weights"):
            model_forward(mlp_mnist(), np.zeros(10), np.zeros((1, 1, 28, 28)))

    def test_uhn_template_rejected(self):
        """Generated hypernetworks take their own path."""
        spec = generated_uhn_template(index_freqs=4, hidden=4, index_layers=0, task_branch=False)
        with pytest.raises(ValueError, match="generated_uhn_forward"):
            model_forward(spec, np.zeros(param_layout(spec).total), np.zeros((1, 8)))


def path_graph():
    return GraphContext.from_edges(3, [(0, 1), (1, 2)])


CHAINS = {
    "mlp": (lambda: mlp((3,), (4,), 2, name="toy_mlp"), "toy_image", lambda rng: rng.normal(size=(4, 3)), None),
    "cnn": (lambda: cnn((1,), (2,), 1, 2, 4, groups=1, name="cnn_1conv"), "toy_image", lambda rng: rng.normal(size=(2, 1, 4, 4)), None),
    "gcn": (lambda: gcn(2, 2, hidden=3, dropout=0.0), "toy_graph", lambda rng: rng.normal(size=(3, 2)), path_graph),
    "gat": (lambda: gat(2, 2, heads=2, head_dim=2, dropout=0.0), "toy_graph", lambda rng: rng.normal(size=(3, 2)), path_graph),
    "mha": (lambda: transformer(5, 4, 2, (1,), 2, 3, dropout=0.0), "synthetic_text", lambda rng: rng.integers(0, 5, size=(2, 3)), None),
    "kan": (lambda: kan((2, 2, 1)), "legendre_p2", lambda rng: rng.uniform(-1.0, 1.0, size=(5, 2)), None),
}  # fmt: skip


class TestChainGradients:
    """Generator -> packed weights -> model output -> loss, against central differences."""

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_matches_finite_differences(self, name):
        """Readout and residual-block gradients of the generator through each layer type."""
        build, dataset, sample_inputs, graph = CHAINS[name]
        spec = build()
        table = DescriptorTable.build(spec, TaskDescriptor.for_dataset(dataset))
        config = UHNConfig(index_freqs=8, hidden=6, blocks=1, fourier_scale=1.0)
        params = init_uhn(config, compute_stats([table]), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        inputs = sample_inputs(rng)
        ctx = graph() if graph else None
        point = [rng.normal(scale=0.5, size=(1, 6)), rng.normal(scale=0.1, size=6)]
        target = rng.normal(size=model_forward(spec, np.zeros(table.num_params), inputs, ctx).shape)

        def loss(readout_weight, block_bias):
            params.tensors["readout.weight"] = readout_weight
            params.tensors["block0.linear2.bias"] = block_bias
            out = model_forward(spec, generate_weights(params, table), inputs, ctx)
            return tc.mean((out - target) ** 2)

        report = tc.grad_check(loss, point)

        assert report.passed(1e-5), report
