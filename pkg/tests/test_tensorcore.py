"""Tests for the reverse-mode tensor core."""

import numpy as np
import pytest

from uhn import tensorcore as tc


def _grads(out, *leaves):
    grads = tc.backward(None, out)
    return [grads[leaf] for leaf in leaves]


class TestBackward:
    """Adjoints of simple compositions."""

    def test_product_rule(self):
        """d(xy)/dx = y and d(xy)/dy = x."""
        x, y = tc.parameter(3.0), tc.parameter(4.0)
        gx, gy = _grads(x * y, x, y)

        assert gx == 4.0
        assert gy == 3.0

    def test_constant_has_zero_gradient(self):
        """A leaf that does not reach the output gets zeros."""
        x = tc.parameter(np.ones(3))
        out = tc.tsum(x * 0.0) + 5.0
        (gx,) = _grads(out, x)

        np.testing.assert_array_equal(gx, np.zeros(3))

    def test_shared_subexpression_accumulates(self):
        """x used twice sums both paths."""
        x = tc.parameter(2.0)
        (gx,) = _grads(x * x + x, x)

        assert gx == 5.0

    def test_non_scalar_output_rejected(self):
        """backward needs a scalar."""
        x = tc.parameter(np.ones(2))
        with pytest.raises(ValueError, match="0-dimensional"):
            tc.backward(None, x * 2.0)

    def test_broadcast_gradient_is_reduced(self):
        """A bias broadcast over rows receives the row sum."""
        x = tc.Tensor(np.ones((4, 3)))
        b = tc.parameter(np.zeros(3))
        (gb,) = _grads(tc.tsum(x + b), b)

        np.testing.assert_array_equal(gb, np.full(3, 4.0))


class TestGradCheck:
    """Finite-difference comparison."""

    def test_quadratic(self):
        """||x||^2 is exact up to roundoff."""
        report = tc.grad_check(lambda x: tc.tsum(x * x), np.array([1.0, -2.0, 0.5, 3.0]), step=1e-3)

        assert report.passed(1e-9)

    def test_cross_entropy_softmax(self, rng):
        """Cross-entropy of softmax(Wx) on a 3-class toy."""
        x = rng.normal(size=(4, 5))
        labels = np.array([0, 2, 1, 2])

        def loss(w):
            logits = tc.matmul(x, tc.transpose(w))
            return -tc.mean(tc.log_softmax(logits)[np.arange(4), labels])

        assert tc.grad_check(loss, rng.normal(size=(3, 5))).passed(1e-6)

    def test_zero_step_rejected(self):
        """step must be positive."""
        with pytest.raises(ValueError, match="step"):
            tc.grad_check(lambda x: tc.tsum(x), np.ones(2), step=0.0)

    def test_reports_non_finite(self):
        """log at a non-positive point is reported, not raised."""
        report = tc.grad_check(lambda x: tc.tsum(tc.log(x)), np.array([-1.0, 1.0]))

        assert not report.finite
        assert not report.passed(1.0)


PRIMITIVES = {
    "exp": lambda x: tc.tsum(tc.exp(x)),
    "sin_cos": lambda x: tc.tsum(tc.sin(x) * tc.cos(x)),
    "tanh": lambda x: tc.tsum(tc.tanh(x)),
    "sigmoid": lambda x: tc.tsum(tc.sigmoid(x)),
    "silu": lambda x: tc.tsum(tc.silu(x)),
    "elu": lambda x: tc.tsum(tc.elu(x)),
    "leaky_relu": lambda x: tc.tsum(tc.leaky_relu(x, 0.1) * x),
    "softmax": lambda x: tc.tsum(tc.softmax(x, axis=-1) * np.arange(4.0)),
    "layer_norm": lambda x: tc.tsum(tc.layer_norm(x) * np.arange(4.0)),
    "std": lambda x: tc.std(x),
    "cumsum": lambda x: tc.tsum(tc.cumsum(x, axis=-1) * np.arange(4.0)),
    "transpose": lambda x: tc.tsum(tc.transpose(x) * np.arange(3.0)),
    "getitem": lambda x: tc.tsum(x[1:, ::2] * 2.0),
    "gather": lambda x: tc.tsum(tc.gather(x, np.array([0, 2, 2]), axis=0)),
    "power": lambda x: tc.tsum(tc.power(x * x + 1.0, 1.5)),
}


class TestPrimitiveAdjoints:
    """Each primitive against central differences."""

    @pytest.mark.parametrize("name", sorted(PRIMITIVES))
    def test_matches_finite_differences(self, name, rng):
        """Analytic and numeric gradients agree."""
        point = rng.normal(size=(3, 4)) + 0.05
        assert tc.grad_check(PRIMITIVES[name], point).passed(1e-6)

    def test_matmul(self, rng):
        """Both matmul operands."""
        report = tc.grad_check(lambda a, b: tc.tsum(tc.matmul(a, b) ** 2), [rng.normal(size=(2, 3)), rng.normal(size=(3, 4))])
        assert report.passed(1e-6)

    def test_conv2d(self, rng):
        """Input and kernel gradients of a padded, strided convolution."""
        report = tc.grad_check(
            lambda x, w: tc.tsum(tc.conv2d(x, w, stride=2, padding=1) ** 2),
            [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))],
        )
        assert report.passed(1e-6)

    def test_group_norm(self, rng):
        """Group normalization with affine parameters."""
        report = tc.grad_check(
            lambda x, w, b: tc.tsum(tc.group_norm(x, 2, w, b) * np.arange(16.0).reshape(1, 4, 2, 2)),
            [rng.normal(size=(1, 4, 2, 2)), rng.normal(size=4), rng.normal(size=4)],
        )
        assert report.passed(1e-6)

    def test_pooling(self, rng):
        """Average and max pooling."""
        x = rng.normal(size=(1, 1, 4, 4))
        assert tc.grad_check(lambda t: tc.tsum(tc.avg_pool2d(t, 2) ** 2), x).passed(1e-6)
        assert tc.grad_check(lambda t: tc.tsum(tc.max_pool2d(t, 2) ** 2), x).passed(1e-6)

    def test_scatter_add(self, rng):
        """Rows summed into buckets."""
        report = tc.grad_check(lambda s: tc.tsum(tc.scatter_add(s, np.array([0, 1, 0]), 2) ** 2), rng.normal(size=(3, 2)))
        assert report.passed(1e-6)


class TestFourierLinear:
    """Feature-free Gaussian Fourier linear map."""

    def test_matches_materialized_features(self, rng):
        """Equals [cos(xB^T), sin(xB^T)] W^T."""
        x, b, w = rng.normal(size=(7, 3)), rng.normal(size=(5, 3)), rng.normal(size=(4, 10))
        proj = x @ b.T
        expected = np.concatenate([np.cos(proj), np.sin(proj)], axis=1) @ w.T

        out = tc.fourier_linear(x, b, w, block_rows=3)

        np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_gradient(self, rng):
        """Weight gradient through the blockwise adjoint."""
        x, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        report = tc.grad_check(lambda w: tc.tsum(tc.fourier_linear(x, b, w, block_rows=2) ** 2), rng.normal(size=(2, 8)))
        assert report.passed(1e-6)

    def test_width_mismatch(self, rng):
        """Weight columns must equal twice the frequency count."""
        with pytest.raises(ValueError, match="features"):
            tc.fourier_linear(rng.normal(size=(2, 3)), rng.normal(size=(4, 3)), np.zeros((2, 5)))


class TestPrecision:
    """Global precision switch."""

    def test_float32_mode(self):
        """New tensors follow the selected dtype."""
        tc.set_precision("float32")
        assert tc.Tensor(np.ones(2)).data.dtype == np.float32

    def test_unknown_precision(self):
        """Only float64 and float32 are known."""
        with pytest.raises(ValueError, match="precision"):
            tc.set_precision("float16")


class TestDropout:
    """Seeded inverted dropout."""

    def test_identity_without_rng(self):
        """No generator means no dropout."""
        x = tc.Tensor(np.ones(10))
        assert tc.dropout(x, 0.5, None) is x

    def test_seeded_and_rescaled(self):
        """Kept entries are scaled by 1 / keep; same seed gives the same mask."""
        a = tc.dropout(np.ones(1000), 0.5, np.random.default_rng(3)).data
        b = tc.dropout(np.ones(1000), 0.5, np.random.default_rng(3)).data

        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}
