"""Tests for the fixed-shape weight generator."""

import numpy as np
import pytest

from uhn import tensorcore as tc
from uhn.descriptors import DescriptorTable, TaskDescriptor, compute_stats
from uhn.executors import generated_uhn_forward
from uhn.families import generated_uhn_template, mlp
from uhn.generator import (
    UHNConfig,
    UHNParameters,
    generate_weights,
    init_uhn,
    parameter_shapes,
    repack_as_generated,
    task_structure_feature,
    uhn_param_count,
)


@pytest.fixture
def table():
    return DescriptorTable.build(mlp((4,), (6,), 3, name="tiny"), TaskDescriptor.for_dataset("toy_image"))


@pytest.fixture
def stats(table):
    return compute_stats([table])


def tiny_config(**overrides) -> UHNConfig:
    values = dict(index_freqs=8, hidden=6, blocks=1, structure_freqs=4, heads=2, use_tse=True, fourier_scale=1.0)
    values.update(overrides)
    return UHNConfig(**values)


class TestParameterCount:
    """Closed-form generator sizes."""

    @pytest.mark.parametrize(
        "config, expected",
        [
            (UHNConfig(index_freqs=2048, hidden=128, blocks=2), 612_117),
            (UHNConfig(index_freqs=1024, hidden=64, blocks=2), 158_613),
            (UHNConfig(index_freqs=2048, hidden=128, blocks=2, structure_freqs=32, heads=4, use_tse=True), 663_151),
            (UHNConfig(index_freqs=256), 135_445),
            (UHNConfig(index_freqs=512), 203_541),
            (UHNConfig(index_freqs=1024), 339_733),
            (UHNConfig(index_freqs=4096), 1_156_885),
            (UHNConfig(hidden=32), 156_117),
            (UHNConfig(hidden=64), 299_925),
            (UHNConfig(hidden=256), 1_334_805),
            (UHNConfig(blocks=0), 545_045),
            (UHNConfig(blocks=1), 578_581),
            (UHNConfig(blocks=3), 645_653),
        ],
    )
    def test_closed_form(self, config, expected):
        """Totals for the reference and capacity-grid settings."""
        assert uhn_param_count(config) == expected

    @pytest.mark.parametrize("use_tse", [False, True])
    def test_matches_materialized(self, stats, use_tse):
        """numel() of an initialized generator equals the closed form."""
        config = tiny_config(use_tse=use_tse)
        params = init_uhn(config, stats, np.random.default_rng(0))

        assert params.numel() == uhn_param_count(config)

    @pytest.mark.parametrize("encoding, width", [("positional", 640), ("raw", 10)])
    def test_ablation_input_width(self, encoding, width):
        """Positional and raw encodings change only the input width."""
        config = UHNConfig(index_encoding=encoding)

        assert config.input_width == width
        assert dict(parameter_shapes(config))["input.weight"] == (128, width)


class TestConfig:
    """Generator configuration checks."""

    def test_heads_divide_token_width(self):
        """With the encoder on, heads must divide 2 F_u."""
        assert "heads do not divide" in tiny_config(heads=3).validate()[0]

    def test_unknown_encoding(self):
        """Only the three encodings are known."""
        assert any("index_encoding" in e for e in UHNConfig(index_encoding="sinc").validate())

    def test_unknown_keys(self):
        """from_dict rejects unknown keys."""
        with pytest.raises(ValueError, match="Unknown generator config keys"):
            UHNConfig.from_dict({"width": 3})

    def test_init_rejects_invalid(self, stats):
        """init_uhn raises the first error."""
        with pytest.raises(ValueError, match="hidden"):
            init_uhn(UHNConfig(hidden=0), stats, np.random.default_rng(0))

    def test_missing_tensor(self, stats):
        """from_arrays needs every tensor."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))
        arrays = params.arrays()
        del arrays["readout.bias"]
        with pytest.raises(ValueError, match="missing generator tensor readout.bias"):
            UHNParameters.from_arrays(params.config, arrays, params.encoder)


class TestGeneration:
    """Forward pass of the generator."""

    def test_one_value_per_parameter(self, table, stats):
        """Output length is N."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))

        assert generate_weights(params, table).shape == (table.num_params,)

    def test_fresh_task_feature_is_zero(self, table, stats):
        """The last encoder layer starts at zero."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))
        feature = task_structure_feature(params, params.encoder.token_features(table.tokens))

        np.testing.assert_array_equal(feature.data, np.zeros(6))

    @pytest.mark.parametrize("chunk_size", [1, 7, 1000])
    def test_chunking_is_exact(self, table, stats, chunk_size):
        """Chunked and whole-table generation agree."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))
        params.tensors["tse.mlp2.weight"] = tc.parameter(np.random.default_rng(1).normal(size=(6, 6)))

        whole = generate_weights(params, table, chunk_size=table.num_params).data
        chunked = generate_weights(params, table, chunk_size=chunk_size).data

        np.testing.assert_allclose(chunked, whole, rtol=1e-12, atol=1e-12)

    def test_same_seed_same_weights(self, table, stats):
        """Initialization is a function of the seed."""
        a = generate_weights(init_uhn(tiny_config(), stats, np.random.default_rng(5)), table).data
        b = generate_weights(init_uhn(tiny_config(), stats, np.random.default_rng(5)), table).data

        np.testing.assert_array_equal(a, b)

    def test_registry_mismatch(self, table, stats):
        """Tables built with another registry are rejected."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0), registry_digest="0" * 64)
        with pytest.raises(ValueError, match="registry"):
            generate_weights(params, table)

    def test_bad_chunk_size(self, table, stats):
        """chunk_size must be positive."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))
        with pytest.raises(ValueError, match="chunk_size"):
            generate_weights(params, table, chunk_size=0)

    @pytest.mark.parametrize("encoding", ["positional", "raw"])
    def test_ablation_encodings(self, table, stats, encoding):
        """Other index encodings produce finite weights."""
        params = init_uhn(tiny_config(index_encoding=encoding, positional_freqs=3), stats, np.random.default_rng(0))

        assert np.isfinite(generate_weights(params, table).data).all()

    def test_gradients(self, table, stats):
        """Analytic generator gradients match central differences."""
        params = init_uhn(tiny_config(), stats, np.random.default_rng(0))
        params.tensors["tse.mlp2.weight"] = tc.parameter(np.random.default_rng(1).normal(size=(6, 6)))
        target = np.random.default_rng(2).normal(size=table.num_params)

        def loss(input_weight, mlp1_weight):
            params.tensors["input.weight"] = input_weight
            params.tensors["tse.mlp1.weight"] = mlp1_weight
            return tc.tsum((generate_weights(params, table) - target) ** 2)

        point = [params.tensors["input.weight"].data.copy(), params.tensors["tse.mlp1.weight"].data.copy()]

        assert tc.grad_check(loss, point, step=1e-5).passed(1e-5)


class TestRepack:
    """A block-free generator as a generated-hypernetwork parameter vector."""

    def test_same_outputs(self, table, stats):
        """The template forward reproduces the generator."""
        config = UHNConfig(index_freqs=8, hidden=6, blocks=0)
        params = init_uhn(config, stats, np.random.default_rng(0))
        template = generated_uhn_template(index_freqs=8, hidden=6, index_layers=0, task_branch=False, readout_activation="relu")

        theta = repack_as_generated(params, template)
        via_template = generated_uhn_forward(template, theta, table, params.encoder).data

        np.testing.assert_allclose(via_template, generate_weights(params, table).data, rtol=1e-10, atol=1e-12)

    def test_zero_theta(self, table, stats):
        """An all-zero generated hypernetwork outputs zeros."""
        params = init_uhn(UHNConfig(index_freqs=8, hidden=6, blocks=0), stats, np.random.default_rng(0))
        template = generated_uhn_template(index_freqs=8, hidden=6, index_layers=0, task_branch=False)
        theta = np.zeros(16 * 6 + 6 + 6 + 1)

        np.testing.assert_array_equal(generated_uhn_forward(template, theta, table, params.encoder).data, 0.0)

    def test_requires_block_free(self, stats):
        """Residual blocks have no template counterpart."""
        params = init_uhn(UHNConfig(index_freqs=8, hidden=6, blocks=1), stats, np.random.default_rng(0))
        template = generated_uhn_template(index_freqs=8, hidden=6, index_layers=0, task_branch=False, readout_activation="relu")
        with pytest.raises(ValueError, match="block-free"):
            repack_as_generated(params, template)
