"""Tests for model families, model-set splits and the chunked baseline count."""

import math

import numpy as np
import pytest

from uhn.families import (
    FAMILIES,
    build_model_set,
    chunked_baseline_bound,
    chunked_baseline_count,
    default_split_sizes,
    load_model_set,
    named_model,
    optimal_chunk_size,
    sample_architecture,
    save_model_set,
    split_model_set,
)


class TestSampling:
    """Architecture draws follow the family laws."""

    def test_mixed_width(self, rng):
        """Depths fixed at (1, 6, 6, 6); widths in range and divisible by 4."""
        for _ in range(20):
            spec = sample_architecture("cnn_mixed_width", rng)
            convs = [l for l in spec.layers if l.layer_type == "conv"]
            widths = sorted({l.output_size for l in convs})

            assert len(convs) == 19
            assert all(w % 4 == 0 for w in widths)
            assert 16 <= convs[0].output_size <= 32
            assert 64 <= convs[-1].output_size <= 128

    def test_mixed_depth(self, rng):
        """Stages 2 to 4 have 6 to 10 blocks at fixed widths."""
        for _ in range(20):
            spec = sample_architecture("cnn_mixed_depth", rng)
            convs = [l for l in spec.layers if l.layer_type == "conv"]

            assert 1 + 18 <= len(convs) <= 1 + 30
            assert {l.output_size for l in convs} == {16, 32, 64}

    def test_transformer_mixed(self, rng):
        """Heads divide the width; 1 to 4 encoders of 1 to 3 feed-forward layers."""
        for _ in range(20):
            spec = sample_architecture("transformer_mixed", rng)
            mha = [l for l in spec.layers if l.layer_type == "mha"]

            assert 1 <= spec.num_encoders <= 4
            assert len(mha) == spec.num_encoders
            assert mha[0].output_size % mha[0].num_heads == 0
            assert 32 <= mha[0].output_size <= 128

    @pytest.mark.parametrize("family", FAMILIES)
    def test_samples_are_valid(self, family, rng):
        """Every draw composes."""
        assert sample_architecture(family, rng).validate() == []

    def test_unknown_family(self, rng):
        """Unknown names list the known families."""
        with pytest.raises(ValueError, match="Unknown model family"):
            sample_architecture("resnet", rng)

    def test_same_seed_same_models(self):
        """Model sets are reproducible from the seed."""
        a = build_model_set("cnn_mixed_width_toy", 5, np.random.default_rng(7), in_channels=3, image_size=8)
        b = build_model_set("cnn_mixed_width_toy", 5, np.random.default_rng(7), in_channels=3, image_size=8)

        assert a == b


class TestSplits:
    """Model-set splits."""

    @pytest.mark.parametrize(
        "total, expected",
        [(100, (80, 20, 20, 20)), (1000, (950, 50, 50, 50))],
    )
    def test_default_sizes(self, total, expected):
        """Known |M| map to the fixed split sizes."""
        assert default_split_sizes(total) == expected

    def test_unknown_size(self):
        """Other sizes need explicit splits."""
        with pytest.raises(ValueError, match="No default split"):
            default_split_sizes(7)

    def test_disjoint_and_nested(self, rng):
        """Train and test partition M; val and hold-in are disjoint subsets of train."""
        models = list(range(100))
        split = split_model_set(models, (80, 20, 20, 20), rng)

        assert sorted(split.train_idx + split.test_idx) == models
        assert set(split.val_idx) <= set(split.train_idx)
        assert set(split.holdin_idx) <= set(split.train_idx)
        assert not set(split.val_idx) & set(split.holdin_idx)
        assert len(split.val_idx) == len(split.holdin_idx) == 20

    def test_two_models(self, rng):
        """|M| = 2 with one train and one test model."""
        split = split_model_set(["a", "b"], (1, 1, 0, 1), rng)

        assert len(split.train) == len(split.test) == 1
        assert split.holdin == split.train
        assert split.val == []

    def test_sizes_must_cover_model_set(self, rng):
        """train + test must equal |M|."""
        with pytest.raises(ValueError, match="must equal"):
            split_model_set(list(range(10)), (5, 3, 1, 1), rng)

    def test_inner_sizes_bounded(self, rng):
        """val + hold-in cannot exceed train."""
        with pytest.raises(ValueError, match="exceeds"):
            split_model_set(list(range(10)), (5, 5, 3, 3), rng)

    def test_json_round_trip(self, tmp_path, rng):
        """Saved model sets reload with seed and registry digest."""
        models = build_model_set("cnn_mixed_width_toy", 6, rng, in_channels=3, image_size=8)
        split = split_model_set(models, (4, 2, 1, 2), rng)
        path = tmp_path / "model_set.json"

        save_model_set(split, path, seed=11, registry_digest="abc")
        loaded, seed, digest = load_model_set(path)

        assert loaded == split
        assert (seed, digest) == (11, "abc")


class TestChunkedBaseline:
    """N_H = N_H0 + o c + (N / c) d_emb."""

    def test_no_embedding(self):
        """d_emb = 0 and c = 1 leaves N_H0 + o."""
        assert chunked_baseline_count(1000, 1, 0, 7, 50) == 57

    def test_bound_attained(self):
        """Equality at o = d_emb and c = sqrt(N)."""
        n, d = 4096, 16
        c = int(math.sqrt(n))

        assert optimal_chunk_size(n, d, d) == c
        assert chunked_baseline_count(n, c, d, d, 10) == pytest.approx(chunked_baseline_bound(n, d, d, 10))

    def test_bound_holds(self, rng):
        """No divisor beats the bound."""
        for _ in range(50):
            n = int(rng.integers(1, 5000))
            d_emb, o, n_h0 = (int(v) for v in rng.integers(1, 100, size=3))
            bound = chunked_baseline_bound(n, d_emb, o, n_h0)
            for c in (c for c in range(1, n + 1) if n % c == 0):
                assert chunked_baseline_count(n, c, d_emb, o, n_h0) >= bound - 1e-9

    def test_chunk_must_divide(self):
        """Non-divisors are rejected."""
        with pytest.raises(ValueError, match="does not divide"):
            chunked_baseline_count(10, 3, 1, 1, 0)


class TestNamedModels:
    """Builder lookup by name."""

    @pytest.mark.parametrize("name", ["cnn20_cifar10", "gat_pubmed", "kan_g5_ellipj", "gcn_toy_graph"])
    def test_known(self, name):
        """Known names resolve to valid specs."""
        assert named_model(name).validate() == []

    def test_unknown(self):
        """Unknown names list the known ones."""
        with pytest.raises(ValueError, match="Unknown model"):
            named_model("vgg16")
