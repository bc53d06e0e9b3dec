"""Tests for the categorical registry."""

import pytest

from uhn.registry import Registry, default_registry

HEADER = "namespace,name,id\n"


class TestDefaultRegistry:
    """The packaged registry file."""

    def test_known_ids(self):
        """Spot-check stable IDs."""
        registry = default_registry()

        assert registry.id("model_type", "mlp") == 0
        assert registry.id("task_type", "regression") == 3
        assert registry.id("dataset_type", "toy_image") == 28

    def test_name_inverts_id(self):
        """name() is the inverse of id()."""
        registry = default_registry()
        for name in registry.names("layer_type"):
            assert registry.name("layer_type", registry.id("layer_type", name)) == name

    def test_ids_consecutive(self):
        """Every namespace is numbered 0..n-1."""
        registry = default_registry()
        for namespace, mapping in registry.entries.items():
            assert sorted(mapping.values()) == list(range(len(mapping))), namespace

    def test_digest_stable(self):
        """Loading twice gives the same digest."""
        fresh = Registry.load()

        assert fresh.digest == default_registry().digest
        assert len(fresh.digest) == 64

    def test_unknown_value(self):
        """Unknown names list the known ones."""
        with pytest.raises(ValueError, match="Unknown dataset_type value"):
            default_registry().id("dataset_type", "svhn")

    def test_unknown_namespace(self):
        """Unknown namespaces are rejected."""
        with pytest.raises(ValueError, match="Unknown registry namespace"):
            default_registry().id("optimizer", "adam")


class TestRegistryFile:
    """Validation of registry text."""

    def test_comments_and_blank_lines_skipped(self):
        """Comment lines do not count as rows."""
        registry = Registry.from_text("# v1\n\n" + HEADER + "norm_type,none,0\nnorm_type,layer,1\n")

        assert registry.names("norm_type") == ["none", "layer"]

    def test_bad_header(self):
        """The header must match the schema."""
        with pytest.raises(ValueError, match="header"):
            Registry.from_text("kind,value,id\nnorm_type,none,0\n")

    def test_duplicate_entry(self):
        """A name may appear once per namespace."""
        with pytest.raises(ValueError, match="Duplicate"):
            Registry.from_text(HEADER + "norm_type,none,0\nnorm_type,none,1\n")

    def test_non_consecutive_ids(self):
        """Gaps in IDs are rejected."""
        with pytest.raises(ValueError, match="non-consecutive"):
            Registry.from_text(HEADER + "norm_type,none,0\nnorm_type,layer,2\n")

    def test_digest_changes_with_content(self):
        """Any edit changes the digest."""
        a = Registry.from_text(HEADER + "norm_type,none,0\n")
        b = Registry.from_text(HEADER + "norm_type,group,0\n")

        assert a.digest != b.digest

    def test_load_from_path(self, tmp_path):
        """load() reads a file and records its source."""
        path = tmp_path / "registry.csv"
        path.write_text(HEADER + "bias_type,none,0\nbias_type,bias,1\n", encoding="utf-8")

        registry = Registry.load(path)

        assert registry.id("bias_type", "bias") == 1
        assert registry.source == str(path)
