"""Index, structure and task descriptors, their normalization and encodings.

Packing order of the index table matches :func:`uhn.archspec.param_layout`:
layers in forward order, components in listing order, and every component
flattened row-major over its axes.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .archspec import LayerSpec, ModelSpec, param_layout
from .config import FOURIER_SCALE, POSITIONAL_FREQS, STATS_COLUMNS
from .registry import Registry, default_registry

log = logging.getLogger(__name__)

INDEX_FIELDS = (
    "layer_idx",
    "layer_type",
    "param_type",
    "out_idx",
    "in_idx",
    "kernel_h_idx",
    "kernel_w_idx",
    "embedding_idx",
    "sequence_idx",
    "grid_idx",
)

GLOBAL_FIELDS = (
    "model_type",
    "num_layers",
    "cnn_stage_num",
    "num_encoders",
    "num_structure_freqs",
    "num_index_freqs",
)

TASK_FIELDS = ("task_type", "dataset_type")

LOCAL_FIELDS = (
    "layer_idx",
    "layer_type",
    "bias_type",
    "norm_type",
    "shortcut_type",
    "output_size",
    "input_size",
    "activation_type",
    "activation_param",
    "dropout_rate",
    "input_pooling_reshape_type",
    "group_num",
    "kernel_size",
    "stage_wise_pooling_type",
    "num_heads",
    "head_concat_type",
    "embedding_num",
    "max_sequence_length",
    "grid_size",
    "spline_order",
    "initialization_type",
)

# Names used in the normalization-stats file: index fields, then u = [s_g; t; s_l].
STATS_FIELDS = (
    tuple(f"index.{name}" for name in INDEX_FIELDS)
    + tuple(f"global.{name}" for name in GLOBAL_FIELDS)
    + tuple(f"task.{name}" for name in TASK_FIELDS)
    + tuple(f"local.{name}" for name in LOCAL_FIELDS)
)
INDEX_DIM = len(INDEX_FIELDS)
TOKEN_DIM = len(GLOBAL_FIELDS) + len(TASK_FIELDS) + len(LOCAL_FIELDS)

_COMMON = ("layer_idx", "layer_type", "output_size", "initialization_type")
ACTIVE_LOCAL_FIELDS = {
    "linear": _COMMON
    + ("bias_type", "norm_type", "shortcut_type", "input_size", "activation_type",
       "activation_param", "dropout_rate", "input_pooling_reshape_type"),
    "conv": _COMMON
    + ("bias_type", "norm_type", "shortcut_type", "input_size", "activation_type",
       "activation_param", "dropout_rate", "group_num", "kernel_size", "stage_wise_pooling_type"),
    "gcn": _COMMON
    + ("bias_type", "norm_type", "input_size", "activation_type", "activation_param", "dropout_rate"),
    "gat": _COMMON
    + ("bias_type", "norm_type", "input_size", "activation_type", "activation_param", "dropout_rate",
       "num_heads", "head_concat_type"),
    "embedding": _COMMON + ("dropout_rate", "embedding_num", "max_sequence_length"),
    "mha": _COMMON
    + ("bias_type", "norm_type", "shortcut_type", "input_size", "activation_type",
       "activation_param", "dropout_rate", "num_heads"),
    "kan": _COMMON
    + ("bias_type", "input_size", "activation_type", "activation_param", "grid_size", "spline_order"),
}

ACTIVE_GLOBAL_FIELDS = {
    "cnn": ("model_type", "num_layers", "cnn_stage_num"),
    "transformer": ("model_type", "num_layers", "num_encoders"),
    "uhn": ("model_type", "num_layers", "num_structure_freqs", "num_index_freqs"),
}

DATASET_TASKS = {
    "mnist": "image_classification",
    "cifar10": "image_classification",
    "toy_image": "image_classification",
    "ag_news": "text_classification",
    "imdb": "text_classification",
    "synthetic_text": "text_classification",
    "cora": "node_classification",
    "citeseer": "node_classification",
    "pubmed": "node_classification",
    "toy_graph": "node_classification",
}


def active_index_fields(axes: Iterable[str]) -> tuple:
    """Index fields populated for a component addressed by ``axes``."""
    return ("layer_idx", "layer_type", "param_type") + tuple(axes)


def active_global_fields(model_type: str) -> tuple:
    return ACTIVE_GLOBAL_FIELDS.get(model_type, ("model_type", "num_layers"))


# Descriptor records


@dataclass(frozen=True)
class IndexDescriptor:
    """Location of one scalar parameter; inapplicable fields are -1."""

    layer_idx: int
    layer_type: int
    param_type: int
    out_idx: int = -1
    in_idx: int = -1
    kernel_h_idx: int = -1
    kernel_w_idx: int = -1
    embedding_idx: int = -1
    sequence_idx: int = -1
    grid_idx: int = -1

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in INDEX_FIELDS], dtype=np.float64)

    @classmethod
    def from_vector(cls, row) -> "IndexDescriptor":
        return cls(*(int(value) for value in row))


@dataclass(frozen=True)
class TaskDescriptor:
    task_type: str
    dataset_type: str

    @classmethod
    def for_dataset(cls, dataset: str) -> "TaskDescriptor":
        """Classification datasets map to their task; everything else is a regression formula."""
        return cls(DATASET_TASKS.get(dataset, "regression"), dataset)

    def to_vector(self, registry: Optional[Registry] = None) -> np.ndarray:
        registry = registry or default_registry()
        return np.array(
            [registry.id("task_type", self.task_type), registry.id("dataset_type", self.dataset_type)],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class GlobalStructureDescriptor:
    model_type: int
    num_layers: int
    cnn_stage_num: int = 0
    num_encoders: int = 0
    num_structure_freqs: int = 0
    num_index_freqs: int = 0

    @classmethod
    def from_spec(cls, spec: ModelSpec, registry: Optional[Registry] = None) -> "GlobalStructureDescriptor":
        registry = registry or default_registry()
        values = {
            "model_type": registry.id("model_type", spec.model_type),
            "num_layers": spec.num_layers,
            "cnn_stage_num": spec.cnn_stage_num,
            "num_encoders": spec.num_encoders,
            "num_structure_freqs": spec.num_structure_freqs,
            "num_index_freqs": spec.num_index_freqs,
        }
        active = active_global_fields(spec.model_type)
        return cls(**{name: (value if name in active else 0) for name, value in values.items()})

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GLOBAL_FIELDS], dtype=np.float64)


@dataclass(frozen=True)
class LocalStructureDescriptor:
    """Per-layer attributes; fields inactive for the layer type are 0."""

    values: tuple

    @classmethod
    def from_layer(
        cls, index: int, layer: LayerSpec, registry: Optional[Registry] = None
    ) -> "LocalStructureDescriptor":
        registry = registry or default_registry()
        raw = {
            "layer_idx": index,
            "layer_type": registry.id("layer_type", layer.layer_type),
            "bias_type": registry.id("bias_type", "bias" if layer.bias else "none"),
            "norm_type": registry.id("norm_type", layer.norm),
            "shortcut_type": registry.id("shortcut_type", "identity" if layer.shortcut else "none"),
            "output_size": layer.output_size,
            "input_size": layer.input_size,
            "activation_type": registry.id("activation_type", layer.activation),
            "activation_param": layer.activation_param,
            "dropout_rate": layer.dropout,
            "input_pooling_reshape_type": registry.id("input_pooling_reshape_type", layer.pooling),
            "group_num": layer.group_num,
            "kernel_size": layer.kernel_size,
            "stage_wise_pooling_type": registry.id("stage_wise_pooling_type", layer.stage_pooling),
            "num_heads": layer.num_heads,
            "head_concat_type": registry.id("head_concat_type", layer.head_concat),
            "embedding_num": layer.embedding_num,
            "max_sequence_length": layer.max_seq_len,
            "grid_size": layer.grid_size,
            "spline_order": layer.spline_order,
            "initialization_type": registry.id("initialization_type", layer.init_type),
        }
        active = ACTIVE_LOCAL_FIELDS[layer.layer_type]
        return cls(tuple(float(raw[name]) if name in active else 0.0 for name in LOCAL_FIELDS))

    def to_vector(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


# Table construction


def build_param_descriptors(spec: ModelSpec, registry: Optional[Registry] = None) -> np.ndarray:
    """Raw index descriptors, one row per parameter in packing order (N x 10)."""
    registry = registry or default_registry()
    layout = param_layout(spec)
    position = {name: i for i, name in enumerate(INDEX_FIELDS)}
    table = np.full((layout.total, INDEX_DIM), -1.0)
    for component in layout.components:
        layer = spec.layers[component.layer_index]
        block = table[component.offset : component.stop]
        block[:, 0] = component.layer_index
        block[:, 1] = registry.id("layer_type", layer.layer_type)
        block[:, 2] = registry.id("param_type", component.name)
        grid = np.indices(component.shape).reshape(len(component.shape), -1)
        for axis, name in enumerate(component.axes):
            block[:, position[name]] = grid[axis]
    return table


def build_layer_descriptors(
    spec: ModelSpec, task: TaskDescriptor, registry: Optional[Registry] = None
) -> np.ndarray:
    """Per-layer task-structure descriptors u_j = [s_g; t; s_l,j] (L x 29)."""
    if not spec.layers:
        raise ValueError("model has no layers")
    registry = registry or default_registry()
    prefix = np.concatenate(
        [GlobalStructureDescriptor.from_spec(spec, registry).to_vector(), task.to_vector(registry)]
    )
    rows = [
        np.concatenate([prefix, LocalStructureDescriptor.from_layer(j, layer, registry).to_vector()])
        for j, layer in enumerate(spec.layers)
    ]
    return np.stack(rows)


@dataclass
class DescriptorTable:
    """Raw descriptors of one (model, task) pair."""

    spec: ModelSpec
    task: TaskDescriptor
    index: np.ndarray  # N x 10
    tokens: np.ndarray  # L x 29
    registry_digest: str = ""

    @property
    def num_params(self) -> int:
        return self.index.shape[0]

    @classmethod
    def build(
        cls, spec: ModelSpec, task: TaskDescriptor, registry: Optional[Registry] = None
    ) -> "DescriptorTable":
        registry = registry or default_registry()
        return cls(
            spec=spec,
            task=task,
            index=build_param_descriptors(spec, registry),
            tokens=build_layer_descriptors(spec, task, registry),
            registry_digest=registry.digest,
        )


class DescriptorCache:
    """Tables keyed by (spec, task), built once."""

    def __init__(self, registry: Optional[Registry] = None):
        self.registry = registry or default_registry()
        self._tables: dict = {}

    def get(self, spec: ModelSpec, task: TaskDescriptor) -> DescriptorTable:
        key = (spec, task)
        if key not in self._tables:
            self._tables[key] = DescriptorTable.build(spec, task, self.registry)
            log.debug("Built descriptor table for %s (%d params)", spec.name, self._tables[key].num_params)
        return self._tables[key]

    def __len__(self) -> int:
        return len(self._tables)


# Normalization


@dataclass
class NormalizationStats:
    """Per-field bounds; mean (min+max)/2 and scale (max-min)/(2*sqrt(3))."""

    fields: tuple
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if not len(self.fields) == self.minimum.size == self.maximum.size:
            raise ValueError(
                f"stats need one bound per field: {len(self.fields)} fields, "
                f"{self.minimum.size} minima, {self.maximum.size} maxima"
            )
        bad = np.flatnonzero(self.maximum < self.minimum)
        if bad.size:
            raise ValueError(f"stats field {self.fields[bad[0]]}: max < min")

    @property
    def mean(self) -> np.ndarray:
        return (self.minimum + self.maximum) / 2.0

    @property
    def scale(self) -> np.ndarray:
        return (self.maximum - self.minimum) / (2.0 * math.sqrt(3.0))

    @property
    def index(self) -> "NormalizationStats":
        return self._slice(0, INDEX_DIM)

    @property
    def tokens(self) -> "NormalizationStats":
        return self._slice(INDEX_DIM, INDEX_DIM + TOKEN_DIM)

    def _slice(self, start: int, stop: int) -> "NormalizationStats":
        return NormalizationStats(self.fields[start:stop], self.minimum[start:stop], self.maximum[start:stop])


def compute_stats(tables: Iterable[DescriptorTable]) -> NormalizationStats:
    """Bounds of every index and task-structure field over a set of tables."""
    tables = list(tables)
    if not tables:
        raise ValueError("compute_stats needs at least one descriptor table")
    index_min = np.min([t.index.min(axis=0) for t in tables], axis=0)
    index_max = np.max([t.index.max(axis=0) for t in tables], axis=0)
    token_min = np.min([t.tokens.min(axis=0) for t in tables], axis=0)
    token_max = np.max([t.tokens.max(axis=0) for t in tables], axis=0)
    return NormalizationStats(
        STATS_FIELDS,
        np.concatenate([index_min, token_min]),
        np.concatenate([index_max, token_max]),
    )


def normalize(x, stats: NormalizationStats) -> np.ndarray:
    """(x - mean) / scale per field; fields with zero scale map to 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(stats.fields):
        raise ValueError(f"descriptor has {x.shape[-1]} fields, stats describe {len(stats.fields)}")
    scale = stats.scale
    safe = np.where(scale > 0, scale, 1.0)
    return np.where(scale > 0, (x - stats.mean) / safe, 0.0)


def write_stats(stats: NormalizationStats, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=STATS_COLUMNS)
        writer.writeheader()
        for name, low, high in zip(stats.fields, stats.minimum, stats.maximum):
            writer.writerow({"field": name, "min": repr(float(low)), "max": repr(float(high))})


def read_stats(path: Path) -> NormalizationStats:
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return NormalizationStats(
        tuple(row["field"] for row in rows),
        np.array([float(row["min"]) for row in rows]),
        np.array([float(row["max"]) for row in rows]),
    )


# Encodings


def fourier_map(x_hat, frequencies: np.ndarray) -> np.ndarray:
    """Gaussian Fourier features [cos(B x), sin(B x)] along the last axis."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if frequencies.ndim != 2 or frequencies.shape[1] != x_hat.shape[-1]:
        raise ValueError(
            f"frequency matrix {frequencies.shape} does not match descriptor width {x_hat.shape[-1]}"
        )
    projected = x_hat @ frequencies.T
    return np.concatenate([np.cos(projected), np.sin(projected)], axis=-1)


def positional_frequencies(n_freqs: int, scale: float) -> np.ndarray:
    """omega_j = scale ** (j / n_freqs) for j = 0..n_freqs-1."""
    if n_freqs < 1 or scale <= 0:
        raise ValueError(f"positional encoding needs n_freqs >= 1 and scale > 0, got {n_freqs}, {scale}")
    return scale ** (np.arange(n_freqs) / n_freqs)


def positional_map(x_hat, n_freqs: int = POSITIONAL_FREQS, scale: float = FOURIER_SCALE) -> np.ndarray:
    """Concatenation over j of [cos(omega_j x), sin(omega_j x)]."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    blocks = []
    for omega in positional_frequencies(n_freqs, scale):
        blocks.append(np.cos(omega * x_hat))
        blocks.append(np.sin(omega * x_hat))
    return np.concatenate(blocks, axis=-1)


def positional_matrix(n_freqs: int, scale: float, dim: int) -> np.ndarray:
    """Frequency matrix whose Fourier map is a column permutation of :func:`positional_map`."""
    omegas = positional_frequencies(n_freqs, scale)
    return np.kron(omegas[:, None], np.eye(dim))


def raw_map(x_hat) -> np.ndarray:
    return np.asarray(x_hat, dtype=np.float64)


def sample_fourier_matrix(rows: int, cols: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, scale, size=(rows, cols))


@dataclass
class DescriptorEncoder:
    """Frozen normalization constants and frequency matrices shared by every level."""

    stats: NormalizationStats
    index_encoding: str = "gaussian"
    index_frequencies: Optional[np.ndarray] = None  # F_v x 10, or positional matrix
    structure_frequencies: Optional[np.ndarray] = None  # F_u x 29

    def normalized_index(self, index: np.ndarray) -> np.ndarray:
        return normalize(index, self.stats.index)

    def normalized_tokens(self, tokens: np.ndarray) -> np.ndarray:
        return normalize(tokens, self.stats.tokens)

    def index_features(self, index: np.ndarray) -> np.ndarray:
        """Materialized index features; the generator avoids this for large N."""
        x_hat = self.normalized_index(index)
        if self.index_encoding == "raw":
            return raw_map(x_hat)
        return fourier_map(x_hat, self.index_frequencies)

    def token_features(self, tokens: np.ndarray) -> np.ndarray:
        if self.structure_frequencies is None:
            raise ValueError("encoder has no structure frequency matrix")
        return fourier_map(self.normalized_tokens(tokens), self.structure_frequencies)
