"""Base-model builders, model-family sampling and model-set splits."""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .archspec import LayerSpec, ModelSpec
from .config import (
    MODEL_SET_SPLITS,
    TEMPLATE_HEADS,
    TEMPLATE_HIDDEN,
    TEMPLATE_INDEX_FREQS,
    TEMPLATE_INDEX_LAYERS,
    TEMPLATE_LEAKY_SLOPE,
    TEMPLATE_STRUCTURE_FREQS,
    TEXT_CLASSES,
    TEXT_LENGTH,
    TEXT_VOCAB,
    TOY_GRAPH_CLASSES,
    TOY_GRAPH_FEATURES,
    TOY_IMAGE_CHANNELS,
    TOY_IMAGE_CLASSES,
    TOY_IMAGE_SIZE,
)

LEAKY = 0.1

# name: (nodes, features, classes)
CITATION_GRAPHS = {
    "cora": (2708, 1433, 7),
    "citeseer": (3327, 3703, 6),
    "pubmed": (19717, 500, 3),
}

FAMILIES = (
    "cnn_mixed_depth",
    "cnn_mixed_width",
    "cnn_mixed_depth_width",
    "transformer_mixed",
    "cnn_mixed_width_toy",
)


# Builders


def mlp(
    input_shape: Sequence[int],
    hidden: Sequence[int],
    num_classes: int,
    slope: float = LEAKY,
    norm: bool = True,
    shortcut: bool = True,
    dropout: float = 0.0,
    name: str = "mlp",
) -> ModelSpec:
    """Pre-activation MLP; the first layer sees the raw (flattened) input."""
    d_in = math.prod(input_shape)
    widths = [d_in] + list(hidden) + [num_classes]
    layers = []
    for i in range(len(widths) - 1):
        first = i == 0
        layers.append(
            LayerSpec(
                "linear",
                input_size=widths[i],
                output_size=widths[i + 1],
                pooling="flatten" if first and len(input_shape) > 1 else "none",
                activation="none" if first else "leaky_relu",
                activation_param=0.0 if first else slope,
                norm="layer_norm" if norm and not first else "none",
                shortcut=shortcut and not first and widths[i] == widths[i + 1],
                dropout=dropout,
            )
        )
    return ModelSpec("mlp", tuple(layers), tuple(input_shape), name=name)


def mlp_mnist() -> ModelSpec:
    return mlp((1, 28, 28), (128, 128), 10, name="mlp_mnist")


def cnn(
    stage_depths: Sequence[int],
    widths: Sequence[int],
    in_channels: int,
    num_classes: int,
    image_size: int,
    groups: int = 4,
    slope: float = LEAKY,
    name: str = "cnn",
) -> ModelSpec:
    """Four-stage pre-activation CNN with stride-2 downsampling at stages 2 and 3."""
    layers = []
    channels = in_channels
    for stage, (depth, width) in enumerate(zip(stage_depths, widths)):
        for i in range(depth):
            first_overall = stage == 0 and i == 0
            stage_entry = i == 0 and stage in (0, 2, 3)
            layers.append(
                LayerSpec(
                    "conv",
                    input_size=channels,
                    output_size=width,
                    kernel_size=3,
                    activation="none" if first_overall else "leaky_relu",
                    activation_param=0.0 if first_overall else slope,
                    norm="none" if first_overall else "group_norm",
                    group_num=0 if first_overall else groups,
                    stage_pooling="stride" if i == 0 and stage in (2, 3) else "none",
                    shortcut=not stage_entry and channels == width,
                )
            )
            channels = width
    layers.append(
        LayerSpec("linear", input_size=channels, output_size=num_classes, pooling="adaptive_avg")
    )
    return ModelSpec(
        "cnn",
        tuple(layers),
        (in_channels, image_size, image_size),
        cnn_stage_num=len(stage_depths),
        name=name,
    )


def cnn8_mnist() -> ModelSpec:
    return cnn((1, 2, 2, 2), (16, 16, 32, 64), 1, 10, 28, name="cnn8_mnist")


def cnn_cifar(n: int = 6) -> ModelSpec:
    """CNN-20/32/44/56 for n in {6, 10, 14, 18}."""
    return cnn((1, n, n, n), (16, 16, 32, 64), 3, 10, 32, name=f"cnn{3 * n + 2}_cifar10")


def cnn_toy() -> ModelSpec:
    return cnn((1, 1, 1, 1), (8, 8, 16, 16), TOY_IMAGE_CHANNELS, TOY_IMAGE_CLASSES, TOY_IMAGE_SIZE, name="cnn_toy")


def gcn(
    in_features: int,
    num_classes: int,
    hidden: int = 64,
    slope: float = LEAKY,
    dropout: float = 0.5,
    name: str = "gcn",
) -> ModelSpec:
    layers = (
        LayerSpec("gcn", input_size=in_features, output_size=hidden, dropout=dropout, init_type="glorot"),
        LayerSpec(
            "gcn",
            input_size=hidden,
            output_size=num_classes,
            activation="leaky_relu",
            activation_param=slope,
            dropout=dropout,
            init_type="glorot",
        ),
    )
    return ModelSpec("gcn", layers, (in_features,), name=name)


def gat(
    in_features: int,
    num_classes: int,
    heads: int = 8,
    head_dim: int = 8,
    out_heads: int = 1,
    dropout: float = 0.6,
    name: str = "gat",
) -> ModelSpec:
    layers = (
        LayerSpec(
            "gat",
            input_size=in_features,
            output_size=heads * head_dim,
            num_heads=heads,
            head_concat="concat",
            dropout=dropout,
            init_type="glorot",
        ),
        LayerSpec(
            "gat",
            input_size=heads * head_dim,
            output_size=out_heads * num_classes,
            num_heads=out_heads,
            head_concat="average" if out_heads > 1 else "concat",
            activation="elu",
            activation_param=1.0,
            dropout=dropout,
            init_type="glorot",
        ),
    )
    return ModelSpec("gat", layers, (in_features,), name=name)


def citation_gcn(dataset: str) -> ModelSpec:
    _, features, classes = CITATION_GRAPHS[dataset]
    return gcn(features, classes, name=f"gcn_{dataset}")


def citation_gat(dataset: str) -> ModelSpec:
    _, features, classes = CITATION_GRAPHS[dataset]
    out_heads = 8 if dataset == "pubmed" else 1
    return gat(features, classes, out_heads=out_heads, name=f"gat_{dataset}")


def transformer(
    vocab: int,
    width: int,
    heads: int,
    ff_layers: Sequence[int],
    num_classes: int,
    max_len: int,
    seq_len: Optional[int] = None,
    dropout: float = 0.2,
    slope: float = LEAKY,
    name: str = "transformer",
) -> ModelSpec:
    """Embedding, one MHA plus ``ff_layers[j]`` linears per encoder, first-token classifier."""
    layers = [
        LayerSpec(
            "embedding",
            output_size=width,
            embedding_num=vocab,
            max_seq_len=max_len,
            dropout=dropout,
            init_type="normal",
        )
    ]
    for j, depth in enumerate(ff_layers):
        first = j == 0
        layers.append(
            LayerSpec(
                "mha",
                input_size=width,
                output_size=width,
                num_heads=heads,
                shortcut=True,
                dropout=dropout,
                activation="none" if first else "leaky_relu",
                activation_param=0.0 if first else slope,
                norm="none" if first else "layer_norm",
            )
        )
        for _ in range(depth):
            layers.append(
                LayerSpec(
                    "linear",
                    input_size=width,
                    output_size=width,
                    shortcut=True,
                    dropout=dropout,
                    activation="leaky_relu",
                    activation_param=slope,
                    norm="layer_norm",
                )
            )
    layers.append(LayerSpec("linear", input_size=width, output_size=num_classes, pooling="first_token"))
    return ModelSpec(
        "transformer",
        tuple(layers),
        (seq_len or max_len,),
        num_encoders=len(ff_layers),
        name=name,
    )


def transformer_ag_news() -> ModelSpec:
    return transformer(5000, 64, 2, (2, 2), 4, 128, dropout=0.2, name="transformer2l_ag_news")


def transformer_imdb() -> ModelSpec:
    return transformer(5000, 64, 2, (2,), 2, 512, dropout=0.4, name="transformer1l_imdb")


def text_transformer_toy() -> ModelSpec:
    """Desk-scale stand-in exercising embedding and attention on synthetic tokens."""
    return transformer(
        TEXT_VOCAB, 32, 2, (1,), TEXT_CLASSES, TEXT_LENGTH, dropout=0.0, name="transformer_toy"
    )


def kan(widths: Sequence[int], grid_size: int = 5, spline_order: int = 3, name: str = "kan") -> ModelSpec:
    layers = tuple(
        LayerSpec(
            "kan",
            input_size=widths[i],
            output_size=widths[i + 1],
            activation="silu",
            grid_size=grid_size,
            spline_order=spline_order,
            init_type="kan",
        )
        for i in range(len(widths) - 1)
    )
    return ModelSpec("kan", layers, (widths[0],), name=name)


def kan_g5(outputs: int = 1) -> ModelSpec:
    return kan((2, 5, outputs), grid_size=5, name="kan_g5")


def kan_g10(outputs: int = 1) -> ModelSpec:
    return kan((2, 5, outputs), grid_size=10, name="kan_g10")


def generated_uhn_template(
    index_freqs: int = TEMPLATE_INDEX_FREQS,
    structure_freqs: int = TEMPLATE_STRUCTURE_FREQS,
    hidden: int = TEMPLATE_HIDDEN,
    index_layers: int = TEMPLATE_INDEX_LAYERS,
    heads: int = TEMPLATE_HEADS,
    task_branch: bool = True,
    slope: float = TEMPLATE_LEAKY_SLOPE,
    readout_activation: str = "leaky_relu",
) -> ModelSpec:
    """Two-branch hypernetwork generated by the level above it.

    Index branch: input linear then ``index_layers`` LeakyReLU/LN/shortcut
    linears. Task branch: MHA with shortcut, two LeakyReLU/LN/shortcut
    linears, mean-pooled linear, LeakyReLU linear. Readout: one linear.
    """
    block = dict(activation="leaky_relu", activation_param=slope, norm="layer_norm", shortcut=True)
    layers = [LayerSpec("linear", input_size=2 * index_freqs, output_size=hidden)]
    layers += [LayerSpec("linear", input_size=hidden, output_size=hidden, **block) for _ in range(index_layers)]
    if task_branch:
        token = 2 * structure_freqs
        layers.append(LayerSpec("mha", input_size=token, output_size=token, num_heads=heads, shortcut=True))
        layers += [LayerSpec("linear", input_size=token, output_size=token, **block) for _ in range(2)]
        layers.append(LayerSpec("linear", input_size=token, output_size=hidden, pooling="sequence_mean"))
        layers.append(
            LayerSpec("linear", input_size=hidden, output_size=hidden, activation="leaky_relu", activation_param=slope)
        )
    readout_param = slope if readout_activation == "leaky_relu" else 0.0
    layers.append(
        LayerSpec(
            "linear",
            input_size=hidden,
            output_size=1,
            activation=readout_activation,
            activation_param=readout_param,
        )
    )
    return ModelSpec(
        "uhn",
        tuple(layers),
        (2 * index_freqs,),
        num_structure_freqs=structure_freqs if task_branch else 0,
        num_index_freqs=index_freqs,
        name="generated_uhn",
    )


def named_model(name: str) -> ModelSpec:
    """Resolve a builder by name, e.g. "mlp_mnist", "gat_pubmed", "kan_g5", "cnn20_cifar10"."""
    builders = {
        "mlp_mnist": mlp_mnist,
        "cnn8_mnist": cnn8_mnist,
        "transformer2l_ag_news": transformer_ag_news,
        "transformer1l_imdb": transformer_imdb,
        "transformer_toy": text_transformer_toy,
        "kan_g5": kan_g5,
        "kan_g10": kan_g10,
        "kan_g5_ellipj": lambda: kan_g5(outputs=4),
        "generated_uhn": generated_uhn_template,
        "cnn_toy": cnn_toy,
        "gcn_toy_graph": lambda: gcn(TOY_GRAPH_FEATURES, TOY_GRAPH_CLASSES, name="gcn_toy_graph"),
        "gat_toy_graph": lambda: gat(TOY_GRAPH_FEATURES, TOY_GRAPH_CLASSES, name="gat_toy_graph"),
    }
    for n in (6, 10, 14, 18):
        builders[f"cnn{3 * n + 2}_cifar10"] = lambda n=n: cnn_cifar(n)
    for dataset in CITATION_GRAPHS:
        builders[f"gcn_{dataset}"] = lambda d=dataset: citation_gcn(d)
        builders[f"gat_{dataset}"] = lambda d=dataset: citation_gat(d)
    if name not in builders:
        raise ValueError(f"Unknown model: {name}. Known: {sorted(builders)}")
    return builders[name]()


# Family sampling


def _divisible_draw(rng: np.random.Generator, low: int, high: int, divisor: int) -> int:
    """Draw from Unif{low..high}, re-drawing until divisible."""
    while True:
        value = int(rng.integers(low, high + 1))
        if value % divisor == 0:
            return value


def sample_architecture(
    family: str,
    rng: np.random.Generator,
    in_channels: int = 3,
    num_classes: int = 10,
    image_size: int = 32,
) -> ModelSpec:
    """Draw one architecture from a model family."""
    if family == "cnn_mixed_depth":
        depths = (1,) + tuple(int(k) for k in rng.integers(6, 11, size=3))
        widths = (16, 16, 32, 64)
    elif family in ("cnn_mixed_width", "cnn_mixed_depth_width"):
        if family == "cnn_mixed_width":
            depths = (1, 6, 6, 6)
        else:
            depths = (1,) + tuple(int(k) for k in rng.integers(6, 9, size=3))
        c0 = _divisible_draw(rng, 16, 32, 4)
        widths = (c0, c0, _divisible_draw(rng, 32, 64, 4), _divisible_draw(rng, 64, 128, 4))
    elif family == "cnn_mixed_width_toy":
        depths = (1, 1, 1, 1)
        c0 = _divisible_draw(rng, 8, 16, 4)
        widths = (c0, c0, _divisible_draw(rng, 8, 24, 4), _divisible_draw(rng, 16, 32, 4))
    elif family == "transformer_mixed":
        encoders = int(rng.integers(1, 5))
        heads = int(rng.integers(1, 9))
        width = _divisible_draw(rng, 32, 128, heads)
        ff = tuple(int(k) for k in rng.integers(1, 4, size=encoders))
        return transformer(5000, width, heads, ff, 4, 128, dropout=0.2, name="transformer_mixed")
    else:
        raise ValueError(f"Unknown model family: {family}. Must be one of {FAMILIES}")
    return cnn(depths, widths, in_channels, num_classes, image_size, name=family)


def build_model_set(family: str, size: int, rng: np.random.Generator, **kwargs) -> list[ModelSpec]:
    return [sample_architecture(family, rng, **kwargs) for _ in range(size)]


@dataclass
class ModelSet:
    """Sampled models with train/test split, validation and hold-in subsets."""

    models: list
    train_idx: list
    test_idx: list
    val_idx: list
    holdin_idx: list

    @property
    def train(self) -> list[ModelSpec]:
        return [self.models[i] for i in self.train_idx]

    @property
    def test(self) -> list[ModelSpec]:
        return [self.models[i] for i in self.test_idx]

    @property
    def val(self) -> list[ModelSpec]:
        return [self.models[i] for i in self.val_idx]

    @property
    def holdin(self) -> list[ModelSpec]:
        return [self.models[i] for i in self.holdin_idx]

    def to_dict(self) -> dict:
        return {
            "models": [m.to_dict() for m in self.models],
            "train": self.train_idx,
            "test": self.test_idx,
            "val": self.val_idx,
            "holdin": self.holdin_idx,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSet":
        return cls(
            models=[ModelSpec.from_dict(m) for m in data["models"]],
            train_idx=list(data["train"]),
            test_idx=list(data["test"]),
            val_idx=list(data["val"]),
            holdin_idx=list(data["holdin"]),
        )


def default_split_sizes(total: int) -> tuple[int, int, int, int]:
    if total in MODEL_SET_SPLITS:
        return MODEL_SET_SPLITS[total]
    raise ValueError(f"No default split for |M|={total}; known sizes: {sorted(MODEL_SET_SPLITS)}")


def split_model_set(models: list, sizes: Sequence[int], rng: np.random.Generator) -> ModelSet:
    """Split into M_train/M_test, then carve disjoint M_val and M'_train from M_train.

    ``sizes`` is (train, test, val, holdin).
    """
    n_train, n_test, n_val, n_holdin = (int(s) for s in sizes)
    if min(n_train, n_test, n_val, n_holdin) < 0:
        raise ValueError(f"split sizes must be non-negative, got {tuple(sizes)}")
    if n_train + n_test > len(models):
        raise ValueError(f"train+test = {n_train + n_test} exceeds |M| = {len(models)}")
    if n_train + n_test != len(models):
        raise ValueError(f"train+test = {n_train + n_test} must equal |M| = {len(models)}")
    if n_val + n_holdin > n_train:
        raise ValueError(f"val+holdin = {n_val + n_holdin} exceeds |M_train| = {n_train}")
    order = [int(i) for i in rng.permutation(len(models))]
    train, test = sorted(order[:n_train]), sorted(order[n_train:])
    inner = [train[int(i)] for i in rng.permutation(n_train)]
    val = sorted(inner[:n_val])
    holdin = sorted(inner[n_val : n_val + n_holdin])
    return ModelSet(list(models), train, test, val, holdin)


def save_model_set(model_set: ModelSet, path: Path, seed: int, registry_digest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"seed": seed, "registry": registry_digest, **model_set.to_dict()}
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_model_set(path: Path) -> tuple[ModelSet, int, str]:
    data = json.loads(path.read_text(encoding="utf-8"))
    return ModelSet.from_dict(data), int(data["seed"]), data["registry"]


# Chunked hypernetwork baseline


def chunked_baseline_count(n: int, c: int, d_emb: int, o: int, n_h0: int) -> int:
    """N_H = N_H0 + o·c + (N/c)·d_emb for a chunked hypernetwork with chunk size c."""
    if c < 1 or n % c != 0:
        raise ValueError(f"chunk size {c} does not divide N = {n}")
    return n_h0 + o * c + (n // c) * d_emb


def chunked_baseline_bound(n: int, d_emb: int, o: int, n_h0: int) -> float:
    """Lower bound N_H0 + 2·sqrt(o·d_emb·N) over all chunk sizes."""
    return n_h0 + 2.0 * math.sqrt(o * d_emb * n)


def optimal_chunk_size(n: int, d_emb: int, o: int) -> float:
    return math.sqrt(n * d_emb / o)
