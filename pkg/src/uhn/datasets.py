"""Dataset loaders and desk-scale synthetic datasets."""

import logging
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from scipy import special

from .config import (
    FORMULA_DOMAIN_EPS,
    FORMULA_TEST,
    FORMULA_TRAIN,
    MNIST_DIR_ENV,
    MNIST_TEST_LIMIT,
    MNIST_TRAIN_LIMIT,
    TEXT_CLASSES,
    TEXT_LENGTH,
    TEXT_VOCAB,
    TOY_GRAPH_CLASSES,
    TOY_GRAPH_FEATURES,
    TOY_GRAPH_NODES,
    TOY_IMAGE_CHANNELS,
    TOY_IMAGE_CLASSES,
    TOY_IMAGE_SIZE,
)
from .executors import GraphContext

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

CLS_TOKEN = 0
PAD_TOKEN = 1


@dataclass
class Batch:
    """Inputs and targets; ``nodes`` selects the labelled nodes of a graph split."""

    inputs: np.ndarray
    targets: np.ndarray
    nodes: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.nodes) if self.nodes is not None else len(self.targets)


@dataclass
class DatasetHandle:
    """One task's train/test data in model-ready arrays."""

    name: str
    kind: str  # mnist_idx, synthetic_formula, edge_list_graph, synthetic_text, synthetic_image
    task_type: str  # classification or regression
    train: Batch
    test: Batch
    num_classes: int = 0
    num_outputs: int = 1
    graph: Optional[GraphContext] = None
    edges: Optional[np.ndarray] = None
    notes: str = ""

    @property
    def split_sizes(self) -> dict:
        return {"train": len(self.train), "test": len(self.test)}

    @property
    def input_shape(self) -> tuple:
        return self.train.inputs.shape[1:]


def iterate_batches(batch: Batch, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Shuffled minibatches; graphs and batch_size <= 0 yield the full batch."""
    if batch.nodes is not None or batch_size <= 0 or batch_size >= len(batch):
        yield batch
        return
    order = rng.permutation(len(batch))
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        yield Batch(batch.inputs[rows], batch.targets[rows])


def sample_batch(batch: Batch, batch_size: int, rng: np.random.Generator) -> Batch:
    """One random minibatch drawn without replacement."""
    if batch.nodes is not None or batch_size <= 0 or batch_size >= len(batch):
        return batch
    rows = rng.choice(len(batch), size=batch_size, replace=False)
    return Batch(batch.inputs[rows], batch.targets[rows])


# MNIST IDX


def _read_header(data: bytes, path: Path, magic: int, dims: int) -> tuple:
    if len(data) < 4 + 4 * dims:
        raise ValueError(f"{path}: truncated header, {len(data)} bytes at offset 0")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise ValueError(f"{path}: magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    return struct.unpack(">" + "I" * dims, data[4 : 4 + 4 * dims])


def read_idx_images(path: Path, limit: Optional[int] = None) -> np.ndarray:
    """Raw uint8 images (n, 28, 28) from an IDX image file."""
    data = Path(path).read_bytes()
    count, rows, cols = _read_header(data, path, IMAGE_MAGIC, 3)
    if (rows, cols) != (28, 28):
        raise ValueError(f"{path}: image dims {rows}x{cols} at offset 8, expected 28x28")
    if limit is not None:
        count = min(count, limit)
    needed = count * rows * cols
    payload = data[16 : 16 + needed]
    if len(payload) < needed:
        raise ValueError(f"{path}: truncated pixel data at offset {16 + len(payload)}, expected {needed} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: Path, limit: Optional[int] = None) -> np.ndarray:
    data = Path(path).read_bytes()
    (count,) = _read_header(data, path, LABEL_MAGIC, 1)
    if limit is not None:
        count = min(count, limit)
    payload = data[8 : 8 + count]
    if len(payload) < count:
        raise ValueError(f"{path}: truncated label data at offset {8 + len(payload)}, expected {count} bytes")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx(images_path: Path, labels_path: Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, 28, 28) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack(">IIII", IMAGE_MAGIC, images.shape[0], images.shape[1], images.shape[2])
    Path(images_path).write_bytes(header + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


def load_mnist_idx(
    images_path: Path,
    labels_path: Path,
    limit: Optional[int] = None,
    normalization: Optional[tuple] = None,
) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Images (n, 1, 28, 28) scaled to [0, 1] and standardized, labels, and (mean, std) used.

    Without ``normalization`` the global mean and std of the loaded split are used.
    """
    images = read_idx_images(images_path, limit).astype(np.float64) / 255.0
    labels = read_idx_labels(labels_path, limit)
    if len(images) != len(labels):
        raise ValueError(f"{images_path}: {len(images)} images but {labels_path}: {len(labels)} labels")
    if normalization is None:
        normalization = (float(images.mean()), float(images.std()) or 1.0)
    mean, std = normalization
    return ((images - mean) / std)[:, None, :, :], labels, normalization


def load_mnist(
    directory: Optional[Path] = None,
    train_limit: Optional[int] = MNIST_TRAIN_LIMIT,
    test_limit: Optional[int] = MNIST_TEST_LIMIT,
) -> DatasetHandle:
    """MNIST from the four standard IDX files; the test split reuses the train normalization."""
    if directory is None:
        env = os.environ.get(MNIST_DIR_ENV)
        if not env:
            raise FileNotFoundError(f"MNIST directory not given and ${MNIST_DIR_ENV} is not set")
        directory = Path(env)
    directory = Path(directory)
    train_x, train_y, norm = load_mnist_idx(*(directory / f for f in MNIST_FILES["train"]), limit=train_limit)
    test_x, test_y, _ = load_mnist_idx(*(directory / f for f in MNIST_FILES["test"]), limit=test_limit, normalization=norm)
    log.info("Loaded MNIST: %d train, %d test", len(train_y), len(test_y))
    return DatasetHandle("mnist", "mnist_idx", "classification", Batch(train_x, train_y), Batch(test_x, test_y), 10)


# Formula regression


def _legendre_p2(xn, xr):
    return 0.5 * (3.0 * xn[:, :1] ** 2 - 1.0)


def _sph_harm_surrogate(xn, xr):
    polar = 0.5 * math.pi * (xn[:, :1] + 1.0)
    azimuth = math.pi * (xn[:, 1:2] + 1.0)
    return np.sin(polar) * np.cos(azimuth)


def _kv_surrogate(xn, xr):
    return 0.1 * (1.0 + xr[:, :1]) / xr[:, 1:2]


def _spherical_harmonic(m: int, n: int):
    """Real part of Y_n^m with x1 as azimuth and x2 as polar angle."""
    norm = math.sqrt((2 * n + 1) / (4 * math.pi) * math.factorial(n - m) / math.factorial(n + m))

    def evaluate(xn, xr):
        azimuth, polar = xr[:, :1], xr[:, 1:2]
        return norm * special.lpmv(m, n, np.cos(polar)) * np.cos(m * azimuth)

    return evaluate


def _ellipj(xn, xr):
    return np.concatenate(special.ellipj(xr[:, :1], xr[:, 1:2]), axis=1)


def _binary(function):
    return lambda xn, xr: function(xr[:, :1], xr[:, 1:2])


def _lpmv(m: int):
    return lambda xn, xr: special.lpmv(m, xr[:, :1], xr[:, 1:2])


# name -> (function of (normalized x, raw x), outputs, guarded x2 domain, surrogate)
FORMULAS = {
    "constant": (lambda xn, xr: np.ones((len(xn), 1)), 1, False, True),
    "legendre_p2": (_legendre_p2, 1, False, True),
    "sph_harm_surrogate": (_sph_harm_surrogate, 1, False, True),
    "kv_surrogate": (_kv_surrogate, 1, True, True),
    "ellipj": (_ellipj, 4, False, False),
    "ellipkinc": (_binary(special.ellipkinc), 1, False, False),
    "ellipeinc": (_binary(special.ellipeinc), 1, False, False),
    "jv": (_binary(special.jv), 1, False, False),
    "yv": (_binary(special.yv), 1, True, False),
    "kv": (_binary(special.kv), 1, True, False),
    "iv": (_binary(special.iv), 1, False, False),
    "lpmv0": (_lpmv(0), 1, False, False),
    "lpmv1": (_lpmv(1), 1, False, False),
    "lpmv2": (_lpmv(2), 1, False, False),
    "sph_harm01": (_spherical_harmonic(0, 1), 1, False, False),
    "sph_harm11": (_spherical_harmonic(1, 1), 1, False, False),
    "sph_harm02": (_spherical_harmonic(0, 2), 1, False, False),
    "sph_harm12": (_spherical_harmonic(1, 2), 1, False, False),
    "sph_harm22": (_spherical_harmonic(2, 2), 1, False, False),
}


def formula_outputs(formula: str) -> int:
    if formula not in FORMULAS:
        raise ValueError(f"Unknown formula: {formula}. Known: {sorted(FORMULAS)}")
    return FORMULAS[formula][1]


def evaluate_formula(formula: str, raw: np.ndarray) -> np.ndarray:
    """Targets (n, outputs) for raw inputs in [0, 1)^2."""
    if formula not in FORMULAS:
        raise ValueError(f"Unknown formula: {formula}. Known: {sorted(FORMULAS)}")
    function = FORMULAS[formula][0]
    raw = np.asarray(raw, dtype=np.float64)
    return np.asarray(function(2.0 * raw - 1.0, raw), dtype=np.float64).reshape(len(raw), -1)


def make_formula_dataset(
    formula: str,
    n_train: int = FORMULA_TRAIN,
    n_test: int = FORMULA_TEST,
    seed: int = 0,
) -> DatasetHandle:
    """Uniform samples over [0, 1)^2 (x2 in [eps, 1) for guarded formulas), inputs mapped to [-1, 1)."""
    if formula not in FORMULAS:
        raise ValueError(f"Unknown formula: {formula}. Known: {sorted(FORMULAS)}")
    _, outputs, guarded, surrogate = FORMULAS[formula]
    rng = np.random.default_rng(seed)

    def draw(n):
        raw = rng.random((n, 2))
        if guarded:
            raw[:, 1] = FORMULA_DOMAIN_EPS + (1.0 - FORMULA_DOMAIN_EPS) * raw[:, 1]
        return Batch(2.0 * raw - 1.0, evaluate_formula(formula, raw))

    train, test = draw(n_train), draw(n_test)
    notes = "closed-form surrogate" if surrogate else "scipy.special"
    return DatasetHandle(formula, "synthetic_formula", "regression", train, test, 0, outputs, notes=notes)


# Graphs


def row_normalize(features: np.ndarray) -> np.ndarray:
    sums = np.abs(features).sum(axis=1, keepdims=True)
    return np.divide(features, sums, out=np.zeros_like(features, dtype=np.float64), where=sums > 0)


def _graph_handle(name, features, labels, edges, splits, notes="") -> DatasetHandle:
    ctx = GraphContext.from_edges(len(labels), edges)
    features = row_normalize(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    train = Batch(features, labels, np.asarray(splits["train"], dtype=np.int64))
    test = Batch(features, labels, np.asarray(splits["test"], dtype=np.int64))
    return DatasetHandle(
        name,
        "edge_list_graph",
        "classification",
        train,
        test,
        int(labels.max()) + 1,
        graph=ctx,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        notes=notes,
    )


def _read_rows(path: Path) -> list[list[str]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append(line.split())
    return rows


def load_edge_list_graph(
    edges_path: Path,
    features_path: Path,
    labels_path: Path,
    splits,
    name: str = "graph",
) -> DatasetHandle:
    """Whitespace edge list, feature matrix and labels; ``splits`` is a path of "<split> <node>" lines or a dict."""
    labels = np.array([int(row[0]) for row in _read_rows(labels_path)], dtype=np.int64)
    features = np.array([[float(v) for v in row] for row in _read_rows(features_path)], dtype=np.float64)
    if len(features) != len(labels):
        raise ValueError(f"{features_path}: {len(features)} feature rows for {len(labels)} labels")
    n = len(labels)
    edges = []
    for line_no, row in enumerate(_read_rows(edges_path), start=1):
        src, dst = int(row[0]), int(row[1])
        if not (0 <= src < n and 0 <= dst < n):
            raise ValueError(f"{edges_path}: edge {line_no} ({src}, {dst}) references a node outside 0..{n - 1}")
        edges.append((src, dst))
    if not isinstance(splits, dict):
        parsed = {}
        for row in _read_rows(splits):
            parsed.setdefault(row[0], []).append(int(row[1]))
        splits = parsed
    for required in ("train", "test"):
        if required not in splits:
            raise ValueError(f"graph splits have no '{required}' nodes")
    return _graph_handle(name, features, labels, np.array(edges, dtype=np.int64).reshape(-1, 2), splits)


def write_edge_list_graph(dataset: DatasetHandle, directory: Path) -> tuple[Path, Path, Path, Path]:
    """Write edges.txt, features.txt, labels.txt and splits.txt; returns the four paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = tuple(directory / f"{part}.txt" for part in ("edges", "features", "labels", "splits"))
    np.savetxt(paths[0], dataset.edges, fmt="%d")
    np.savetxt(paths[1], dataset.train.inputs, fmt="%.17g")
    np.savetxt(paths[2], dataset.train.targets, fmt="%d")
    lines = [f"train {i}" for i in dataset.train.nodes] + [f"test {i}" for i in dataset.test.nodes]
    paths[3].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def make_toy_graph(
    num_nodes: int = TOY_GRAPH_NODES,
    num_classes: int = TOY_GRAPH_CLASSES,
    num_features: int = TOY_GRAPH_FEATURES,
    seed: int = 0,
    p_in: float = 0.25,
    p_out: float = 0.02,
) -> DatasetHandle:
    """Planted-partition graph with class-correlated binary features."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_nodes) % num_classes)
    same = labels[:, None] == labels[None, :]
    draws = rng.random((num_nodes, num_nodes)) < np.where(same, p_in, p_out)
    src, dst = np.nonzero(np.triu(draws, k=1))
    edges = np.stack([src, dst], axis=1)
    prototypes = rng.random((num_classes, num_features)) < 0.3
    flips = rng.random((num_nodes, num_features)) < 0.1
    features = (prototypes[labels] ^ flips).astype(np.float64)
    order = rng.permutation(num_nodes)
    cut = num_nodes // 2
    splits = {"train": np.sort(order[:cut]), "test": np.sort(order[cut:])}
    return _graph_handle("toy_graph", features, labels, edges, splits)


# Text and images


def make_synthetic_text(
    n_train: int = 512,
    n_test: int = 256,
    vocab: int = TEXT_VOCAB,
    length: int = TEXT_LENGTH,
    num_classes: int = TEXT_CLASSES,
    seed: int = 0,
    keywords_per_class: int = 4,
    keywords_per_sequence: int = 3,
) -> DatasetHandle:
    """CLS-prefixed token sequences whose class is given by planted keyword tokens."""
    first_noise = 2 + num_classes * keywords_per_class
    if first_noise >= vocab:
        raise ValueError(f"vocab {vocab} too small for {num_classes} classes of {keywords_per_class} keywords")
    if keywords_per_sequence > length - 1:
        raise ValueError(f"sequence length {length} cannot hold {keywords_per_sequence} keywords")
    rng = np.random.default_rng(seed)

    def draw(n):
        labels = rng.integers(0, num_classes, size=n)
        tokens = rng.integers(first_noise, vocab, size=(n, length))
        tokens[:, 0] = CLS_TOKEN
        for row, label in enumerate(labels):
            slots = rng.choice(np.arange(1, length), size=keywords_per_sequence, replace=False)
            tokens[row, slots] = 2 + label * keywords_per_class + rng.integers(0, keywords_per_class, size=keywords_per_sequence)
        return Batch(tokens, labels.astype(np.int64))

    train, test = draw(n_train), draw(n_test)
    return DatasetHandle("synthetic_text", "synthetic_text", "classification", train, test, num_classes)


def make_toy_images(
    n_train: int = 512,
    n_test: int = 256,
    num_classes: int = TOY_IMAGE_CLASSES,
    channels: int = TOY_IMAGE_CHANNELS,
    size: int = TOY_IMAGE_SIZE,
    noise: float = 0.5,
    seed: int = 0,
) -> DatasetHandle:
    """Noisy copies of one random prototype image per class."""
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(num_classes, channels, size, size))

    def draw(n):
        labels = rng.integers(0, num_classes, size=n)
        images = prototypes[labels] + noise * rng.normal(size=(n, channels, size, size))
        return Batch(images, labels.astype(np.int64))

    train, test = draw(n_train), draw(n_test)
    return DatasetHandle("toy_image", "synthetic_image", "classification", train, test, num_classes)


def load_dataset(name: str, seed: int = 0, **kwargs) -> DatasetHandle:
    """Resolve a dataset name to a loader; full-scale downloads are not supported."""
    if name == "mnist":
        return load_mnist(**kwargs)
    if name == "toy_image":
        return make_toy_images(seed=seed, **kwargs)
    if name == "synthetic_text":
        return make_synthetic_text(seed=seed, **kwargs)
    if name == "toy_graph":
        return make_toy_graph(seed=seed, **kwargs)
    if name in FORMULAS:
        return make_formula_dataset(name, seed=seed, **kwargs)
    raise ValueError(f"No desk-scale loader for dataset {name}")


def with_limit(dataset: DatasetHandle, train: Optional[int] = None, test: Optional[int] = None) -> DatasetHandle:
    """Truncate non-graph splits, order preserved."""
    if dataset.graph is not None:
        return dataset
    train_batch = dataset.train if train is None else Batch(dataset.train.inputs[:train], dataset.train.targets[:train])
    test_batch = dataset.test if test is None else Batch(dataset.test.inputs[:test], dataset.test.targets[:test])
    return replace(dataset, train=train_batch, test=test_batch)
