"""Configuration defaults for uhn."""

import math
from pathlib import Path

# Output paths
OUTPUT_DIR = Path("output")
ARTIFACT_ROOT_ENV = "UHN_ARTIFACT_ROOT"
MNIST_DIR_ENV = "UHN_MNIST_DIR"

# Precision modes
PRECISION_VERIFY = "float64"
PRECISION_TRAIN = "float32"

# Normalization
LAYER_NORM_EPS = 1e-5
GROUP_NORM_EPS = 1e-5

# Descriptor encodings
FOURIER_SCALE = 100.0
POSITIONAL_FREQS = 32
INDEX_ENCODINGS = ("gaussian", "positional", "raw")
DEFAULT_CHUNK_SIZE = 4096
FEATURE_BLOCK_ROWS = 1024

# Registry
REGISTRY_VERSION = 1
REGISTRY_FILE = f"registry_v{REGISTRY_VERSION}.csv"

# Generator defaults
DEFAULT_INDEX_FREQS = 2048
DEFAULT_HIDDEN = 128
DEFAULT_BLOCKS = 2
DEFAULT_STRUCTURE_FREQS = 32
DEFAULT_HEADS = 4

# Generated-UHN template
TEMPLATE_INDEX_FREQS = 1024
TEMPLATE_STRUCTURE_FREQS = 32
TEMPLATE_HIDDEN = 64
TEMPLATE_INDEX_LAYERS = 4
TEMPLATE_HEADS = 4
TEMPLATE_LEAKY_SLOPE = 0.1

# Optimizer
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.0

# Recursion
RECURSIVE_CLIP_NORM = 0.01
RECURSIVE_INIT_LR_DIVISORS = (5.0, 5.0, 10.0, 40.0)
RECURSIVE_TRAIN_LR_DIVISORS = {1: 1.0, 2: 2.0, 3: 8.0}
RECURSIVE_WARMUP_STEPS = 1000

# Encoding ablation
ABLATION_CLIP_NORM = 1.0

# Chunked-hypernetwork baseline: chunk embedding width and output-head input width
CHUNK_BASELINE_EMBEDDING = 64
CHUNK_BASELINE_HIDDEN = 64

# Schedules
WARMUP_EPOCHS = 5
WARMUP_STEPS = 1000
BATCH_SIZE = 256

# Multi-task distribution
MULTI_TASK_PROBABILITIES = {
    "cifar10": 0.55,
    "ag_news": 0.18,
    "kv": 0.11,
    "mnist": 0.08,
    "cora": 0.04,
    "pubmed": 0.04,
}

# Desk-scale stand-in for the multi-task distribution
DESK_TASK_PROBABILITIES = {
    "toy_image": 0.55,
    "synthetic_text": 0.18,
    "kv_surrogate": 0.11,
    "legendre_p2": 0.08,
    "toy_graph": 0.08,
}

# Model-set split sizes: |M| -> (train, test, val, hold-in)
MODEL_SET_SPLITS = {
    100: (80, 20, 20, 20),
    500: (450, 50, 50, 50),
    1000: (950, 50, 50, 50),
}

# Initialization targets
KAN_GRID_LENGTH = math.log(2.0)
KAN_GRID_MIN = -1.0
KAN_SPLINE_STD = 0.1

# Formula datasets
FORMULA_TRAIN = 1000
FORMULA_TEST = 1000
FORMULA_DOMAIN_EPS = 0.1

# Desk-scale defaults
MNIST_TRAIN_LIMIT = 6000
MNIST_TEST_LIMIT = 1000
TOY_GRAPH_NODES = 48
TOY_GRAPH_FEATURES = 16
TOY_GRAPH_CLASSES = 3
TOY_IMAGE_SIZE = 8
TOY_IMAGE_CHANNELS = 3
TOY_IMAGE_CLASSES = 10
TEXT_VOCAB = 64
TEXT_LENGTH = 16
TEXT_CLASSES = 4

# Checkpoints
CHECKPOINT_SCHEMA = "uhn-checkpoint/1"

# CSV schema column order
METRICS_COLUMNS = [
    "step",
    "phase",
    "level",
    "task",
    "loss",
    "lr",
    "grad_norm",
    "wall_time",
]

SUMMARY_COLUMNS = [
    "experiment",
    "kind",
    "task",
    "model",
    "split",
    "metric",
    "value",
    "num_params",
    "generator_params",
    "seed",
]

STATS_COLUMNS = ["field", "min", "max"]

REGISTRY_COLUMNS = ["namespace", "name", "id"]
