"""The fixed-shape weight generator and its parameter accounting."""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensorcore as tc
from .archspec import ModelSpec, param_layout, uhn_branches
from .config import (
    DEFAULT_BLOCKS,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_HEADS,
    DEFAULT_HIDDEN,
    DEFAULT_INDEX_FREQS,
    DEFAULT_STRUCTURE_FREQS,
    FOURIER_SCALE,
    INDEX_ENCODINGS,
    POSITIONAL_FREQS,
)
from .descriptors import (
    INDEX_DIM,
    STATS_FIELDS,
    TOKEN_DIM,
    DescriptorEncoder,
    DescriptorTable,
    NormalizationStats,
    positional_matrix,
    sample_fourier_matrix,
)
from .executors import attention
from .tensorcore import Tensor

log = logging.getLogger(__name__)


@dataclass
class UHNConfig:
    """Generator hyperparameters; the shape of the generator depends on nothing else."""

    index_freqs: int = DEFAULT_INDEX_FREQS
    hidden: int = DEFAULT_HIDDEN
    blocks: int = DEFAULT_BLOCKS
    structure_freqs: int = DEFAULT_STRUCTURE_FREQS
    heads: int = DEFAULT_HEADS
    fourier_scale: float = FOURIER_SCALE
    use_tse: bool = False
    index_encoding: str = "gaussian"
    positional_freqs: int = POSITIONAL_FREQS

    @property
    def input_width(self) -> int:
        if self.index_encoding == "gaussian":
            return 2 * self.index_freqs
        if self.index_encoding == "positional":
            return 2 * self.positional_freqs * INDEX_DIM
        return INDEX_DIM

    @property
    def token_width(self) -> int:
        return 2 * self.structure_freqs

    def validate(self) -> list[str]:
        errors = []
        if self.index_encoding not in INDEX_ENCODINGS:
            errors.append(f"index_encoding must be one of {INDEX_ENCODINGS}, got {self.index_encoding}")
        if self.index_encoding == "gaussian" and self.index_freqs < 1:
            errors.append("index_freqs must be >= 1")
        if self.index_encoding == "positional" and self.positional_freqs < 1:
            errors.append("positional_freqs must be >= 1")
        if self.hidden < 1:
            errors.append("hidden must be >= 1")
        if self.blocks < 0:
            errors.append("blocks must be >= 0")
        if self.fourier_scale <= 0:
            errors.append("fourier_scale must be positive")
        if self.use_tse:
            if self.structure_freqs < 1:
                errors.append("structure_freqs must be >= 1 when the task-structure encoder is on")
            elif self.heads < 1 or self.token_width % self.heads != 0:
                errors.append(f"{self.heads} heads do not divide token width {self.token_width}")
        return errors

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "UHNConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown generator config keys: {sorted(unknown)}")
        return cls(**data)


def uhn_param_count(config: UHNConfig) -> int:
    """Trainable parameters plus frozen frequency matrices and normalization constants."""
    d, width = config.hidden, config.input_width
    count = width * d + d
    count += config.blocks * 2 * (2 * d + d * d + d)
    count += d + 1
    count += 2 * INDEX_DIM
    if config.index_encoding == "gaussian":
        count += config.index_freqs * INDEX_DIM
    if config.use_tse:
        t = config.token_width
        count += config.structure_freqs * TOKEN_DIM + 2 * TOKEN_DIM
        count += 4 * (t * t + t)
        count += 2 * (t * t + t)
        count += 2 * (2 * t)
        count += t * d + d
        count += d * d + d
    return count


def parameter_shapes(config: UHNConfig) -> list[tuple[str, tuple]]:
    """Trainable tensors in a fixed order."""
    d = config.hidden
    shapes = [("input.weight", (d, config.input_width)), ("input.bias", (d,))]
    for b in range(config.blocks):
        for s in (1, 2):
            shapes += [
                (f"block{b}.norm{s}.weight", (d,)),
                (f"block{b}.norm{s}.bias", (d,)),
                (f"block{b}.linear{s}.weight", (d, d)),
                (f"block{b}.linear{s}.bias", (d,)),
            ]
    shapes += [("readout.weight", (1, d)), ("readout.bias", (1,))]
    if config.use_tse:
        t = config.token_width
        for name in ("query", "key", "value", "output", "ff1", "ff2"):
            shapes += [(f"tse.{name}.weight", (t, t)), (f"tse.{name}.bias", (t,))]
        for name in ("norm1", "norm2"):
            shapes += [(f"tse.{name}.weight", (t,)), (f"tse.{name}.bias", (t,))]
        shapes += [
            ("tse.mlp1.weight", (d, t)),
            ("tse.mlp1.bias", (d,)),
            ("tse.mlp2.weight", (d, d)),
            ("tse.mlp2.bias", (d,)),
        ]
    return shapes


@dataclass
class UHNParameters:
    """Trainable tensors plus the frozen encoder shared by every recursion level."""

    config: UHNConfig
    tensors: dict
    encoder: DescriptorEncoder
    registry_digest: str = ""

    def trainable(self) -> list[Tensor]:
        return list(self.tensors.values())

    def numel(self) -> int:
        count = sum(t.size for t in self.tensors.values())
        count += 2 * INDEX_DIM
        if self.config.index_encoding == "gaussian":
            count += self.encoder.index_frequencies.size
        if self.config.use_tse:
            count += self.encoder.structure_frequencies.size + 2 * TOKEN_DIM
        return count

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def copy(self) -> "UHNParameters":
        return UHNParameters(
            config=self.config,
            tensors={name: tc.parameter(t.data) for name, t in self.tensors.items()},
            encoder=self.encoder,
            registry_digest=self.registry_digest,
        )

    @classmethod
    def from_arrays(
        cls, config: UHNConfig, arrays: dict, encoder: DescriptorEncoder, registry_digest: str = ""
    ) -> "UHNParameters":
        tensors = {}
        for name, shape in parameter_shapes(config):
            if name not in arrays:
                raise ValueError(f"missing generator tensor {name}")
            if tuple(arrays[name].shape) != shape:
                raise ValueError(f"generator tensor {name} has shape {arrays[name].shape}, expected {shape}")
            tensors[name] = tc.parameter(arrays[name])
        return cls(config, tensors, encoder, registry_digest)


def build_encoder(
    config: UHNConfig, stats: NormalizationStats, rng: np.random.Generator
) -> DescriptorEncoder:
    """Sample B_v (and B_u when the encoder is on) once; they stay frozen afterwards."""
    if tuple(stats.fields) != STATS_FIELDS:
        raise ValueError("normalization stats do not describe the index and task-structure fields")
    index_frequencies = None
    if config.index_encoding == "gaussian":
        index_frequencies = sample_fourier_matrix(config.index_freqs, INDEX_DIM, config.fourier_scale, rng)
    elif config.index_encoding == "positional":
        index_frequencies = positional_matrix(config.positional_freqs, config.fourier_scale, INDEX_DIM)
    structure_frequencies = None
    if config.use_tse:
        structure_frequencies = sample_fourier_matrix(
            config.structure_freqs, TOKEN_DIM, config.fourier_scale, rng
        )
    return DescriptorEncoder(stats, config.index_encoding, index_frequencies, structure_frequencies)


def init_uhn(
    config: UHNConfig,
    stats: NormalizationStats,
    rng: np.random.Generator,
    fourier_rng: Optional[np.random.Generator] = None,
    registry_digest: str = "",
) -> UHNParameters:
    """Fresh generator: uniform(+-1/sqrt(fan_in)) linears, unit norms, zero last encoder layer."""
    errors = config.validate()
    if errors:
        raise ValueError(errors[0])
    encoder = build_encoder(config, stats, fourier_rng or rng)
    tensors = {}
    for name, shape in parameter_shapes(config):
        if name.startswith("tse.mlp2."):
            value = np.zeros(shape)
        elif ".norm" in name:
            value = np.ones(shape) if name.endswith(".weight") else np.zeros(shape)
        else:
            fan_in = _fan_in(config, name)
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = tc.parameter(value)
    log.info("Initialized generator with %d parameters", uhn_param_count(config))
    return UHNParameters(config, tensors, encoder, registry_digest)


def _fan_in(config: UHNConfig, name: str) -> int:
    if name.startswith("input."):
        return config.input_width
    if name.startswith("tse."):
        return config.token_width
    return config.hidden


# Forward


def _linear(x, weight: Tensor, bias: Tensor) -> Tensor:
    return tc.matmul(x, tc.transpose(weight)) + bias


def _residual_blocks(params: UHNParameters, h: Tensor) -> Tensor:
    p = params.tensors
    for b in range(params.config.blocks):
        y = h
        for s in (1, 2):
            y = tc.layer_norm(tc.relu(y), p[f"block{b}.norm{s}.weight"], p[f"block{b}.norm{s}.bias"])
            y = _linear(y, p[f"block{b}.linear{s}.weight"], p[f"block{b}.linear{s}.bias"])
        h = h + y
    return h


def index_branch(params: UHNParameters, phi) -> Tensor:
    """Input linear then the pre-activation residual blocks, for already encoded features."""
    phi = tc.as_tensor(phi)
    if phi.ndim != 2 or phi.shape[1] != params.config.input_width:
        raise ValueError(f"index features must have width {params.config.input_width}, got shape {phi.shape}")
    p = params.tensors
    return _residual_blocks(params, _linear(phi, p["input.weight"], p["input.bias"]))


def _index_hidden(params: UHNParameters, x_hat: np.ndarray) -> Tensor:
    p = params.tensors
    if params.config.index_encoding == "raw":
        first = _linear(x_hat, p["input.weight"], p["input.bias"])
    else:
        first = tc.fourier_linear(x_hat, params.encoder.index_frequencies, p["input.weight"]) + p["input.bias"]
    return _residual_blocks(params, first)


def task_structure_feature(params: UHNParameters, psi) -> Tensor:
    """Post-norm encoder layer over the layer tokens, mean pool, two-layer MLP."""
    if not params.config.use_tse:
        raise ValueError("task_structure_feature needs a generator with the task-structure encoder")
    psi = tc.as_tensor(psi)
    if psi.ndim != 2 or psi.shape[0] < 1 or psi.shape[1] != params.config.token_width:
        raise ValueError(f"task-structure tokens must be L x {params.config.token_width}, got {psi.shape}")
    p = params.tensors
    x = tc.reshape(psi, (1,) + psi.shape)
    q = _linear(x, p["tse.query.weight"], p["tse.query.bias"])
    k = _linear(x, p["tse.key.weight"], p["tse.key.bias"])
    v = _linear(x, p["tse.value.weight"], p["tse.value.bias"])
    attended = _linear(attention(q, k, v, params.config.heads), p["tse.output.weight"], p["tse.output.bias"])
    x = tc.layer_norm(x + attended, p["tse.norm1.weight"], p["tse.norm1.bias"])
    ff = _linear(tc.relu(_linear(x, p["tse.ff1.weight"], p["tse.ff1.bias"])), p["tse.ff2.weight"], p["tse.ff2.bias"])
    x = tc.layer_norm(x + ff, p["tse.norm2.weight"], p["tse.norm2.bias"])
    pooled = tc.mean(x, axis=1)
    hidden = tc.relu(_linear(pooled, p["tse.mlp1.weight"], p["tse.mlp1.bias"]))
    return tc.reshape(_linear(hidden, p["tse.mlp2.weight"], p["tse.mlp2.bias"]), (params.config.hidden,))


def readout(params: UHNParameters, hidden: Tensor, task_feature: Optional[Tensor] = None) -> Tensor:
    """Fuse by addition, ReLU, final linear to one scalar per row."""
    if task_feature is not None:
        hidden = hidden + task_feature
    p = params.tensors
    return _linear(tc.relu(hidden), p["readout.weight"], p["readout.bias"])


def check_table(params: UHNParameters, table: DescriptorTable) -> None:
    if table.index.ndim != 2 or table.index.shape[1] != INDEX_DIM:
        raise ValueError(f"index descriptors must be N x {INDEX_DIM}, got {table.index.shape}")
    if table.tokens.ndim != 2 or table.tokens.shape[1] != TOKEN_DIM:
        raise ValueError(f"task-structure descriptors must be L x {TOKEN_DIM}, got {table.tokens.shape}")
    if tuple(params.encoder.stats.fields) != STATS_FIELDS:
        raise ValueError("generator normalization stats do not match the descriptor layout")
    if params.registry_digest and table.registry_digest and params.registry_digest != table.registry_digest:
        raise ValueError(
            f"descriptor table uses registry {table.registry_digest[:12]}, "
            f"generator expects {params.registry_digest[:12]}"
        )


def generate_weights(
    params: UHNParameters, table: DescriptorTable, chunk_size: int = DEFAULT_CHUNK_SIZE
) -> Tensor:
    """One scalar per descriptor row, in packing order."""
    check_table(params, table)
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    x_hat = params.encoder.normalized_index(table.index)
    task_feature = None
    if params.config.use_tse:
        task_feature = task_structure_feature(params, params.encoder.token_features(table.tokens))
    chunks = []
    for start in range(0, table.num_params, chunk_size):
        hidden = _index_hidden(params, x_hat[start : start + chunk_size])
        chunks.append(readout(params, hidden, task_feature))
    out = chunks[0] if len(chunks) == 1 else tc.concat(chunks, axis=0)
    return tc.reshape(out, (table.num_params,))


def repack_as_generated(params: UHNParameters, template: ModelSpec) -> np.ndarray:
    """Flat parameter vector of a matched generated-hypernetwork template.

    The template must have only the input linear on its index branch, no
    task branch and a ReLU readout, mirroring a block-free generator without
    the task-structure encoder.
    """
    config = params.config
    if config.blocks != 0 or config.use_tse or config.index_encoding != "gaussian":
        raise ValueError("only a block-free gaussian generator without task-structure encoder can be repacked")
    branches = uhn_branches(template)
    head = template.layers[branches.readout]
    if branches.task or len(branches.index) != 1 or head.activation != "relu":
        raise ValueError("template must be input linear plus ReLU readout")
    if template.num_index_freqs != config.index_freqs or template.layers[0].output_size != config.hidden:
        raise ValueError("template sizes do not match the generator")
    p = params.tensors
    values = {
        (0, "weight"): p["input.weight"].data,
        (0, "bias"): p["input.bias"].data,
        (branches.readout, "weight"): p["readout.weight"].data,
        (branches.readout, "bias"): p["readout.bias"].data,
    }
    layout = param_layout(template)
    theta = np.zeros(layout.total)
    for c in layout.components:
        theta[c.offset : c.stop] = values[(c.layer_index, c.name)].reshape(-1)
    return theta
