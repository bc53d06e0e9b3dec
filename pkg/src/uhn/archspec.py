"""Target-model specifications and their canonical parameter layout."""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Optional

LAYER_TYPES = ("linear", "conv", "gcn", "gat", "embedding", "mha", "kan")
MODEL_TYPES = ("mlp", "cnn", "gcn", "gat", "transformer", "kan", "uhn")
ACTIVATIONS = ("none", "relu", "leaky_relu", "elu", "silu")
LINEAR_POOLING = ("none", "flatten", "adaptive_avg", "sequence_mean", "first_token")
STAGE_POOLING = ("none", "stride", "avg", "max")
HEAD_CONCAT = ("concat", "average")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a target model with every option it can activate."""

    layer_type: str
    input_size: int = 0
    output_size: int = 0
    bias: bool = True
    norm: str = "none"  # "none", "layer_norm" (non-conv) or "group_norm" (conv)
    shortcut: bool = False
    activation: str = "none"
    activation_param: float = 0.0
    dropout: float = 0.0
    pooling: str = "none"  # linear input pooling/reshape
    group_num: int = 0
    kernel_size: int = 0
    stage_pooling: str = "none"  # conv downsampling
    num_heads: int = 0
    head_concat: str = "concat"
    embedding_num: int = 0
    max_seq_len: int = 0
    grid_size: int = 0
    spline_order: int = 0
    init_type: str = "default"

    @property
    def head_dim(self) -> int:
        return self.output_size // self.num_heads if self.num_heads else 0

    def validate(self) -> list[str]:
        """Validate layer options and return list of errors."""
        errors = []
        if self.layer_type not in LAYER_TYPES:
            return [f"Unknown layer_type: {self.layer_type}"]
        if self.activation not in ACTIVATIONS:
            errors.append(f"Unknown activation: {self.activation}")
        if not 0.0 <= self.dropout < 1.0:
            errors.append(f"dropout must be in [0, 1), got {self.dropout}")
        if self.layer_type != "embedding" and (self.input_size < 1 or self.output_size < 1):
            errors.append("input_size and output_size must be >= 1")

        if self.layer_type == "conv":
            if self.norm not in ("none", "group_norm"):
                errors.append(f"conv norm must be 'none' or 'group_norm', got {self.norm}")
            if self.kernel_size < 1:
                errors.append("conv kernel_size must be >= 1")
            if self.stage_pooling not in STAGE_POOLING:
                errors.append(f"Unknown stage_pooling: {self.stage_pooling}")
            if self.norm == "group_norm":
                if self.group_num < 1 or self.input_size % self.group_num != 0:
                    errors.append(
                        f"group_norm needs {self.input_size} channels divisible by {self.group_num} groups"
                    )
            if self.shortcut and (self.input_size != self.output_size or self.stage_pooling != "none"):
                errors.append("conv shortcut needs equal channels and no downsampling")
        elif self.norm not in ("none", "layer_norm"):
            errors.append(f"{self.layer_type} norm must be 'none' or 'layer_norm', got {self.norm}")

        if self.layer_type == "linear":
            if self.pooling not in LINEAR_POOLING:
                errors.append(f"Unknown pooling: {self.pooling}")
            if self.shortcut and self.input_size != self.output_size:
                errors.append("linear shortcut needs input_size == output_size")
        if self.layer_type == "gat":
            if self.num_heads < 1 or self.output_size % self.num_heads != 0:
                errors.append(f"gat: {self.num_heads} heads do not divide output_size {self.output_size}")
            if self.head_concat not in HEAD_CONCAT:
                errors.append(f"Unknown head_concat: {self.head_concat}")
        if self.layer_type == "mha":
            if self.num_heads < 1 or self.output_size % self.num_heads != 0:
                errors.append(f"mha: {self.num_heads} heads do not divide width {self.output_size}")
            if self.input_size != self.output_size:
                errors.append("mha input_size must equal output_size")
        if self.layer_type == "embedding":
            if self.embedding_num < 1 or self.max_seq_len < 1 or self.output_size < 1:
                errors.append("embedding needs embedding_num, max_seq_len and output_size >= 1")
        if self.layer_type == "kan":
            if self.grid_size < 1 or self.spline_order < 0:
                errors.append("kan needs grid_size >= 1 and spline_order >= 0")
        if self.layer_type in ("gcn", "gat", "kan", "embedding") and self.shortcut:
            errors.append(f"{self.layer_type} layers have no shortcut option")
        return errors


@dataclass(frozen=True)
class ModelSpec:
    """A fully resolved target architecture."""

    model_type: str
    layers: tuple
    input_shape: tuple  # per-sample input shape
    cnn_stage_num: int = 0
    num_encoders: int = 0
    num_structure_freqs: int = 0
    num_index_freqs: int = 0
    name: str = ""

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def validate(self) -> list[str]:
        """Validate layers and composition; messages name the offending layer."""
        if self.model_type not in MODEL_TYPES:
            return [f"Unknown model_type: {self.model_type}"]
        if not self.layers:
            return ["model has no layers"]
        for index, layer in enumerate(self.layers):
            errors = layer.validate()
            if errors:
                return [f"layer {index} ({layer.layer_type}): {e}" for e in errors]
        if self.model_type == "uhn":
            return _check_uhn_template(self)
        signature = input_signature(self)
        for index, layer in enumerate(self.layers):
            signature, error = output_signature(layer, signature)
            if error:
                return [f"layer {index} ({layer.layer_type}): {error}"]
        return []

    def check(self) -> None:
        errors = self.validate()
        if errors:
            raise ValueError(errors[0])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["layers"] = [asdict(layer) for layer in self.layers]
        data["input_shape"] = list(self.input_shape)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(LayerSpec)}
        layers = []
        for index, raw in enumerate(data["layers"]):
            unknown = set(raw) - known
            if unknown:
                raise ValueError(f"layer {index}: unknown fields {sorted(unknown)}")
            layers.append(LayerSpec(**raw))
        kwargs = {k: v for k, v in data.items() if k not in ("layers", "input_shape")}
        return cls(layers=tuple(layers), input_shape=tuple(data["input_shape"]), **kwargs)


class Signature(NamedTuple):
    """Shape class of the value flowing between layers (batch axis omitted)."""

    kind: str  # vector | sequence | image | tokens | nodes
    dims: tuple


def input_signature(spec: ModelSpec) -> Signature:
    shape = tuple(spec.input_shape)
    first = spec.layers[0].layer_type
    if first == "embedding":
        return Signature("tokens", shape)
    if first in ("gcn", "gat"):
        return Signature("nodes", shape)
    if len(shape) == 3:
        return Signature("image", shape)
    if len(shape) == 2:
        return Signature("sequence", shape)
    return Signature("vector", shape)


def output_signature(layer: LayerSpec, sig: Signature) -> tuple[Signature, Optional[str]]:
    """Propagate a signature through one layer; returns (signature, error)."""
    kind, dims = sig
    t = layer.layer_type
    if t == "linear":
        pooling = layer.pooling
        if pooling == "none":
            if kind not in ("vector", "sequence"):
                return sig, f"{kind} input needs a pooling/reshape option"
            width = dims[-1]
        elif pooling == "flatten":
            width = math.prod(dims)
            kind, dims = "vector", (width,)
        elif pooling == "adaptive_avg":
            if kind != "image":
                return sig, "adaptive_avg pooling needs an image input"
            width = dims[0]
            kind = "vector"
        else:
            if kind != "sequence":
                return sig, f"{pooling} needs a sequence input"
            width = dims[-1]
            kind = "vector"
        if width != layer.input_size:
            return sig, f"expects input_size {layer.input_size}, receives {width}"
        if kind == "sequence":
            return Signature("sequence", dims[:-1] + (layer.output_size,)), None
        return Signature("vector", (layer.output_size,)), None
    if t == "conv":
        if kind != "image":
            return sig, f"conv needs an image input, receives {kind}"
        channels, height, width = dims
        if channels != layer.input_size:
            return sig, f"expects {layer.input_size} channels, receives {channels}"
        k, pad = layer.kernel_size, layer.kernel_size // 2
        if layer.stage_pooling in ("avg", "max"):
            height, width = height // 2, width // 2
        stride = 2 if layer.stage_pooling == "stride" else 1
        height = (height + 2 * pad - k) // stride + 1
        width = (width + 2 * pad - k) // stride + 1
        if height < 1 or width < 1:
            return sig, "spatial extent collapses to zero"
        if layer.shortcut and (height, width) != dims[1:]:
            return sig, "shortcut needs unchanged spatial extent"
        return Signature("image", (layer.output_size, height, width)), None
    if t in ("gcn", "gat"):
        if kind != "nodes" or dims[-1] != layer.input_size:
            return sig, f"expects node features of width {layer.input_size}, receives {kind}{dims}"
        out = layer.output_size
        if t == "gat" and layer.head_concat == "average":
            out = layer.head_dim
        return Signature("nodes", (out,)), None
    if t == "embedding":
        if kind != "tokens":
            return sig, f"embedding needs token input, receives {kind}"
        length = dims[0]
        if length > layer.max_seq_len:
            return sig, f"sequence length {length} exceeds max_seq_len {layer.max_seq_len}"
        return Signature("sequence", (length, layer.output_size)), None
    if t == "mha":
        if kind != "sequence" or dims[-1] != layer.input_size:
            return sig, f"expects a sequence of width {layer.input_size}, receives {kind}{dims}"
        return sig, None
    if t == "kan":
        if kind != "vector" or dims[-1] != layer.input_size:
            return sig, f"expects a vector of width {layer.input_size}, receives {kind}{dims}"
        return Signature("vector", (layer.output_size,)), None
    return sig, f"Unknown layer_type: {t}"


# Generated-hypernetwork template


@dataclass(frozen=True)
class UHNBranches:
    """Layer indices of a generated hypernetwork's branches."""

    index: tuple
    task: tuple
    readout: int


def uhn_branches(spec: ModelSpec) -> UHNBranches:
    """Split a generated-hypernetwork spec into index branch, task branch and readout.

    Linear layers before the first MHA form the index branch; the MHA and the
    linears after it (except the last layer) form the task branch.
    """
    layers = spec.layers
    readout = len(layers) - 1
    mha_at = next((i for i, l in enumerate(layers) if l.layer_type == "mha"), None)
    stop = readout if mha_at is None else mha_at
    index = tuple(range(0, stop))
    task = tuple(range(mha_at, readout)) if mha_at is not None else ()
    return UHNBranches(index=index, task=task, readout=readout)


def _check_uhn_template(spec: ModelSpec) -> list[str]:
    layers = spec.layers
    branches = uhn_branches(spec)
    if not branches.index:
        return ["uhn template needs at least the index input layer"]
    if any(layers[i].layer_type != "linear" for i in branches.index + branches.task[1:] + (branches.readout,)):
        return ["uhn template layers other than the task MHA must be linear"]
    if layers[0].input_size != 2 * spec.num_index_freqs:
        return [f"layer 0 (linear): expects input_size {2 * spec.num_index_freqs} index features"]
    signature = Signature("vector", (2 * spec.num_index_freqs,))
    for i in branches.index:
        signature, error = output_signature(layers[i], signature)
        if error:
            return [f"layer {i} (linear): {error}"]
    hidden = signature.dims[-1]
    if branches.task:
        token = 2 * spec.num_structure_freqs
        task_sig = Signature("sequence", (1, token))
        for i in branches.task:
            task_sig, error = output_signature(layers[i], task_sig)
            if error:
                return [f"layer {i} ({layers[i].layer_type}): {error}"]
        if task_sig.kind != "vector":
            return ["uhn task branch must pool its sequence to a vector"]
        if task_sig.dims[-1] != hidden:
            return [f"uhn task branch width {task_sig.dims[-1]} differs from index width {hidden}"]
    readout = layers[branches.readout]
    if readout.input_size != hidden or readout.output_size != 1:
        return [f"layer {branches.readout} (linear): readout must map {hidden} -> 1"]
    return []


# Parameter layout


@dataclass(frozen=True)
class Component:
    """One parameter tensor of one layer inside the packed weight vector."""

    layer_index: int
    name: str
    shape: tuple
    offset: int
    axes: tuple  # index-descriptor field addressed by each tensor dimension

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def stop(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class ParamLayout:
    components: tuple
    total: int

    def for_layer(self, layer_index: int) -> list[Component]:
        return [c for c in self.components if c.layer_index == layer_index]


def layer_components(layer: LayerSpec) -> list[tuple[str, tuple, tuple]]:
    """(param_type, shape, axes) in packing order for one layer."""
    t = layer.layer_type
    d_in, d_out = layer.input_size, layer.output_size
    matrix = ("out_idx", "in_idx")
    vector = ("out_idx",)
    if t in ("linear", "gcn"):
        comps = [("weight", (d_out, d_in), matrix)]
        if layer.bias:
            comps.append(("bias", (d_out,), vector))
        return comps
    if t == "conv":
        k = layer.kernel_size
        comps = [("weight", (d_out, d_in, k, k), matrix + ("kernel_h_idx", "kernel_w_idx"))]
        if layer.bias:
            comps.append(("bias", (d_out,), vector))
        return comps
    if t == "gat":
        heads, d_h = layer.num_heads, layer.head_dim
        comps = [("weight", (d_out, d_in), matrix)]
        if layer.bias:
            width = d_out if layer.head_concat == "concat" else d_h
            comps.append(("bias", (width,), vector))
        comps.append(("attn_src", (heads, d_h), matrix))
        comps.append(("attn_dst", (heads, d_h), matrix))
        return comps
    if t == "embedding":
        return [
            ("token_embedding", (layer.embedding_num, d_out), ("embedding_idx", "out_idx")),
            ("position_embedding", (layer.max_seq_len, d_out), ("sequence_idx", "out_idx")),
        ]
    if t == "mha":
        d = d_out
        comps = [(f"{p}_weight", (d, d), matrix) for p in ("query", "key", "value")]
        if layer.bias:
            comps += [(f"{p}_bias", (d,), vector) for p in ("query", "key", "value")]
        comps.append(("output_weight", (d, d), matrix))
        if layer.bias:
            comps.append(("output_bias", (d,), vector))
        return comps
    if t == "kan":
        basis = layer.grid_size + layer.spline_order
        knots = layer.grid_size + 2 * layer.spline_order + 1
        comps = [("base_weight", (d_in, d_out), ("in_idx", "out_idx"))]
        if layer.bias:
            comps.append(("base_bias", (d_out,), vector))
        comps += [
            ("spline_weight", (d_in, basis, d_out), ("in_idx", "grid_idx", "out_idx")),
            ("spline_scale", (d_in, d_out), ("in_idx", "out_idx")),
            ("grid_min", (d_in,), ("in_idx",)),
            ("grid_length", (d_in,), ("in_idx",)),
            ("grid_logits", (d_in, knots), ("in_idx", "grid_idx")),
        ]
        return comps
    raise ValueError(f"Unknown layer_type: {t}")


def param_layout(spec: ModelSpec) -> ParamLayout:
    """Canonical layout: layers in forward order, components in listing order."""
    spec.check()
    components = []
    offset = 0
    for index, layer in enumerate(spec.layers):
        for name, shape, axes in layer_components(layer):
            component = Component(index, name, tuple(shape), offset, axes)
            components.append(component)
            offset = component.stop
    return ParamLayout(components=tuple(components), total=offset)


# Serialization


def save_spec(spec: ModelSpec, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec.to_dict(), indent=2), encoding="utf-8")


def load_spec(path: Path) -> ModelSpec:
    return ModelSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
