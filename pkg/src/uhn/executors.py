"""Forward evaluation of target models from packed weight vectors.

Every layer reads its parameters from externally supplied tensors, so the
same code runs base models with generated weights and generated
hypernetworks with weights produced one level up.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensorcore as tc
from .archspec import LayerSpec, ModelSpec, ParamLayout, param_layout, uhn_branches
from .config import DEFAULT_CHUNK_SIZE
from .descriptors import DescriptorEncoder, DescriptorTable, fourier_map
from .tensorcore import Tensor

GAT_SLOPE = 0.2


@dataclass
class GraphContext:
    """Directed edges of A + I and the in-degrees of that matrix."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    degree: np.ndarray

    @classmethod
    def from_edges(cls, num_nodes: int, edges, undirected: bool = True) -> "GraphContext":
        if num_nodes < 1:
            raise ValueError("graph has no nodes")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
            raise ValueError(f"edge {tuple(int(v) for v in bad)} references a node outside 0..{num_nodes - 1}")
        if undirected:
            edges = np.concatenate([edges, edges[:, ::-1]])
        edges = edges[edges[:, 0] != edges[:, 1]]
        loops = np.stack([np.arange(num_nodes), np.arange(num_nodes)], axis=1)
        pairs = np.unique(np.concatenate([edges, loops]), axis=0)
        src, dst = pairs[:, 0], pairs[:, 1]
        return cls(num_nodes, src, dst, np.bincount(dst, minlength=num_nodes))

    @property
    def num_edges(self) -> int:
        return self.src.size

    @property
    def gcn_coefficients(self) -> np.ndarray:
        inv_sqrt = 1.0 / np.sqrt(self.degree)
        return inv_sqrt[self.src] * inv_sqrt[self.dst]

    def dense_adjacency(self) -> np.ndarray:
        adjacency = np.zeros((self.num_nodes, self.num_nodes))
        adjacency[self.dst, self.src] = 1.0
        return adjacency


@dataclass
class EvalMode:
    """Train mode applies seeded dropout; eval mode applies none."""

    train: bool = False
    seed: int = 0
    rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        if self.train and self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def dropout_rng(self) -> Optional[np.random.Generator]:
        return self.rng if self.train else None


EVAL = EvalMode()


# Shared pieces


def activate(x, layer: LayerSpec) -> Tensor:
    kind = layer.activation
    if kind == "none":
        return tc.as_tensor(x)
    if kind == "relu":
        return tc.relu(x)
    if kind == "leaky_relu":
        return tc.leaky_relu(x, layer.activation_param)
    if kind == "elu":
        return tc.elu(x, layer.activation_param or 1.0)
    if kind == "silu":
        return tc.silu(x)
    raise ValueError(f"Unknown activation: {kind}")


def _normalize(x, layer: LayerSpec) -> Tensor:
    if layer.norm == "layer_norm":
        return tc.layer_norm(x)
    if layer.norm == "group_norm":
        return tc.group_norm(x, layer.group_num)
    return tc.as_tensor(x)


def _dropout(x, rate: float, mode: EvalMode) -> Tensor:
    return tc.dropout(x, rate, mode.dropout_rng)


def _affine(x, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    y = tc.matmul(x, tc.transpose(weight))
    return y + bias if bias is not None else y


def attention(q, k, v, heads: int, mask=None, dropout_rate: float = 0.0, rng=None) -> Tensor:
    """Scaled dot-product attention over (n, T, d) projections split into heads.

    ``mask`` is a boolean (n, T) array; False keys receive -inf logits. Every
    row needs at least one visible key.
    """
    q, k, v = tc.as_tensor(q), tc.as_tensor(k), tc.as_tensor(v)
    n, length, width = q.shape
    if heads < 1 or width % heads != 0:
        raise ValueError(f"{heads} heads do not divide width {width}")
    head_dim = width // heads

    def split(t):
        return tc.transpose(tc.reshape(t, (n, length, heads, head_dim)), (0, 2, 1, 3))

    scores = tc.matmul(split(q), tc.transpose(split(k), (0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, length):
            raise ValueError(f"attention mask has shape {mask.shape}, expected {(n, length)}")
        empty = np.flatnonzero(~mask.any(axis=1))
        if empty.size:
            raise ValueError(f"attention mask hides every key of sequence {int(empty[0])}")
        scores = scores + np.where(mask, 0.0, -np.inf)[:, None, None, :]
    weights = tc.dropout(tc.softmax(scores, axis=-1), dropout_rate, rng)
    out = tc.matmul(weights, split(v))
    return tc.reshape(tc.transpose(out, (0, 2, 1, 3)), (n, length, width))


def _pool_input(x: Tensor, pooling: str) -> Tensor:
    if pooling == "none":
        if x.ndim == 4:
            raise ValueError("a linear layer never receives image input without pooling")
        return x
    if pooling == "flatten":
        return tc.reshape(x, (x.shape[0], -1))
    if pooling == "adaptive_avg":
        pooled = tc.adaptive_avg_pool2d(x, (1, 1))
        return tc.reshape(pooled, pooled.shape[:2])
    if pooling == "sequence_mean":
        return tc.mean(x, axis=1)
    if pooling == "first_token":
        return x[:, 0, :]
    raise ValueError(f"Unknown pooling: {pooling}")


# Layer primitives


def linear_forward(x, weight, bias, layer: LayerSpec, mode: EvalMode = EVAL) -> Tensor:
    """Y = Skip(P(X)) + R(N(act(P(X))) W + b)."""
    pooled = _pool_input(tc.as_tensor(x), layer.pooling)
    y = _affine(_normalize(activate(pooled, layer), layer), weight, bias)
    y = _dropout(y, layer.dropout, mode)
    return pooled + y if layer.shortcut else y


def conv_forward(x, weight, bias, layer: LayerSpec, mode: EvalMode = EVAL) -> Tensor:
    """Y = Skip(X) + R(Conv(P(N(act(X))); W) + b) with 'same' padding."""
    x = tc.as_tensor(x)
    h = _normalize(activate(x, layer), layer)
    if layer.stage_pooling == "avg":
        h = tc.avg_pool2d(h, 2)
    elif layer.stage_pooling == "max":
        h = tc.max_pool2d(h, 2)
    stride = 2 if layer.stage_pooling == "stride" else 1
    y = tc.conv2d(h, weight, stride=stride, padding=layer.kernel_size // 2)
    if bias is not None:
        y = y + tc.reshape(bias, (1, -1, 1, 1))
    y = _dropout(y, layer.dropout, mode)
    if layer.shortcut:
        if y.shape != x.shape:
            raise ValueError(f"conv shortcut shapes differ: {x.shape} vs {y.shape}")
        y = x + y
    return y


def gcn_forward(x, weight, bias, ctx: GraphContext, layer: LayerSpec, mode: EvalMode = EVAL) -> Tensor:
    """Y = D^-1/2 (A + I) D^-1/2 (R(N(act(X))) W) + b."""
    if ctx is None or ctx.num_nodes < 1:
        raise ValueError("gcn layer needs a non-empty graph")
    h = _dropout(_normalize(activate(x, layer), layer), layer.dropout, mode)
    h = tc.matmul(h, tc.transpose(weight))
    messages = tc.gather(h, ctx.src, axis=0) * ctx.gcn_coefficients[:, None]
    y = tc.scatter_add(messages, ctx.dst, ctx.num_nodes)
    return y + bias if bias is not None else y


def gat_forward(
    x, weight, bias, attn_src, attn_dst, ctx: GraphContext, layer: LayerSpec, mode: EvalMode = EVAL
) -> Tensor:
    """Per-head attention over incoming edges, combined by concat or average."""
    if ctx is None or ctx.num_nodes < 1:
        raise ValueError("gat layer needs a non-empty graph")
    heads = layer.num_heads
    if heads < 1 or layer.output_size % heads != 0:
        raise ValueError(f"gat: {heads} heads do not divide output_size {layer.output_size}")
    head_dim = layer.output_size // heads
    n = ctx.num_nodes
    h = _dropout(_normalize(activate(x, layer), layer), layer.dropout, mode)
    z = tc.reshape(tc.matmul(h, tc.transpose(weight)), (n, heads, head_dim))
    score_src = tc.tsum(z * tc.reshape(attn_src, (1, heads, head_dim)), axis=-1)
    score_dst = tc.tsum(z * tc.reshape(attn_dst, (1, heads, head_dim)), axis=-1)
    logits = tc.leaky_relu(tc.gather(score_src, ctx.src) + tc.gather(score_dst, ctx.dst), GAT_SLOPE)
    # softmax is shift invariant per destination; the shift is a constant
    peak = np.full((n, heads), -np.inf)
    np.maximum.at(peak, ctx.dst, logits.data)
    weights = tc.exp(logits - peak[ctx.dst])
    denom = tc.scatter_add(weights, ctx.dst, n)
    beta = weights / tc.gather(denom, ctx.dst)
    messages = tc.gather(z, ctx.src) * tc.reshape(beta, beta.shape + (1,))
    combined = tc.scatter_add(messages, ctx.dst, n)
    if layer.head_concat == "average":
        y = tc.mean(combined, axis=1)
    else:
        y = tc.reshape(combined, (n, heads * head_dim))
    return y + bias if bias is not None else y


def embedding_forward(tokens, table, positions, layer: LayerSpec, mode: EvalMode = EVAL) -> Tensor:
    """Y = R(Emb(X) + P[:T])."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"token input must be (n, T), got shape {tokens.shape}")
    vocab = tc.as_tensor(table).shape[0]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise ValueError(f"token id outside 0..{vocab - 1}")
    length = tokens.shape[1]
    if length > tc.as_tensor(positions).shape[0]:
        raise ValueError(f"sequence length {length} exceeds max_seq_len {tc.as_tensor(positions).shape[0]}")
    y = tc.gather(table, tokens.astype(np.int64), axis=0) + tc.as_tensor(positions)[:length]
    return _dropout(y, layer.dropout, mode)


def mha_forward(
    x,
    wq,
    wk,
    wv,
    wo,
    bq=None,
    bk=None,
    bv=None,
    bo=None,
    layer: Optional[LayerSpec] = None,
    mode: EvalMode = EVAL,
    mask=None,
) -> Tensor:
    """Pre-activation multi-head attention with optional shortcut."""
    x = tc.as_tensor(x)
    if layer.num_heads < 1 or layer.output_size % layer.num_heads != 0:
        raise ValueError(f"mha: {layer.num_heads} heads do not divide width {layer.output_size}")
    h = _normalize(activate(x, layer), layer)
    attended = attention(
        _affine(h, wq, bq),
        _affine(h, wk, bk),
        _affine(h, wv, bv),
        layer.num_heads,
        mask=mask,
        dropout_rate=layer.dropout,
        rng=mode.dropout_rng,
    )
    y = _dropout(_affine(attended, wo, bo), layer.dropout, mode)
    return x + y if layer.shortcut else y


def bspline_basis(x, knots, order: int) -> Tensor:
    """Cox-de Boor basis of ``order`` for (n, d) inputs and (d, M) knots: (n, d, M - 1 - order)."""
    x, knots = tc.as_tensor(x), tc.as_tensor(knots)
    if np.any(np.diff(knots.data, axis=-1) <= 0):
        raise ValueError("knots must be strictly increasing")
    if knots.shape[-1] < order + 2:
        raise ValueError(f"order {order} needs at least {order + 2} knots, got {knots.shape[-1]}")
    n, d = x.shape
    xe = tc.reshape(x, (n, d, 1))
    t = tc.reshape(knots, (1,) + knots.shape)
    inside = (xe.data >= t.data[..., :-1]) & (xe.data < t.data[..., 1:])
    bases = tc.Tensor(inside)
    for k in range(1, order + 1):
        left = (xe - t[..., : -(k + 1)]) / (t[..., k:-1] - t[..., : -(k + 1)]) * bases[..., :-1]
        right = (t[..., k + 1 :] - xe) / (t[..., k + 1 :] - t[..., 1:-k]) * bases[..., 1:]
        bases = left + right
    return bases


def kan_knots(grid_min, grid_length, grid_logits) -> Tensor:
    """g = g_min + exp(delta) * cumsum(softmax(kappa)) per input coordinate."""
    grid_min, grid_length = tc.as_tensor(grid_min), tc.as_tensor(grid_length)
    d = grid_min.shape[0]
    steps = tc.cumsum(tc.softmax(grid_logits, axis=-1), axis=-1)
    return tc.reshape(grid_min, (d, 1)) + tc.reshape(tc.exp(grid_length), (d, 1)) * steps


def kan_forward(
    x,
    base_weight,
    base_bias,
    spline_weight,
    spline_scale,
    grid_min,
    grid_length,
    grid_logits,
    layer: LayerSpec,
) -> Tensor:
    """Y = act(X) W_base + b_base + Phi(X) reshape(W_spline * S)."""
    x = tc.as_tensor(x)
    knots = kan_knots(grid_min, grid_length, grid_logits)
    if not np.all(np.isfinite(knots.data)):
        raise ValueError("kan knots are not finite")
    n, d = x.shape
    basis = bspline_basis(x, knots, layer.spline_order)
    spline_weight = tc.as_tensor(spline_weight)
    _, width, d_out = spline_weight.shape
    scaled = spline_weight * tc.reshape(spline_scale, (d, 1, d_out))
    y = tc.matmul(activate(x, layer), base_weight)
    if base_bias is not None:
        y = y + base_bias
    return y + tc.matmul(tc.reshape(basis, (n, d * width)), tc.reshape(scaled, (d * width, d_out)))


# Model composition


def unpack(w: Tensor, layout: ParamLayout, num_layers: int) -> list[dict]:
    """Per-layer {component: tensor} views into the packed weight vector."""
    per_layer = [{} for _ in range(num_layers)]
    for c in layout.components:
        per_layer[c.layer_index][c.name] = tc.reshape(w[c.offset : c.stop], c.shape)
    return per_layer


def layer_forward(
    layer: LayerSpec,
    p: dict,
    x,
    ctx: Optional[GraphContext] = None,
    mode: EvalMode = EVAL,
    mask=None,
):
    t = layer.layer_type
    if t == "linear":
        return linear_forward(x, p["weight"], p.get("bias"), layer, mode)
    if t == "conv":
        return conv_forward(x, p["weight"], p.get("bias"), layer, mode)
    if t == "gcn":
        return gcn_forward(x, p["weight"], p.get("bias"), ctx, layer, mode)
    if t == "gat":
        return gat_forward(x, p["weight"], p.get("bias"), p["attn_src"], p["attn_dst"], ctx, layer, mode)
    if t == "embedding":
        return embedding_forward(x, p["token_embedding"], p["position_embedding"], layer, mode)
    if t == "mha":
        return mha_forward(
            x,
            p["query_weight"],
            p["key_weight"],
            p["value_weight"],
            p["output_weight"],
            p.get("query_bias"),
            p.get("key_bias"),
            p.get("value_bias"),
            p.get("output_bias"),
            layer=layer,
            mode=mode,
            mask=mask,
        )
    if t == "kan":
        return kan_forward(
            x,
            p["base_weight"],
            p.get("base_bias"),
            p["spline_weight"],
            p["spline_scale"],
            p["grid_min"],
            p["grid_length"],
            p["grid_logits"],
            layer,
        )
    raise ValueError(f"Unknown layer_type: {t}")


def model_forward(
    spec: ModelSpec,
    w,
    inputs,
    ctx: Optional[GraphContext] = None,
    mode: EvalMode = EVAL,
    mask=None,
) -> Tensor:
    """f(X) = f_L(...f_1(X)) with parameters unpacked from ``w``."""
    if spec.model_type == "uhn":
        raise ValueError("generated hypernetworks are evaluated with generated_uhn_forward")
    layout = param_layout(spec)
    w = tc.as_tensor(w)
    if w.shape != (layout.total,):
        raise ValueError(f"{spec.name or spec.model_type} expects {layout.total} weights, got shape {w.shape}")
    params = unpack(w, layout, spec.num_layers)
    x = inputs
    if spec.layers[0].layer_type != "embedding":
        x = tc.as_tensor(inputs)
    for index, layer in enumerate(spec.layers):
        x = layer_forward(layer, params[index], x, ctx, mode, mask)
    return x


def _plain(layer: LayerSpec) -> bool:
    return layer.activation == "none" and layer.norm == "none" and not layer.shortcut and layer.dropout == 0.0


def generated_uhn_forward(
    spec_h: ModelSpec,
    theta,
    table: DescriptorTable,
    encoder: DescriptorEncoder,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Tensor:
    """Run a generated hypernetwork on a descriptor table with the root's shared encoder."""
    if spec_h.model_type != "uhn":
        raise ValueError(f"expected a uhn template, got model_type {spec_h.model_type}")
    layout = param_layout(spec_h)
    theta = tc.as_tensor(theta)
    if theta.shape != (layout.total,):
        raise ValueError(f"generated hypernetwork expects {layout.total} parameters, got shape {theta.shape}")
    if encoder.index_encoding != "gaussian" or encoder.index_frequencies is None:
        raise ValueError("generated hypernetworks need the shared gaussian index frequencies")
    if encoder.index_frequencies.shape[0] != spec_h.num_index_freqs:
        raise ValueError(
            f"template expects {spec_h.num_index_freqs} index frequencies, "
            f"shared matrix has {encoder.index_frequencies.shape[0]}"
        )
    params = unpack(theta, layout, spec_h.num_layers)
    branches = uhn_branches(spec_h)
    layers = spec_h.layers

    task_feature = None
    if branches.task:
        frequencies = encoder.structure_frequencies
        if frequencies is None or frequencies.shape[0] != spec_h.num_structure_freqs:
            raise ValueError(f"template expects {spec_h.num_structure_freqs} shared structure frequencies")
        psi = fourier_map(encoder.normalized_tokens(table.tokens), frequencies)
        h = tc.Tensor(psi[None])
        for i in branches.task:
            h = layer_forward(layers[i], params[i], h)
        task_feature = tc.reshape(h, (h.shape[-1],))

    x_hat = encoder.normalized_index(table.index)
    first, rest = branches.index[0], branches.index[1:]
    chunks = []
    for start in range(0, table.num_params, chunk_size):
        rows = x_hat[start : start + chunk_size]
        p0 = params[first]
        if _plain(layers[first]) and layers[first].pooling == "none":
            h = tc.fourier_linear(rows, encoder.index_frequencies, p0["weight"])
            if "bias" in p0:
                h = h + p0["bias"]
        else:
            h = layer_forward(layers[first], p0, fourier_map(rows, encoder.index_frequencies))
        for i in rest:
            h = layer_forward(layers[i], params[i], h)
        if task_feature is not None:
            h = h + task_feature
        chunks.append(layer_forward(layers[branches.readout], params[branches.readout], h))
    out = chunks[0] if len(chunks) == 1 else tc.concat(chunks, axis=0)
    return tc.reshape(out, (table.num_params,))
