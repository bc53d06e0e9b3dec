"""Statistics-matching initialization targets and loss."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensorcore as tc
from .archspec import LayerSpec, ModelSpec, ParamLayout, param_layout
from .config import KAN_GRID_LENGTH, KAN_GRID_MIN, KAN_SPLINE_STD

INIT_MODES = ("default", "zero")

# Components drawn from a normal distribution when sampling weights directly
NORMAL_COMPONENTS = ("token_embedding", "spline_weight")


def _fan_in_uniform(fan_in: int) -> tuple[float, float]:
    return 0.0, 1.0 / math.sqrt(3.0 * fan_in)


def target_statistics(layer: LayerSpec, component: str) -> tuple[float, float]:
    """Default (mean, std) target for one component of ``layer``."""
    t = layer.layer_type
    d_in, d_out = layer.input_size, layer.output_size
    if t == "linear" and component in ("weight", "bias"):
        return _fan_in_uniform(d_in)
    if t == "conv" and component in ("weight", "bias"):
        return _fan_in_uniform(d_in * layer.kernel_size**2)
    if t == "gcn":
        if component == "weight":
            return 0.0, math.sqrt(2.0 / (d_in + d_out))
        if component == "bias":
            return 0.0, 0.0
    if t == "gat":
        heads, d_h = layer.num_heads, layer.head_dim
        if component == "weight":
            return 0.0, math.sqrt(2.0 / (d_in + heads * d_h))
        if component == "bias":
            return 0.0, 0.0
        if component in ("attn_src", "attn_dst"):
            return 0.0, math.sqrt(2.0 / (d_h + heads))
    if t == "embedding":
        if component == "token_embedding":
            return 0.0, 1.0
        if component == "position_embedding":
            return 0.0, 0.0
    if t == "mha":
        if component in ("query_weight", "key_weight", "value_weight"):
            return 0.0, math.sqrt(1.0 / d_out)
        if component == "output_weight":
            return 0.0, 1.0 / math.sqrt(3.0 * d_out)
        if component in ("query_bias", "key_bias", "value_bias", "output_bias"):
            return 0.0, 0.0
    if t == "kan":
        if component in ("base_weight", "spline_scale"):
            return _fan_in_uniform(d_in)
        if component == "base_bias":
            return 0.0, 0.0
        if component == "spline_weight":
            return 0.0, KAN_SPLINE_STD
        if component == "grid_min":
            return KAN_GRID_MIN, 0.0
        if component == "grid_length":
            return KAN_GRID_LENGTH, 0.0
        if component == "grid_logits":
            return 0.0, 0.0
    raise ValueError(f"{t} layer has no component {component}")


@dataclass
class InitTarget:
    """Target (mean, std) for every component of one layout, keyed like the layout."""

    targets: dict = field(default_factory=dict)
    mode: str = "default"

    @classmethod
    def for_layout(cls, spec: ModelSpec, layout: Optional[ParamLayout] = None, mode: str = "default") -> "InitTarget":
        if mode not in INIT_MODES:
            raise ValueError(f"Unknown init mode: {mode}")
        layout = layout or param_layout(spec)
        targets = {}
        for c in layout.components:
            if mode == "zero":
                targets[(c.layer_index, c.name)] = (0.0, 0.0)
            else:
                targets[(c.layer_index, c.name)] = target_statistics(spec.layers[c.layer_index], c.name)
        return cls(targets, mode)

    @classmethod
    def for_spec(cls, spec: ModelSpec, mode: str = "default") -> "InitTarget":
        return cls.for_layout(spec, None, mode)

    def __getitem__(self, key: tuple) -> tuple[float, float]:
        return self.targets[key]


def init_loss(w, layout: ParamLayout, targets: InitTarget) -> tc.Tensor:
    """Mean over components of squared mean and std errors, halved."""
    w = tc.as_tensor(w)
    if w.shape != (layout.total,):
        raise ValueError(f"init_loss expects {layout.total} weights, got shape {w.shape}")
    if not layout.components:
        raise ValueError("layout has no components")
    terms = []
    for c in layout.components:
        if c.size == 0:
            raise ValueError(f"component {c.name} of layer {c.layer_index} is empty")
        values = w[c.offset : c.stop]
        mu_star, sigma_star = targets[(c.layer_index, c.name)]
        terms.append((tc.mean(values) - mu_star) ** 2 + (tc.std(values) - sigma_star) ** 2)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / (2.0 * len(terms)))


def component_statistics(w, layout: ParamLayout) -> dict:
    """{(layer_index, name): (mean, std)} of a plain weight vector."""
    w = np.asarray(tc.as_tensor(w).data)
    return {(c.layer_index, c.name): (float(w[c.offset : c.stop].mean()), float(w[c.offset : c.stop].std())) for c in layout.components}


def active_init_level(step: int, steps_per_level: int, depth: int) -> int:
    if steps_per_level < 1:
        raise ValueError(f"steps_per_level must be >= 1, got {steps_per_level}")
    return min(depth, step // steps_per_level)


def sample_weights(spec: ModelSpec, rng: np.random.Generator, mode: str = "default") -> np.ndarray:
    """Draw a weight vector whose components follow their targets, for direct training."""
    layout = param_layout(spec)
    targets = InitTarget.for_layout(spec, layout, mode)
    w = np.empty(layout.total)
    for c in layout.components:
        mu, sigma = targets[(c.layer_index, c.name)]
        if sigma == 0.0:
            w[c.offset : c.stop] = mu
        elif c.name in NORMAL_COMPONENTS:
            w[c.offset : c.stop] = rng.normal(mu, sigma, size=c.size)
        else:
            half = math.sqrt(3.0) * sigma
            w[c.offset : c.stop] = rng.uniform(mu - half, mu + half, size=c.size)
    return w
