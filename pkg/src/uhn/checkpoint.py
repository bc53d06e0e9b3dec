"""Generator checkpoints in a schema-tagged ``.npz`` container."""

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .config import CHECKPOINT_SCHEMA
from .descriptors import DescriptorEncoder, NormalizationStats
from .generator import UHNConfig, UHNParameters

log = logging.getLogger(__name__)

PARAM_PREFIX = "param/"


def save_checkpoint(path: Path, params: UHNParameters, meta: Optional[dict] = None) -> Path:
    """Write config, registry digest, stats, frozen matrices and trainable tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoder = params.encoder
    arrays = {
        "schema": np.array(CHECKPOINT_SCHEMA),
        "config": np.array(json.dumps(params.config.to_dict(), sort_keys=True)),
        "registry_digest": np.array(params.registry_digest),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
        "stats_fields": np.array(list(encoder.stats.fields)),
        "stats_min": np.asarray(encoder.stats.minimum, dtype=np.float64),
        "stats_max": np.asarray(encoder.stats.maximum, dtype=np.float64),
        "index_encoding": np.array(encoder.index_encoding),
    }
    if encoder.index_frequencies is not None:
        arrays["index_frequencies"] = encoder.index_frequencies
    if encoder.structure_frequencies is not None:
        arrays["structure_frequencies"] = encoder.structure_frequencies
    for name, value in params.arrays().items():
        arrays[PARAM_PREFIX + name] = value
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    log.debug("Saved checkpoint %s", path)
    return path


def load_checkpoint(path: Path) -> tuple[UHNParameters, dict]:
    """Restore generator parameters and the metadata stored with them."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "schema" not in data.files or str(data["schema"]) != CHECKPOINT_SCHEMA:
            found = str(data["schema"]) if "schema" in data.files else "none"
            raise ValueError(f"{path}: checkpoint schema {found}, expected {CHECKPOINT_SCHEMA}")
        config = UHNConfig.from_dict(json.loads(str(data["config"])))
        stats = NormalizationStats(
            tuple(str(f) for f in data["stats_fields"]), data["stats_min"].copy(), data["stats_max"].copy()
        )
        encoder = DescriptorEncoder(
            stats,
            str(data["index_encoding"]),
            data["index_frequencies"].copy() if "index_frequencies" in data.files else None,
            data["structure_frequencies"].copy() if "structure_frequencies" in data.files else None,
        )
        tensors = {k[len(PARAM_PREFIX) :]: data[k].copy() for k in data.files if k.startswith(PARAM_PREFIX)}
        params = UHNParameters.from_arrays(config, tensors, encoder, str(data["registry_digest"]))
        meta = json.loads(str(data["meta"]))
    return params, meta
