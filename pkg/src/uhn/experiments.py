"""Experiment definitions: config schema, desk-scale runs and parameter-count reports."""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensorcore as tc
from .archspec import ModelSpec, param_layout
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ABLATION_CLIP_NORM,
    ARTIFACT_ROOT_ENV,
    BATCH_SIZE,
    CHUNK_BASELINE_EMBEDDING,
    CHUNK_BASELINE_HIDDEN,
    DEFAULT_CHUNK_SIZE,
    DESK_TASK_PROBABILITIES,
    INDEX_ENCODINGS,
    OUTPUT_DIR,
    PRECISION_TRAIN,
    RECURSIVE_CLIP_NORM,
    RECURSIVE_WARMUP_STEPS,
    WARMUP_EPOCHS,
    WARMUP_STEPS,
)
from .csv_store import MetricsLog, SummaryTable
from .datasets import FORMULAS, DatasetHandle, load_dataset
from .descriptors import DescriptorCache, TaskDescriptor, compute_stats, write_stats
from .families import (
    FAMILIES,
    build_model_set,
    chunked_baseline_bound,
    chunked_baseline_count,
    default_split_sizes,
    generated_uhn_template,
    named_model,
    optimal_chunk_size,
    save_model_set,
    split_model_set,
)
from .generator import UHNConfig, UHNParameters, init_uhn, uhn_param_count
from .initstats import INIT_MODES, sample_weights
from .registry import default_registry
from .trainer import (
    ChainSpec,
    RngStreams,
    TaskDistribution,
    TaskSpec,
    evaluate,
    evaluate_chain,
    evaluate_model_set,
    generate_chain,
    recursive_learning_rates,
    run_direct_training,
    run_initialization,
    run_training,
)

log = logging.getLogger(__name__)

KINDS = ("single-model", "multi-model", "multi-task", "recursive", "ablation")

DEFAULT_MODELS = {
    "mnist": "mlp_mnist",
    "toy_image": "cnn_toy",
    "synthetic_text": "transformer_toy",
    "toy_graph": "gcn_toy_graph",
}

# Generator presets layered under ExperimentConfig.uhn
TASK_PRESETS = {"mnist": {"index_freqs": 1024, "hidden": 64}}
RECURSIVE_PRESET = {"index_freqs": 1024, "hidden": 64, "blocks": 2, "use_tse": True}

ENCODING_VARIANTS = INDEX_ENCODINGS
CAPACITY_GRID = (
    "index_freqs=256",
    "index_freqs=512",
    "index_freqs=1024",
    "index_freqs=2048",
    "index_freqs=4096",
    "hidden=32",
    "hidden=64",
    "hidden=128",
    "hidden=256",
    "blocks=0",
    "blocks=1",
    "blocks=2",
    "blocks=3",
)

ARTIFACTS = ("config.json", "metrics.csv", "summary.csv", "stats.csv", "checkpoint.npz")


def default_model(task: str) -> str:
    if task in DEFAULT_MODELS:
        return DEFAULT_MODELS[task]
    if task in FORMULAS:
        if task == "ellipj":
            return "kan_g5_ellipj"
        return "kan_g10" if task in ("jv", "yv") else "kan_g5"
    raise ValueError(f"No default model for task {task}")


def full_batch(dataset: DatasetHandle) -> bool:
    return dataset.graph is not None or dataset.kind == "synthetic_formula"


@dataclass
class ExperimentConfig:
    """Everything one run needs; ``None`` fields fall back to per-kind defaults."""

    kind: str = "single-model"
    name: str = ""
    uhn: dict = field(default_factory=dict)
    task: str = "toy_image"
    model: str = ""
    family: str = "cnn_mixed_width_toy"
    model_set_size: int = 6
    model_set_splits: list = field(default_factory=lambda: [4, 2, 1, 2])
    tasks: dict = field(default_factory=dict)
    depth: int = 1
    variants: list = field(default_factory=list)
    init_steps: int = 100
    steps_per_level: Optional[int] = None
    init_lr: float = 1e-3
    init_warmup_steps: Optional[int] = None
    init_mode: str = "default"
    train_steps: int = 200
    train_epochs: int = 0
    train_lr: float = 1e-3
    warmup_steps: Optional[int] = None
    warmup_epochs: Optional[int] = None
    batch_size: int = BATCH_SIZE
    clip_norm: Optional[float] = None
    chunk_size: int = DEFAULT_CHUNK_SIZE
    seed: int = 0
    precision: str = PRECISION_TRAIN
    output_dir: str = ""
    dataset_options: dict = field(default_factory=dict)
    direct_baseline: bool = False
    log_wall_time: bool = False
    plots: bool = False

    @property
    def experiment_name(self) -> str:
        return self.name or f"{self.kind}-{self.seed}"

    @property
    def model_name(self) -> str:
        return self.model or default_model(self.task)

    @property
    def task_probabilities(self) -> dict:
        return dict(self.tasks) if self.tasks else dict(DESK_TASK_PROBABILITIES)

    @property
    def variant_names(self) -> list:
        return list(self.variants) if self.variants else list(ENCODING_VARIANTS)

    def uhn_config(self, variant: Optional[str] = None) -> UHNConfig:
        """Kind and task presets, then ``uhn`` overrides, then the ablation variant."""
        values: dict = {}
        if self.kind == "recursive":
            values.update(RECURSIVE_PRESET)
        elif self.kind in ("multi-model", "multi-task"):
            values["use_tse"] = True
        else:
            values.update(TASK_PRESETS.get(self.task, {}))
        values.update(self.uhn)
        if variant is not None:
            values.update(parse_variant(variant))
        return UHNConfig.from_dict(values)

    def init_total_steps(self) -> int:
        """Recursive runs spend S_lvl = S_init / 2 per level over K + 1 levels."""
        if self.kind == "recursive":
            return (self.depth + 1) * self.level_steps()
        return self.init_steps

    def level_steps(self) -> int:
        if self.steps_per_level is not None:
            return self.steps_per_level
        return self.init_steps // 2 if self.kind == "recursive" else self.init_steps

    def validate(self) -> list[str]:
        """Return human-readable errors; an empty list means the config is usable."""
        errors = []
        if self.kind not in KINDS:
            errors.append(f"kind must be one of {KINDS}, got {self.kind}")
            return errors
        try:
            uhn = self.uhn_config()
            errors.extend(f"uhn: {e}" for e in uhn.validate())
        except (TypeError, ValueError) as e:
            errors.append(f"uhn: {e}")
            uhn = None
        if self.kind == "multi-task":
            probs = self.task_probabilities
            if any(p < 0 for p in probs.values()) or abs(sum(probs.values()) - 1.0) > 1e-9:
                errors.append(f"task probabilities must be nonnegative and sum to 1, got {probs}")
            for task in probs:
                try:
                    default_model(task)
                except ValueError as e:
                    errors.append(str(e))
            if self.train_epochs:
                errors.append("train_epochs needs a single task; use train_steps for multi-task runs")
        elif self.kind != "multi-model":
            try:
                named_model(self.model_name)
            except ValueError as e:
                errors.append(str(e))
        if self.kind == "multi-model":
            if self.family not in FAMILIES:
                errors.append(f"family must be one of {FAMILIES}, got {self.family}")
            if self.model_set_size < 1:
                errors.append("model_set_size must be >= 1")
            splits = self.split_sizes()
            if splits is None:
                errors.append(f"model_set_splits needed for |M|={self.model_set_size}")
            elif len(splits) != 4 or sum(splits[:2]) != self.model_set_size or sum(splits[2:]) > splits[0]:
                errors.append(f"model_set_splits {list(splits)} do not split |M|={self.model_set_size}")
        if self.kind == "recursive":
            if not 1 <= self.depth <= 3:
                errors.append(f"depth must be 1..3, got {self.depth}")
            if uhn is not None and (not uhn.use_tse or uhn.index_encoding != "gaussian"):
                errors.append("recursive runs need a gaussian-encoded root with the task-structure encoder")
        if self.kind == "ablation":
            for variant in self.variant_names:
                try:
                    parse_variant(variant)
                except ValueError as e:
                    errors.append(str(e))
        if self.init_mode not in INIT_MODES:
            errors.append(f"init_mode must be one of {INIT_MODES}, got {self.init_mode}")
        for name in ("init_steps", "train_steps", "train_epochs", "seed"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        for name in ("steps_per_level", "init_warmup_steps", "warmup_steps", "warmup_epochs"):
            value = getattr(self, name)
            if value is not None and value < 0:
                errors.append(f"{name} must be >= 0")
        if self.kind == "recursive" and self.init_steps > 0 and self.level_steps() < 1:
            errors.append("steps_per_level must be >= 1")
        if self.init_lr <= 0 or self.train_lr <= 0:
            errors.append("learning rates must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            errors.append("clip_norm must be positive")
        if self.chunk_size < 1:
            errors.append("chunk_size must be >= 1")
        if self.precision not in ("float64", "float32"):
            errors.append(f"precision must be float64 or float32, got {self.precision}")
        return errors

    def split_sizes(self) -> Optional[tuple]:
        if self.model_set_splits:
            return tuple(int(s) for s in self.model_set_splits)
        try:
            return default_split_sizes(self.model_set_size)
        except ValueError:
            return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown config key: {unknown[0]}")
        return cls(**data)

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data.get("config", data))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def parse_variant(variant: str) -> dict:
    """"raw" / "positional" / "gaussian" or a "field=value" generator override."""
    if variant in ENCODING_VARIANTS:
        return {"index_encoding": variant}
    key, sep, value = variant.partition("=")
    if not sep or key not in ("index_freqs", "hidden", "blocks", "structure_freqs", "heads"):
        raise ValueError(f"Unknown ablation variant: {variant}")
    try:
        return {key: int(value)}
    except ValueError:
        raise ValueError(f"Ablation variant {variant} needs an integer value") from None


def resolve_output_dir(config: ExperimentConfig, output: Optional[Path] = None) -> Path:
    """--output, then config.output_dir, then $UHN_ARTIFACT_ROOT/<kind>-<seed>, then output/<kind>-<seed>."""
    if output:
        return Path(output)
    if config.output_dir:
        return Path(config.output_dir)
    leaf = f"{config.kind}-{config.seed}"
    root = os.environ.get(ARTIFACT_ROOT_ENV)
    return Path(root) / leaf if root else OUTPUT_DIR / leaf


def clip_norms(config: ExperimentConfig, uhn: UHNConfig) -> tuple[Optional[float], Optional[float]]:
    """(initialization, training) gradient clip thresholds."""
    if config.clip_norm is not None:
        return config.clip_norm, config.clip_norm
    if config.kind == "recursive":
        return RECURSIVE_CLIP_NORM, RECURSIVE_CLIP_NORM
    if uhn.index_encoding != "gaussian":
        return None, ABLATION_CLIP_NORM
    return None, None


# Tasks


def _load(config: ExperimentConfig, name: str) -> DatasetHandle:
    return load_dataset(name, seed=config.seed, **config.dataset_options.get(name, {}))


def _task(config: ExperimentConfig, name: str, models: list, template: Optional[ModelSpec] = None) -> TaskSpec:
    dataset = _load(config, name)
    batch_size = 0 if full_batch(dataset) else config.batch_size
    depth = config.depth if template is not None else 0
    return TaskSpec(name, dataset, models, batch_size, depth, template)


def _steps_per_epoch(task: TaskSpec) -> int:
    if task.batch_size <= 0 or task.dataset.graph is not None:
        return 1
    return math.ceil(len(task.dataset.train) / task.batch_size)


def training_schedule(config: ExperimentConfig, task: TaskSpec) -> tuple[int, int]:
    """(steps, warmup) from either step or epoch budgets.

    Without an explicit warmup, epoch budgets warm up for WARMUP_EPOCHS epochs and
    step budgets for WARMUP_STEPS steps; the trainer caps warmup below the run length.
    """
    per_epoch = _steps_per_epoch(task)
    steps = config.train_epochs * per_epoch if config.train_epochs else config.train_steps
    if config.warmup_steps is not None:
        warmup = config.warmup_steps
    elif config.warmup_epochs is not None:
        warmup = config.warmup_epochs * per_epoch
    elif config.train_epochs:
        warmup = WARMUP_EPOCHS * per_epoch
    else:
        warmup = WARMUP_STEPS
    return steps, warmup


def _template(config: ExperimentConfig, uhn: UHNConfig) -> Optional[ModelSpec]:
    if config.kind != "recursive":
        return None
    return generated_uhn_template(uhn.index_freqs, uhn.structure_freqs)


def _family_kwargs(dataset: DatasetHandle) -> dict:
    shape = dataset.input_shape
    kwargs = {"num_classes": dataset.num_classes}
    if len(shape) == 3:
        kwargs.update(in_channels=shape[0], image_size=shape[-1])
    return kwargs


def _sample_models(config: ExperimentConfig, dataset: DatasetHandle, streams: RngStreams):
    models = build_model_set(config.family, config.model_set_size, streams["model_set"], **_family_kwargs(dataset))
    return split_model_set(models, config.split_sizes(), streams["model_set"])


# Runs


def _write_config(out: Path, config: ExperimentConfig, uhn: Optional[UHNConfig], notes: dict) -> None:
    payload = {
        "config": config.to_dict(),
        "uhn": uhn.to_dict() if uhn is not None else None,
        "registry_digest": default_registry().digest,
        "dataset_notes": notes,
    }
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def run_experiment(config: ExperimentConfig, output: Optional[Path] = None) -> Path:
    """Run one experiment and write its artifact directory."""
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    tc.set_precision(config.precision)
    out = resolve_output_dir(config, output)
    out.mkdir(parents=True, exist_ok=True)
    if config.kind == "ablation":
        return _run_ablation(config, out)
    summary = SummaryTable(out / "summary.csv")
    _run_single(config, out, summary)
    summary.write()
    if config.plots:
        from .plots import plot_run

        plot_run(out)
    log.info("Artifacts written to %s", out)
    return out


def _run_ablation(config: ExperimentConfig, out: Path) -> Path:
    summary = SummaryTable(out / "summary.csv")
    for variant in config.variant_names:
        sub = ExperimentConfig.from_dict(
            {**config.to_dict(), "kind": "single-model", "name": f"{config.experiment_name}/{variant}", "output_dir": ""}
        )
        sub.uhn = config.uhn_config(variant).to_dict()
        log.info("Ablation variant %s", variant)
        _run_single(sub, out / variant.replace("=", "-"), summary, kind="ablation")
    _write_config(out, config, None, {})
    summary.write()
    if config.plots:
        from .plots import plot_summary

        plot_summary(out / "summary.csv", out / "summary.png")
    return out


def _run_single(config: ExperimentConfig, out: Path, summary: SummaryTable, kind: Optional[str] = None) -> None:
    """One generator trained and evaluated; rows are added to ``summary``."""
    out.mkdir(parents=True, exist_ok=True)
    kind = kind or config.kind
    streams = RngStreams(config.seed)
    uhn = config.uhn_config()
    template = _template(config, uhn)
    cache = DescriptorCache()
    model_set = None

    if config.kind == "multi-task":
        names = list(config.task_probabilities)
        tasks = [_task(config, n, [named_model(default_model(n))]) for n in names]
        distribution = TaskDistribution(tasks, [config.task_probabilities[n] for n in names])
    elif config.kind == "multi-model":
        task = _task(config, config.task, [])
        model_set = _sample_models(config, task.dataset, streams)
        task.models = model_set.train
        distribution = TaskDistribution.single(task)
    else:
        model = named_model(config.model_name)
        distribution = TaskDistribution.single(_task(config, config.task, [model], template))

    tasks = distribution.tasks
    init_chains = [ChainSpec.build(m, t.descriptor, t.depth, t.template, cache) for t in tasks for m in t.models]
    seen = list(init_chains)
    if model_set is not None:
        seen += [ChainSpec.build(m, tasks[0].descriptor, cache=cache) for m in model_set.test]
    stats = compute_stats(table for chain in seen for table in chain.tables)
    write_stats(stats, out / "stats.csv")

    digest = default_registry().digest
    params = init_uhn(uhn, stats, streams["generator"], fourier_rng=streams["fourier"], registry_digest=digest)
    _write_config(out, config, uhn, {t.name: t.dataset.notes for t in tasks if t.dataset.notes})
    if model_set is not None:
        save_model_set(model_set, out / "model_set.json", config.seed, digest)

    metrics = MetricsLog(out / "metrics.csv", config.log_wall_time)
    metrics.clear()
    checkpoint = out / "checkpoint.npz"
    init_clip, train_clip = clip_norms(config, uhn)
    if config.kind == "recursive":
        init_lr, train_lr = recursive_learning_rates(config.init_lr, config.train_lr, config.depth)
        init_warmup = RECURSIVE_WARMUP_STEPS if config.init_warmup_steps is None else config.init_warmup_steps
    else:
        init_lr, train_lr = config.init_lr, config.train_lr
        init_warmup = config.init_warmup_steps or 0

    run_initialization(
        params,
        init_chains,
        config.init_total_steps(),
        init_lr,
        streams,
        steps_per_level=config.level_steps(),
        warmup=init_warmup,
        clip_norm=init_clip,
        mode=config.init_mode,
        metrics=metrics,
        checkpoint_path=checkpoint,
        chunk_size=config.chunk_size,
    )
    steps, warmup = training_schedule(config, tasks[0])
    run_training(
        params,
        distribution,
        steps,
        train_lr,
        warmup,
        streams,
        clip_norm=train_clip,
        metrics=metrics,
        checkpoint_path=checkpoint,
        cache=cache,
        chunk_size=config.chunk_size,
    )
    meta = {
        "experiment": config.experiment_name,
        "kind": config.kind,
        "seed": config.seed,
        "tasks": [t.name for t in tasks],
        "models": [config.model_name] if config.kind in ("single-model", "recursive") else [],
        "depth": config.depth if config.kind == "recursive" else 0,
    }
    save_checkpoint(checkpoint, params, meta)

    generator_params = uhn_param_count(uhn)
    row = dict(experiment=config.experiment_name, kind=kind, generator_params=generator_params, seed=config.seed)
    if model_set is not None:
        result = evaluate_model_set(params, model_set, tasks[0], cache, config.chunk_size)
        for split in ("seen", "unseen"):
            summary.add(task=tasks[0].name, model=config.family, split=split, metric=result["metric"], value=result[split], **row)
        return
    for task in tasks:
        chain = ChainSpec.build(task.models[0], task.descriptor, task.depth, task.template, cache)
        metric, value = evaluate_chain(params, chain, task.dataset, "test", config.chunk_size)
        n = param_layout(chain.leaf).total
        summary.add(task=task.name, model=chain.leaf.name, split="test", metric=metric, value=value, num_params=n, **row)
    if config.direct_baseline and config.kind in ("single-model", "recursive"):
        task = tasks[0]
        spec = task.models[0]
        w0 = sample_weights(spec, streams["direct"], config.init_mode)
        w = run_direct_training(
            spec, w0, task.dataset, steps, config.train_lr, warmup, streams, task.batch_size, train_clip, metrics
        )
        metric, value = evaluate(spec, w, task.dataset, "test")
        summary.add(
            experiment=config.experiment_name,
            kind=kind,
            task=task.name,
            model=spec.name,
            split="direct-test",
            metric=metric,
            value=value,
            num_params=param_layout(spec).total,
            seed=config.seed,
        )


# Checkpoint inspection


def _checkpoint_chain(params: UHNParameters, meta: dict, task: str, model: str, depth: Optional[int]) -> ChainSpec:
    depth = meta.get("depth", 0) if depth is None else depth
    template = generated_uhn_template(params.config.index_freqs, params.config.structure_freqs) if depth else None
    return ChainSpec.build(named_model(model), TaskDescriptor.for_dataset(task), depth, template)


def evaluate_checkpoint(
    path: Path,
    task: Optional[str] = None,
    model: Optional[str] = None,
    depth: Optional[int] = None,
    seed: int = 0,
    dataset_options: Optional[dict] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> tuple[str, float]:
    """Generate weights from a saved generator and evaluate them on a task's test split."""
    params, meta = load_checkpoint(path)
    task = task or (meta.get("tasks") or [None])[0]
    if task is None:
        raise ValueError(f"{path}: checkpoint names no task; pass one explicitly")
    model = model or (meta.get("models") or [default_model(task)])[0]
    chain = _checkpoint_chain(params, meta, task, model, depth)
    dataset = load_dataset(task, seed=seed, **(dataset_options or {}))
    return evaluate_chain(params, chain, dataset, "test", chunk_size)


def describe_chain(
    params: UHNParameters, task: str, model: str, depth: int, chunk_size: int = DEFAULT_CHUNK_SIZE
) -> list[dict]:
    """Per-level output size and moments along a recursion chain."""
    chain = _checkpoint_chain(params, {}, task, model, depth)
    rows = []
    for level in range(chain.depth + 1):
        out = generate_chain(params, chain, level, chunk_size).data
        rows.append(
            {
                "level": level,
                "target": chain.target_spec(level).name,
                "params": int(out.size),
                "mean": float(np.mean(out)),
                "std": float(np.std(out)),
                "finite": bool(np.all(np.isfinite(out))),
            }
        )
    return rows


def fresh_generator(config: ExperimentConfig, depth: int = 0) -> UHNParameters:
    """Untrained root generator with stats over a chain of ``depth`` on the config's task."""
    uhn = config.uhn_config()
    streams = RngStreams(config.seed)
    template = generated_uhn_template(uhn.index_freqs, uhn.structure_freqs) if depth else None
    chain = ChainSpec.build(named_model(config.model_name), TaskDescriptor.for_dataset(config.task), depth, template)
    stats = compute_stats(chain.tables)
    return init_uhn(uhn, stats, streams["generator"], streams["fourier"], default_registry().digest)


# Parameter counts


def nearest_divisor(n: int, target: float) -> int:
    """Divisor of ``n`` closest to ``target`` (smaller one on ties)."""
    best = 1
    for c in range(1, math.isqrt(n) + 1):
        if n % c:
            continue
        for d in (c, n // c):
            if abs(d - target) < abs(best - target) or (abs(d - target) == abs(best - target) and d < best):
                best = d
    return best


def _count_targets(config: ExperimentConfig) -> list[tuple[str, ModelSpec]]:
    if config.kind == "multi-task":
        return [(t, named_model(default_model(t))) for t in config.task_probabilities]
    if config.kind == "multi-model":
        rng = RngStreams(config.seed)["model_set"]
        kwargs = _family_kwargs(_load(config, config.task))
        models = build_model_set(config.family, config.model_set_size, rng, **kwargs)
        return [(f"{config.family}[{i}]", m) for i, m in enumerate(models)]
    targets = [(config.model_name, named_model(config.model_name))]
    if config.kind == "recursive":
        uhn = config.uhn_config()
        targets.append(("generated_uhn", generated_uhn_template(uhn.index_freqs, uhn.structure_freqs)))
    return targets


def report_counts(
    config: ExperimentConfig,
    embedding: int = CHUNK_BASELINE_EMBEDDING,
    hidden: int = CHUNK_BASELINE_HIDDEN,
) -> list[dict]:
    """Generator, target and chunked-baseline parameter counts as rows (item, kind, params, detail)."""
    rows = []
    variants = config.variant_names if config.kind == "ablation" else [None]
    for variant in variants:
        item = "generator" if variant is None else f"generator:{variant}"
        uhn = config.uhn_config(variant)
        detail = f"F_v={uhn.index_freqs} d={uhn.hidden} blocks={uhn.blocks} tse={uhn.use_tse} {uhn.index_encoding}"
        rows.append({"item": item, "kind": "generator", "params": uhn_param_count(uhn), "detail": detail})
    for name, spec in _count_targets(config):
        n = param_layout(spec).total
        rows.append({"item": name, "kind": "target", "params": n, "detail": spec.model_type})
        c = nearest_divisor(n, optimal_chunk_size(n, embedding, hidden))
        bound = chunked_baseline_bound(n, embedding, hidden, 0)
        rows.append(
            {
                "item": f"chunked:{name}",
                "kind": "chunked_baseline",
                "params": chunked_baseline_count(n, c, embedding, hidden, 0),
                "detail": f"c={c} bound={bound:.0f}",
            }
        )
    return rows
