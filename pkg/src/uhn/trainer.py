"""Generator training: initialization phase, task training, recursion chains and evaluation."""

import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensorcore as tc
from .archspec import ModelSpec, param_layout
from .checkpoint import save_checkpoint
from .config import (
    ADAM_BETAS,
    ADAM_EPS,
    BATCH_SIZE,
    DEFAULT_CHUNK_SIZE,
    MULTI_TASK_PROBABILITIES,
    RECURSIVE_INIT_LR_DIVISORS,
    RECURSIVE_TRAIN_LR_DIVISORS,
    WEIGHT_DECAY,
)
from .csv_store import MetricsLog
from .datasets import Batch, DatasetHandle, sample_batch
from .descriptors import DescriptorCache, DescriptorTable, TaskDescriptor
from .executors import EVAL, EvalMode, generated_uhn_forward, model_forward
from .generator import UHNParameters, generate_weights
from .initstats import InitTarget, active_init_level, init_loss
from .tensorcore import Tensor

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """A non-finite loss; the last good parameters were saved to ``checkpoint`` when one was given."""

    def __init__(self, phase: str, step: int, level: int, task: str, checkpoint: Optional[Path] = None):
        self.phase = phase
        self.step = step
        self.level = level
        self.task = task
        self.checkpoint = checkpoint
        where = f", last good parameters in {checkpoint}" if checkpoint else ""
        super().__init__(f"non-finite {phase} loss at step {step} (level {level}, task {task}){where}")


class RngStreams:
    """Named generators split from one master seed.

    Stream ``name`` is seeded with SeedSequence(seed, spawn_key=(crc32(name),)),
    so adding a stream never changes the others.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            sequence = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))
            self._streams[name] = np.random.default_rng(sequence)
        return self._streams[name]


class AdamW:
    """AdamW over a fixed list of tensors, updated in place."""

    def __init__(
        self,
        params: Sequence[Tensor],
        betas: tuple = ADAM_BETAS,
        eps: float = ADAM_EPS,
        weight_decay: float = WEIGHT_DECAY,
    ):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.reset()

    def reset(self) -> None:
        self.step_count = 0
        self.first = [np.zeros_like(p.data) for p in self.params]
        self.second = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict, lr: float) -> None:
        beta1, beta2 = self.betas
        self.step_count += 1
        bias1 = 1.0 - beta1**self.step_count
        bias2 = 1.0 - beta2**self.step_count
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g
            p.data -= lr * (self.first[i] / bias1) / (np.sqrt(self.second[i] / bias2) + self.eps)


def lr_at_step(step: int, total: int, warmup: int, lr: float) -> float:
    """Linear warmup to ``lr`` then cosine decay towards 0 at ``total``."""
    if warmup > 0 and step < warmup:
        return lr * step / warmup
    progress = (step - warmup) / max(1, total - warmup)
    return lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: dict, max_norm: Optional[float]) -> float:
    """Scale gradients in place to a global norm of at most ``max_norm``; returns the norm before clipping."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for key in grads:
            grads[key] = grads[key] * scale
    return norm


def recursive_learning_rates(init_lr: float, train_lr: float, depth: int) -> tuple[list, float]:
    """Per-level initialization rates and the training rate for a chain of ``depth``."""
    if depth <= 1:
        return [init_lr] * (depth + 1), train_lr
    divisors = RECURSIVE_INIT_LR_DIVISORS
    init = [init_lr / divisors[min(k, len(divisors) - 1)] for k in range(depth + 1)]
    train = train_lr / RECURSIVE_TRAIN_LR_DIVISORS.get(depth, max(RECURSIVE_TRAIN_LR_DIVISORS.values()))
    return init, train


# Tasks


@dataclass
class TaskSpec:
    """One task: its data, its model-structure distribution and its minibatch size."""

    name: str
    dataset: Optional[DatasetHandle] = None
    models: list = field(default_factory=list)
    batch_size: int = BATCH_SIZE
    depth: int = 0
    template: Optional[ModelSpec] = None

    @property
    def descriptor(self) -> TaskDescriptor:
        return TaskDescriptor.for_dataset(self.name)


@dataclass
class TaskDistribution:
    tasks: list
    probabilities: list

    def __post_init__(self):
        if not self.tasks or len(self.tasks) != len(self.probabilities):
            raise ValueError("task distribution needs one probability per task")
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if np.any(probs < 0):
            raise ValueError("task probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"task probabilities sum to {probs.sum()}, expected 1")
        self.probabilities = list(probs)

    @classmethod
    def single(cls, task) -> "TaskDistribution":
        return cls([task], [1.0])

    @classmethod
    def full_scale(cls) -> "TaskDistribution":
        """Six-task mixture over the full-scale dataset names."""
        return cls(list(MULTI_TASK_PROBABILITIES), list(MULTI_TASK_PROBABILITIES.values()))

    @property
    def names(self) -> list[str]:
        return [getattr(t, "name", t) for t in self.tasks]


def sample_task(dist: TaskDistribution, rng: np.random.Generator):
    if len(dist.tasks) == 1:
        return dist.tasks[0]
    return dist.tasks[int(rng.choice(len(dist.tasks), p=dist.probabilities))]


# Recursion chains


@dataclass
class ChainSpec:
    """H_0 -> H_1 .. H_K -> leaf: templates for levels 1..K, the leaf, and one table per generated target."""

    templates: list
    leaf: ModelSpec
    task: TaskDescriptor
    tables: list
    _targets: dict = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> int:
        return len(self.templates)

    @classmethod
    def build(
        cls,
        leaf: ModelSpec,
        task: TaskDescriptor,
        depth: int = 0,
        template: Optional[ModelSpec] = None,
        cache: Optional[DescriptorCache] = None,
    ) -> "ChainSpec":
        """Every level reuses the leaf task descriptor."""
        if depth > 0 and template is None:
            raise ValueError("a recursion chain needs a generated-hypernetwork template")
        cache = cache or DescriptorCache()
        templates = [template] * depth
        tables = [cache.get(spec, task) for spec in templates + [leaf]]
        return cls(templates, leaf, task, tables)

    def target_spec(self, level: int) -> ModelSpec:
        """Model whose parameters the level-``level`` generator outputs."""
        return self.templates[level] if level < self.depth else self.leaf

    def init_targets(self, level: int, mode: str = "default") -> InitTarget:
        key = (level, mode)
        if key not in self._targets:
            self._targets[key] = InitTarget.for_spec(self.target_spec(level), mode)
        return self._targets[key]


def generate_chain(
    params: UHNParameters,
    chain: ChainSpec,
    level: Optional[int] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Tensor:
    """Output of the level-``level`` generator (default: the leaf weights)."""
    level = chain.depth if level is None else level
    if not 0 <= level <= chain.depth:
        raise ValueError(f"level {level} outside 0..{chain.depth}")
    out = generate_weights(params, chain.tables[0], chunk_size)
    for k in range(1, level + 1):
        template = chain.templates[k - 1]
        expected = param_layout(template).total
        if out.shape != (expected,):
            raise ValueError(f"level {k} template expects {expected} parameters, level {k - 1} produced {out.shape}")
        out = generated_uhn_forward(template, out, chain.tables[k], params.encoder, chunk_size)
    expected = param_layout(chain.target_spec(level)).total
    if out.shape != (expected,):
        raise ValueError(f"level {level} output has shape {out.shape}, target expects {expected}")
    return out


# Losses and evaluation


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    picked = tc.log_softmax(logits, axis=-1)[np.arange(len(labels)), labels]
    return -tc.mean(picked)


def regression_loss(predictions: Tensor, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets, dtype=np.float64).reshape(predictions.shape)
    diff = predictions - targets
    return tc.mean(diff * diff)


def _outputs(spec: ModelSpec, w, batch: Batch, dataset: DatasetHandle, mode: EvalMode) -> tuple:
    out = model_forward(spec, w, batch.inputs, ctx=dataset.graph, mode=mode)
    targets = batch.targets
    if batch.nodes is not None:
        out = tc.gather(out, batch.nodes)
        targets = batch.targets[batch.nodes]
    return out, targets


def task_loss(spec: ModelSpec, w, batch: Batch, dataset: DatasetHandle, mode: EvalMode = EVAL) -> Tensor:
    """Cross-entropy for classification, mean squared error for regression."""
    out, targets = _outputs(spec, w, batch, dataset, mode)
    if dataset.task_type == "classification":
        return classification_loss(out, targets)
    return regression_loss(out, targets)


def evaluate(spec: ModelSpec, w, dataset: DatasetHandle, split: str = "test", batch_size: int = BATCH_SIZE) -> tuple[str, float]:
    """("accuracy", value) for classification, ("rmse", value) for regression."""
    w = np.asarray(tc.as_tensor(w).data)
    batch = getattr(dataset, split)
    if batch.nodes is not None or batch_size <= 0:
        out, targets = _outputs(spec, w, batch, dataset, EVAL)
        predictions = out.data
    else:
        parts = []
        for start in range(0, len(batch), batch_size):
            rows = slice(start, start + batch_size)
            parts.append(model_forward(spec, w, batch.inputs[rows], mode=EVAL).data)
        predictions, targets = np.concatenate(parts), batch.targets
    if dataset.task_type == "classification":
        return "accuracy", float(np.mean(np.argmax(predictions, axis=-1) == targets))
    diff = predictions - np.asarray(targets, dtype=np.float64).reshape(predictions.shape)
    return "rmse", float(np.sqrt(np.mean(diff * diff)))


def evaluate_chain(params: UHNParameters, chain: ChainSpec, dataset: DatasetHandle, split: str = "test", chunk_size: int = DEFAULT_CHUNK_SIZE) -> tuple[str, float]:
    w = generate_chain(params, chain, chunk_size=chunk_size).data
    return evaluate(chain.leaf, w, dataset, split)


def evaluate_model_set(
    params: UHNParameters,
    model_set,
    task: TaskSpec,
    cache: Optional[DescriptorCache] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> dict:
    """Mean test metric over the hold-in subset (seen) and the test split (unseen)."""
    cache = cache or DescriptorCache()
    result = {"metric": None, "per_model": []}
    for split, indices in (("seen", model_set.holdin_idx), ("unseen", model_set.test_idx)):
        values = []
        for i in indices:
            chain = ChainSpec.build(model_set.models[i], task.descriptor, cache=cache)
            metric, value = evaluate_chain(params, chain, task.dataset, "test", chunk_size)
            result["metric"] = metric
            result["per_model"].append((split, i, value))
            values.append(value)
        result[split] = float(np.mean(values)) if values else float("nan")
    log.info("Model-set %s: seen %.4f, unseen %.4f", result["metric"], result["seen"], result["unseen"])
    return result


# Loops


def _diverged(phase, step, level, task, last_good, good_step, checkpoint_path):
    """Save ``last_good``, the parameters that produced the finite loss of ``good_step``."""
    saved = None
    if checkpoint_path is not None:
        meta = {"phase": phase, "step": step, "level": level, "last_good_step": good_step}
        saved = save_checkpoint(checkpoint_path, last_good, meta)
    log.error("Diverged in %s at step %d (level %d, task %s)", phase, step, level, task)
    return TrainingDivergedError(phase, step, level, task, saved)


def run_initialization(
    params: UHNParameters,
    chains: Sequence[ChainSpec],
    steps: int,
    lr,
    streams: RngStreams,
    steps_per_level: Optional[int] = None,
    warmup: int = 0,
    clip_norm: Optional[float] = None,
    mode: str = "default",
    metrics: Optional[MetricsLog] = None,
    checkpoint_path: Optional[Path] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> UHNParameters:
    """Match generated component statistics to their targets, shallow levels first.

    ``lr`` is one rate or one rate per level. The optimizer and schedule
    restart at every level boundary.
    """
    if steps <= 0:
        return params
    chains = list(chains)
    depth = max(c.depth for c in chains)
    steps_per_level = steps_per_level or steps
    rates = list(lr) if isinstance(lr, (list, tuple)) else [lr] * (depth + 1)
    log.info("Initialization: %d steps over %d level(s)", steps, depth + 1)
    optimizer, level, level_start, start_time = None, -1, 0, time.perf_counter()
    good, good_step = params.copy(), 0
    for step in range(steps):
        active = active_init_level(step, steps_per_level, depth)
        if active != level:
            level, level_start = active, step
            optimizer = AdamW(params.trainable())
            log.info("Initialization level %d from step %d", level, step)
        level_steps = steps_per_level if level < depth else steps - level_start
        chain = chains[int(streams["init"].integers(len(chains)))] if len(chains) > 1 else chains[0]
        r = min(level, chain.depth)
        target = chain.target_spec(r)
        out = generate_chain(params, chain, level=r, chunk_size=chunk_size)
        loss = init_loss(out, param_layout(target), chain.init_targets(r, mode))
        if not math.isfinite(loss.item()):
            raise _diverged("init", step, r, target.name, good, good_step, checkpoint_path)
        grads = tc.backward(None, loss)
        norm = clip_grad_norm(grads, clip_norm)
        if not math.isfinite(norm):
            raise _diverged("init", step, r, target.name, params.copy(), step, checkpoint_path)
        rate = lr_at_step(step - level_start, level_steps, min(warmup, level_steps - 1), rates[level])
        good, good_step = params.copy(), step
        optimizer.step(grads, rate)
        log.debug("init step %d level %d loss %.6g", step, r, loss.item())
        if metrics is not None:
            metrics.append(step, "init", r, target.name, loss.item(), rate, norm, time.perf_counter() - start_time)
    log.info("Initialization done, final loss %.6g", loss.item())
    return params


class _ChainBook:
    """Chains per (task, model index), built on first use."""

    def __init__(self, cache: DescriptorCache):
        self.cache = cache
        self._chains: dict = {}

    def get(self, task: TaskSpec, index: int) -> ChainSpec:
        key = (task.name, index)
        if key not in self._chains:
            self._chains[key] = ChainSpec.build(task.models[index], task.descriptor, task.depth, task.template, self.cache)
        return self._chains[key]


def run_training(
    params: UHNParameters,
    tasks: TaskDistribution,
    steps: int,
    lr: float,
    warmup: int,
    streams: RngStreams,
    clip_norm: Optional[float] = None,
    metrics: Optional[MetricsLog] = None,
    checkpoint_path: Optional[Path] = None,
    cache: Optional[DescriptorCache] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> UHNParameters:
    """Sample task, architecture and minibatch; backpropagate the task loss into the root generator."""
    book = _ChainBook(cache or DescriptorCache())
    optimizer = AdamW(params.trainable())
    warmup = min(warmup, max(steps - 1, 0))
    log.info("Training: %d steps on tasks %s", steps, tasks.names)
    start_time = time.perf_counter()
    good, good_step = params.copy(), 0
    for step in range(steps):
        task = sample_task(tasks, streams["tasks"])
        index = int(streams["architectures"].integers(len(task.models))) if len(task.models) > 1 else 0
        chain = book.get(task, index)
        batch = sample_batch(task.dataset.train, task.batch_size, streams["data"])
        w = generate_chain(params, chain, chunk_size=chunk_size)
        loss = task_loss(chain.leaf, w, batch, task.dataset, EvalMode(train=True, rng=streams["dropout"]))
        if not math.isfinite(loss.item()):
            raise _diverged("train", step, chain.depth, task.name, good, good_step, checkpoint_path)
        grads = tc.backward(None, loss)
        norm = clip_grad_norm(grads, clip_norm)
        if not math.isfinite(norm):
            raise _diverged("train", step, chain.depth, task.name, params.copy(), step, checkpoint_path)
        rate = lr_at_step(step, steps, warmup, lr)
        good, good_step = params.copy(), step
        optimizer.step(grads, rate)
        log.debug("train step %d task %s loss %.6g", step, task.name, loss.item())
        if metrics is not None:
            metrics.append(step, "train", chain.depth, task.name, loss.item(), rate, norm, time.perf_counter() - start_time)
    log.info("Training done after %d steps", steps)
    return params


def run_direct_training(
    spec: ModelSpec,
    w0: np.ndarray,
    dataset: DatasetHandle,
    steps: int,
    lr: float,
    warmup: int,
    streams: RngStreams,
    batch_size: int = BATCH_SIZE,
    clip_norm: Optional[float] = None,
    metrics: Optional[MetricsLog] = None,
) -> np.ndarray:
    """Baseline: optimize the packed weight vector itself with the same loop."""
    w = tc.parameter(np.array(w0, dtype=np.float64))
    optimizer = AdamW([w])
    warmup = min(warmup, max(steps - 1, 0))
    log.info("Direct training of %s: %d steps", spec.name or spec.model_type, steps)
    start_time = time.perf_counter()
    for step in range(steps):
        batch = sample_batch(dataset.train, batch_size, streams["data"])
        loss = task_loss(spec, w, batch, dataset, EvalMode(train=True, rng=streams["dropout"]))
        if not math.isfinite(loss.item()):
            raise TrainingDivergedError("direct", step, 0, dataset.name)
        grads = tc.backward(None, loss)
        norm = clip_grad_norm(grads, clip_norm)
        if not math.isfinite(norm):
            raise TrainingDivergedError("direct", step, 0, dataset.name)
        rate = lr_at_step(step, steps, warmup, lr)
        optimizer.step(grads, rate)
        if metrics is not None:
            metrics.append(step, "direct", 0, dataset.name, loss.item(), rate, norm, time.perf_counter() - start_time)
    return w.data.copy()
