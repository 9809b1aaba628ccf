"""AdamW, the pretrain / fine-tune loops, logging and checkpoints."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Hashable, Mapping

import numpy as np

from .data import Episode, batch_rng, dataset_mixture, ordered_batches, sample_batch
from .embodiment import N_IMAGE_SLOTS, get
from .flow import FlowConfig, attach_flow, fm_loss, regression_loss
from .model import PolicyModel, build_model, load_checkpoint, save_checkpoint
from .numerics import NonFiniteError

PHASES = ("pretrain", "finetune", "scratch")
OBJECTIVES = ("flow", "regression")


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 3e-4
    warmup: int = 100
    min_learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 50
    annotation_prob: float = 0.5
    alpha: float = 0.43
    objective: str = "flow"
    workers: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.steps > 0 and not 0 <= self.warmup < self.steps:
            raise ValueError(f"warmup ({self.warmup}) must be below steps ({self.steps})")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise KeyError(f"unknown training option {k!r}")
            kind = kinds[k]
            out[k] = v if kind == "str" else {"int": int, "float": float}[kind](v)
        return cls(**out)


def learning_rate(config: TrainConfig, step: int) -> float:
    """Linear warmup over ``warmup`` steps, then cosine decay to ``min_learning_rate``."""
    if step < config.warmup:
        return config.learning_rate * (step + 1) / config.warmup
    span = max(1, config.steps - config.warmup)
    progress = min(1.0, (step - config.warmup) / span)
    lo = config.min_learning_rate
    return lo + 0.5 * (config.learning_rate - lo) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
               config: TrainConfig, t: int, lr: float | None = None) -> dict[str, np.ndarray]:
    """One bias-corrected AdamW update; returns new parameter arrays.

    Weight decay is decoupled and skips vectors (norm scales, biases).
    """
    if t < 1:
        raise ValueError("adamw_step counts from t = 1")
    lr = config.learning_rate if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name!r} at optimizer step {t}")
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + config.eps)
        decay = config.weight_decay if p.ndim > 1 else 0.0
        out[name] = p - lr * (update + decay * p)
    state.t = t
    return out


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class TrainingDiverged(RuntimeError):
    pass


LOG_COLUMNS = ("step", "loss", "lr", "wall_ms")


@dataclass
class TrainResult:
    model: PolicyModel
    config: TrainConfig
    log: list[dict] = field(default_factory=list)

    def log_csv(self, timing: bool = True) -> str:
        cols = LOG_COLUMNS if timing else LOG_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.log:
            w.writerow([row["step"], repr(row["loss"]), repr(row["lr"]), row["wall_ms"]][: len(cols)])
        return buf.getvalue()

    def save(self, out_dir, meta: dict | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "log.csv").write_text(self.log_csv())
        info = {"phase": self.config.phase, "steps": self.config.steps, "seed": self.config.seed}
        info.update(meta or {})
        save_checkpoint(out / "checkpoint.bin", self.model, info)
        return out / "checkpoint.bin"


Datasets = Mapping[Hashable, list[Episode]]


def train(model: PolicyModel, datasets: Datasets, config: TrainConfig,
          flow_config: FlowConfig = FlowConfig(), log_fn=None) -> TrainResult:
    """Minimise the flow-matching (or regression) loss over mixture-sampled batches.

    Batch ``i`` is drawn from its own generator keyed by ``(seed, i)``, so the
    run is reproducible for any worker count. Aborts when the logged loss
    exceeds 10x the first logged loss for 3 consecutive logs.
    """
    if not datasets or not any(datasets.values()):
        raise ValueError("training needs at least one non-empty dataset")
    mixture = dataset_mixture(datasets, config.alpha)
    horizon = model.config.horizon
    loss_fn = fm_loss if config.objective == "flow" else regression_loss

    def make(i):
        rng = batch_rng(config.seed, i)
        batch = sample_batch(datasets, mixture, config.batch_size, rng, horizon,
                             config.annotation_prob, model.config.action_dim, model.config.max_images, model.dtype)
        return attach_flow(batch, rng, flow_config)

    result = TrainResult(model, config)
    state = AdamState()
    start = time.perf_counter()
    window: list[float] = []
    first = None
    strikes = 0
    for i, batch in enumerate(ordered_batches(make, 0, config.steps, config.workers)):
        lr = learning_rate(config, i)
        model.zero_grad()
        try:
            loss = loss_fn(model, batch)
            loss.backward()
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {i}: {exc}") from exc
        grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in model.params.items()}
        grads, _ = clip_by_global_norm(grads, config.clip_norm)
        new = adamw_step({k: p.data for k, p in model.params.items()}, grads, state, config, i + 1, lr)
        for k, p in model.params.items():
            p.data = new[k]
        window.append(loss.item())
        if i % config.eval_every == 0 or i == config.steps - 1:
            row = {"step": i, "loss": float(np.mean(window)), "lr": lr,
                   "wall_ms": int(round(1000 * (time.perf_counter() - start)))}
            window = []
            result.log.append(row)
            if log_fn is not None:
                log_fn(row)
            first = row["loss"] if first is None else first
            strikes = strikes + 1 if row["loss"] > 10 * first else 0
            if strikes >= 3:
                raise TrainingDiverged(f"loss {row['loss']:.4g} at step {i} exceeds 10x the initial "
                                       f"{first:.4g} for 3 consecutive logs (lr {lr:.3g})")
    model.zero_grad()
    return result


def pretrain(model: PolicyModel, datasets: Datasets, config: TrainConfig, **kw) -> TrainResult:
    """Train on a mixture spanning at least two tasks and two embodiments."""
    if not datasets:
        raise ValueError("pretraining mixture is empty")
    tasks = {k[0] for k in datasets}
    robots = {k[1] for k in datasets}
    if len(tasks) < 2 or len(robots) < 2:
        raise ValueError(f"pretraining mixture needs >= 2 tasks and >= 2 embodiments, got tasks "
                         f"{sorted(tasks)} and embodiments {sorted(robots)}")
    return train(model, datasets, config.replace(phase="pretrain"), **kw)


def check_compatible(model: PolicyModel, datasets: Datasets) -> None:
    c = model.config
    for eps in datasets.values():
        for ep in eps:
            spec = get(ep.embodiment)
            if spec.action_dim > c.action_dim or spec.state_dim > c.action_dim:
                raise ValueError(f"config mismatch: embodiment {spec.name!r} needs {spec.action_dim} action "
                                 f"dims, model has {c.action_dim}")
            if spec.num_cameras > c.max_images or c.max_images > N_IMAGE_SLOTS:
                raise ValueError(f"config mismatch: {spec.num_cameras} cameras vs {c.max_images} image slots")
            if ep.images.shape[-1] != c.image_size:
                raise ValueError(f"config mismatch: {ep.images.shape[-1]}px images vs model {c.image_size}px")


def finetune(checkpoint, dataset: Datasets | list[Episode], config: TrainConfig, arch: str | None = None,
             **kw) -> TrainResult:
    """Single-task training from a checkpoint (path or model).

    ``phase="scratch"`` keeps the checkpoint's architecture, config and dtype but
    re-initialises weights from ``config.seed``.
    """
    if isinstance(checkpoint, PolicyModel):
        model = checkpoint.clone()
    else:
        model, _ = load_checkpoint(checkpoint)
    if config.phase == "scratch":
        model = build_model(model.config, arch or model.variant, config.seed).clone(model.dtype)
    elif config.phase != "finetune":
        config = config.replace(phase="finetune")
    if isinstance(dataset, list):
        if not dataset:
            raise ValueError("fine-tuning dataset is empty")
        dataset = {(dataset[0].task, dataset[0].embodiment): dataset}
    if len({k[0] for k in dataset}) != 1:
        raise ValueError("fine-tuning expects data from a single task")
    check_compatible(model, dataset)
    return train(model, dataset, config, **kw)
