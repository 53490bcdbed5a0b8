"""Shared-trunk multi-task classifier at desk scale.

The model is a composite map: a rectified linear trunk shared by all
tasks feeding one logistic head per task. Training minimizes masked
binary cross-entropy summed over present labels with mini-batch
adaptive-moment updates, and is bit-reproducible given the seed (fixed
scaled-uniform fan-in initialization, zero biases, fixed shuffling
stream). The per-task loss decomposition makes trunk gradients of a
single task's loss exact and cheap, which the affinity module relies
on.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, TrainingSelection
from .errors import (
    EmptySelectionError,
    NoLabelsError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .util import config_hash

#: Logistic outputs are clamped to this range inside the loss so
#: saturated predictions cannot produce non-finite cross-entropy.
PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    d: int
    r: int = 64
    K: int = 1
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.r < 1 or self.K < 1:
            raise ValueError("widths must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def hash(self) -> str:
        return config_hash(dataclasses.asdict(self))


@dataclass(frozen=True)
class TrainedModel:
    """Immutable trunk + head parameters with a training manifest."""

    w1: np.ndarray  # (d, r) trunk weights
    b1: np.ndarray  # (r,) trunk biases
    w2: np.ndarray  # (r, K) head weights, one column per task
    b2: np.ndarray  # (K,) head biases
    manifest: dict

    def __post_init__(self) -> None:
        for a in (self.w1, self.b1, self.w2, self.b2):
            a.setflags(write=False)

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.w2.shape[1]


def _init_params(cfg: ModelConfig, rng: np.random.Generator):
    lim1 = 1.0 / math.sqrt(cfg.d)
    lim2 = 1.0 / math.sqrt(cfg.r)
    w1 = rng.uniform(-lim1, lim1, size=(cfg.d, cfg.r))
    w2 = rng.uniform(-lim2, lim2, size=(cfg.r, cfg.K))
    return w1, np.zeros(cfg.r), w2, np.zeros(cfg.K)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(w1, b1, w2, b2, x):
    z1 = x @ w1 + b1
    h = np.maximum(z1, 0.0)
    p = _sigmoid(h @ w2 + b2)
    return z1, h, p


def masked_bce(p: np.ndarray, y: np.ndarray, m: np.ndarray) -> float:
    """Cross-entropy summed over present labels, outputs clamped."""
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    terms = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return float((terms * m).sum())


def per_task_losses(w1, b1, w2, b2, x, y, m) -> tuple[np.ndarray, np.ndarray]:
    """Masked loss and present-label count per task on one batch."""
    _, _, p = _forward(w1, b1, w2, b2, x)
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    terms = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) * m
    return terms.sum(axis=0), m.sum(axis=0)


def loss_and_grads(w1, b1, w2, b2, x, y, m):
    """Masked summed loss and its exact gradient for every parameter."""
    z1, h, p = _forward(w1, b1, w2, b2, x)
    loss = masked_bce(p, y, m)
    dlogit = (p - y) * m
    gw2 = h.T @ dlogit
    gb2 = dlogit.sum(axis=0)
    dh = dlogit @ w2.T
    dz1 = dh * (z1 > 0)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


def train(
    ds: Dataset,
    selection: TrainingSelection,
    cfg: ModelConfig,
    on_step=None,
) -> TrainedModel:
    """Train for exactly ``cfg.epochs`` epochs on the selected labels.

    ``on_step(step, (w1, b1, w2, b2), (xb, yb, mb))`` is invoked before
    each parameter update with live (read-only by convention) views;
    it must not mutate them. The callback does not consume randomness,
    so training trajectories are identical with or without it.
    """
    if ds.n_tasks != cfg.K or ds.features.shape[1] != cfg.d:
        raise ShapeMismatchError("dataset shape inconsistent with model config")
    rows = selection.train_rows
    if rows.size == 0 or int(selection.n_per_task.sum()) == 0:
        raise EmptySelectionError("no labels selected for any task")
    x = np.ascontiguousarray(ds.features[rows])
    y = ds.labels[rows].astype(float)
    m = selection.label_mask[rows].astype(float)

    rng = np.random.default_rng(cfg.seed)
    w1, b1, w2, b2 = _init_params(cfg, rng)
    mom = [np.zeros_like(a) for a in (w1, b1, w2, b2)]
    vel = [np.zeros_like(a) for a in (w1, b1, w2, b2)]
    step = 0
    n = rows.size
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb, mb = x[idx], y[idx], m[idx]
            step += 1
            if on_step is not None:
                on_step(step, (w1, b1, w2, b2), (xb, yb, mb))
            loss, grads = loss_and_grads(w1, b1, w2, b2, xb, yb, mb)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"loss diverged at epoch {epoch}")
            params = (w1, b1, w2, b2)
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for j, (theta, g) in enumerate(zip(params, grads)):
                mom[j] = cfg.beta1 * mom[j] + (1.0 - cfg.beta1) * g
                vel[j] = cfg.beta2 * vel[j] + (1.0 - cfg.beta2) * g * g
                theta -= cfg.learning_rate * (mom[j] / bc1) / (
                    np.sqrt(vel[j] / bc2) + cfg.eps
                )
    manifest = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "n_per_task": [int(v) for v in selection.n_per_task],
    }
    return TrainedModel(w1=w1, b1=b1, w2=w2, b2=b2, manifest=manifest)


def predict(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    """Per-task scores in (0, 1); pure and row-independent."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ShapeMismatchError(
            f"expected rows of width {model.d}, got shape {x.shape}"
        )
    _, _, p = _forward(model.w1, model.b1, model.w2, model.b2, x)
    return p


def trunk_grad(w1, b1, w2, b2, x, y, m, task: int):
    """Exact gradient of one task's masked loss w.r.t. trunk params."""
    mt = m[:, task]
    if mt.sum() == 0:
        raise NoLabelsError(f"batch has no present label for task {task}")
    z1 = x @ w1 + b1
    h = np.maximum(z1, 0.0)
    p_t = _sigmoid(h @ w2[:, task] + b2[task])
    dlogit = (p_t - y[:, task]) * mt
    dh = np.outer(dlogit, w2[:, task])
    dz1 = dh * (z1 > 0)
    return x.T @ dz1, dz1.sum(axis=0)


def shared_grad(model: TrainedModel, batch, task: int):
    """Trunk-parameter gradient of ``task``'s masked loss on ``batch``.

    ``batch`` is a (features, labels, present_mask) triple. Labels of
    other tasks cannot influence the result because the loss
    decomposes per task.
    """
    x, y, m = batch
    return trunk_grad(
        model.w1,
        model.b1,
        model.w2,
        model.b2,
        np.asarray(x, dtype=float),
        np.asarray(y, dtype=float),
        np.asarray(m, dtype=float),
        int(task),
    )


CHECKPOINT_VERSION = 1


def save_model(model: TrainedModel, path) -> None:
    """Versioned binary checkpoint (.npz with a JSON manifest)."""
    np.savez(
        path,
        format_version=np.array([CHECKPOINT_VERSION]),
        w1=model.w1,
        b1=model.b1,
        w2=model.w2,
        b2=model.b2,
        manifest=np.frombuffer(
            json.dumps(model.manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8
        ),
    )


def load_model(path) -> TrainedModel:
    with np.load(path) as z:
        version = int(z["format_version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        manifest = json.loads(bytes(z["manifest"].tobytes()).decode("utf-8"))
        return TrainedModel(
            w1=z["w1"].copy(),
            b1=z["b1"].copy(),
            w2=z["w2"].copy(),
            b2=z["b2"].copy(),
            manifest=manifest,
        )
