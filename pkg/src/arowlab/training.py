"""Adversarial training loop: attack each batch, then take an SGD step on the objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, early_stopped_pgd, gair_kappa, pgd_attack
from .data import batches
from .eval_metrics import eval_rng
from .models import ModelParams, forward, predict
from .objectives import ObjectiveSpec, objective_value

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "lr", "objective", "std_acc", "rob_acc")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    objective: ObjectiveSpec
    attack: AttackConfig
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drops: tuple = ()
    lr_factor: float = 0.1
    swa_start: Optional[int] = None
    ema_decay: Optional[float] = None
    eval_attack: Optional[AttackConfig] = None
    fat_overshoot: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_drops", tuple(int(e) for e in self.lr_drops))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        d = self.lr_drops
        if any(b <= a for a, b in zip(d, d[1:])) or any(e < 0 or e >= self.epochs for e in d):
            raise ValueError(f"lr_drops must be strictly increasing and inside [0, {self.epochs}), got {d}")
        if self.swa_start is not None and not 0 <= self.swa_start < self.epochs:
            raise ValueError(f"swa_start must lie in [0, {self.epochs}), got {self.swa_start}")
        if self.ema_decay is not None and not 0 <= self.ema_decay < 1:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.fat_overshoot is not None and not 0 <= self.fat_overshoot <= self.attack.steps:
            raise ValueError(f"fat_overshoot must lie in [0, {self.attack.steps}]")


def lr_at(epoch, cfg):
    drops = sum(1 for e in cfg.lr_drops if e <= epoch)
    return cfg.lr * cfg.lr_factor ** drops


@dataclass
class SgdState:
    velocity: np.ndarray


def sgd_step(theta, grad, state, lr, momentum, weight_decay):
    """Heavy-ball SGD with L2 decay folded into the gradient. Returns (theta, state)."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ad.ShapeError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    v = momentum * state.velocity + (grad + weight_decay * theta)
    return theta - lr * v, SgdState(v)


@dataclass
class AveragedState:
    mode: str
    average: np.ndarray
    count: int = 0
    decay: float = 0.0
    active_from: int = 0


def swa_update(state, theta):
    avg = np.array(theta, dtype=np.float64) if state.count == 0 else \
        state.average + (theta - state.average) / (state.count + 1)
    return AveragedState("swa", avg, state.count + 1, state.decay, state.active_from)


def ema_update(state, theta):
    avg = state.decay * state.average + (1.0 - state.decay) * np.asarray(theta)
    return AveragedState("ema", avg, state.count + 1, state.decay, state.active_from)


def accuracy(params, x, y):
    return float(np.mean(predict(params, x) == y))


def robust_accuracy_on(params, x, y, attack, rng):
    x_adv, _ = pgd_attack(params, x, y, attack, rng)
    return float(np.mean(predict(params, x_adv) == y))


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    best_epoch: int
    swa_params: Optional[ModelParams] = None
    ema_params: Optional[ModelParams] = None
    metrics: list = field(default_factory=list)
    swa_snapshots: Optional[list] = None


def _attack_batch(params, x, y, cfg, rng):
    if cfg.objective.kind == "natural":
        return None, None
    if cfg.fat_overshoot is not None:
        x_adv, traces = early_stopped_pgd(params, x, y, cfg.attack, cfg.fat_overshoot, rng, return_traces=True)
    else:
        x_adv, traces = pgd_attack(params, x, y, cfg.attack, rng)
    kappa = np.array([gair_kappa(t, cfg.attack.steps) for t in traces])
    return x_adv, kappa


def train(params, train_set, cfg, val_set=None, pretrained=None, keep_snapshots=False):
    """Run the full schedule and return final, best, SWA and EMA parameters.

    Per-epoch metrics are measured on ``val_set`` (the training set when none
    is given) with ``cfg.eval_attack`` (``cfg.attack`` when unset).
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    spec = params.spec
    theta = params.flatten()
    state = SgdState(np.zeros_like(theta))
    # separate streams so objectives that skip the attack still see the same batches
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    attack_rng = np.random.default_rng([cfg.seed, 2])
    eval_set = val_set if val_set is not None else train_set
    eval_attack = cfg.eval_attack or cfg.attack
    batch_size = min(cfg.batch_size, len(train_set))
    swa = AveragedState("swa", np.zeros_like(theta), active_from=cfg.swa_start or 0) \
        if cfg.swa_start is not None else None
    ema = AveragedState("ema", theta.copy(), decay=cfg.ema_decay) if cfg.ema_decay is not None else None
    snapshots = [] if keep_snapshots else None
    metrics = []
    best = (-1.0, 0, theta.copy())

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        epoch_seed = int(shuffle_rng.integers(2 ** 63 - 1))
        total, seen = 0.0, 0
        for b, idx in enumerate(batches(train_set, batch_size, seed=epoch_seed, shuffle=True)):
            current = ModelParams.unflatten(spec, theta)
            x, y = train_set.inputs[idx], train_set.labels[idx]
            x_adv, kappa = _attack_batch(current, x, y, cfg, attack_rng)
            with ad.Tape() as tape:
                watched = current.watch(tape)
                loss = objective_value(
                    cfg.objective, lambda inp: forward(watched, inp), x, y, x_adv,
                    kappa=kappa, T=cfg.attack.steps, pretrained=pretrained, box=cfg.attack.box)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss)
            g = np.concatenate([np.ravel(grads[t]) for layer in watched.layers for t in layer])
            theta, state = sgd_step(theta, g, state, lr, cfg.momentum, cfg.weight_decay)
            if ema is not None:
                ema = ema_update(ema, theta)
            total += value * len(idx)
            seen += len(idx)
        if swa is not None and epoch >= cfg.swa_start:
            swa = swa_update(swa, theta)
            if snapshots is not None:
                snapshots.append(theta.copy())

        current = ModelParams.unflatten(spec, theta)
        std = accuracy(current, eval_set.inputs, eval_set.labels)
        rob = robust_accuracy_on(current, eval_set.inputs, eval_set.labels, eval_attack, eval_rng(cfg.seed))
        metrics.append({"epoch": epoch, "lr": lr, "objective": total / seen, "std_acc": std, "rob_acc": rob})
        log.info("epoch %d lr %.4g objective %.6f std %.4f rob %.4f", epoch, lr, total / seen, std, rob)
        if rob > best[0]:
            best = (rob, epoch, theta.copy())

    return TrainResult(
        params=ModelParams.unflatten(spec, theta),
        best_params=ModelParams.unflatten(spec, best[2]),
        best_epoch=best[1],
        swa_params=ModelParams.unflatten(spec, swa.average) if swa is not None and swa.count else None,
        ema_params=ModelParams.unflatten(spec, ema.average) if ema is not None else None,
        metrics=metrics,
        swa_snapshots=snapshots,
    )


def format_metrics_csv(metrics):
    lines = [",".join(METRICS_HEADER)]
    for m in metrics:
        lines.append(",".join([str(m["epoch"]), repr(float(m["lr"])), repr(float(m["objective"])),
                               repr(float(m["std_acc"])), repr(float(m["rob_acc"]))]))
    return "\n".join(lines) + "\n"
