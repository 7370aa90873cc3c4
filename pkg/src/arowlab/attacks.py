"""L-infinity PGD with sign-gradient steps, plus its early-stopped variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .models import forward, predict
from .objectives import ce_rows, kl_div, _labels

SURROGATES = ("cross-entropy", "kl-to-clean")


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    eta: float
    steps: int
    surrogate: str = "cross-entropy"
    random_init: bool = True
    box: Optional[tuple] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0 or int(self.steps) != self.steps:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if self.steps > 0 and not self.eta > 0:
            raise ValueError(f"eta must be > 0 when steps > 0, got {self.eta}")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {self.surrogate!r}; expected one of {SURROGATES}")
        if self.box is not None:
            lo, hi = self.box
            if lo > hi:
                raise ValueError(f"clamp box has lo > hi: {self.box}")
            object.__setattr__(self, "box", (float(lo), float(hi)))


@dataclass
class PgdTrace:
    """Prediction history of one attacked row.

    ``initial_pred`` is the prediction at the starting point, ``preds[m-1]`` the
    prediction after update ``m``.  ``first_flip`` is the first step index whose
    prediction differs from the label (0 for the starting point), or None.
    Frozen rows (early stopping) repeat their last prediction.
    """

    initial_pred: int
    preds: list
    first_flip: Optional[int]


def project(x_new, x, epsilon, box):
    """Project onto the eps-ball around ``x`` and then onto the box."""
    out = np.clip(x_new, x - epsilon, x + epsilon)
    if box is not None:
        out = np.clip(out, box[0], box[1])
    return out


def _surrogate_grad(params, x_cur, y, clean_logits, surrogate):
    with ad.Tape() as tape:
        xv = tape.watch(x_cur)
        logits = forward(params, xv)
        if surrogate == "cross-entropy":
            loss = ad.sum_(ce_rows(logits, y))
        else:
            loss = ad.sum_(kl_div(clean_logits, logits))
    return tape.backward(loss)[xv]


def _run(params, x, y, cfg, rng, overshoot):
    x = np.asarray(x, dtype=np.float64)
    y = _labels(y, params.spec.num_classes)
    if cfg.box is not None and (np.any(x < cfg.box[0]) or np.any(x > cfg.box[1])):
        raise AttackError(f"inputs lie outside the clamp box {cfg.box}")
    n, T = x.shape[0], cfg.steps

    if cfg.random_init and cfg.epsilon > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        start = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
        x_cur = project(start, x, cfg.epsilon, cfg.box)
    else:
        x_cur = x.copy()

    clean_logits = ad.Tensor(forward(params, x).data) if cfg.surrogate == "kl-to-clean" else None
    pred = predict(params, x_cur)
    initial = pred.copy()
    first_flip = np.where(pred != y, 0, -1)
    stop_at = np.full(n, T)
    if overshoot is not None:
        flipped = first_flip >= 0
        stop_at[flipped] = np.minimum(first_flip[flipped] + overshoot, T)
    history = np.empty((T, n), dtype=np.int64)

    for m in range(1, T + 1):
        active = stop_at >= m
        if not np.any(active):
            history[m - 1:] = pred
            break
        g = _surrogate_grad(params, x_cur, y, clean_logits, cfg.surrogate)
        bad = ~np.all(np.isfinite(g), axis=1) & active
        if np.any(bad):
            raise AttackError(f"non-finite input gradient at step {m}, batch row {int(np.argmax(bad))}")
        stepped = project(x_cur + cfg.eta * np.sign(g), x, cfg.epsilon, cfg.box)
        x_cur = np.where(active[:, None], stepped, x_cur)
        pred = np.where(active, predict(params, x_cur), pred)
        history[m - 1] = pred
        newly = (first_flip < 0) & (pred != y) & active
        first_flip[newly] = m
        if overshoot is not None:
            stop_at[newly] = np.minimum(m + overshoot, T)

    traces = [
        PgdTrace(int(initial[i]), history[:, i].tolist(),
                 None if first_flip[i] < 0 else int(first_flip[i]))
        for i in range(n)
    ]
    return x_cur, traces


def pgd_attack(params, x, y, cfg, rng=None):
    """Run ``cfg.steps`` PGD updates; returns ``(x_adv, traces)``."""
    return _run(params, x, y, cfg, rng, None)


def early_stopped_pgd(params, x, y, cfg, overshoot, rng=None, return_traces=False):
    """PGD that freezes row i after step min(first misclassification + overshoot, T)."""
    if not 0 <= overshoot <= cfg.steps:
        raise ValueError(f"overshoot must lie in [0, {cfg.steps}], got {overshoot}")
    x_adv, traces = _run(params, x, y, cfg, rng, overshoot)
    return (x_adv, traces) if return_traces else x_adv


def gair_kappa(trace, T):
    """Number of steps needed to flip the prediction, capped at T."""
    if trace.first_flip is None:
        return T
    return min(trace.first_flip, T)
