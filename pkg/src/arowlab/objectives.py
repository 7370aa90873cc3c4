"""Training objectives.

Every composite objective takes a ``model`` callable (inputs -> logits Tensor),
the clean batch ``(x, y)`` and a fixed adversarial batch ``x_adv``.  The
adversarial inputs are constants: no gradient flows back through the attack.
All objectives reduce over the batch by the mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .models import predict

KINDS = ("natural", "pgd-at", "gair-at", "trades", "hat", "mart", "arow", "cow")


class ObjectiveConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "arow"
    lam: float = 1.0
    alpha: float = 0.0
    gamma: float = 0.0
    detach_weight: bool = False
    pretrained: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ObjectiveConfigError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0:
            raise ObjectiveConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.alpha < 1:
            raise ObjectiveConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ObjectiveConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.kind == "hat" and not self.pretrained:
            raise ObjectiveConfigError("hat objective requires a pretrained checkpoint")


def _labels(y, num_classes):
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be a 1-d integer array")
    bad = (y < 0) | (y >= num_classes)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"label {int(y[i])} at row {i} is outside [0, {num_classes})")
    return y


# primitive losses ---------------------------------------------------------------

def ce_loss(logits, y):
    logits = ad.as_tensor(logits)
    y = _labels(y, logits.shape[1])
    return ad.neg(ad.mean(ad.pick(ad.log_softmax(logits), y)))


def ce_rows(logits, y):
    logits = ad.as_tensor(logits)
    y = _labels(y, logits.shape[1])
    return ad.neg(ad.pick(ad.log_softmax(logits), y))


def smoothed_targets(y, num_classes, alpha):
    """(1 - alpha) * onehot(y) + alpha / C."""
    y = _labels(y, num_classes)
    t = np.full((len(y), num_classes), alpha / num_classes)
    t[np.arange(len(y)), y] += 1.0 - alpha
    return t


def ls_ce_loss(logits, y, alpha):
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    logits = ad.as_tensor(logits)
    if alpha == 0:
        return ce_loss(logits, y)
    t = smoothed_targets(y, logits.shape[1], alpha)
    per_row = ad.neg(ad.sum_(ad.mul(ad.log_softmax(logits), t), axis=1))
    return ad.mean(per_row)


def kl_div(p, q, logits=True):
    """Per-row KL(p || q).

    With ``logits=True`` both arguments are score vectors and the divergence is
    computed from their log-softmax.  Otherwise they are probability rows and
    terms with p_c = 0 contribute nothing.
    """
    p, q = ad.as_tensor(p), ad.as_tensor(q)
    if p.shape != q.shape or p.data.ndim != 2:
        raise ad.ShapeError(f"kl_div: shapes {p.shape} and {q.shape} must match [B, C]")
    if logits:
        log_p = ad.log_softmax(p)
        log_q = ad.log_softmax(q)
        return ad.sum_(ad.mul(ad.exp(log_p), ad.sub(log_p, log_q)), axis=1)
    zero = (p.data == 0).astype(np.float64)
    log_p = ad.log(ad.add(p, zero))
    log_q = ad.log(ad.add(q, zero * (q.data == 0)))
    return ad.sum_(ad.mul(p, ad.sub(log_p, log_q)), axis=1)


def kl_div_np(p, q):
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


# composite objectives ----------------------------------------------------------

def natural_objective(model, x, y):
    return ce_loss(model(x), y)


def pgd_at_objective(model, x, y, x_adv):
    return ce_loss(model(x_adv), y)


def gair_weight(kappa, T):
    kappa = np.asarray(kappa, dtype=np.float64)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if np.any((kappa < 0) | (kappa > T)):
        raise ValueError(f"kappa must lie in [0, {T}]")
    return (1.0 + np.tanh(5.0 * (1.0 - 2.0 * kappa / T))) / 2.0


def gair_at_objective(model, x, y, x_adv, kappa, T):
    w = gair_weight(kappa, T)
    return ad.mean(ad.mul(ce_rows(model(x_adv), y), w))


def trades_objective(model, x, y, x_adv, lam):
    clean = model(x)
    adv = model(x_adv)
    return ad.add(ce_loss(clean, y), ad.mul(lam, ad.mean(kl_div(clean, adv))))


def weighted_kl_objective(model, x, y, x_adv, lam, alpha, weight, detach_weight=False):
    """Label-smoothed CE on clean inputs plus ``2 lam * KL * weight`` per row.

    ``weight`` is either a callable ``(clean_logits, adv_logits, y) -> Tensor[B]``
    or a constant (scalar or per-row array).
    """
    clean = model(x)
    adv = model(x_adv)
    if callable(weight):
        w = weight(clean, adv, y)
        if detach_weight:
            w = ad.detach(w)
    else:
        w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (clean.shape[0],)).copy()
    reg = ad.mean(ad.mul(kl_div(clean, adv), w))
    return ad.add(ls_ce_loss(clean, y, alpha), ad.mul(2.0 * lam, reg))


def _adv_error_weight(clean, adv, y):
    # 1 - p(y | x_adv)
    return ad.sub(1.0, ad.exp(ad.pick(ad.log_softmax(adv), y)))


def _clean_confidence_weight(clean, adv, y):
    # p(y | x)
    return ad.exp(ad.pick(ad.log_softmax(clean), y))


def arow_objective(model, x, y, x_adv, lam, alpha, detach_weight=False):
    return weighted_kl_objective(model, x, y, x_adv, lam, alpha, _adv_error_weight, detach_weight)


def cow_objective(model, x, y, x_adv, lam, alpha, detach_weight=False):
    return weighted_kl_objective(model, x, y, x_adv, lam, alpha, _clean_confidence_weight, detach_weight)


def margin_rows(adv_logits, y):
    """-log p(y|x') - log(1 - max_{k != y} p(k|x')) per row."""
    adv_logits = ad.as_tensor(adv_logits)
    y = _labels(y, adv_logits.shape[1])
    log_p = ad.log_softmax(adv_logits)
    p = ad.exp(log_p)
    rows = np.arange(len(y))
    masked = p.data.copy()
    masked[rows, y] = -np.inf
    # np.argmax picks the lowest index among ties
    runner_up = np.argmax(masked, axis=1)
    keep = np.ones(p.shape)
    keep[rows, runner_up] = 0.0
    rest = ad.sum_(ad.mul(p, keep), axis=1)  # 1 - p(runner_up), kept positive
    return ad.sub(ad.neg(ad.pick(log_p, y)), ad.log(rest))


def mart_objective(model, x, y, x_adv, lam, detach_weight=False):
    clean = model(x)
    adv = model(x_adv)
    w = ad.sub(1.0, ad.exp(ad.pick(ad.log_softmax(clean), y)))
    if detach_weight:
        w = ad.detach(w)
    reg = ad.mean(ad.mul(kl_div(clean, adv), w))
    return ad.add(ad.mean(margin_rows(adv, y)), ad.mul(lam, reg))


def helper_points(x, x_adv, box=(0.0, 1.0)):
    h = np.asarray(x) + 2.0 * (np.asarray(x_adv) - np.asarray(x))
    return h if box is None else np.clip(h, box[0], box[1])


def hat_objective(model, pretrained, x, y, x_adv, lam, gamma, box=(0.0, 1.0)):
    if pretrained is None:
        raise ObjectiveConfigError("hat objective requires a pretrained model")
    helper_labels = predict(pretrained, x_adv)
    loss = trades_objective(model, x, y, x_adv, lam)
    if gamma == 0:
        return loss
    helper = helper_points(x, x_adv, box)
    return ad.add(loss, ad.mul(gamma, ce_loss(model(helper), helper_labels)))


def objective_value(spec, model, x, y, x_adv=None, kappa=None, T=None, pretrained=None, box=(0.0, 1.0)):
    """Evaluate the objective named by ``spec`` on one batch."""
    k = spec.kind
    if k == "natural":
        return natural_objective(model, x, y)
    if x_adv is None:
        raise ValueError(f"{k} objective needs adversarial inputs")
    if k == "pgd-at":
        return pgd_at_objective(model, x, y, x_adv)
    if k == "gair-at":
        if kappa is None or T is None:
            raise ValueError("gair-at objective needs kappa values and the attack step count")
        return gair_at_objective(model, x, y, x_adv, kappa, T)
    if k == "trades":
        return trades_objective(model, x, y, x_adv, spec.lam)
    if k == "hat":
        return hat_objective(model, pretrained, x, y, x_adv, spec.lam, spec.gamma, box)
    if k == "mart":
        return mart_objective(model, x, y, x_adv, spec.lam, spec.detach_weight)
    if k == "arow":
        return arow_objective(model, x, y, x_adv, spec.lam, spec.alpha, spec.detach_weight)
    return cow_objective(model, x, y, x_adv, spec.lam, spec.alpha, spec.detach_weight)
