"""Standard and robust accuracy, class-wise fairness metrics, robustness buckets."""

from __future__ import annotations

import io
import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .attacks import pgd_attack
from .models import predict, probs

BUCKET_EDGES = (0.0, 0.3, 0.5, 0.7, 1.0)
BUCKET_NAMES = ("least_robust", "less_robust", "robust", "highly_robust")
CSV_HEADER = ("scope", "attack", "group", "accuracy", "worst_class", "sd", "size", "robust_count")


class EmptyClassError(ValueError):
    pass


def eval_rng(seed):
    """Attack randomness for evaluation; shared with the per-epoch training metrics."""
    return np.random.default_rng([seed, 0xE7A1])


def standard_accuracy(params, x, y):
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("dataset is empty")
    return float(np.mean(predict(params, x) == y))


def adversarial_inputs(params, x, y, attack, rng=None, restarts=1):
    """Worst case over restarts: keep the first restart that fools each row."""
    rng = rng if rng is not None else np.random.default_rng(0)
    y = np.asarray(y)
    best, _ = pgd_attack(params, x, y, attack, rng)
    for _ in range(restarts - 1):
        fooled = predict(params, best) != y
        if np.all(fooled):
            break
        cand, _ = pgd_attack(params, x, y, attack, rng)
        take = ~fooled & (predict(params, cand) != y)
        best = np.where(take[:, None], cand, best)
    return best


def robust_accuracy(params, x, y, attack, rng=None, restarts=1):
    x_adv = adversarial_inputs(params, x, y, attack, rng, restarts)
    return float(np.mean(predict(params, x_adv) == np.asarray(y)))


def per_class_accuracy(pred, y, num_classes):
    pred, y = np.asarray(pred), np.asarray(y)
    out = []
    for c in range(num_classes):
        mask = y == c
        if not np.any(mask):
            raise EmptyClassError(f"class {c} has no samples")
        out.append(float(np.mean(pred[mask] == c)))
    return out


def worst_class_and_sd(acc):
    acc = np.asarray(acc, dtype=np.float64)
    return float(acc.min()), float(np.sqrt(np.mean((acc - acc.mean()) ** 2)))


@dataclass
class Fairness:
    per_class: list
    worst_class: float
    sd: float


def fairness_metrics(params, x, y, num_classes, attack=None, rng=None, x_adv=None):
    """Class-wise accuracies with worst-class accuracy and population SD.

    With ``attack`` (or precomputed ``x_adv``) the accuracies are robust ones.
    """
    if attack is not None and x_adv is None:
        x_adv = adversarial_inputs(params, x, y, attack, rng)
    pred = predict(params, x if x_adv is None else x_adv)
    acc = per_class_accuracy(pred, y, num_classes)
    wc, sd = worst_class_and_sd(acc)
    return Fairness(acc, wc, sd)


def bucket_index(p):
    """[0, .3) -> 0, [.3, .5) -> 1, [.5, .7) -> 2, [.7, 1] -> 3."""
    p = np.asarray(p, dtype=np.float64)
    return np.searchsorted(np.asarray(BUCKET_EDGES[1:-1]), p, side="right")


@dataclass
class BucketTable:
    sizes: list
    robust: list

    def rows(self):
        return [{"bucket": name, "size": s, "robust": r}
                for name, s, r in zip(BUCKET_NAMES, self.sizes, self.robust)]


def robustness_buckets(reference, model, x, y, attack, rng=None, ref_rng=None):
    """Group rows by the reference model's p(y | x_adv) and count eval-model robust rows."""
    y = np.asarray(y)
    if reference.spec.input_dim != model.spec.input_dim or reference.spec.num_classes != model.spec.num_classes:
        raise ValueError("reference and evaluated models have different input/output sizes")
    ref_adv, _ = pgd_attack(reference, x, y, attack, ref_rng if ref_rng is not None else np.random.default_rng(0))
    conf = probs(reference, ref_adv)[np.arange(len(y)), y]
    groups = bucket_index(conf)
    adv = adversarial_inputs(model, x, y, attack, rng)
    ok = predict(model, adv) == y
    sizes = [int(np.sum(groups == g)) for g in range(4)]
    robust = [int(np.sum(ok & (groups == g))) for g in range(4)]
    if sum(sizes) != len(y):
        raise AssertionError("bucket sizes do not partition the dataset")
    return BucketTable(sizes, robust)


@dataclass
class EvalReport:
    n: int
    standard_accuracy: float
    robust_accuracy: dict
    per_class_standard: list
    worst_class_standard: float
    sd_standard: float
    per_class_robust: dict = field(default_factory=dict)
    worst_class_robust: dict = field(default_factory=dict)
    sd_robust: dict = field(default_factory=dict)
    buckets: Optional[dict] = None
    provenance: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerow(["aggregate", "", "all", repr(self.standard_accuracy),
                    repr(self.worst_class_standard), repr(self.sd_standard), self.n, ""])
        for name in sorted(self.robust_accuracy):
            w.writerow(["aggregate", name, "all", repr(self.robust_accuracy[name]),
                        repr(self.worst_class_robust[name]), repr(self.sd_robust[name]), self.n, ""])
        for c, a in enumerate(self.per_class_standard):
            w.writerow(["class", "", c, repr(a), "", "", "", ""])
        for name in sorted(self.per_class_robust):
            for c, a in enumerate(self.per_class_robust[name]):
                w.writerow(["class", name, c, repr(a), "", "", "", ""])
        if self.buckets:
            for row in self.buckets["rows"]:
                w.writerow(["bucket", self.buckets["attack"], row["bucket"], "", "", "",
                            row["size"], row["robust"]])
        return buf.getvalue()


def evaluate(params, x, y, num_classes, attacks, seed=0, restarts=1, reference=None, bucket_attack=None):
    """Full report over a dict of named attack configs."""
    x, y = np.asarray(x), np.asarray(y)
    std = standard_accuracy(params, x, y)
    fair = fairness_metrics(params, x, y, num_classes)
    report = EvalReport(len(y), std, {}, fair.per_class, fair.worst_class, fair.sd)
    for name in sorted(attacks):
        adv = adversarial_inputs(params, x, y, attacks[name], eval_rng(seed), restarts)
        f = fairness_metrics(params, x, y, num_classes, x_adv=adv)
        report.robust_accuracy[name] = float(np.mean(predict(params, adv) == y))
        report.per_class_robust[name] = f.per_class
        report.worst_class_robust[name] = f.worst_class
        report.sd_robust[name] = f.sd
    if reference is not None and bucket_attack is not None:
        name = bucket_attack
        table = robustness_buckets(reference, params, x, y, attacks[name],
                                   eval_rng(seed), eval_rng(seed))
        report.buckets = {"attack": name, "rows": table.rows()}
    return report
