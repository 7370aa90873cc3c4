"""Command implementations: each takes a validated RunConfig and writes artifacts."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os

import numpy as np

from . import data as datasets
from . import models
from .config import BlobsParams, ConfigError, MoonsParams, resolved
from .eval_metrics import adversarial_inputs, eval_rng, evaluate
from .io import atomic_write_text, write_json
from .models import MlpSpec, init, predict
from .risk_oracle import (GRID_BUDGET, GridBudgetError, binary_exactness_audit, check_budget,
                          empirical_risks, random_trials)
from .training import format_metrics_csv, train

log = logging.getLogger(__name__)


class BoundViolation(RuntimeError):
    pass


def build_dataset(cfg):
    ds = cfg.dataset
    if ds.generator == "two_moons":
        p = ds.two_moons or MoonsParams()
        return datasets.two_moons(p.n, p.noise_sd, cfg.seed if p.seed is None else p.seed)
    if ds.generator == "gaussian_blobs":
        p = ds.gaussian_blobs or BlobsParams()
        return datasets.gaussian_blobs(p.num_classes, p.dim, p.n_per_class, p.center_spread, p.noise_sd,
                                       cfg.seed if p.seed is None else p.seed)
    idx = ds.idx
    for path in (idx.images, idx.labels):
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset file not found: {path}")
    return datasets.load_idx(idx.images, idx.labels, idx.limit, idx.num_classes)


def splits(cfg, dataset):
    s = cfg.dataset.split
    train_set, val_set, test_set = datasets.split(dataset, [s.train, s.val, s.test], seed=cfg.seed)
    return {"train": train_set, "val": val_set, "test": test_set}


def model_spec(cfg, dataset):
    return MlpSpec(dataset.dim, tuple(cfg.model.hidden), dataset.num_classes, cfg.seed)


def provenance(cfg, dataset):
    return {"config": resolved(cfg), "dataset_digest": dataset.digest(), "dataset": dataset.provenance}


def _load_pretrained(path, spec):
    if path is None:
        return None
    if not os.path.exists(path):
        raise FileNotFoundError(f"pretrained checkpoint not found: {path}")
    params = models.load(path)
    _check_compatible(params.spec, spec, path)
    return params


def _check_compatible(found, expected, path):
    if (found.input_dim, found.num_classes) != (expected.input_dim, expected.num_classes):
        raise ConfigError(
            f"checkpoint {path} has input_dim={found.input_dim}, num_classes={found.num_classes}; "
            f"the configured data needs input_dim={expected.input_dim}, num_classes={expected.num_classes}")


def train_once(cfg, dataset, parts, lam=None, seed=None):
    seed = cfg.seed if seed is None else seed
    spec = MlpSpec(dataset.dim, tuple(cfg.model.hidden), dataset.num_classes, seed)
    tcfg = cfg.train_config(lam=lam, seed=seed)
    pretrained = _load_pretrained(cfg.objective.pretrained, spec)
    monitor = parts["val"] if parts["val"] is not None else parts["test"]
    return train(init(spec), parts["train"], tcfg, val_set=monitor, pretrained=pretrained)


def cmd_train(cfg):
    dataset = build_dataset(cfg)
    parts = splits(cfg, dataset)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    result = train_once(cfg, dataset, parts)
    models.save(result.params, os.path.join(out, "final.ckpt"))
    models.save(result.best_params, os.path.join(out, "best.ckpt"))
    written = ["final.ckpt", "best.ckpt"]
    if result.swa_params is not None:
        models.save(result.swa_params, os.path.join(out, "swa.ckpt"))
        written.append("swa.ckpt")
    if result.ema_params is not None:
        models.save(result.ema_params, os.path.join(out, "ema.ckpt"))
        written.append("ema.ckpt")
    atomic_write_text(os.path.join(out, "metrics.csv"), format_metrics_csv(result.metrics))
    meta = provenance(cfg, dataset)
    meta.update({
        "epochs": cfg.train.epochs,
        "best_epoch": result.best_epoch,
        "final_metrics": result.metrics[-1],
        "checkpoints": written,
        "note": "best.ckpt is selected on the monitoring split (val if present, else test)",
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    })
    write_json(os.path.join(out, "metadata.json"), meta)
    return result


def cmd_eval(cfg, checkpoint):
    dataset = build_dataset(cfg)
    parts = splits(cfg, dataset)
    split = parts[cfg.eval.split]
    if split is None:
        raise ConfigError(f"eval.split: the '{cfg.eval.split}' split is empty")
    if not os.path.exists(checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    params = models.load(checkpoint)
    _check_compatible(params.spec, model_spec(cfg, dataset), checkpoint)
    reference = None
    if cfg.eval.reference is not None:
        reference = _load_pretrained(cfg.eval.reference, params.spec)
    attacks = {name: cfg.attacks[name].build() for name in cfg.eval.attacks}
    if cfg.eval.bucket_attack and reference is not None:
        attacks.setdefault(cfg.eval.bucket_attack, cfg.attacks[cfg.eval.bucket_attack].build())
    report = evaluate(params, split.inputs, split.labels, dataset.num_classes, attacks,
                      seed=cfg.seed, restarts=cfg.eval.restarts, reference=reference,
                      bucket_attack=cfg.eval.bucket_attack if reference is not None else None)
    report.provenance = {**provenance(cfg, dataset), "checkpoint": os.path.basename(checkpoint),
                         "split": cfg.eval.split}
    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.output_dir, "eval.json"), report.to_json())
    atomic_write_text(os.path.join(cfg.output_dir, "eval.csv"), report.to_csv())
    return report


def cmd_attack(cfg, checkpoint, attack_name=None):
    dataset = build_dataset(cfg)
    split = splits(cfg, dataset)[cfg.eval.split]
    params = models.load(checkpoint)
    _check_compatible(params.spec, model_spec(cfg, dataset), checkpoint)
    name = attack_name or cfg.eval.attacks[0]
    if name not in cfg.attacks:
        raise ConfigError(f"attack '{name}' is not defined under 'attacks'")
    x_adv = adversarial_inputs(params, split.inputs, split.labels, cfg.attacks[name].build(),
                               eval_rng(cfg.seed), cfg.eval.restarts)
    pred = predict(params, x_adv)
    header = [f"x{j}" for j in range(split.dim)] + ["label", "pred"]
    lines = [",".join(header)]
    for row, y, p in zip(x_adv, split.labels, pred):
        lines.append(",".join([*(repr(float(v)) for v in row), str(int(y)), str(int(p))]))
    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.output_dir, f"adversarial_{name}.csv"), "\n".join(lines) + "\n")
    return x_adv


def trial_rng(seed):
    return np.random.default_rng([seed, 0xB0])


def _trial_records(report, trial, extra):
    for rec in report.records:
        d = dict(vars(rec))
        d.update(trial=trial, **extra)
        yield d


def cmd_verify_bounds(cfg):
    """Random-model trials plus one check on a trained (or given) model."""
    v = cfg.verify
    check_budget(v.dim, v.points_per_axis)
    if v.samples * v.points_per_axis ** v.dim > GRID_BUDGET:
        raise GridBudgetError(f"{v.samples} samples x {v.points_per_axis}^{v.dim} grid points exceed the budget")
    dataset = build_dataset(cfg)
    if dataset.dim > 3:
        raise ConfigError(f"verify-bounds needs a dataset with d <= 3, got d = {dataset.dim}")
    check_budget(dataset.dim, v.points_per_axis)
    rng = trial_rng(cfg.seed)
    summary = {"trials": [], "violations": {"theorem1": 0, "theorem2": 0, "lemma2": 0, "decomposition": 0},
               "binary_exactness": {"checked_rows": 0, "mismatched_rows": 0, "excluded_ties": 0}}
    lines = []

    def record(name, params, x, y, eps, extra):
        report = empirical_risks(params, x, y, eps, v.points_per_axis)
        t1 = report.robust_risk <= report.theorem1_rhs + 1e-12
        t2 = report.robust_risk <= report.theorem2_rhs + 1e-12
        lem = all(r.lemma2_lhs <= r.lemma2_rhs for r in report.records)
        dec = report.robust_count == report.natural_count + report.boundary_count
        entry = {"trial": name, **extra, **report.aggregates(),
                 "theorem1_holds": t1, "theorem2_holds": t2, "lemma2_holds": lem, "decomposition_holds": dec}
        if params.spec.num_classes == 2:
            checked, mism, excl = binary_exactness_audit(report)
            entry["binary_exactness"] = {"checked_rows": checked, "mismatched_rows": len(mism),
                                         "excluded_ties": excl}
            be = summary["binary_exactness"]
            be["checked_rows"] += checked
            be["mismatched_rows"] += len(mism)
            be["excluded_ties"] += excl
        for key, ok in (("theorem1", t1), ("theorem2", t2), ("lemma2", lem), ("decomposition", dec)):
            summary["violations"][key] += int(not ok)
        summary["trials"].append(entry)
        lines.extend(json.dumps(r, sort_keys=True) for r in _trial_records(report, name, extra))

    trials = random_trials(v.trials, v.dim, v.classes, v.hidden, v.samples, v.epsilon_max, rng, v.epsilon)
    for t, (params, x, y, eps) in enumerate(trials):
        record(t, params, x, y, eps, {"kind": "random", "num_classes": params.spec.num_classes})

    parts = splits(cfg, dataset)
    if v.checkpoint is not None:
        params = _load_pretrained(v.checkpoint, model_spec(cfg, dataset))
    else:
        params = train_once(cfg, dataset, parts).params
    test = parts["test"]
    eps = v.epsilon if v.epsilon is not None else (cfg.attacks[cfg.eval.attacks[0]].epsilon
                                                   if cfg.eval.attacks else 0.0)
    record("trained", params, test.inputs, test.labels, float(eps),
           {"kind": "trained", "num_classes": dataset.num_classes})

    summary["provenance"] = provenance(cfg, dataset)
    summary["all_hold"] = not any(summary["violations"].values())
    os.makedirs(cfg.output_dir, exist_ok=True)
    write_json(os.path.join(cfg.output_dir, "bounds_summary.json"), summary)
    atomic_write_text(os.path.join(cfg.output_dir, "bounds_records.jsonl"), "\n".join(lines) + "\n")
    return summary


def cmd_sweep(cfg, lambdas, seeds=None):
    if len(lambdas) < 2:
        raise ConfigError("sweep needs at least two lambda values")
    seeds = [cfg.seed] if not seeds else list(seeds)
    eval_name = cfg.eval.attacks[0]
    attack = cfg.attacks[eval_name].build()
    rows = []
    digest = None
    for lam in lambdas:
        std, rob = [], []
        for s in seeds:
            dataset = build_dataset(cfg.model_copy(update={"seed": s}))
            digest = digest or dataset.digest()
            scfg = cfg.model_copy(update={"seed": s})
            parts = splits(scfg, dataset)
            result = train_once(scfg, dataset, parts, lam=lam, seed=s)
            test = parts["test"]
            report = evaluate(result.params, test.inputs, test.labels, dataset.num_classes,
                              {eval_name: attack}, seed=s, restarts=cfg.eval.restarts)
            std.append(report.standard_accuracy)
            rob.append(report.robust_accuracy[eval_name])
            log.info("lambda %g seed %d std %.4f rob %.4f", lam, s, std[-1], rob[-1])
        rows.append((float(lam), float(np.mean(std)), float(np.mean(rob))))
    text = "lambda,std_acc,rob_acc\n" + "".join(f"{l!r},{a!r},{b!r}\n" for l, a, b in rows)
    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.output_dir, "sweep.csv"), text)
    write_json(os.path.join(cfg.output_dir, "sweep_metadata.json"),
               {"config": resolved(cfg), "lambdas": list(map(float, lambdas)), "seeds": seeds,
                "first_dataset_digest": digest, "eval_attack": eval_name})
    return rows
