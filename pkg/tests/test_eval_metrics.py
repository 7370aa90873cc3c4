import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arowlab import eval_metrics as em
from arowlab.attacks import AttackConfig
from arowlab.models import MlpSpec, ModelParams, init, predict
from arowlab.risk_oracle import empirical_risks


def constant(d, c, cls):
    b = np.zeros(c)
    b[cls] = 1.0
    return ModelParams(MlpSpec(d, (), c), [(np.zeros((d, c)), b)])


def test_standard_accuracy_examples():
    x = np.random.default_rng(0).uniform(size=(12, 2))
    assert em.standard_accuracy(constant(2, 3, 2), x, np.full(12, 2)) == 1.0
    params = init(MlpSpec(2, (6,), 2, seed=4))
    pred = predict(params, x)
    y = np.array([0, 1] * 6)
    flipped = 1 - y
    assert em.standard_accuracy(params, x, flipped) == pytest.approx(1 - em.standard_accuracy(params, x, y), abs=1e-15)
    with pytest.raises(ValueError):
        em.standard_accuracy(params, x[:0], y[:0])
    assert em.standard_accuracy(params, x, y) == sum(int(p == t) for p, t in zip(pred, y)) / 12


def test_robust_accuracy_zero_radius_is_standard():
    params = init(MlpSpec(2, (6,), 3, seed=1))
    rng = np.random.default_rng(1)
    x, y = rng.uniform(size=(30, 2)), rng.integers(0, 3, size=30)
    assert em.robust_accuracy(params, x, y, AttackConfig(0.0, 0.01, 5), rng) == em.standard_accuracy(params, x, y)


def test_robust_accuracy_is_reproducible():
    params = init(MlpSpec(2, (6,), 3, seed=2))
    rng = np.random.default_rng(2)
    x, y = rng.uniform(size=(30, 2)), rng.integers(0, 3, size=30)
    a = em.robust_accuracy(params, x, y, AttackConfig(0.1, 0.02, 5), em.eval_rng(7))
    b = em.robust_accuracy(params, x, y, AttackConfig(0.1, 0.02, 5), em.eval_rng(7))
    assert a == b


@pytest.mark.parametrize("seed", range(5))
def test_pgd_on_linear_models_agrees_with_the_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    eps = 0.08
    W = rng.normal(size=(2, 2))
    params = ModelParams(MlpSpec(2, (), 2), [(W, rng.normal(0, 0.3, size=2))])
    x = rng.uniform(eps, 1 - eps, size=(60, 2))
    y = rng.integers(0, 2, size=60)
    pgd = em.robust_accuracy(params, x, y, AttackConfig(eps, 2 * eps, 1), rng)
    grid = (60 - empirical_risks(params, x, y, eps, 5).robust_count) / 60
    assert pgd <= grid
    assert pgd == grid


def test_fairness_examples():
    assert em.worst_class_and_sd([1.0, 1.0, 1.0]) == (1.0, 0.0)
    wc, sd = em.worst_class_and_sd([1.0, 0.5])
    assert wc == 0.5 and sd == pytest.approx(0.25, abs=1e-15)
    x = np.random.default_rng(3).uniform(size=(4, 2))
    with pytest.raises(em.EmptyClassError, match="class 2"):
        em.fairness_metrics(constant(2, 3, 0), x, np.array([0, 1, 0, 1]), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 6))
def test_fairness_matches_brute_force(seed, classes):
    rng = np.random.default_rng(seed)
    n = 12 * classes
    y = np.concatenate([np.arange(classes), rng.integers(0, classes, size=n - classes)])
    params = init(MlpSpec(2, (5,), classes, seed=seed))
    x = rng.uniform(size=(n, 2))
    f = em.fairness_metrics(params, x, y, classes)
    pred = predict(params, x)
    per = []
    for c in range(classes):
        rows = [i for i in range(n) if y[i] == c]
        per.append(sum(1 for i in rows if pred[i] == c) / len(rows))
    mean = sum(per) / classes
    sd = (sum((a - mean) ** 2 for a in per) / classes) ** 0.5
    assert f.per_class == pytest.approx(per, abs=1e-12)
    assert f.worst_class == min(f.per_class)
    assert abs(f.worst_class - min(per)) <= 1e-12 and abs(f.sd - sd) <= 1e-12


def test_bucket_edges():
    got = em.bucket_index([0.0, 0.29999, 0.3, 0.5, 0.69, 0.7, 1.0])
    assert got.tolist() == [0, 0, 1, 2, 2, 3, 3]


def test_buckets_for_a_perfectly_robust_model():
    params = constant(2, 2, 1)
    x = np.random.default_rng(4).uniform(size=(20, 2))
    y = np.ones(20, dtype=np.int64)
    table = em.robustness_buckets(params, params, x, y, AttackConfig(0.1, 0.02, 3), em.eval_rng(0))
    assert table.robust == table.sizes and sum(table.sizes) == 20


def test_buckets_partition_on_random_models():
    rng = np.random.default_rng(5)
    ref, model = init(MlpSpec(2, (6,), 3, seed=5)), init(MlpSpec(2, (6,), 3, seed=6))
    x, y = rng.uniform(size=(50, 2)), rng.integers(0, 3, size=50)
    table = em.robustness_buckets(ref, model, x, y, AttackConfig(0.1, 0.02, 3), em.eval_rng(0))
    assert sum(table.sizes) == 50
    assert all(0 <= r <= s for r, s in zip(table.robust, table.sizes))


def test_buckets_reject_mismatched_models():
    with pytest.raises(ValueError):
        em.robustness_buckets(init(MlpSpec(2, (3,), 2)), init(MlpSpec(2, (3,), 3)),
                              np.zeros((1, 2)), [0], AttackConfig(0.1, 0.02, 1))


def test_report_json_and_csv_carry_the_same_numbers():
    rng = np.random.default_rng(6)
    params, ref = init(MlpSpec(2, (6,), 3, seed=8)), init(MlpSpec(2, (6,), 3, seed=9))
    x, y = rng.uniform(size=(60, 2)), np.arange(60) % 3
    attacks = {"pgd": AttackConfig(0.1, 0.02, 4), "zero": AttackConfig(0.0, 0.02, 4)}
    report = em.evaluate(params, x, y, 3, attacks, seed=1, reference=ref, bucket_attack="pgd")
    assert report.robust_accuracy["zero"] == report.standard_accuracy
    doc = json.loads(report.to_json())
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    agg = {r["attack"]: r for r in rows if r["scope"] == "aggregate"}
    assert float(agg[""]["accuracy"]) == doc["standard_accuracy"] == report.standard_accuracy
    assert float(agg["zero"]["accuracy"]) == doc["robust_accuracy"]["zero"]
    assert float(agg["pgd"]["accuracy"]) == doc["robust_accuracy"]["pgd"]
    assert float(agg["pgd"]["worst_class"]) == doc["worst_class_robust"]["pgd"]
    assert float(agg["pgd"]["sd"]) == doc["sd_robust"]["pgd"]
    buckets = [r for r in rows if r["scope"] == "bucket"]
    assert [int(r["size"]) for r in buckets] == [b["size"] for b in doc["buckets"]["rows"]]
    assert sum(int(r["size"]) for r in buckets) == 60
