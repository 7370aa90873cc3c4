import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arowlab import attacks
from arowlab.attacks import AttackConfig, PgdTrace, early_stopped_pgd, gair_kappa, pgd_attack
from arowlab.models import MlpSpec, ModelParams, init, predict


def linear_binary(w, b0=0.0):
    """logits = [w . x + b0, 0]"""
    w = np.asarray(w, dtype=np.float64)
    W = np.column_stack([w, np.zeros_like(w)])
    return ModelParams(MlpSpec(len(w), (), 2), [(W, np.array([b0, 0.0]))])


def random_mlp(seed, dim=2, classes=3):
    return init(MlpSpec(dim, (8,), classes, seed=seed))


def test_zero_steps_returns_start():
    params = random_mlp(0)
    x = np.random.default_rng(0).uniform(size=(5, 2))
    y = np.zeros(5, dtype=np.int64)
    out, traces = pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 0, random_init=False))
    assert out.tobytes() == x.tobytes()
    assert all(t.preds == [] for t in traces)
    rng = np.random.default_rng(3)
    start = np.clip(x + np.random.default_rng(3).uniform(-0.1, 0.1, size=x.shape), 0, 1)
    out, _ = pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 0), rng)
    np.testing.assert_array_equal(out, np.clip(np.clip(start, x - 0.1, x + 0.1), 0, 1))


def test_single_step_on_linear_model_hits_the_corner():
    w = np.array([0.7, -1.3, 0.0, 2.0])
    params = linear_binary(w)
    x = np.array([[0.4, 0.5, 0.6, 0.5], [0.3, 0.35, 0.8, 0.2]])
    y = np.zeros(2, dtype=np.int64)
    eps = 0.1
    for eta in (eps, 0.25):
        out, _ = pgd_attack(params, x, y, AttackConfig(eps, eta, 1, random_init=False))
        corner = x - eps * np.sign(w)
        assert out.tobytes() == corner.tobytes()


def test_zero_radius_leaves_inputs_untouched():
    params = random_mlp(1)
    x = np.random.default_rng(1).uniform(size=(6, 2))
    y = np.arange(6) % 3
    out, _ = pgd_attack(params, x, y, AttackConfig(0.0, 0.05, 7), np.random.default_rng(0))
    assert out.tobytes() == x.tobytes()


def test_kl_surrogate_gradient_vanishes_at_the_clean_point():
    # why random init is on by default: started at x the KL surrogate is flat up to rounding
    from arowlab import autodiff as ad
    from arowlab.models import forward
    params = random_mlp(2)
    x = np.random.default_rng(2).uniform(size=(4, 2))
    clean = ad.Tensor(forward(params, x).data)
    g = attacks._surrogate_grad(params, x, np.zeros(4, dtype=np.int64), clean, "kl-to-clean")
    assert np.max(np.abs(g)) < 1e-14


def test_attack_is_deterministic_and_does_not_touch_parameters():
    params = random_mlp(3)
    before = params.flatten().tobytes()
    x = np.random.default_rng(3).uniform(size=(20, 2))
    y = np.arange(20) % 3
    cfg = AttackConfig(0.08, 0.02, 6)
    a, _ = pgd_attack(params, x, y, cfg, np.random.default_rng(9))
    b, _ = pgd_attack(params, x, y, cfg, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()
    assert params.flatten().tobytes() == before


def test_inputs_outside_box_are_rejected():
    with pytest.raises(attacks.AttackError, match="box"):
        pgd_attack(random_mlp(0), np.array([[1.5, 0.2]]), [0], AttackConfig(0.1, 0.01, 1))


def test_non_finite_gradient_names_step_and_row(monkeypatch):
    def bad(params, x_cur, y, clean, surrogate):
        g = np.ones_like(x_cur)
        g[2, 1] = np.nan
        return g
    monkeypatch.setattr(attacks, "_surrogate_grad", bad)
    x = np.full((4, 2), 0.5)
    with pytest.raises(attacks.AttackError, match="step 1, batch row 2"):
        pgd_attack(random_mlp(0), x, [0, 0, 0, 0], AttackConfig(0.1, 0.01, 3, random_init=False))


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(-0.1, 0.01, 1)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.0, 1)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.01, 1, surrogate="hinge")
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.01, 1, box=(1.0, 0.0))


def test_early_stop_after_first_flip():
    # class 0 at the start, flips after one step of size 0.01, keeps drifting afterwards
    params = linear_binary([1.0, 1.0], b0=-0.995)
    x = np.array([[0.5, 0.5]])
    cfg = AttackConfig(0.5, 0.01, 10, random_init=False)
    out, traces = early_stopped_pgd(params, x, [0], cfg, overshoot=2, return_traces=True)
    assert traces[0].first_flip == 1
    three, _ = pgd_attack(params, x, [0], AttackConfig(0.5, 0.01, 3, random_init=False))
    full, _ = pgd_attack(params, x, [0], cfg)
    assert out.tobytes() == three.tobytes()
    assert not np.array_equal(out, full)


def _mixed_batch(seed, n=40):
    rng = np.random.default_rng(seed)
    return random_mlp(seed), rng.uniform(size=(n, 2)), rng.integers(0, 3, size=n)


@pytest.mark.parametrize("seed", range(4))
def test_early_stop_with_full_overshoot_is_bitwise_pgd(seed):
    params, x, y = _mixed_batch(seed)
    cfg = AttackConfig(0.1, 0.02, 8)
    full, _ = pgd_attack(params, x, y, cfg, np.random.default_rng(seed))
    fat = early_stopped_pgd(params, x, y, cfg, 8, np.random.default_rng(seed))
    assert fat.tobytes() == full.tobytes()


@pytest.mark.parametrize("seed", range(3))
def test_early_stop_rows_equal_truncated_pgd(seed):
    params, x, y = _mixed_batch(seed)
    T, K = 8, 2
    cfg = AttackConfig(0.15, 0.03, T, random_init=False)
    out, traces = early_stopped_pgd(params, x, y, cfg, K, return_traces=True)
    for i, tr in enumerate(traces):
        stop = T if tr.first_flip is None else min(tr.first_flip + K, T)
        ref, _ = pgd_attack(params, x[i:i + 1], y[i:i + 1], AttackConfig(0.15, 0.03, stop, random_init=False))
        assert out[i].tobytes() == ref[0].tobytes()
        if tr.first_flip is None:
            full, _ = pgd_attack(params, x[i:i + 1], y[i:i + 1], cfg)
            assert out[i].tobytes() == full[0].tobytes()


def test_kappa_examples():
    assert gair_kappa(PgdTrace(0, [0] * 10, None), 10) == 10
    assert gair_kappa(PgdTrace(1, [1] * 10, 0), 10) == 0
    assert gair_kappa(PgdTrace(0, [0, 0, 0, 1] + [1] * 6, 4), 10) == 4


def test_trace_first_flip_matches_predictions():
    params, x, y = _mixed_batch(5)
    cfg = AttackConfig(0.2, 0.04, 6)
    out, traces = pgd_attack(params, x, y, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal([t.preds[-1] for t in traces], predict(params, out))
    for t, label in zip(traces, y):
        seq = [t.initial_pred] + t.preds
        wrong = [m for m, p in enumerate(seq) if p != label]
        assert t.first_flip == (wrong[0] if wrong else None)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.4), st.floats(0.001, 0.3), st.integers(0, 6),
       st.sampled_from(["cross-entropy", "kl-to-clean"]), st.booleans())
def test_ball_and_box_invariants(seed, eps, eta, steps, surrogate, random_init):
    params, x, y = _mixed_batch(seed % 1000, n=25)
    cfg = AttackConfig(eps, eta, steps, surrogate, random_init)
    out, _ = pgd_attack(params, x, y, cfg, np.random.default_rng(seed))
    assert np.max(np.abs(out - x)) <= eps + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0
