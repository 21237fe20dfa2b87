import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikeattack.harness.datasets import model_input
from spikeattack.linf import AttackConfig, fgsm, pgd
from spikeattack.losses import ce_loss, cw_loss, get_loss
from spikeattack.snn import build_preset, forward, predict


def test_ce_examples():
    assert ce_loss(np.zeros(5), 2).loss == pytest.approx(math.log(5))
    assert ce_loss(np.array([100.0, 0.0, 0.0]), 0).loss < 1e-30
    g = ce_loss(np.array([0.3, -1.0, 2.0]), 1).grad
    assert abs(g.sum()) < 1e-12
    with pytest.raises(ValueError):
        ce_loss(np.zeros(3), 3)
    with pytest.raises(ValueError):
        ce_loss(np.zeros(3), 0.5)


def test_cw_examples():
    lv = cw_loss(np.array([2.0, 1.5, 0.3]), 0)
    assert lv.loss == pytest.approx(0.5)
    assert lv.grad.tolist() == [1.0, -1.0, 0.0]
    assert cw_loss(np.array([1.0, 2.0]), 0).loss == 0
    assert not cw_loss(np.array([1.0, 2.0]), 0).grad.any()
    assert cw_loss(np.array([1.0, 1.0]), 0).loss == 0
    with pytest.raises(ValueError):
        cw_loss(np.array([1.0]), 0)
    with pytest.raises(ValueError):
        get_loss("hinge")


def test_losses_batched_match_single():
    z = np.random.default_rng(0).standard_normal((4, 3))
    y = np.array([0, 2, 1, 1])
    for fn in (ce_loss, cw_loss):
        b = fn(z, y)
        for i in range(4):
            s = fn(z[i], int(y[i]))
            assert b.loss[i] == pytest.approx(s.loss)
            assert np.allclose(b.grad[i], s.grad)


@given(arrays(np.float64, st.integers(2, 6), elements=st.sampled_from([-1.0, 0.0, 0.5, 1.0, 2.0])),
       st.integers(0, 5))
def test_cw_zero_iff_misclassified_or_tie(z, y):
    y = y % z.size
    others = np.delete(z, y)
    misclassified_or_tie = others.max() >= z[y]
    assert (cw_loss(z, y).loss == 0) == misclassified_or_tie
    assert cw_loss(z, y).loss >= 0


def test_attack_config_validation():
    cfg = AttackConfig(eps=0.1)
    assert cfg.alpha == pytest.approx(0.025) and cfg.steps == 10
    for bad in ({"eps": -1}, {"alpha": 0.0}, {"steps": 0}, {"lo": 1, "hi": 0}, {"loss": "nope"}):
        with pytest.raises(ValueError):
            AttackConfig(**bad)


@pytest.fixture(scope="module")
def small_model():
    return build_preset("conv", (1, 8, 8), 2, 4, seed=5)


def test_fgsm_zero_budget_and_zero_gradient(small_model, rng):
    x = encode = model_input(rng.random((1, 8, 8)).astype(np.float32), 4)
    y = predict(small_model, x)
    out = fgsm(small_model, x, y, AttackConfig(eps=0.0, alpha=1.0))
    assert np.array_equal(out.x_adv, x)
    dead = small_model.astype(np.float32)
    for layer in dead.layers:
        if layer.params:
            layer.weight[...] = 0
    out = fgsm(dead, encode, 0, AttackConfig(eps=0.1))
    assert np.array_equal(out.x_adv, encode)


def test_attack_domain_check(small_model):
    with pytest.raises(ValueError):
        fgsm(small_model, np.full((4, 1, 8, 8), 1.5, np.float32), 0, AttackConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.0, 2 / 255, 8 / 255, 0.1]), st.sampled_from(["ce", "cw"]))
def test_fgsm_pgd_budget_and_domain(small_model, seed, eps, loss):
    r = np.random.default_rng(seed)
    x = model_input(r.random((1, 8, 8)).astype(np.float32), 4)
    y = int(r.integers(0, 2))
    cfg = AttackConfig(eps=eps, alpha=max(eps / 3, 1e-3), steps=3, loss=loss)
    for res in (fgsm(small_model, x, y, cfg), pgd(small_model, x, y, cfg)):
        d = res.x_adv.astype(np.float64) - x.astype(np.float64)
        assert np.all(np.abs(d) <= eps)
        assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1
        assert res.linf <= eps


def test_pgd_one_step_equals_fgsm(small_model, rng):
    for _ in range(5):
        x = model_input(rng.random((1, 8, 8)).astype(np.float32), 4)
        y = int(rng.integers(0, 2))
        a = fgsm(small_model, x, y, AttackConfig(eps=8 / 255))
        b = pgd(small_model, x, y, AttackConfig(eps=8 / 255, alpha=8 / 255, steps=1))
        assert np.array_equal(a.x_adv, b.x_adv) and a.success == b.success


def test_shared_time_perturbation_under_direct_coding(small_model, rng):
    x = model_input(rng.random((1, 8, 8)).astype(np.float32), 4)
    res = pgd(small_model, x, 0, AttackConfig(eps=0.05, steps=4))
    d = res.x_adv - x
    assert all(np.array_equal(d[t], d[0]) for t in range(4))
    free = pgd(small_model, x, 0, AttackConfig(eps=0.05, steps=4, shared_time=False))
    assert np.all(np.abs(free.x_adv - x) <= 0.05 + 1e-7)


def test_pgd_best_tracker_monotone_and_deterministic(small_model, rng):
    x = model_input(rng.random((1, 8, 8)).astype(np.float32), 4)
    y = predict(small_model, x)
    cfg = AttackConfig(eps=0.05, steps=8)
    a, b = pgd(small_model, x, y, cfg), pgd(small_model, x, y, cfg)
    assert np.array_equal(a.x_adv, b.x_adv) and a.loss_trace == b.loss_trace
    if not a.success:
        assert all(q >= p for p, q in zip(a.best_trace, a.best_trace[1:]))
    assert len(a.loss_trace) == 8 and a.gradient_calls == 8
    assert a.success == (predict(small_model, a.x_adv) != y)


def test_pgd_random_start_seeded(small_model, rng):
    x = model_input(rng.random((1, 8, 8)).astype(np.float32), 4)
    cfg = AttackConfig(eps=0.05, steps=2, random_start=True, seed=3)
    assert np.array_equal(pgd(small_model, x, 0, cfg).x_adv, pgd(small_model, x, 0, cfg).x_adv)


def test_pgd_dominates_fgsm_on_victim(blob_victim):
    res, test = blob_victim
    m = res.model
    cfg_f = AttackConfig(eps=8 / 255)
    cfg_p = AttackConfig(eps=8 / 255, steps=10)
    wins_f = wins_p = 0
    for i in range(20):
        x, y = model_input(test.x[i], m.timesteps), int(test.y[i])
        if predict(m, x) != y:
            continue
        f, p = fgsm(m, x, y, cfg_f), pgd(m, x, y, cfg_p)
        wins_f += f.success
        wins_p += p.success
        z_f = forward(m, f.x_adv).logits[0]
        if not p.success:
            assert max(p.loss_trace) >= ce_loss(z_f, y).loss - 1e-6
    assert wins_p >= wins_f
