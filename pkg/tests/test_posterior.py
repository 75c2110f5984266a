import numpy as np
import pytest

from drax.core import RngHandle, SeqDistribution, all_states, tv_distance
from drax.errors import CompatibilityError, DomainError
from drax.path import PathSpec, sample_xt, sample_xt_relaxed
from drax.posterior import (
    ExactPosterior,
    MidModel,
    PathSample,
    TabularModel,
    TrainConfig,
    cdfm_grad,
    cdfm_loss,
    combined_loss,
    input_weight_grad,
    load_checkpoint,
    mid_grad,
    mid_loss,
    save_checkpoint,
    soft_cdfm_loss,
    train_toy,
)
from drax.scheduler import Schedule

from conftest import random_target

TWO = PathSpec(Schedule.two_way())
TRI_MID = PathSpec(Schedule.tri(), "uniform", "mid")


def path_batch(spec, q, n, seed, ts=None, mid=None):
    g = np.random.default_rng(seed)
    x1 = all_states(q.d, q.L)[g.choice(q.size, size=n, p=q.probs)]
    t = g.random(n) if ts is None else g.choice(ts, size=n)
    xt = sample_xt(spec, t, None, x1, mid, g, d=q.d)
    return PathSample(t=t, x1=x1, xt=xt)


def test_posterior_boundaries():
    q = random_target(3, 2, 0)
    ex = ExactPosterior(TWO, q)
    x1 = np.array([[2, 1]])
    assert np.allclose(ex.predict(x1, 1.0), np.eye(3)[[2, 1]][None])
    marg = q.position_marginals()
    for z in all_states(3, 2):
        assert np.allclose(ex.predict(z, 0.0), marg)


def test_two_state_hand_calculation():
    # p_t(z | x1) = 0.25 + 0.5 [z = x1]; equal prior, so p(x1 = z | z) = 0.75
    ex = ExactPosterior(TWO, SeqDistribution.uniform(2, 1))
    assert np.allclose(ex.predict(np.array([0]), 0.5), [[0.75, 0.25]])
    coupled = ExactPosterior(PathSpec(Schedule.two_way(), "delta"), SeqDistribution.uniform(2, 1), view="coupling")
    assert np.allclose(coupled.predict(np.array([1]), 0.5), [[0.25, 0.75]])


def test_coupling_view_needs_delta_source():
    with pytest.raises(DomainError):
        ExactPosterior(TWO, SeqDistribution.uniform(2, 1), view="coupling")


def test_loss_examples():
    x1 = np.array([[0, 1, 3], [2, 2, 0]])
    batch = PathSample(t=0.3, x1=x1, xt=x1)
    assert cdfm_loss(TabularModel(4, 3), batch) == pytest.approx(3 * np.log(4), abs=1e-12)
    perfect = TabularModel(4, 3, buckets=1, context="local")
    perfect.logits[...] = -1e3
    idx = np.arange(4)
    perfect.logits[:, :, :, idx, idx] = 1e3
    assert cdfm_loss(perfect, batch) == pytest.approx(0.0, abs=1e-12)
    mid = MidModel(4, 3)
    assert mid_loss(mid, x1, x1) == pytest.approx(3 * np.log(4), abs=1e-12)
    cond = PathSample(t=0.3, x1=x1, xt=x1, condition=x1)
    assert combined_loss(TabularModel(4, 3), mid, cond) == pytest.approx(cdfm_loss(TabularModel(4, 3), cond) + mid_loss(mid, x1, x1))


def test_one_hot_mid_has_zero_loss():
    mid = MidModel(3, 2)
    mid.logits[...] = -1e3
    mid.logits[:, np.arange(3), np.arange(3)] = 1e3
    assert mid_loss(mid, np.array([[0, 2]]), np.array([[0, 2]])) == pytest.approx(0.0, abs=1e-12)


def test_exact_posterior_minimises_cross_entropy():
    q = random_target(3, 2, 1)
    ex = ExactPosterior(TWO, q)
    batch = path_batch(TWO, q, 4000, 1, ts=np.linspace(0.05, 0.95, 10))
    exact = cdfm_loss(ex, batch)
    assert exact <= cdfm_loss(TabularModel(3, 2), batch) + 1e-9
    g = np.random.default_rng(1)
    for _ in range(10):
        m = TabularModel(3, 2, buckets=4, logits=g.normal(size=TabularModel(3, 2, buckets=4).shape))
        assert exact <= cdfm_loss(m, batch) + 1e-9


def _fd(f, x, coords, h=1e-5):
    out = []
    for c in coords:
        old = x[c]
        x[c] = old + h
        up = f()
        x[c] = old - h
        down = f()
        x[c] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def _coords(shape, touched, g, n=20):
    touched = np.stack([np.broadcast_to(a, touched[0].shape) for a in touched], -1).reshape(-1, len(touched))
    if touched.shape[1] < len(shape):
        touched = np.concatenate([touched, g.integers(0, shape[-1], (len(touched), 1))], axis=1)
    pick = touched[g.choice(len(touched), size=n // 2)]
    rand = np.stack([g.integers(0, s, size=n - n // 2) for s in shape], -1)
    return [tuple(int(v) for v in c) for c in np.concatenate([pick, rand])]


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-8))


@pytest.mark.parametrize("context", ["local", "left"])
def test_cross_entropy_gradient_matches_finite_differences(context):
    g = np.random.default_rng(2)
    d, L, B = 4, 3, 16
    model = TabularModel(d, L, buckets=3, context=context)
    model.logits = g.normal(size=model.shape)
    x1 = g.integers(0, d, (B, L))
    batch = PathSample(t=g.random(B), x1=x1, xt=g.integers(0, d, (B, L)), condition=g.integers(0, d, (B, L)), dropped=g.random(B) < 0.3)
    _, grad, _ = cdfm_grad(model, batch)
    feats = model.features(batch.condition, (B,), batch.dropped)
    coords = _coords(model.shape, model.index(batch.xt, batch.t, feats), g)
    fd = _fd(lambda: cdfm_loss(model, batch), model.logits, coords)
    assert _rel(np.array([grad[c] for c in coords]), fd) < 1e-4


def test_mid_gradient_matches_finite_differences():
    g = np.random.default_rng(3)
    mid = MidModel(5, 4)
    mid.logits = g.normal(size=mid.shape)
    cond, x1 = g.integers(0, 5, (10, 4)), g.integers(0, 5, (10, 4))
    _, grad, _ = mid_grad(mid, cond, x1)
    coords = [tuple(int(v) for v in c) for c in np.stack([g.integers(0, s, 20) for s in mid.shape], -1)]
    coords += [(i, int(cond[0, i]), int(x1[0, i])) for i in range(4)]
    fd = _fd(lambda: mid_loss(mid, cond, x1), mid.logits, coords)
    assert _rel(np.array([grad[c] for c in coords]), fd) < 1e-4


@pytest.mark.parametrize("context", ["local", "left"])
def test_straight_through_input_gradient(context):
    g = np.random.default_rng(4)
    d, L, B = 3, 4, 6
    model = TabularModel(d, L, buckets=2, context=context)
    model.logits = g.normal(size=model.shape)
    xt = g.integers(0, d, (B, L))
    batch = PathSample(t=g.random(B), x1=g.integers(0, d, (B, L)), xt=xt)
    _, _, signal = cdfm_grad(model, batch)
    gw = input_weight_grad(model, batch, signal)
    w = np.eye(d)[xt]
    # soft loss agrees with the hard one at one-hot inputs
    assert soft_cdfm_loss(model, batch, w) == pytest.approx(cdfm_loss(model, batch), abs=1e-12)
    coords = [tuple(int(v) for v in c) for c in np.stack([g.integers(0, s, 20) for s in w.shape], -1)]
    fd = _fd(lambda: soft_cdfm_loss(model, batch, w), w, coords)
    assert _rel(np.array([gw[c] for c in coords]), fd) < 1e-4


def test_mid_logit_gradient_through_the_relaxed_path():
    g = np.random.default_rng(5)
    d, L, B = 3, 3, 4
    model = TabularModel(d, L, buckets=2)
    model.logits = g.normal(size=model.shape)
    logits = g.normal(size=(B, L, d))
    x1 = g.integers(0, d, (B, L))
    t = np.full(B, 0.4)
    noise = -np.log(-np.log(g.random((B, L, d))))

    def loss():
        rel = sample_xt_relaxed(TRI_MID, t, None, x1, logits, 0.8, noise=noise)
        return soft_cdfm_loss(model, PathSample(t=t, x1=x1, xt=rel.hard()), rel.weights)

    rel = sample_xt_relaxed(TRI_MID, t, None, x1, logits, 0.8, noise=noise)
    batch = PathSample(t=t, x1=x1, xt=rel.hard())
    feats = model.features(None, (B,))
    # gradient of the soft loss w.r.t. the relaxed weights, evaluated at the relaxed point
    probs = np.exp(model.soft_logits(rel.weights, t, feats))
    probs /= probs.sum(-1, keepdims=True)
    sig = (probs - np.eye(d)[x1]) / B
    rows = model.logits[np.broadcast_to(model.bucket(t)[:, None], (B, L)), np.broadcast_to(np.arange(L), (B, L)), feats]
    gw = np.einsum("blvk,blk->blv", rows, sig)
    analytic = rel.vjp(gw)
    coords = [tuple(int(v) for v in c) for c in np.stack([g.integers(0, s, 20) for s in logits.shape], -1)]
    fd = _fd(loss, logits, coords)
    assert _rel(np.array([analytic[c] for c in coords]), fd) < 1e-3
    assert batch.xt.shape == (B, L)


def test_frozen_prefix_positions_get_no_gradient():
    g = np.random.default_rng(6)
    model = TabularModel(3, 4)
    model.logits = g.normal(size=model.shape)
    batch = PathSample(t=g.random(5), x1=g.integers(0, 3, (5, 4)), xt=g.integers(0, 3, (5, 4)), frozen_prefix_len=2)
    _, _, signal = cdfm_grad(model, batch)
    assert np.all(signal[:, :2] == 0)
    assert np.any(signal[:, 2:] != 0)


def test_trivial_task_converges():
    x1 = np.tile([1, 0, 2], (64, 1))
    res = train_toy(x1, None, TabularModel(3, 3), None, TWO, TrainConfig(steps=1500, batch_size=64, dropout=0.0), RngHandle(0))
    assert res.cdfm_losses[-50:].mean() < 0.05


def test_full_dropout_learns_the_target_marginal():
    g = np.random.default_rng(7)
    q = random_target(3, 3, 7)
    x1 = all_states(3, 3)[g.choice(q.size, size=4000, p=q.probs)]
    cond = g.integers(0, 3, x1.shape)
    model = TabularModel(3, 3, buckets=50)
    train_toy(x1, cond, model, None, TWO, TrainConfig(steps=3000, lr=8.0, batch_size=256, dropout=1.0), RngHandle(1))
    emp = np.stack([np.bincount(x1[:, i], minlength=3) / len(x1) for i in range(3)])
    xt = g.integers(0, 3, (2000, 3))
    pred = model.predict(xt, np.zeros(2000)).mean(axis=0)
    for i in range(3):
        assert tv_distance(pred[i], emp[i]) < 0.05


def test_mid_path_training_runs_and_reduces_loss():
    g = np.random.default_rng(8)
    x1 = g.integers(0, 4, (500, 5))
    cond = np.where(g.random(x1.shape) < 0.8, x1, g.integers(0, 4, x1.shape))
    res = train_toy(x1, cond, TabularModel(4, 5, context="left"), MidModel(4, 5), TRI_MID, TrainConfig(steps=300), RngHandle(2))
    assert res.mid_losses[-20:].mean() < res.mid_losses[:5].mean()
    with pytest.raises(DomainError):
        train_toy(x1, cond, TabularModel(4, 5), None, TRI_MID, TrainConfig(steps=1), RngHandle(2))


def test_training_is_deterministic():
    x1 = np.random.default_rng(9).integers(0, 3, (100, 3))
    a = train_toy(x1, x1, TabularModel(3, 3), None, TWO, TrainConfig(steps=50), RngHandle(3))
    b = train_toy(x1, x1, TabularModel(3, 3), None, TWO, TrainConfig(steps=50), RngHandle(3))
    assert np.array_equal(a.model.logits, b.model.logits)


def test_checkpoint_round_trip(tmp_path):
    g = np.random.default_rng(10)
    for model in (TabularModel(3, 4, context="left"), MidModel(3, 4)):
        model.logits = g.normal(size=model.shape)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        back = load_checkpoint(path, d=3, L=4)
        assert type(back) is type(model)
        assert np.array_equal(back.logits, model.logits)
        with pytest.raises(CompatibilityError):
            load_checkpoint(path, d=4, L=4)
    (tmp_path / "bad.ckpt").write_bytes(b"hello\n")
    with pytest.raises(CompatibilityError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_table_shape_mismatch_is_rejected():
    with pytest.raises(CompatibilityError):
        TabularModel(3, 2, logits=np.zeros((1, 1)))
