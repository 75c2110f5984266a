import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drax.core import RngHandle, SeqDistribution, all_states, softmax, tv_distance
from drax.errors import DimensionError, DomainError
from drax.path import PathSpec, conditional_prob, conditional_probs, marginal_path, sample_xt, sample_xt_relaxed
from drax.scheduler import Schedule

from conftest import random_target

TWO = PathSpec(Schedule.two_way())
TRI_MID = PathSpec(Schedule.tri(), "uniform", "mid")


def test_boundaries():
    x0, x1 = np.array([0, 1]), np.array([2, 0])
    delta = PathSpec(Schedule.two_way(), "delta")
    assert np.array_equal(conditional_probs(delta, 0.0, x0, x1, d=3), np.eye(3)[x0])
    assert np.array_equal(conditional_probs(delta, 1.0, x0, x1, d=3), np.eye(3)[x1])
    g = RngHandle(0).generator()
    assert np.array_equal(sample_xt(delta, 1.0, x0, x1, None, g, d=3), x1)
    assert np.array_equal(sample_xt(delta, 0.0, x0, x1, None, g, d=3), x0)


def test_two_way_uniform_source_example():
    p = conditional_prob(TWO, 0.5, None, np.array([2]), None, 0, d=4)
    assert np.allclose(p, [0.125, 0.125, 0.625, 0.125], atol=1e-15)


def test_mid_is_required_and_shape_checked():
    with pytest.raises(DomainError):
        conditional_probs(TRI_MID, 0.5, None, np.array([0, 1]), None, d=3)
    with pytest.raises(DimensionError):
        conditional_probs(TRI_MID, 0.5, None, np.array([0, 1]), np.full((3, 3), 1 / 3))
    with pytest.raises(DimensionError):
        PathSpec(Schedule.two_way(), "uniform", "mid")


@settings(max_examples=60)
@given(st.integers(2, 5), st.integers(1, 4), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_conditional_probs_are_convex_combinations(d, L, t, seed):
    g = np.random.default_rng(seed)
    mid = g.dirichlet(np.ones(d), size=L)
    x1 = g.integers(0, d, L)
    p = conditional_probs(TRI_MID, t, None, x1, mid)
    assert np.abs(p.sum(-1) - 1).max() <= 1e-9
    assert p.min() >= 0


def test_sample_xt_matches_closed_form_marginals():
    d, L, n = 3, 2, 10**5
    x1 = np.broadcast_to([2, 0], (n, L))
    xt = sample_xt(TWO, 0.5, None, x1, None, RngHandle(1), d=d)
    ref = conditional_probs(TWO, 0.5, None, np.array([2, 0]), d=d)
    for i in range(L):
        emp = np.bincount(xt[:, i], minlength=d) / n
        assert tv_distance(emp, ref[i]) < 0.01


def test_frozen_prefix_copies_the_target():
    x1 = np.tile([1, 2, 0, 1], (50, 1))
    xt = sample_xt(TWO, 0.1, None, x1, None, RngHandle(2), d=3, frozen_prefix_len=2)
    assert np.array_equal(xt[:, :2], x1[:, :2])


def test_marginal_boundaries_and_validity():
    q = random_target(3, 2, 0)
    assert np.allclose(marginal_path(TWO, 1.0, q).probs, q.probs)
    assert np.allclose(marginal_path(TWO, 0.0, q).probs, 1 / 9)
    mid = np.random.default_rng(0).dirichlet(np.ones(3), size=2)
    for t in (0.1, 0.5, 0.9):
        assert isinstance(marginal_path(TRI_MID, t, q, mid), SeqDistribution)


def test_point_mass_coupling_is_a_product_of_mixtures():
    d, L, t = 2, 2, 0.3
    spec = PathSpec(Schedule.two_way(), "delta")
    x0, x1 = np.array([0, 1]), np.array([1, 1])
    got = marginal_path(spec, t, SeqDistribution.point_mass(x1, d), source=SeqDistribution.point_mass(x0, d))
    # position 0: 0.7 on 0, 0.3 on 1; position 1: certain 1
    assert np.allclose(got.probs, [0.0, 0.7, 0.0, 0.3])


def test_delta_coupling_matches_marginalised_uniform_source():
    q = random_target(2, 3, 4)
    spec = PathSpec(Schedule.two_way(), "delta")
    a = marginal_path(spec, 0.4, q, source=SeqDistribution.uniform(2, 3))
    b = marginal_path(spec, 0.4, q)
    assert tv_distance(a, b) < 1e-12


def test_empirical_path_matches_marginal():
    d, L, n = 3, 2, 10**5
    q = random_target(d, L, 5)
    mid = np.random.default_rng(5).dirichlet(np.ones(d), size=L)
    g = RngHandle(5).generator()
    x1 = all_states(d, L)[g.choice(d**L, size=n, p=q.probs)]
    for spec, m in ((TWO, None), (TRI_MID, mid)):
        xt = sample_xt(spec, 0.6, None, x1, m, g, d=d)
        emp = SeqDistribution.from_samples(xt, d)
        assert tv_distance(emp, marginal_path(spec, 0.6, q, m)) < 3 * np.sqrt(d**L / n)


def test_relaxed_argmax_matches_hard_sampling():
    d, n = 3, 10**5
    mid_logits = np.log(np.array([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]]))
    x1 = np.broadcast_to([2, 0], (n, 2))
    rel = sample_xt_relaxed(TRI_MID, 0.5, None, x1, mid_logits, 0.1, RngHandle(8))
    ref = conditional_probs(TRI_MID, 0.5, None, np.array([2, 0]), softmax(mid_logits))
    for i in range(2):
        emp = np.bincount(rel.hard()[:, i], minlength=d) / n
        assert tv_distance(emp, ref[i]) < 0.02


def test_relaxed_sample_is_insensitive_to_mid_at_time_zero():
    g = np.random.default_rng(0)
    rel = sample_xt_relaxed(TRI_MID, 0.0, None, np.array([1, 2]), g.normal(size=(2, 3)), 0.5, RngHandle(0))
    assert np.all(rel.jvp(g.normal(size=(2, 3))) == 0)


def _fd_check(spec, t, seed, n_dirs=20):
    g = np.random.default_rng(seed)
    d, L = 3, 4
    logits = g.normal(size=(L, d))
    x1 = g.integers(0, d, L)
    noise = -np.log(-np.log(g.random((L, d))))
    base = sample_xt_relaxed(spec, t, None, x1, logits, 0.7, noise=noise)
    worst = 0.0
    for _ in range(n_dirs):
        v = g.normal(size=(L, d))
        h = 1e-5
        plus = sample_xt_relaxed(spec, t, None, x1, logits + h * v, 0.7, noise=noise).weights
        minus = sample_xt_relaxed(spec, t, None, x1, logits - h * v, 0.7, noise=noise).weights
        fd = (plus - minus) / (2 * h)
        an = base.jvp(v)
        worst = max(worst, np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-12))
        # the backward pass is the transpose of the forward one
        w = g.normal(size=(L, d))
        assert np.sum(w * an) == pytest.approx(np.sum(base.vjp(w) * v), rel=1e-9, abs=1e-12)
    return worst


@pytest.mark.parametrize("spec", [TRI_MID, PathSpec(Schedule.two_way(), "mid")])
def test_relaxed_sensitivity_matches_finite_differences(spec):
    assert _fd_check(spec, 0.45, 3) < 1e-3
