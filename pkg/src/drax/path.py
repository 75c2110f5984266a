"""Mixture probability paths over V^L and sampling of x_t.

Each position is an independent mixture of its components::

    p_t(x^i | x0, x1, a) = k_0(t) src^i(x^i) + k_mid(t) mid^i(x^i | a) + k_1(t) delta_{x1^i}(x^i)

The source is either a point mass at ``x0`` ("delta"), the uniform
distribution ("uniform"; the same marginal as a delta at a uniform ``x0``),
or the condition-informed distribution ("mid").  The optional middle
component is either uniform or the condition-informed distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    PROB_FLOOR,
    SeqDistribution,
    all_states,
    as_generator,
    num_states,
    softmax,
)
from .errors import DimensionError, DomainError, EnumerationCapError
from .scheduler import Schedule, kappa

SOURCES = ("uniform", "delta", "mid")
MIDDLES = (None, "uniform", "mid")
_U_CLAMP = 1e-12


@dataclass(frozen=True)
class PathSpec:
    schedule: Schedule
    source: str = "uniform"
    middle: str | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DomainError(f"unknown source {self.source!r}")
        if self.middle not in MIDDLES:
            raise DomainError(f"unknown middle {self.middle!r}")
        if self.schedule.has_mid != (self.middle is not None):
            raise DimensionError("schedule component count must match the path components")

    @property
    def uses_mid(self) -> bool:
        """True when the condition-informed distribution enters the path."""
        return self.source == "mid" or self.middle == "mid"

    def mid_weight(self, k: np.ndarray) -> np.ndarray:
        """Total schedule weight carried by the condition-informed component."""
        w = np.zeros(k.shape[:-1])
        if self.source == "mid":
            w = w + k[..., 0]
        if self.middle == "mid":
            w = w + k[..., 1]
        return w

    def to_dict(self) -> dict:
        return {"source": self.source, "middle": self.middle, **{f"sched_{k}": v for k, v in self.schedule.to_dict().items()}}


def _onehot(ids, d):
    return np.eye(d)[np.asarray(ids, dtype=np.int64)]


def _check_mid(spec, mid, shape):
    if not spec.uses_mid:
        return None
    if mid is None:
        raise DomainError("this path needs the condition-informed distribution (mid)")
    m = np.asarray(mid, dtype=np.float64)
    if m.shape[-2:] != shape[-2:]:
        raise DimensionError(f"mid has shape {m.shape}, expected (..., {shape[-2]}, {shape[-1]})")
    return m


def conditional_probs(spec: PathSpec, t, x0, x1, mid=None, d: int | None = None) -> np.ndarray:
    """Per-position conditional path probabilities, shape ``(..., L, d)``.

    ``t`` may be a scalar or have the batch shape of ``x1[..., 0]``.
    """
    x1 = np.asarray(x1, dtype=np.int64)
    if d is None:
        if mid is not None:
            d = np.asarray(mid).shape[-1]
        else:
            raise DimensionError("vocabulary size d is required")
    shape = x1.shape + (d,)
    m = _check_mid(spec, mid, shape)
    k = kappa(spec.schedule, t)
    if k.ndim > 1:
        k = k[..., None, None, :]
    kw = [k[..., j] for j in range(k.shape[-1])]
    if spec.source == "delta":
        if x0 is None:
            raise DomainError("delta source needs x0")
        src = _onehot(x0, d)
    elif spec.source == "uniform":
        src = np.full(shape, 1.0 / d)
    else:
        src = m
    out = kw[0] * src + kw[-1] * _onehot(x1, d)
    if spec.middle == "uniform":
        out = out + kw[1] * (1.0 / d)
    elif spec.middle == "mid":
        out = out + kw[1] * m
    return out


def conditional_prob(spec: PathSpec, t, x0, x1, mid, position: int, d: int | None = None) -> np.ndarray:
    """Conditional path distribution at a single position."""
    return conditional_probs(spec, t, x0, x1, mid, d)[..., position, :]


def _frozen_mask(frozen_prefix_len, shape):
    L = shape[-1]
    fl = np.asarray(frozen_prefix_len, dtype=np.int64)
    return np.arange(L) < fl[..., None] if fl.ndim else np.broadcast_to(np.arange(L) < fl, shape)


def sample_xt(spec: PathSpec, t, x0, x1, mid, rng, d: int | None = None, frozen_prefix_len=0) -> np.ndarray:
    """Draw ``x_t`` position-wise; frozen prefix positions are copied from ``x1``."""
    x1 = np.asarray(x1, dtype=np.int64)
    probs = conditional_probs(spec, t, x0, x1, mid, d)
    gen = as_generator(rng)
    cdf = np.cumsum(probs, axis=-1)
    u = gen.random(size=x1.shape + (1,)) * cdf[..., -1:]
    xt = np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)
    frozen = _frozen_mask(frozen_prefix_len, x1.shape)
    return np.where(frozen, x1, xt).astype(np.int64)


def gumbel_noise(shape, rng) -> np.ndarray:
    u = np.clip(as_generator(rng).random(size=shape), _U_CLAMP, 1.0 - _U_CLAMP)
    return -np.log(-np.log(u))


@dataclass
class RelaxedSample:
    """Gumbel-Softmax relaxed ``x_t`` with its derivative w.r.t. the mid logits."""

    weights: np.ndarray  # (..., L, d) relaxed one-hot vectors
    probs: np.ndarray  # mixture probabilities the noise was applied to
    mid_probs: np.ndarray | None
    mid_weight: np.ndarray  # (...,) schedule weight on the mid component
    temperature: float
    frozen: np.ndarray

    def hard(self) -> np.ndarray:
        return self.weights.argmax(axis=-1)

    def jvp(self, direction) -> np.ndarray:
        """Directional derivative of ``weights`` along ``direction`` in mid-logit space."""
        if self.mid_probs is None:
            return np.zeros_like(self.weights)
        s, w = self.mid_probs, self.weights
        v = np.broadcast_to(direction, self.weights.shape)
        ds = s * (v - (v * s).sum(-1, keepdims=True))
        dpi = self.mid_weight[..., None, None] * ds
        dy = dpi / (self.temperature * self.probs)
        dw = w * (dy - (dy * w).sum(-1, keepdims=True))
        return np.where(self.frozen[..., None], 0.0, dw)

    def vjp(self, grad_weights) -> np.ndarray:
        """Pull a gradient on ``weights`` back to the mid logits."""
        if self.mid_probs is None:
            return np.zeros_like(self.weights)
        s, w = self.mid_probs, self.weights
        g = np.where(self.frozen[..., None], 0.0, grad_weights)
        gy = w * (g - (g * w).sum(-1, keepdims=True))
        gpi = gy / (self.temperature * self.probs)
        gs = self.mid_weight[..., None, None] * gpi
        return s * (gs - (gs * s).sum(-1, keepdims=True))


def sample_xt_relaxed(
    spec: PathSpec,
    t,
    x0,
    x1,
    mid_logits,
    gumbel_temperature: float,
    rng=None,
    d: int | None = None,
    frozen_prefix_len=0,
    noise=None,
) -> RelaxedSample:
    """Gumbel-Softmax sample of ``x_t`` differentiable in ``mid_logits``.

    Pass ``noise`` to reuse a fixed Gumbel draw (finite-difference checks).
    """
    if not gumbel_temperature > 0:
        raise DomainError("gumbel temperature must be positive")
    x1 = np.asarray(x1, dtype=np.int64)
    mid = softmax(mid_logits) if mid_logits is not None else None
    if d is None and mid is not None:
        d = mid.shape[-1]
    probs = conditional_probs(spec, t, x0, x1, mid, d)
    probs = np.maximum(probs, PROB_FLOOR)
    g = gumbel_noise(probs.shape, rng) if noise is None else np.asarray(noise)
    w = softmax((np.log(probs) + g) / gumbel_temperature)
    frozen = np.asarray(_frozen_mask(frozen_prefix_len, x1.shape))
    w = np.where(frozen[..., None], _onehot(x1, probs.shape[-1]), w)
    k = kappa(spec.schedule, t)
    mw = spec.mid_weight(k)
    mw = np.broadcast_to(mw, x1.shape[:-1]) if np.ndim(mw) else np.full(x1.shape[:-1], float(mw))
    mid_b = np.broadcast_to(mid, probs.shape) if mid is not None and spec.uses_mid else None
    return RelaxedSample(w, probs, mid_b, mw, float(gumbel_temperature), frozen)


# --------------------------------------------------------------------------
# exact marginals on enumerable state spaces


def position_likelihood(spec: PathSpec, t, d: int, L: int, mid=None) -> np.ndarray:
    """``P_t(z^i | x1^i)`` for the source-marginalised path, shape ``t.shape + (L, d_z, d_x1)``.

    For a delta source this is the marginal over a uniform ``x0``.
    """
    k = kappa(spec.schedule, t)
    k = k[..., None, None, None, :]
    m = _check_mid(spec, mid, (L, d))
    if spec.source == "mid":
        src = m
    else:
        src = np.full((L, d), 1.0 / d)
    table = k[..., 0] * src[:, :, None] + k[..., -1] * np.eye(d)
    if spec.middle == "uniform":
        table = table + k[..., 1] / d
    elif spec.middle == "mid":
        table = table + k[..., 1] * m[:, :, None]
    return np.broadcast_to(table, np.shape(t) + (L, d, d)).copy()


def likelihood_matrix(spec: PathSpec, t, d: int, L: int, mid=None) -> np.ndarray:
    """``p_t(z | x1)`` for every pair of sequences, shape ``t.shape + (N, N)`` indexed ``[z, x1]``."""
    num_states(d, L)
    table = position_likelihood(spec, t, d, L, mid)
    # Kronecker product over positions; position 0 is the most significant digit
    lik = table[..., 0, :, :]
    for i in range(1, L):
        n = lik.shape[-1]
        lik = (lik[..., :, None, :, None] * table[..., i, None, :, None, :]).reshape(np.shape(t) + (n * d, n * d))
    return lik


def marginal_path(spec: PathSpec, t: float, target: SeqDistribution, mid=None, source: SeqDistribution | None = None) -> SeqDistribution:
    """Exact ``p_t`` by summing over the independent coupling.

    A delta source with ``source`` given enumerates all ``(x0, x1)`` pairs;
    otherwise the source is marginalised position by position.
    """
    d, L = target.d, target.L
    if spec.source == "delta" and source is not None:
        return _marginal_by_coupling(spec, t, target, source, mid)
    lik = likelihood_matrix(spec, t, d, L, mid)
    probs = lik @ target.probs
    return SeqDistribution(d, L, probs / probs.sum())


def _marginal_by_coupling(spec, t, target, source, mid):
    d, L = target.d, target.L
    n = num_states(d, L)
    try:
        num_states(d, 2 * L)
    except EnumerationCapError:
        raise EnumerationCapError("coupling enumeration exceeds the cap") from None
    states = all_states(d, L)
    out = np.zeros(n)
    for a in np.flatnonzero(source.probs):
        x0 = np.broadcast_to(states[a], states.shape)
        cond = conditional_probs(spec, t, x0, states, mid, d)  # (N_x1, L, d)
        # kernel[x1, z] = prod_i cond[x1, i, z_i]
        kern = np.ones((n, n))
        for i in range(L):
            kern *= cond[:, i, :][:, states[:, i]]
        out += source.probs[a] * (target.probs @ kern)
    return SeqDistribution(d, L, out / out.sum())
