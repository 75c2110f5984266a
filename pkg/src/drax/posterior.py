"""Posterior models over clean tokens, the middle distribution, losses and training.

Two kinds of posterior model share the ``predict(xt, t, condition)``
interface, returning per-position categoricals of shape ``(B, L, d)``:

* :class:`ExactPosterior` inverts the path by enumeration (ground truth on
  small state spaces).
* :class:`TabularModel` is a lookup table of logits indexed by time bucket,
  position, condition feature and current token context.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PROB_FLOOR,
    SeqDistribution,
    all_states,
    as_generator,
    num_states,
    softmax,
    state_index,
)
from .errors import CompatibilityError, DomainError, TrainingDivergedError
from .path import (
    PathSpec,
    conditional_probs,
    likelihood_matrix,
    sample_xt,
    sample_xt_relaxed,
)

CHECKPOINT_MAGIC = "DRAXCKPT"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# exact Bayes posterior


class ExactPosterior:
    """Bayes posterior ``p(x1^i | x_t)`` under an independent coupling.

    ``view="marginal"`` integrates the source out position by position;
    ``view="coupling"`` enumerates every ``(x0, x1)`` pair with a point-mass
    source drawn from ``source`` (uniform by default).  Both give the same
    answer; the second exists to check that.
    """

    def __init__(self, spec: PathSpec, target: SeqDistribution, mid=None, view: str = "marginal", source: SeqDistribution | None = None):
        if view not in ("marginal", "coupling"):
            raise DomainError(f"unknown view {view!r}")
        if view == "coupling" and spec.source != "delta":
            raise DomainError("the coupling view needs a delta source")
        self.spec = spec
        self.target = target
        self.d, self.L = target.d, target.L
        self.mid = None if mid is None else np.asarray(mid, dtype=np.float64)
        self.view = view
        self.source = source if source is not None else SeqDistribution.uniform(self.d, self.L)
        self._states = all_states(self.d, self.L)
        self._indicators = np.eye(self.d)[self._states].reshape(-1, self.L * self.d)
        self._cache: dict = {}

    def joint_posterior(self, t) -> np.ndarray:
        """``p(x1 | z)`` for all state pairs, shape ``t.shape + (N, N)`` indexed ``[z, x1]``."""
        if self.view == "coupling":
            w = np.stack([self._coupling_weights(float(tv)) for tv in np.ravel(t)]).reshape(np.shape(t) + (self._states.shape[0],) * 2)
        else:
            w = likelihood_matrix(self.spec, t, self.d, self.L, self.mid) * self.target.probs
        tot = w.sum(axis=-1, keepdims=True)
        fallback = np.broadcast_to(self.target.probs, w.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), fallback)

    def posterior_tables(self, ts) -> np.ndarray:
        """Per-position posteriors for every state at each time, shape ``ts.shape + (N, L, d)``."""
        ts = np.asarray(ts, dtype=np.float64)
        n = self._states.shape[0]
        joint = self.joint_posterior(ts)
        return (joint @ self._indicators).reshape(ts.shape + (n, self.L, self.d))

    def _coupling_weights(self, t):
        num_states(self.d, 2 * self.L)
        n = self._states.shape[0]
        w = np.zeros((n, n))
        for a in np.flatnonzero(self.source.probs):
            x0 = np.broadcast_to(self._states[a], self._states.shape)
            cond = conditional_probs(self.spec, t, x0, self._states, self.mid, self.d)  # [x1, i, z]
            kern = np.ones((n, n))  # [z, x1]
            for i in range(self.L):
                kern *= cond[:, i, :][:, self._states[:, i]].T
            w += self.source.probs[a] * kern
        return w * self.target.probs[None, :]

    def posterior_table(self, t: float) -> np.ndarray:
        """Per-position posteriors for every state, shape ``(N, L, d)``."""
        key = float(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        table = self.posterior_tables(key)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = table
        return table

    def predict(self, xt, t, condition=None) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.int64)
        idx = state_index(xt, self.d)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), np.shape(idx))
        if t_arr.ndim == 0:
            return self.posterior_table(float(t_arr))[idx]
        out = np.empty(xt.shape + (self.d,))
        for tv in np.unique(t_arr):
            sel = t_arr == tv
            out[sel] = self.posterior_table(float(tv))[idx[sel]]
        return out

    def mid_component(self) -> np.ndarray | None:
        """The middle component of the path, ``(L, d)``, or None for two-way paths."""
        if self.spec.middle == "uniform":
            return np.full((self.L, self.d), 1.0 / self.d)
        if self.spec.middle == "mid":
            return self.mid
        return None

    def mid_probs(self, condition=None, batch_shape=()) -> np.ndarray | None:
        if self.mid is None:
            return None
        return np.broadcast_to(self.mid, tuple(batch_shape) + self.mid.shape)


# --------------------------------------------------------------------------
# condition features


def condition_features(condition, d: int, n_features: int, mode: str = "local") -> np.ndarray:
    """Map condition tokens ``(..., L)`` to per-position feature ids.

    ``local`` uses the condition token at the same position (needs
    ``n_features == d``); ``window`` hashes the (left, centre, right) triple.
    """
    c = np.asarray(condition, dtype=np.int64)
    if mode == "local":
        if n_features != d:
            raise DomainError("local features need a feature table of size d")
        return c
    if mode == "window":
        pad = np.full(c.shape[:-1] + (1,), d, dtype=np.int64)
        left = np.concatenate([pad, c[..., :-1]], axis=-1)
        right = np.concatenate([c[..., 1:], pad], axis=-1)
        code = (left * (d + 1) + c) * (d + 1) + right
        return (code * 2654435761) % n_features
    raise DomainError(f"unknown feature mode {mode!r}")


# --------------------------------------------------------------------------
# tabular models


@dataclass
class TabularModel:
    """Tabular ``p_{1|t}`` with logits ``[bucket, position, feature, context, d]``.

    ``context="local"`` keys on the current token; ``"left"`` keys on the
    (left neighbour, current) token pair, with id ``d`` marking the start.
    Feature id ``n_features`` is the null condition used under dropout.
    """

    d: int
    L: int
    buckets: int = 8
    n_features: int | None = None
    context: str = "local"
    feature_mode: str = "local"
    logits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_features is None:
            self.n_features = self.d
        if self.context not in ("local", "left"):
            raise DomainError(f"unknown context {self.context!r}")
        if self.logits is None:
            self.logits = np.zeros(self.shape)
        if self.logits.shape != self.shape:
            raise CompatibilityError(f"logit table has shape {self.logits.shape}, expected {self.shape}")

    @property
    def n_context(self) -> int:
        return self.d if self.context == "local" else (self.d + 1) * self.d

    @property
    def shape(self) -> tuple:
        return (self.buckets, self.L, self.n_features + 1, self.n_context, self.d)

    @property
    def null_feature(self) -> int:
        return self.n_features

    def bucket(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return np.clip((t * self.buckets).astype(np.int64), 0, self.buckets - 1)

    def features(self, condition, batch_shape, dropped=None) -> np.ndarray:
        if condition is None:
            return np.full(tuple(batch_shape) + (self.L,), self.null_feature, dtype=np.int64)
        f = condition_features(np.broadcast_to(condition, tuple(batch_shape) + (self.L,)), self.d, self.n_features, self.feature_mode)
        if dropped is not None:
            f = np.where(np.asarray(dropped)[..., None], self.null_feature, f)
        return f

    def context_ids(self, xt) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.int64)
        if self.context == "local":
            return xt
        left = np.concatenate([np.full(xt.shape[:-1] + (1,), self.d, dtype=np.int64), xt[..., :-1]], axis=-1)
        return left * self.d + xt

    def index(self, xt, t, feats):
        xt = np.asarray(xt, dtype=np.int64)
        b = np.broadcast_to(self.bucket(t)[..., None], xt.shape)
        pos = np.broadcast_to(np.arange(self.L), xt.shape)
        return b, pos, feats, self.context_ids(xt)

    def logits_at(self, xt, t, feats) -> np.ndarray:
        return self.logits[self.index(xt, t, feats)]

    def predict(self, xt, t, condition=None, dropped=None) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.int64)
        feats = self.features(condition, xt.shape[:-1], dropped)
        return softmax(self.logits_at(xt, t, feats))

    def soft_logits(self, weights, t, feats) -> np.ndarray:
        """Multilinear extension of the lookup to relaxed one-hot inputs ``(B, L, d)``."""
        w = np.asarray(weights, dtype=np.float64)
        B = w.shape[0]
        b = np.broadcast_to(self.bucket(t)[:, None], (B, self.L))
        pos = np.broadcast_to(np.arange(self.L), (B, self.L))
        table = self.logits[b, pos, feats]  # (B, L, n_context, d)
        if self.context == "local":
            return np.einsum("blv,blvk->blk", w, table)
        bos = np.zeros((B, 1, self.d + 1))
        bos[..., self.d] = 1.0
        left = np.concatenate([bos, np.pad(w[:, :-1], ((0, 0), (0, 0), (0, 1)))], axis=1)
        table = table.reshape(B, self.L, self.d + 1, self.d, self.d)
        return np.einsum("blu,blv,bluvk->blk", left, w, table)


@dataclass
class MidModel:
    """Condition-informed per-position categoricals with logits ``[position, feature, d]``."""

    d: int
    L: int
    n_features: int | None = None
    feature_mode: str = "local"
    logits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_features is None:
            self.n_features = self.d
        if self.logits is None:
            self.logits = np.zeros(self.shape)
        if self.logits.shape != self.shape:
            raise CompatibilityError(f"mid table has shape {self.logits.shape}, expected {self.shape}")

    @property
    def shape(self) -> tuple:
        return (self.L, self.n_features, self.d)

    def features(self, condition) -> np.ndarray:
        return condition_features(condition, self.d, self.n_features, self.feature_mode)

    def logits_for(self, condition) -> np.ndarray:
        f = self.features(condition)
        pos = np.broadcast_to(np.arange(self.L), f.shape)
        return self.logits[pos, f]

    def predict(self, condition) -> np.ndarray:
        return softmax(self.logits_for(condition))

    def mid_probs(self, condition, batch_shape=()) -> np.ndarray:
        return self.predict(np.broadcast_to(condition, tuple(batch_shape) + (self.L,)))


class UniformMid:
    """Fixed uniform middle distribution (no parameters)."""

    def __init__(self, d: int, L: int):
        self.d, self.L = d, L

    def mid_probs(self, condition=None, batch_shape=()) -> np.ndarray:
        return np.full(tuple(batch_shape) + (self.L, self.d), 1.0 / self.d)


# --------------------------------------------------------------------------
# losses


@dataclass
class PathSample:
    """A batch of path draws; every array has a leading batch axis."""

    t: np.ndarray
    x1: np.ndarray
    xt: np.ndarray
    x0: np.ndarray | None = None
    condition: np.ndarray | None = None
    frozen_prefix_len: np.ndarray | None = None
    dropped: np.ndarray | None = None

    def __post_init__(self):
        self.x1 = np.atleast_2d(np.asarray(self.x1, dtype=np.int64))
        self.xt = np.atleast_2d(np.asarray(self.xt, dtype=np.int64))
        B, L = self.x1.shape
        self.t = np.broadcast_to(np.asarray(self.t, dtype=np.float64), (B,))
        if self.frozen_prefix_len is None:
            self.frozen_prefix_len = np.zeros(B, dtype=np.int64)
        self.frozen_prefix_len = np.broadcast_to(np.asarray(self.frozen_prefix_len, dtype=np.int64), (B,))
        if self.condition is not None:
            self.condition = np.broadcast_to(np.asarray(self.condition, dtype=np.int64), (B, L))

    @property
    def loss_mask(self) -> np.ndarray:
        """Positions that contribute to the loss (frozen prefixes do not)."""
        return np.arange(self.x1.shape[1])[None, :] >= self.frozen_prefix_len[:, None]


def _predict(model, batch: PathSample) -> np.ndarray:
    if isinstance(model, TabularModel):
        return model.predict(batch.xt, batch.t, batch.condition, batch.dropped)
    return model.predict(batch.xt, batch.t, batch.condition)


def cdfm_loss(model, batch: PathSample) -> float:
    """Mean over the batch of ``-sum_i log p_{1|t}(x1^i | x_t)`` over non-frozen positions."""
    if batch.x1.shape[0] == 0:
        raise DomainError("empty batch")
    probs = _predict(model, batch)
    p = np.take_along_axis(probs, batch.x1[..., None], -1)[..., 0]
    nll = -np.log(np.maximum(p, PROB_FLOOR)) * batch.loss_mask
    return float(nll.sum(axis=1).mean())


def mid_loss(mid, condition, x1) -> float:
    """Mean over the batch of ``-sum_i log p_mid(x1^i | condition)``."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.int64))
    if x1.shape[0] == 0:
        raise DomainError("empty batch")
    probs = mid.mid_probs(condition, x1.shape[:-1]) if not isinstance(mid, MidModel) else mid.predict(np.broadcast_to(condition, x1.shape))
    p = np.take_along_axis(probs, x1[..., None], -1)[..., 0]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).sum(axis=1).mean())


def combined_loss(model, mid, batch: PathSample) -> float:
    """Training objective: path cross-entropy plus the mid cross-entropy."""
    total = cdfm_loss(model, batch)
    if mid is not None and batch.condition is not None:
        total += mid_loss(mid, batch.condition, batch.x1)
    return total


def cdfm_signal(model: TabularModel, batch: PathSample):
    """Loss, table index of every (sample, position) and the error signal there.

    ``signal[b, i] = softmax - onehot(x1)``, masked and divided by the batch
    size, is the gradient of :func:`cdfm_loss` w.r.t. the looked-up logits.
    """
    B = batch.x1.shape[0]
    feats = model.features(batch.condition, (B,), batch.dropped)
    idx = model.index(batch.xt, batch.t, feats)
    probs = softmax(model.logits[idx])
    p = np.take_along_axis(probs, batch.x1[..., None], -1)[..., 0]
    mask = batch.loss_mask
    loss = float((-np.log(np.maximum(p, PROB_FLOOR)) * mask).sum(axis=1).mean())
    signal = (probs - np.eye(model.d)[batch.x1]) * mask[..., None] / B
    return loss, idx, signal


def cdfm_grad(model: TabularModel, batch: PathSample):
    """Loss, dense logit gradient of :func:`cdfm_loss` and the per-cell error signal."""
    loss, idx, signal = cdfm_signal(model, batch)
    grad = np.zeros_like(model.logits)
    np.add.at(grad, idx, signal)
    return loss, grad, signal


def mid_grad(mid: MidModel, condition, x1):
    """Loss and logit gradient of :func:`mid_loss`."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.int64))
    B = x1.shape[0]
    f = mid.features(np.broadcast_to(condition, x1.shape))
    pos = np.broadcast_to(np.arange(mid.L), f.shape)
    probs = softmax(mid.logits[pos, f])
    p = np.take_along_axis(probs, x1[..., None], -1)[..., 0]
    loss = float(-np.log(np.maximum(p, PROB_FLOOR)).sum(axis=1).mean())
    signal = (probs - np.eye(mid.d)[x1]) / B
    grad = np.zeros_like(mid.logits)
    np.add.at(grad, (pos, f), signal)
    return loss, grad, signal


def soft_cdfm_loss(model: TabularModel, batch: PathSample, weights) -> float:
    """:func:`cdfm_loss` with relaxed one-hot inputs in place of ``xt``."""
    B = batch.x1.shape[0]
    feats = model.features(batch.condition, (B,), batch.dropped)
    probs = softmax(model.soft_logits(weights, batch.t, feats))
    p = np.take_along_axis(probs, batch.x1[..., None], -1)[..., 0]
    return float((-np.log(np.maximum(p, PROB_FLOOR)) * batch.loss_mask).sum(axis=1).mean())


def input_weight_grad(model: TabularModel, batch: PathSample, signal) -> np.ndarray:
    """Gradient of :func:`soft_cdfm_loss` w.r.t. the input weights at one-hot ``xt``.

    This is the straight-through gradient: the forward pass uses the hard
    tokens, the backward pass differentiates the multilinear lookup.
    """
    B, L = batch.xt.shape
    d = model.d
    feats = model.features(batch.condition, (B,), batch.dropped)
    b = np.broadcast_to(model.bucket(batch.t)[:, None], (B, L))
    pos = np.broadcast_to(np.arange(L), (B, L))
    v = np.arange(d)
    if model.context == "local":
        rows = model.logits[b, pos, feats]  # (B, L, d, d)
        return np.einsum("blvk,blk->blv", rows, signal)
    xt = batch.xt
    table = model.logits.reshape(-1, d)
    n_ctx = model.logits.shape[3]
    base = ((b * L + pos) * model.logits.shape[2] + feats) * n_ctx  # (B, L)
    left = np.concatenate([np.full((B, 1), d, dtype=np.int64), xt[:, :-1]], axis=1)
    # as current token: context (left, v)
    rows = table.take((base + left * d)[..., None] + v, axis=0)
    g = np.einsum("blvk,blk->blv", rows, signal)
    # as left neighbour of i+1: context (v, x_{i+1})
    rows = table.take((base[:, 1:] + xt[:, 1:])[..., None] + v * d, axis=0)
    g[:, :-1] += np.einsum("blvk,blk->blv", rows, signal[:, 1:])
    return g


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: TabularModel
    mid: MidModel | None
    losses: np.ndarray
    cdfm_losses: np.ndarray
    mid_losses: np.ndarray

    def smoothed(self, window: int = 50) -> np.ndarray:
        w = max(1, min(window, len(self.losses)))
        return np.convolve(self.losses, np.ones(w) / w, mode="valid")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 64.0
    batch_size: int = 128
    gumbel_temperature: float = 0.5
    dropout: float = 0.1
    prompt_prob: float = 0.0
    mid_weight: float = 1.0


def train_toy(x1_data, cond_data, model: TabularModel, mid: MidModel | None, spec: PathSpec, cfg: TrainConfig, rng) -> TrainResult:
    """Plain SGD on the path cross-entropy plus the mid cross-entropy.

    ``x1_data`` and ``cond_data`` are ``(N, L)`` arrays of target and
    condition sequences.  ``x_t`` is drawn with a straight-through
    Gumbel-Softmax whenever the path uses the mid distribution, so the path
    loss also reaches the mid logits.  The condition is dropped for the
    posterior model with probability ``cfg.dropout``; with probability
    ``cfg.prompt_prob`` a random prefix is frozen at its target value.
    """
    gen = as_generator(rng)
    x1_data = np.asarray(x1_data, dtype=np.int64)
    cond_data = None if cond_data is None else np.asarray(cond_data, dtype=np.int64)
    n, L = x1_data.shape
    d = model.d
    if spec.uses_mid and mid is None:
        raise DomainError("this path needs a MidModel")
    losses, c_losses, m_losses = [], [], []
    last_finite = None
    for step in range(cfg.steps):
        ids = gen.integers(0, n, size=cfg.batch_size)
        x1 = x1_data[ids]
        cond = None if cond_data is None else cond_data[ids]
        B = cfg.batch_size
        t = gen.random(B)
        x0 = gen.integers(0, d, size=(B, L)) if spec.source == "delta" else None
        frozen = np.zeros(B, dtype=np.int64)
        if cfg.prompt_prob > 0 and L > 1:
            use = gen.random(B) < cfg.prompt_prob
            frozen = np.where(use, gen.integers(1, L, size=B), 0)
        dropped = gen.random(B) < cfg.dropout if cfg.dropout > 0 else None

        relaxed = None
        if spec.uses_mid:
            mid_logits = mid.logits_for(cond)
            relaxed = sample_xt_relaxed(spec, t, x0, x1, mid_logits, cfg.gumbel_temperature, gen, d, frozen)
            xt = relaxed.hard()
        else:
            xt = sample_xt(spec, t, x0, x1, None, gen, d, frozen)
        batch = PathSample(t=t, x1=x1, xt=xt, x0=x0, condition=cond, frozen_prefix_len=frozen, dropped=dropped)
        loss_c, idx, signal = cdfm_signal(model, batch)
        loss_m = 0.0
        if mid is not None and cond is not None:
            loss_m, grad_mid, _ = mid_grad(mid, cond, x1)
            grad_mid *= cfg.mid_weight
            if relaxed is not None:
                # straight-through: hard tokens forward, relaxed derivative backward
                gw = input_weight_grad(model, batch, signal)
                g_logits = relaxed.vjp(gw)
                f = mid.features(cond)
                pos = np.broadcast_to(np.arange(L), f.shape)
                np.add.at(grad_mid, (pos, f), g_logits)
            mid.logits -= cfg.lr * grad_mid
        np.add.at(model.logits, idx, -cfg.lr * signal)
        total = loss_c + cfg.mid_weight * loss_m
        if not np.isfinite(total) or not np.all(np.isfinite(model.logits[idx])):
            raise TrainingDivergedError(f"loss became non-finite at step {step}", last_finite)
        last_finite = total
        losses.append(total)
        c_losses.append(loss_c)
        m_losses.append(loss_m)
    return TrainResult(model, mid, np.asarray(losses), np.asarray(c_losses), np.asarray(m_losses))


# --------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is one JSON header line followed by the raw little-endian
# float64 logit table in C order.


def _write_table(fh, header: dict, table: np.ndarray):
    head = dict(header)
    head["magic"] = CHECKPOINT_MAGIC
    head["version"] = CHECKPOINT_VERSION
    head["shape"] = list(table.shape)
    head["dtype"] = "<f8"
    fh.write((json.dumps(head, sort_keys=True) + "\n").encode("ascii"))
    fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


def _read_table(fh):
    line = fh.readline()
    try:
        head = json.loads(line.decode("ascii"))
    except ValueError as exc:
        raise CompatibilityError("not a checkpoint file") from exc
    if head.get("magic") != CHECKPOINT_MAGIC:
        raise CompatibilityError("not a checkpoint file")
    if head.get("version") != CHECKPOINT_VERSION:
        raise CompatibilityError(f"unsupported checkpoint version {head.get('version')}")
    shape = tuple(head["shape"])
    data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise CompatibilityError("checkpoint is truncated")
    return head, data.reshape(shape).astype(np.float64)


def _header(model) -> dict:
    header = {"kind": type(model).__name__, "d": model.d, "L": model.L, "features": model.n_features, "feature_mode": model.feature_mode}
    if isinstance(model, TabularModel):
        header.update(buckets=model.buckets, context=model.context)
    return header


def save_checkpoint(path, model) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path, d: int | None = None, L: int | None = None):
    with open(path, "rb") as fh:
        head, table = _read_table(fh)
    if (d is not None and head["d"] != d) or (L is not None and head["L"] != L):
        raise CompatibilityError(f"checkpoint has d={head['d']}, L={head['L']}; config wants d={d}, L={L}")
    kind = head["kind"]
    if kind == "TabularModel":
        return TabularModel(head["d"], head["L"], head["buckets"], head["features"], head["context"], head["feature_mode"], table)
    if kind == "MidModel":
        return MidModel(head["d"], head["L"], head["features"], head["feature_mode"], table)
    if kind == "ARTabularModel":
        from .sampling import ARTabularModel

        return ARTabularModel(head["d"], head["L"], head["features"], head["feature_mode"], table)
    raise CompatibilityError(f"unknown checkpoint kind {kind!r}")


def checkpoint_bytes(model) -> bytes:
    """Serialized checkpoint: one JSON header line followed by raw little-endian float64."""
    buf = io.BytesIO()
    _write_table(buf, _header(model), model.logits)
    return buf.getvalue()
