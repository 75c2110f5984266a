"""Value types and numerical helpers used everywhere else.

Token sequences are plain integer numpy arrays of shape ``(L,)`` (or
``(B, L)`` for batches) and categorical distributions are float arrays whose
last axis has length ``d``.  Dense distributions over all ``d**L`` sequences
are wrapped in :class:`SeqDistribution`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, EnumerationCapError, InvalidDistributionError

PROB_FLOOR = 1e-12
SUM_TOL = 1e-9
ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class Vocabulary:
    size: int

    def __post_init__(self):
        if int(self.size) < 2:
            raise DomainError(f"vocabulary size must be >= 2, got {self.size}")

    @property
    def eot(self) -> int:
        """Reserved end-of-transcript id (the last token)."""
        return self.size - 1


def as_tokens(seq, d: int) -> np.ndarray:
    """Validate and return a token sequence (or batch) as an int64 array."""
    arr = np.asarray(seq, dtype=np.int64)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise DimensionError("token sequence must have length >= 1")
    if arr.size and (arr.min() < 0 or arr.max() >= d):
        raise DomainError(f"token ids must lie in [0, {d})")
    return arr


# --------------------------------------------------------------------------
# randomness


def _mix(*words: int) -> int:
    return int(np.random.SeedSequence([w & (2**64 - 1) for w in words]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RngHandle:
    """Counter-based randomness keyed by ``(seed, stream)``.

    ``generator(i)`` returns a Philox generator whose counter starts at call
    index ``i``, so the i-th consumer of a handle gets the same draws no
    matter in which order consumers run.
    """

    seed: int
    stream: int = 0

    def generator(self, call_index: int = 0) -> np.random.Generator:
        key = np.array([self.seed & (2**64 - 1), self.stream & (2**64 - 1)], dtype=np.uint64)
        counter = np.array([0, 0, call_index & (2**64 - 1), 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def split(self, child: int) -> "RngHandle":
        return RngHandle(self.seed, _mix(self.stream, child, 0x5EED))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngHandle(int(rng or 0)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


# --------------------------------------------------------------------------
# categorical distributions


def check_categorical(probs, tol: float = SUM_TOL) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidDistributionError("probabilities must be finite")
    if np.any(p < -1e-12):
        raise InvalidDistributionError("probabilities must be non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise InvalidDistributionError("probabilities must sum to 1")
    return p


def floor_probs(probs, floor: float = PROB_FLOOR) -> np.ndarray:
    """Clamp to ``floor`` and renormalise along the last axis."""
    p = np.maximum(np.asarray(probs, dtype=np.float64), floor)
    return p / p.sum(axis=-1, keepdims=True)


def safe_log(probs, floor: float = PROB_FLOOR) -> np.ndarray:
    return np.log(floor_probs(probs, floor))


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def temper(probs, temperature: float) -> np.ndarray:
    """Return ``p**(1/temperature)`` renormalised; zero mass stays zero."""
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    p = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidDistributionError("probabilities must be finite")
    if temperature == 1.0:
        return p / p.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(p, 0.0)) / temperature
    logp = logp - logp.max(axis=-1, keepdims=True)
    e = np.exp(logp)
    return e / e.sum(axis=-1, keepdims=True)


def sample_categorical(probs, temperature: float, rng) -> np.ndarray | int:
    """Draw ids from (a batch of) categoricals after tempering.

    ``probs`` has shape ``(..., d)``; the result has shape ``(...)``.
    """
    p = temper(probs, temperature)
    gen = as_generator(rng)
    cdf = np.cumsum(p, axis=-1)
    u = gen.random(size=p.shape[:-1] + (1,)) * cdf[..., -1:]
    ids = (cdf <= u).sum(axis=-1)
    ids = np.minimum(ids, p.shape[-1] - 1)
    if ids.ndim == 0:
        return int(ids)
    return ids.astype(np.int64)


# --------------------------------------------------------------------------
# dense distributions over V^L


def num_states(d: int, L: int, cap: int = ENUMERATION_CAP) -> int:
    n = d**L
    if n > cap:
        raise EnumerationCapError(f"d**L = {d}**{L} = {n} exceeds the enumeration cap {cap}")
    return n


def all_states(d: int, L: int, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All sequences of ``V^L`` in row-major order, shape ``(d**L, L)``."""
    n = num_states(d, L, cap)
    idx = np.arange(n)
    out = np.empty((n, L), dtype=np.int64)
    for i in range(L - 1, -1, -1):
        out[:, i] = idx % d
        idx = idx // d
    return out


def state_index(tokens, d: int) -> np.ndarray | int:
    """Row-major index of sequence(s) in ``V^L`` (position 0 most significant)."""
    tok = np.asarray(tokens, dtype=np.int64)
    L = tok.shape[-1]
    weights = d ** np.arange(L - 1, -1, -1, dtype=np.int64)
    idx = tok @ weights
    return int(idx) if np.ndim(idx) == 0 else idx


@dataclass(frozen=True)
class SeqDistribution:
    d: int
    L: int
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = num_states(self.d, self.L)
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (n,):
            raise DimensionError(f"expected {n} probabilities, got shape {p.shape}")
        check_categorical(p)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def states(self) -> np.ndarray:
        return all_states(self.d, self.L)

    def prob(self, tokens) -> float:
        return float(self.probs[state_index(tokens, self.d)])

    def position_marginals(self) -> np.ndarray:
        """Per-position marginals, shape ``(L, d)``."""
        grid = self.probs.reshape((self.d,) * self.L)
        out = np.empty((self.L, self.d))
        for i in range(self.L):
            axes = tuple(j for j in range(self.L) if j != i)
            out[i] = grid.sum(axis=axes)
        return out

    @classmethod
    def point_mass(cls, tokens, d: int) -> "SeqDistribution":
        tok = as_tokens(tokens, d)
        p = np.zeros(num_states(d, tok.shape[-1]))
        p[state_index(tok, d)] = 1.0
        return cls(d, tok.shape[-1], p)

    @classmethod
    def uniform(cls, d: int, L: int) -> "SeqDistribution":
        n = num_states(d, L)
        return cls(d, L, np.full(n, 1.0 / n))

    @classmethod
    def from_samples(cls, samples, d: int) -> "SeqDistribution":
        s = as_tokens(samples, d)
        counts = np.bincount(state_index(s, d), minlength=num_states(d, s.shape[-1]))
        return cls(d, s.shape[-1], counts / counts.sum())


def tv_distance(p, q) -> float:
    """Total variation ``0.5 * sum |p - q|`` between two distributions."""
    a = p.probs if isinstance(p, SeqDistribution) else np.asarray(p, dtype=np.float64)
    b = q.probs if isinstance(q, SeqDistribution) else np.asarray(q, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"state spaces differ: {a.shape} vs {b.shape}")
    return float(0.5 * np.abs(a - b).sum())
