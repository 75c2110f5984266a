"""Synthetic noise-channel task: Markov references, corrupted conditions, error rates.

A reference ``x1`` is drawn from an order-1 Markov chain.  The condition is
``x1`` passed through a length-preserving channel: every input token is
deleted, kept, or kept and duplicated; kept tokens are substituted with
probability ``substitution`` by a uniformly chosen *different* token.  The
emitted stream is truncated to ``L`` and padded with the end token.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from rapidfuzz.distance import Levenshtein

from .core import SeqDistribution, all_states, as_generator
from .errors import DomainError, UndefinedMetricError

SECONDS_PER_TOKEN = 0.25


@dataclass
class Task:
    d: int
    L: int
    init: np.ndarray
    trans: np.ndarray
    substitution: float = 0.0
    deletion: float = 0.0
    insertion: float = 0.0
    reserve_eot: bool = True

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        # substitution never changes the length, so it may go up to a forced flip
        for name, hi in (("substitution", 1.0), ("deletion", 0.5), ("insertion", 0.5)):
            v = getattr(self, name)
            if not 0.0 <= v <= hi:
                raise DomainError(f"{name} rate must lie in [0, {hi}], got {v}")
        a = self.alphabet
        if self.init.shape != (a,) or self.trans.shape != (a, a):
            raise DomainError(f"Markov tables must cover the {a} usable tokens")
        if self.substitution > 0 and a < 2:
            raise DomainError("substitution needs at least two usable tokens")

    @property
    def eot(self) -> int:
        return self.d - 1

    @property
    def alphabet(self) -> int:
        """Number of tokens the references use (the end token is excluded when reserved)."""
        return self.d - 1 if self.reserve_eot else self.d

    @property
    def duration(self) -> float:
        return self.L * SECONDS_PER_TOKEN

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "substitution": self.substitution,
            "deletion": self.deletion,
            "insertion": self.insertion,
            "reserve_eot": self.reserve_eot,
            "init": self.init.tolist(),
            "trans": self.trans.tolist(),
        }


def markov_task(d: int, L: int, substitution=0.0, deletion=0.0, insertion=0.0, concentration: float = 0.3, rng=0, reserve_eot: bool = True) -> Task:
    """Random Markov tables with Dirichlet(concentration) rows."""
    gen = as_generator(rng)
    a = d - 1 if reserve_eot else d
    init = gen.dirichlet(np.full(a, concentration))
    trans = gen.dirichlet(np.full(a, concentration), size=a)
    return Task(d, L, init, trans, substitution, deletion, insertion, reserve_eot)


def sample_targets(task: Task, n: int, rng) -> np.ndarray:
    """``n`` reference sequences from the Markov chain, shape ``(n, L)``."""
    gen = as_generator(rng)
    out = np.empty((n, task.L), dtype=np.int64)
    cdf0 = np.cumsum(task.init)
    cdf = np.cumsum(task.trans, axis=1)
    out[:, 0] = np.minimum(np.searchsorted(cdf0, gen.random(n) * cdf0[-1], side="right"), task.alphabet - 1)
    for i in range(1, task.L):
        rows = cdf[out[:, i - 1]]
        u = gen.random((n, 1)) * rows[:, -1:]
        out[:, i] = np.minimum((rows <= u).sum(axis=1), task.alphabet - 1)
    return out


def channel(task: Task, x1, rng) -> np.ndarray:
    """Corrupt references ``(n, L)`` into conditions of the same shape."""
    gen = as_generator(rng)
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.int64))
    n, L = x1.shape
    out = np.full((n, 2 * L), task.eot, dtype=np.int64)
    k = np.zeros(n, dtype=np.int64)
    a = task.alphabet
    for j in range(L):
        u = gen.random(n)
        dele = u < task.deletion
        ins = (u >= task.deletion) & (u < task.deletion + task.insertion)
        x = x1[:, j]
        sub = gen.random(n) < task.substitution
        other = gen.integers(0, max(a - 1, 1), size=n)
        other = other + (other >= x)
        y = np.where(sub, other, x)
        keep = np.flatnonzero(~dele)
        out[keep, k[keep]] = y[keep]
        k[keep] += 1
        dup = np.flatnonzero(ins)
        out[dup, k[dup]] = y[dup]
        k[dup] += 1
    return out[:, :L]


@dataclass
class ConditionRef:
    tokens: np.ndarray
    ref_id: int
    duration: float


def sample_pair(task: Task, rng, ref_id: int = 0) -> tuple[np.ndarray, ConditionRef]:
    gen = as_generator(rng)
    x1 = sample_targets(task, 1, gen)
    cond = channel(task, x1, gen)
    return x1[0], ConditionRef(cond[0], ref_id, task.duration)


@dataclass
class Dataset:
    refs: np.ndarray
    conds: np.ndarray
    durations: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.durations is None:
            self.durations = np.full(self.refs.shape[0], self.refs.shape[1] * SECONDS_PER_TOKEN)

    def __len__(self) -> int:
        return self.refs.shape[0]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.refs[:n], self.conds[:n], self.durations[:n])


def sample_dataset(task: Task, n: int, rng) -> Dataset:
    gen = as_generator(rng)
    refs = sample_targets(task, n, gen)
    return Dataset(refs, channel(task, refs, gen))


def write_dataset(path, data: Dataset) -> None:
    with open(path, "w") as fh:
        for i in range(len(data)):
            rec = {"id": i, "ref": data.refs[i].tolist(), "cond": data.conds[i].tolist(), "duration": float(data.durations[i])}
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> Dataset:
    refs, conds, durs = [], [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                refs.append(rec["ref"])
                conds.append(rec["cond"])
                durs.append(rec["duration"])
    return Dataset(np.asarray(refs, dtype=np.int64), np.asarray(conds, dtype=np.int64), np.asarray(durs))


# --------------------------------------------------------------------------
# exact quantities on enumerable tasks


def target_distribution(task: Task) -> SeqDistribution:
    """Markov law of references as a dense distribution over ``V^L``."""
    states = all_states(task.d, task.L)
    valid = np.all(states < task.alphabet, axis=1)
    s = np.where(valid[:, None], states, 0)
    p = task.init[s[:, 0]]
    for i in range(1, task.L):
        p = p * task.trans[s[:, i - 1], s[:, i]]
    return SeqDistribution(task.d, task.L, np.where(valid, p, 0.0))


def _sub_prob(task: Task, y, x):
    """Probability that input token ``x`` is emitted as ``y``."""
    a = task.alphabet
    same = y == x
    ok = y < a
    off = task.substitution / (a - 1) if a > 1 else 0.0
    return np.where(same, 1.0 - task.substitution, np.where(ok, off, 0.0))


def channel_likelihood(task: Task, cond, refs) -> np.ndarray:
    """``P(cond | ref)`` for every row of ``refs`` by dynamic programming over emitted length."""
    c = np.asarray(cond, dtype=np.int64)
    X = np.atleast_2d(np.asarray(refs, dtype=np.int64))
    L = task.L
    keep = 1.0 - task.deletion - task.insertion
    f = np.zeros((L + 1, X.shape[0]))
    f[0] = 1.0
    for j in range(L):
        x = X[:, j]
        new = task.deletion * f
        for k in range(L):
            if not f[k].any():
                continue
            ps = _sub_prob(task, c[k], x)
            new[k + 1] += f[k] * keep * ps
            if k + 1 < L:
                new[k + 2] += f[k] * task.insertion * ps * (c[k + 1] == c[k])
            else:
                new[L] += f[k] * task.insertion * ps
        new[L] += f[L] * (keep + task.insertion)
        f = new
    tail_ok = np.array([np.all(c[k:] == task.eot) for k in range(L + 1)])
    return tail_ok @ f


def posterior_target(task: Task, cond) -> SeqDistribution:
    """``q(x1 | cond)`` as a dense distribution."""
    prior = target_distribution(task)
    lik = channel_likelihood(task, cond, prior.states())
    w = prior.probs * lik
    if w.sum() <= 0:
        raise DomainError("condition has zero probability under the task")
    return SeqDistribution(task.d, task.L, w / w.sum())


class ConditionalOracle:
    """Exact posterior for a conditional task, one Bayes table per distinct condition."""

    def __init__(self, spec, task: Task, mid_model=None):
        from .posterior import ExactPosterior

        self._exact = ExactPosterior
        self.spec = spec
        self.task = task
        self.mid_model = mid_model
        self.d, self.L = task.d, task.L
        self._oracles: dict = {}

    def oracle(self, cond):
        key = tuple(int(v) for v in cond)
        o = self._oracles.get(key)
        if o is None:
            mid = None
            if self.spec.uses_mid:
                mid = self.mid_model.predict(np.asarray(key)[None])[0]
            o = self._exact(self.spec, posterior_target(self.task, key), mid)
            self._oracles[key] = o
        return o

    def predict(self, xt, t, condition) -> np.ndarray:
        xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        cond = np.broadcast_to(np.asarray(condition, dtype=np.int64), xt.shape)
        out = np.empty(xt.shape + (self.d,))
        uniq, groups = np.unique(cond, axis=0, return_inverse=True)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), xt.shape[:1])
        for g in range(uniq.shape[0]):
            rows = np.flatnonzero(groups.ravel() == g)
            out[rows] = self.oracle(uniq[g]).predict(xt[rows], t_arr[rows])
        return out


# --------------------------------------------------------------------------
# metrics


def truncate_eot(seq, eot: int) -> list:
    """Tokens before the first end token."""
    out = []
    for v in seq:
        if int(v) == eot:
            break
        out.append(int(v))
    return out


def _words(x):
    return x.split() if isinstance(x, str) else [int(v) for v in x]


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit costs."""
    return int(Levenshtein.distance(list(a), list(b)))


def wer(hyp, ref) -> float:
    """Word error rate; strings are split on whitespace, token sequences use one word per id."""
    h, r = _words(hyp), _words(ref)
    if not r:
        raise UndefinedMetricError("error rate against an empty reference is undefined")
    return edit_distance(h, r) / len(r)


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def spell(token: int) -> str:
    """Fixed spelling of a token id for character-level metrics."""
    return _LETTERS[token % 26] * (1 + token // 26)


def _chars(x):
    if isinstance(x, str):
        return list(x)
    return list(" ".join(spell(int(v)) for v in x))


def cer(hyp, ref) -> float:
    """Character error rate; token sequences are spelled and joined by spaces."""
    h, r = _chars(hyp), _chars(ref)
    if not r:
        raise UndefinedMetricError("error rate against an empty reference is undefined")
    return edit_distance(h, r) / len(r)


def sequence_error(hyp, ref, eot: int, metric: str = "wer") -> float:
    """Error of a generated sequence against a reference, both cut at the first end token."""
    h, r = truncate_eot(hyp, eot), truncate_eot(ref, eot)
    return (wer if metric == "wer" else cer)(h, r)


def rtfx(audio_seconds: float, compute_seconds: float) -> float:
    """Audio seconds processed per compute second."""
    if not compute_seconds > 0:
        raise DomainError("compute time must be positive")
    return audio_seconds / compute_seconds
