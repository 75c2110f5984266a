"""Multi-step generation, candidate sets, candidate scoring and speculative decoding.

Generation starts from a uniform ``x_0`` and runs on the grid ``t = k / K``:
``K - 1`` Euler jumps driven by the marginal velocity, then a direct draw
from the (tempered) posterior at ``t = (K - 1) / K``.  That is ``K``
posterior evaluations in total, one per step.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field, replace

import numpy as np

from .core import RngHandle, as_generator, softmax, temper
from .errors import DomainError, ScorerError, SingularityError, UnsupportedScheduleError
from .scheduler import Schedule, velocity_coeffs
from .synthtask import edit_distance, truncate_eot
from .velocity import marginal_velocity, transition_probs


@dataclass(frozen=True)
class SamplerConfig:
    nfe: int = 8
    temperature: float = 0.01
    include_mid: bool = False
    gen_length: int | None = None
    frozen_prefix: tuple | None = None
    schedule: Schedule = field(default_factory=Schedule.two_way)
    source: str = "uniform"

    def __post_init__(self):
        if self.source not in ("uniform", "mid"):
            raise DomainError(f"unknown source {self.source!r}")
        if int(self.nfe) < 1:
            raise DomainError("nfe must be a positive integer")
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")
        if self.include_mid and not self.schedule.has_mid:
            raise UnsupportedScheduleError("include_mid needs a three-component schedule")

    @property
    def h(self) -> float:
        return 1.0 / self.nfe

    def times(self) -> np.ndarray:
        """Evaluation times ``k / K`` for ``k = 0..K-1``."""
        return np.arange(self.nfe) / self.nfe


@dataclass
class GenerationResult:
    tokens: np.ndarray  # (B, L)
    trace: np.ndarray  # (K, B, L), state after every step
    logp: np.ndarray  # (B,), summed log-probability of the realised transitions
    init: np.ndarray | None = None  # (B, L), the source draw x_0


def _draw(probs, u):
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((cdf <= u[..., None] * cdf[..., -1:]).sum(axis=-1), probs.shape[-1] - 1).astype(np.int64)


def _coeffs_at(schedule, t, h):
    try:
        return velocity_coeffs(schedule, t)
    except SingularityError:
        # the factorized schedule has an infinite derivative at 0; evaluate half a step in
        return velocity_coeffs(schedule, t + 0.5 * h)


def _predict(model, xt, t, cond):
    return model.predict(xt, t, cond)


def generate_batch(model, mid, conditions, cfg: SamplerConfig, gens, L: int | None = None, batch: int | None = None) -> GenerationResult:
    """Generate one sequence per row; row ``b`` draws all its randomness from ``gens[b]``.

    ``gens`` may instead be a single generator shared by all ``batch`` rows
    (faster for large Monte-Carlo batches).  ``conditions`` is ``(B, L)`` or
    None; ``mid`` is anything with ``mid_probs(condition, batch_shape)`` and
    is only used with ``include_mid``.
    """
    if isinstance(gens, np.random.Generator):
        shared = gens
        B = int(batch)
    else:
        shared = None
        B = len(gens)
    if L is None:
        L = cfg.gen_length if cfg.gen_length is not None else model.L
    d = model.d
    cond = None if conditions is None else np.broadcast_to(np.asarray(conditions, dtype=np.int64), (B, L))
    frozen = np.zeros(L, dtype=bool)
    prefix = None
    if cfg.frozen_prefix is not None and len(cfg.frozen_prefix):
        prefix = np.asarray(cfg.frozen_prefix, dtype=np.int64)
        if prefix.size > L:
            raise DomainError("frozen prefix is longer than the sequence")
        frozen[: prefix.size] = True

    def uniforms():
        if shared is not None:
            return shared.random((B, L))
        return np.stack([g.random(L) for g in gens])

    mid_p = None
    if cfg.include_mid or cfg.source == "mid":
        if mid is None:
            raise DomainError("this sampler configuration needs a mid distribution")
        mid_p = mid.mid_probs(cond, (B,))
    if cfg.source == "mid":
        x = _draw(mid_p, uniforms())
    else:
        x = np.minimum((uniforms() * d).astype(np.int64), d - 1)
    if prefix is not None:
        x[:, : prefix.size] = prefix
    init = x.copy()
    K = cfg.nfe
    h = cfg.h
    trace = np.empty((K, B, L), dtype=np.int64)
    logp = np.zeros(B)
    for k, t in enumerate(cfg.times()):
        post = temper(_predict(model, x, t, cond), cfg.temperature)
        u = uniforms()
        if k == K - 1:
            probs = post
        else:
            rates = marginal_velocity(_coeffs_at(cfg.schedule, t, h), post, mid_p, x, include_mid=cfg.include_mid)
            rates = np.where(frozen[:, None], 0.0, rates)
            probs = transition_probs(x, rates, h)
        new = _draw(probs, u)
        p_new = np.take_along_axis(probs, new[..., None], -1)[..., 0]
        new = np.where(frozen, x, new)
        logp += np.where(frozen, 0.0, np.log(np.maximum(p_new, 1e-300))).sum(axis=1)
        x = new
        trace[k] = x
    return GenerationResult(x, trace, logp, init)


def generate(model, mid, condition, cfg: SamplerConfig, rng) -> GenerationResult:
    """Generate a single sequence; the result arrays keep a batch axis of one."""
    gen = rng.generator() if isinstance(rng, RngHandle) else as_generator(rng)
    cond = None if condition is None else np.asarray(condition, dtype=np.int64)[None]
    return generate_batch(model, mid, cond, cfg, [gen])


@dataclass
class CandidateSet:
    tokens: np.ndarray  # (n, L)
    logp: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.atleast_2d(np.asarray(self.tokens, dtype=np.int64))
        if self.tokens.shape[0] == 0:
            raise DomainError("candidate set is empty")

    def __len__(self) -> int:
        return self.tokens.shape[0]


def candidate_streams(rng: RngHandle, n: int) -> list:
    return [rng.split(j).generator() for j in range(n)]


def generate_candidates(model, mid, condition, cfg: SamplerConfig, n: int, rng) -> CandidateSet:
    """``n`` independent generations, candidate ``j`` on stream ``rng.split(j)``."""
    if n < 1:
        raise DomainError("need at least one candidate")
    handle = rng if isinstance(rng, RngHandle) else RngHandle(int(rng))
    cond = None if condition is None else np.asarray(condition, dtype=np.int64)[None]
    res = generate_batch(model, mid, cond, cfg, candidate_streams(handle, n))
    return CandidateSet(res.tokens, res.logp)


# --------------------------------------------------------------------------
# scoring strategies


def select_mode(cands: CandidateSet) -> np.ndarray:
    """Most frequent sequence; ties go to the candidate seen first."""
    _, first, inverse, counts = np.unique(cands.tokens, axis=0, return_index=True, return_inverse=True, return_counts=True)
    best = max(range(len(counts)), key=lambda g: (counts[g], -first[g]))
    return cands.tokens[first[best]]


def pair_risk(hyp, ref, eot: int | None = None) -> float:
    """Edit distance of ``hyp`` against ``ref`` over ``|ref|`` (at least one)."""
    h = list(hyp) if eot is None else truncate_eot(hyp, eot)
    r = list(ref) if eot is None else truncate_eot(ref, eot)
    return edit_distance(h, r) / max(len(r), 1)


def mbr_risks(cands: CandidateSet, eot: int | None = None) -> np.ndarray:
    n = len(cands)
    seqs = [cands.tokens[i].tolist() if eot is None else truncate_eot(cands.tokens[i], eot) for i in range(n)]
    risk = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                risk[i, j] = edit_distance(seqs[i], seqs[j]) / max(len(seqs[j]), 1)
    return risk.mean(axis=1)


def select_mbr(cands: CandidateSet, metric: str = "wer", eot: int | None = None) -> np.ndarray:
    """Minimum mean risk against the other candidates as references; ties to the lowest index.

    ``metric`` is ``"wer"`` (one word per token id) or ``"cer"`` (spelled tokens).
    """
    if metric == "cer":
        from .synthtask import _chars

        seqs = [truncate_eot(c, eot) if eot is not None else list(c) for c in cands.tokens]
        chars = [_chars(s) for s in seqs]
        n = len(chars)
        risk = np.array([[edit_distance(chars[i], chars[j]) / max(len(chars[j]), 1) for j in range(n)] for i in range(n)]).mean(axis=1)
    elif metric == "wer":
        risk = mbr_risks(cands, eot)
    else:
        raise DomainError(f"unknown metric {metric!r}")
    return cands.tokens[int(np.argmin(risk))]


def select_external(cands: CandidateSet, scorer, condition=None) -> np.ndarray:
    """Candidate with the highest external log-score (one batched scorer call)."""
    try:
        scores = np.asarray(scorer.score(cands.tokens, condition), dtype=np.float64)
    except ScorerError:
        raise
    except Exception as exc:
        raise ScorerError(f"scorer failed on a set of {len(cands)} candidates: {exc}") from exc
    if scores.shape != (len(cands),):
        raise ScorerError(f"scorer returned {scores.shape[0] if scores.ndim else 'a scalar'} scores for {len(cands)} candidates")
    return cands.tokens[int(np.argmax(scores))]


def select_elbo(cands: CandidateSet) -> np.ndarray:
    """Candidate whose trajectory has the highest summed log transition probability."""
    if cands.logp is None:
        raise UnsupportedScheduleError("candidates carry no trajectory scores")
    return cands.tokens[int(np.argmax(cands.logp))]


SCORING = ("single", "mode", "mbr", "external", "elbo")


def select(cands: CandidateSet, method: str, scorer=None, condition=None, eot: int | None = None) -> np.ndarray:
    if method == "single":
        return cands.tokens[0]
    if method == "mode":
        return select_mode(cands)
    if method == "mbr":
        return select_mbr(cands, "wer", eot)
    if method == "external":
        return select_external(cands, scorer, condition)
    if method == "elbo":
        return select_elbo(cands)
    raise DomainError(f"unknown scoring method {method!r}")


# --------------------------------------------------------------------------
# autoregressive tabular model (verifier and external scorer)


@dataclass
class ARTabularModel:
    """Next-token logits indexed by ``[position, condition feature, previous token]``.

    Previous token id ``d`` marks the start.  Fitted by smoothed counting.
    """

    d: int
    L: int
    n_features: int | None = None
    feature_mode: str = "local"
    logits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_features is None:
            self.n_features = self.d
        if self.logits is None:
            self.logits = np.zeros((self.L, self.n_features, self.d + 1, self.d))

    def features(self, condition):
        from .posterior import condition_features

        return condition_features(condition, self.d, self.n_features, self.feature_mode)

    def fit(self, refs, conds, smoothing: float = 0.1) -> "ARTabularModel":
        refs = np.asarray(refs, dtype=np.int64)
        f = self.features(conds)
        prev = np.concatenate([np.full((refs.shape[0], 1), self.d), refs[:, :-1]], axis=1)
        counts = np.full(self.logits.shape, smoothing)
        pos = np.broadcast_to(np.arange(self.L), refs.shape)
        np.add.at(counts, (pos, f, prev, refs), 1.0)
        self.logits = np.log(counts / counts.sum(axis=-1, keepdims=True))
        return self

    def next_logits(self, prefix, condition) -> np.ndarray:
        """Logits for the token after ``prefix`` (length < L)."""
        i = len(prefix)
        prev = self.d if i == 0 else int(prefix[-1])
        f = self.features(np.asarray(condition, dtype=np.int64)[None])[0]
        return self.logits[i, f[i], prev]

    def greedy_next(self, prefix, condition) -> int:
        return int(np.argmax(self.next_logits(prefix, condition)))

    def verify(self, prefix, proposal, condition) -> np.ndarray:
        """Greedy token at each position of ``proposal`` given the draft before it (one pass)."""
        seq = np.concatenate([np.asarray(prefix, dtype=np.int64), np.asarray(proposal, dtype=np.int64)])
        start = len(prefix)
        n = len(proposal)
        f = self.features(np.asarray(condition, dtype=np.int64)[None])[0]
        pos = np.arange(start, start + n)
        prev = np.array([self.d if p == 0 else seq[p - 1] for p in pos])
        return np.argmax(self.logits[pos, f[pos], prev], axis=-1)

    def greedy_decode(self, condition, eot: int) -> np.ndarray:
        out = []
        for _ in range(self.L):
            tok = self.greedy_next(out, condition)
            out.append(tok)
            if tok == eot:
                break
        return _pad(out, self.L, eot)

    def log_likelihood(self, seqs, condition) -> np.ndarray:
        seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
        f = self.features(np.broadcast_to(np.asarray(condition, dtype=np.int64), seqs.shape))
        prev = np.concatenate([np.full((seqs.shape[0], 1), self.d), seqs[:, :-1]], axis=1)
        pos = np.broadcast_to(np.arange(self.L), seqs.shape)
        logp = np.log(softmax(self.logits[pos, f, prev]))
        return np.take_along_axis(logp, seqs[..., None], -1)[..., 0].sum(axis=1)

    def score(self, seqs, condition) -> np.ndarray:
        """External-scorer interface: log-likelihood of every candidate."""
        return self.log_likelihood(seqs, condition)


def _pad(tokens, L, eot):
    out = np.full(L, eot, dtype=np.int64)
    out[: len(tokens)] = tokens[:L]
    return out


class FunctionScorer:
    """Wrap ``fn(seqs, condition) -> scores`` as a scorer."""

    def __init__(self, fn):
        self.fn = fn

    def score(self, seqs, condition):
        return self.fn(seqs, condition)


class FileScorer:
    """Out-of-process scorer exchanging line-delimited records.

    Candidates are written one per line as ``{"id", "tokens", "score": null}``
    to ``request_path``; ``command`` (if given) is run with the two paths
    appended; scores are read back from ``response_path`` as ``{"id", "score"}``
    lines.
    """

    def __init__(self, request_path, response_path, command=None):
        self.request_path = request_path
        self.response_path = response_path
        self.command = command

    def score(self, seqs, condition):
        write_candidates(self.request_path, seqs, condition)
        if self.command:
            proc = subprocess.run(list(self.command) + [str(self.request_path), str(self.response_path)], capture_output=True, text=True)
            if proc.returncode != 0:
                raise ScorerError(f"scorer command failed with status {proc.returncode}: {proc.stderr.strip()}")
        return read_scores(self.response_path, len(seqs))


def write_candidates(path, seqs, condition=None, scores=None) -> None:
    with open(path, "w") as fh:
        for i, s in enumerate(np.atleast_2d(seqs)):
            rec = {"id": i, "tokens": [int(v) for v in s], "score": None if scores is None else float(scores[i])}
            if condition is not None:
                rec["condition"] = [int(v) for v in np.asarray(condition)]
            fh.write(json.dumps(rec) + "\n")


def read_scores(path, n: int) -> np.ndarray:
    out = np.full(n, np.nan)
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[int(rec["id"])] = float(rec["score"])
    if np.any(np.isnan(out)):
        raise ScorerError(f"missing scores for candidates {np.flatnonzero(np.isnan(out)).tolist()}")
    return out


# --------------------------------------------------------------------------
# speculative decoding


class DraxDrafter:
    """Proposes a block continuation with prefix-frozen generation."""

    def __init__(self, model, mid=None, cfg: SamplerConfig | None = None):
        self.model = model
        self.mid = mid
        self.cfg = cfg or SamplerConfig(nfe=2, temperature=0.01)

    def propose(self, prefix, condition, n_tokens: int, gen) -> np.ndarray:
        cfg = replace(self.cfg, gen_length=self.model.L, frozen_prefix=tuple(int(v) for v in prefix))
        cond = None if condition is None else np.asarray(condition, dtype=np.int64)[None]
        out = generate_batch(self.model, self.mid, cond, cfg, [gen]).tokens[0]
        return out[len(prefix) : len(prefix) + n_tokens]


class RandomDrafter:
    """Uniformly random proposals (the no-skill baseline)."""

    def __init__(self, d: int):
        self.d = d

    def propose(self, prefix, condition, n_tokens: int, gen) -> np.ndarray:
        return gen.integers(0, self.d, size=n_tokens)


class TargetDrafter:
    """Proposes the target's own greedy continuation (the self-drafting upper bound)."""

    def __init__(self, target, eot: int):
        self.target = target
        self.eot = eot

    def propose(self, prefix, condition, n_tokens: int, gen) -> np.ndarray:
        out = list(prefix)
        for _ in range(n_tokens):
            out.append(self.target.greedy_next(out, condition))
        return np.asarray(out[len(prefix) :])


@dataclass
class SpeculativeResult:
    tokens: np.ndarray
    matches: list  # accepted draft tokens per round
    rounds: int

    @property
    def mean_matches(self) -> float:
        return float(np.mean(self.matches)) if self.matches else 0.0


def speculative_decode(drafter, target, condition, block: int, L: int, eot: int, rng) -> SpeculativeResult:
    """Draft ``block`` tokens, keep the prefix the target agrees with, then append the target's token.

    The result equals the target's greedy decode by construction: every
    accepted token is the target's top-1 choice given the tokens before it.
    """
    if block < 1:
        raise DomainError("block must be at least 1")
    gen = rng.generator() if isinstance(rng, RngHandle) else as_generator(rng)
    out: list = []
    matches = []
    while len(out) < L and (not out or out[-1] != eot):
        n = min(block, L - len(out))
        proposal = np.asarray(drafter.propose(np.asarray(out, dtype=np.int64), condition, n, gen), dtype=np.int64)[:n]
        greedy = np.asarray(target.verify(out, proposal, condition))
        agree = proposal == greedy
        k = int(np.argmin(agree)) if not agree.all() else n
        accepted = proposal[:k].tolist()
        # stop at the first end token among the accepted ones
        if eot in accepted:
            accepted = accepted[: accepted.index(eot) + 1]
        matches.append(len(accepted))
        out.extend(accepted)
        if k < n and (not accepted or accepted[-1] != eot):
            out.append(int(greedy[k]))
    return SpeculativeResult(_pad(out, L, eot), matches, len(matches))


def random_draft_expected_matches(d: int, block: int) -> float:
    """Mean accepted tokens per round for uniform proposals, ignoring the sequence end.

    The first ``k`` proposals all match with probability ``(1/d)**k``.
    """
    return float(sum((1.0 / d) ** k for k in range(1, block + 1)))


def simulate_random_draft(d: int, block: int, rounds: int, rng) -> float:
    """Monte-Carlo estimate of the same quantity with a fixed arbitrary target."""
    gen = as_generator(rng)
    target = gen.integers(0, d, size=(rounds, block))
    draft = gen.integers(0, d, size=(rounds, block))
    agree = draft == target
    first_miss = np.where(agree.all(axis=1), block, np.argmin(agree, axis=1))
    return float(first_miss.mean())
