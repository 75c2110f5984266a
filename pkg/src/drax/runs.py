"""Experiment pipelines behind the command-line tool.

Every pipeline takes a resolved :class:`~drax.config.RunConfig` and returns
plain rows (lists of dicts).  All randomness comes from ``RngHandle(seed,
stream)`` with the stream constants below, so results do not depend on
evaluation order or on how work is split across processes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ConfigError, RunConfig
from .core import RngHandle
from .errors import InvariantViolation
from .path import PathSpec
from .posterior import MidModel, TabularModel, TrainConfig, TrainResult, load_checkpoint, train_toy
from .sampling import (
    ARTabularModel,
    CandidateSet,
    DraxDrafter,
    RandomDrafter,
    SamplerConfig,
    TargetDrafter,
    generate_batch,
    random_draft_expected_matches,
    select,
    speculative_decode,
)
from .scheduler import Schedule
from .synthtask import Dataset, Task, markov_task, read_dataset, sample_dataset, sequence_error
from .theory import run_suite

STREAM_DATA_TRAIN = 1
STREAM_DATA_TEST = 2
STREAM_TRAIN = 3
STREAM_EVAL = 4
STREAM_SPECULATE = 5
STREAM_SAMPLE = 6

# nominal cost of one sequence-level posterior evaluation, for the rtfx analog
NOMINAL_EVAL_SECONDS = 1e-3

ABLATION = ("i", "ii", "iii", "iv")
ABLATION_LABELS = {
    "i": "uniform source, uniform middle",
    "ii": "uniform source, condition-informed middle",
    "iii": "condition-informed source",
    "iv": "uniform source, two-way baseline",
}


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, over worker processes when ``threads > 1``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def seeds(cfg: RunConfig, n: int) -> list[int]:
    return [cfg["run.seed"] + k for k in range(n)]


# --------------------------------------------------------------------------
# task and data


def build_task(cfg: RunConfig) -> Task:
    return markov_task(
        cfg["task.d"],
        cfg["task.L"],
        cfg["task.substitution"],
        cfg["task.deletion"],
        cfg["task.insertion"],
        cfg["task.concentration"],
        rng=cfg["task.seed"],
        reserve_eot=cfg["task.reserve_eot"],
    )


@lru_cache(maxsize=8)
def build_data(cfg: RunConfig) -> tuple[Task, Dataset, Dataset]:
    """Task plus train and test sets, read from files when configured."""
    task = build_task(cfg)
    if cfg["data.train"]:
        train = read_dataset(cfg["data.train"])
    else:
        train = sample_dataset(task, cfg["data.n_train"], RngHandle(cfg["data.seed"], STREAM_DATA_TRAIN).generator())
    if cfg["data.test"]:
        test = read_dataset(cfg["data.test"])
    else:
        test = sample_dataset(task, cfg["data.n_test"], RngHandle(cfg["data.seed"], STREAM_DATA_TEST).generator())
    for name, data in (("train", train), ("test", test)):
        if data.refs.shape[1] != task.L or data.conds.max(initial=0) >= task.d or data.refs.max(initial=0) >= task.d:
            raise ConfigError(f"{name} data does not match task.d={task.d}, task.L={task.L}")
    return task, train, test


def task_eot(task: Task):
    """End token used to cut sequences before scoring (None when it is an ordinary token)."""
    return task.eot if task.reserve_eot else None


def seq_errors(hyps, refs, eot, metric: str = "wer") -> np.ndarray:
    # -1 never occurs, so nothing is cut when the end token is not reserved
    cut = -1 if eot is None else eot
    return np.array([sequence_error(h, r, cut, metric) for h, r in zip(hyps, refs)])


# --------------------------------------------------------------------------
# paths, models, sampler settings


def schedule(kind: str, cfg: RunConfig) -> Schedule:
    if kind == "two_way_linear":
        return Schedule.two_way()
    if kind == "tri_factorized":
        return Schedule.tri(cfg["path.p"], cfg["path.q"])
    raise ConfigError(f"unknown schedule kind {kind!r}")


def path_spec(cfg: RunConfig) -> PathSpec:
    return PathSpec(schedule(cfg["path.kind"], cfg), cfg["path.source"], cfg["path.middle"])


def ablation_spec(cfg: RunConfig, name: str) -> PathSpec:
    tri = schedule("tri_factorized", cfg)
    two = Schedule.two_way()
    specs = {
        "i": PathSpec(tri, "uniform", "uniform"),
        "ii": PathSpec(tri, "uniform", "mid"),
        "iii": PathSpec(two, "mid", None),
        "iv": PathSpec(two, "uniform", None),
    }
    return specs[name]


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        steps=cfg["train.steps"],
        lr=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        gumbel_temperature=cfg["train.gumbel_temperature"],
        dropout=cfg["train.dropout"],
        prompt_prob=cfg["train.prompt_prob"],
    )


def new_models(cfg: RunConfig, spec: PathSpec):
    d, L = cfg["task.d"], cfg["task.L"]
    nf = cfg["model.features"] or None
    model = TabularModel(d, L, cfg["model.buckets"], nf, cfg["model.context"], cfg["model.feature_mode"])
    mid = MidModel(d, L, nf, cfg["model.feature_mode"]) if spec.uses_mid else None
    return model, mid


_TRAINED: dict = {}


def train_models(cfg: RunConfig, spec: PathSpec, seed: int) -> TrainResult:
    """Train (or reuse from this process) the posterior and mid models for one seed."""
    key = (cfg, spec, seed)
    if key not in _TRAINED:
        _, train, _ = build_data(cfg)
        model, mid = new_models(cfg, spec)
        gen = RngHandle(seed, STREAM_TRAIN).generator()
        _TRAINED[key] = train_toy(train.refs, train.conds, model, mid, spec, train_config(cfg), gen)
    return _TRAINED[key]


def load_models(cfg: RunConfig):
    """Posterior and mid models from ``run.checkpoint``."""
    root = cfg["run.checkpoint"]
    d, L = cfg["task.d"], cfg["task.L"]
    model = load_checkpoint(os.path.join(root, "model.ckpt"), d, L)
    mid_path = os.path.join(root, "mid.ckpt")
    mid = load_checkpoint(mid_path, d, L) if os.path.exists(mid_path) else None
    if path_spec(cfg).uses_mid and mid is None:
        raise ConfigError(f"the configured path needs a mid model but {mid_path} is missing")
    return model, mid


def fit_target(cfg: RunConfig) -> ARTabularModel:
    """Autoregressive verifier / external scorer, from ``run.target`` or fitted by counting."""
    if cfg["run.target"]:
        return load_checkpoint(cfg["run.target"], cfg["task.d"], cfg["task.L"])
    _, train, _ = build_data(cfg)
    nf = cfg["model.features"] or None
    return ARTabularModel(cfg["task.d"], cfg["task.L"], nf, cfg["model.feature_mode"]).fit(train.refs, train.conds)


def sampler_config(cfg: RunConfig, spec: PathSpec, nfe: int | None = None, temperature: float | None = None, include_mid: bool | None = None, kind: str | None = None) -> SamplerConfig:
    """Sampler settings; the schedule defaults to two-way linear unless the mid term is kept."""
    include_mid = cfg["sampler.include_mid"] if include_mid is None else include_mid
    kind = kind or cfg["sampler.kind"] or (cfg["path.kind"] if include_mid else "two_way_linear")
    return SamplerConfig(
        nfe=cfg["sampler.nfe"] if nfe is None else nfe,
        temperature=cfg["sampler.temperature"] if temperature is None else temperature,
        include_mid=include_mid,
        schedule=schedule(kind, cfg),
        source="mid" if spec.source == "mid" else "uniform",
    )


@dataclass
class Decoded:
    tokens: np.ndarray  # (U, n, L)
    logp: np.ndarray  # (U, n)
    trace: np.ndarray  # (K, U, n, L)
    init: np.ndarray  # (U, n, L)
    seconds: float


def decode(model, mid, conds, scfg: SamplerConfig, handle: RngHandle, n: int = 1) -> Decoded:
    """``n`` candidates per condition; candidate ``j`` of utterance ``u`` uses ``handle.split(u).split(j)``."""
    conds = np.asarray(conds, dtype=np.int64)
    U, L = conds.shape
    gens = [handle.split(u).split(j).generator() for u in range(U) for j in range(n)]
    start = time.perf_counter()
    res = generate_batch(model, mid, np.repeat(conds, n, axis=0), scfg, gens)
    seconds = time.perf_counter() - start
    K = res.trace.shape[0]
    return Decoded(
        res.tokens.reshape(U, n, L),
        res.logp.reshape(U, n),
        res.trace.reshape(K, U, n, L),
        res.init.reshape(U, n, L),
        seconds,
    )


# --------------------------------------------------------------------------
# train / sample


def train_run(cfg: RunConfig) -> tuple[TrainResult, ARTabularModel]:
    spec = path_spec(cfg)
    return train_models(cfg, spec, cfg["run.seed"]), fit_target(cfg)


def loss_rows(result: TrainResult) -> list[dict]:
    return [
        {"step": k + 1, "loss": float(result.losses[k]), "cdfm_loss": float(result.cdfm_losses[k]), "mid_loss": float(result.mid_losses[k])}
        for k in range(len(result.losses))
    ]


def models_for(cfg: RunConfig, spec: PathSpec, seed: int):
    if cfg["run.checkpoint"]:
        return load_models(cfg)
    res = train_models(cfg, spec, seed)
    return res.model, res.mid


def sample_run(cfg: RunConfig) -> tuple[list[dict], list[dict], Decoded]:
    """Transcripts for the test conditions plus the step trace rows."""
    task, _, test = build_data(cfg)
    spec = path_spec(cfg)
    model, mid = models_for(cfg, spec, cfg["run.seed"])
    n = cfg["sampler.candidates"]
    scfg = sampler_config(cfg, spec)
    out = decode(model, mid, test.conds, scfg, RngHandle(cfg["run.seed"], STREAM_SAMPLE), n)
    eot = task_eot(task)
    scorer = fit_target(cfg) if cfg["sampler.scoring"] == "external" else None
    rows = []
    for u in range(len(test)):
        cands = CandidateSet(out.tokens[u], out.logp[u])
        best = select(cands, cfg["sampler.scoring"], scorer, test.conds[u], eot)
        rows.append(
            {
                "id": u,
                "tokens": [int(v) for v in best],
                "condition": [int(v) for v in test.conds[u]],
                "ref": [int(v) for v in test.refs[u]],
                "wer": float(seq_errors([best], [test.refs[u]], eot)[0]),
            }
        )
    return rows, trace_rows(out), out


def trace_rows(out: Decoded) -> list[dict]:
    """One row per (utterance, candidate, step); positions still holding their source token show ``_``."""
    K, U, n, L = out.trace.shape
    rows = []
    for u in range(U):
        for j in range(n):
            for k in range(K):
                state = out.trace[k, u, j]
                cells = {f"p{i}": ("_" if state[i] == out.init[u, j, i] else str(int(state[i]))) for i in range(L)}
                rows.append({"utterance": u, "candidate": j, "step": k + 1, **cells})
    return rows


# --------------------------------------------------------------------------
# evaluation sweep


EVAL_COLUMNS = ("seed", "nfe", "candidates", "temperature", "scoring", "wer", "cer", "oracle_wer", "fe", "rtfx")
INCLUDE_MID_COLUMNS = ("seed", "sampler", "include_mid", "wer", "cer")


def _eval_seed(args):
    cfg, seed = args
    task, _, test = build_data(cfg)
    spec = path_spec(cfg)
    model, mid = models_for(cfg, spec, seed)
    scorer = fit_target(cfg) if "external" in cfg["eval.scoring"] else None
    eot = task_eot(task)
    handle = RngHandle(seed, STREAM_EVAL)
    duration = float(test.durations.sum())
    rows, timing = [], []
    for nfe in cfg["eval.nfe"]:
        for n in cfg["eval.candidates"]:
            tau = cfg["eval.single_temperature"] if n == 1 else cfg["eval.temperature"]
            out = decode(model, mid, test.conds, sampler_config(cfg, spec, nfe=nfe, temperature=tau), handle, n)
            cand_err = seq_errors(out.tokens.reshape(-1, task.L), np.repeat(test.refs, n, axis=0), eot).reshape(len(test), n)
            oracle = float(cand_err.min(axis=1).mean())
            fe = nfe * n
            for method in cfg["eval.scoring"]:
                best = np.stack([select(CandidateSet(out.tokens[u], out.logp[u]), method, scorer, test.conds[u], eot) for u in range(len(test))])
                rows.append(
                    {
                        "seed": seed,
                        "nfe": nfe,
                        "candidates": n,
                        "temperature": tau,
                        "scoring": method,
                        "wer": float(seq_errors(best, test.refs, eot).mean()),
                        "cer": float(seq_errors(best, test.refs, eot, "cer").mean()),
                        "oracle_wer": oracle,
                        "fe": fe,
                        "rtfx": duration / (len(test) * fe * NOMINAL_EVAL_SECONDS),
                    }
                )
            timing.append({"seed": seed, "nfe": nfe, "candidates": n, "seconds": out.seconds, "rtfx": duration / max(out.seconds, 1e-12)})
    mid_rows = []
    if cfg["eval.include_mid"] and spec.middle == "mid":
        variants = (("two_way_linear", False), (cfg["path.kind"], False), (cfg["path.kind"], True))
        for kind, inc in variants:
            scfg = sampler_config(cfg, spec, temperature=cfg["eval.single_temperature"], include_mid=inc, kind=kind)
            out = decode(model, mid, test.conds, scfg, handle, 1)
            hyp = out.tokens[:, 0]
            mid_rows.append(
                {
                    "seed": seed,
                    "sampler": kind,
                    "include_mid": int(inc),
                    "wer": float(seq_errors(hyp, test.refs, eot).mean()),
                    "cer": float(seq_errors(hyp, test.refs, eot, "cer").mean()),
                }
            )
    return rows, mid_rows, timing


def eval_run(cfg: RunConfig, threads: int = 1) -> tuple[list[dict], list[dict], list[dict]]:
    """Sweep NFE x candidate count x scoring method; one row per cell and seed."""
    run_seeds = [cfg["run.seed"]] if cfg["run.checkpoint"] else seeds(cfg, cfg["eval.seeds"])
    parts = parallel_map(_eval_seed, [(cfg, s) for s in run_seeds], threads)
    rows = [r for p in parts for r in p[0]]
    mid_rows = [r for p in parts for r in p[1]]
    timing = [r for p in parts for r in p[2]]
    return rows, mid_rows, timing


def summarize(rows: list[dict], keys: tuple, values: tuple) -> list[dict]:
    """Mean of ``values`` over rows sharing ``keys`` (first-seen order), with the row count."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, members in groups.items():
        row = dict(zip(keys, key))
        for v in values:
            row[v] = float(np.mean([m[v] for m in members]))
        row["seeds"] = len(members)
        out.append(row)
    return out


# --------------------------------------------------------------------------
# path-design ablation

ABLATION_COLUMNS = ("config", "seed", "wer", "cer", "final_loss")


def _ablate_job(args):
    cfg, name, seed = args
    task, _, test = build_data(cfg)
    spec = ablation_spec(cfg, name)
    res = train_models(cfg, spec, seed)
    scfg = sampler_config(cfg, spec, nfe=cfg["ablate.nfe"], include_mid=False, kind="two_way_linear")
    out = decode(res.model, res.mid, test.conds, scfg, RngHandle(seed, STREAM_EVAL), 1)
    eot = task_eot(task)
    hyp = out.tokens[:, 0]
    window = max(1, min(200, len(res.losses)))
    return {
        "config": name,
        "seed": seed,
        "wer": float(seq_errors(hyp, test.refs, eot).mean()),
        "cer": float(seq_errors(hyp, test.refs, eot, "cer").mean()),
        "final_loss": float(np.mean(res.cdfm_losses[-window:])),
    }


def ablate_run(cfg: RunConfig, threads: int = 1) -> list[dict]:
    """Train and evaluate the four path designs on the same data over ``ablate.seeds`` seeds."""
    jobs = [(cfg, name, s) for name in ABLATION for s in seeds(cfg, cfg["ablate.seeds"])]
    return parallel_map(_ablate_job, jobs, threads)


def ablation_summary(rows: list[dict]) -> list[dict]:
    out = summarize(rows, ("config",), ("wer", "cer"))
    for r in out:
        errs = [x["wer"] for x in rows if x["config"] == r["config"]]
        r["wer_std"] = float(np.std(errs))
        r["description"] = ABLATION_LABELS[r["config"]]
    return out


# --------------------------------------------------------------------------
# speculative decoding

SPECULATE_COLUMNS = ("seed", "drafter", "utterance", "rounds", "matched", "mean_matches")


def _speculate_seed(args):
    cfg, seed, target, greedy = args
    task, _, test = build_data(cfg)
    spec = path_spec(cfg)
    model, mid = models_for(cfg, spec, seed)
    n = min(cfg["speculate.n_utterances"], len(test))
    dcfg = SamplerConfig(nfe=cfg["speculate.nfe"], temperature=cfg["speculate.temperature"], source="mid" if spec.source == "mid" else "uniform")
    drafters = {
        "drax": DraxDrafter(model, mid, dcfg),
        "random": RandomDrafter(task.d),
        "self": TargetDrafter(target, task.eot),
    }
    rows = []
    root = RngHandle(seed, STREAM_SPECULATE)
    for k, (name, drafter) in enumerate(drafters.items()):
        for u in range(n):
            res = speculative_decode(drafter, target, test.conds[u], cfg["speculate.block"], task.L, task.eot, root.split(k).split(u))
            if not np.array_equal(res.tokens, greedy[u]):
                raise InvariantViolation(f"speculative output differs from the target's greedy decode (seed {seed}, drafter {name}, utterance {u})")
            rows.append({"seed": seed, "drafter": name, "utterance": u, "rounds": res.rounds, "matched": int(sum(res.matches)), "mean_matches": res.mean_matches})
    return rows


def speculate_run(cfg: RunConfig, threads: int = 1) -> list[dict]:
    """Per-utterance matched tokens for the trained drafter, a random drafter and self-drafting."""
    task, _, test = build_data(cfg)
    target = fit_target(cfg)
    n = min(cfg["speculate.n_utterances"], len(test))
    greedy = np.stack([target.greedy_decode(test.conds[u], task.eot) for u in range(n)])
    run_seeds = [cfg["run.seed"]] if cfg["run.checkpoint"] else seeds(cfg, cfg["speculate.seeds"])
    parts = parallel_map(_speculate_seed, [(cfg, s, target, greedy) for s in run_seeds], threads)
    return [r for p in parts for r in p]


def speculate_summary(cfg: RunConfig, rows: list[dict]) -> list[dict]:
    """Matched tokens per round pooled over utterances, per seed and drafter."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["seed"], r["drafter"]), []).append(r)
    baseline = random_draft_expected_matches(cfg["task.d"], cfg["speculate.block"])
    out = []
    for (seed, name), members in groups.items():
        rounds = sum(m["rounds"] for m in members)
        matched = sum(m["matched"] for m in members)
        out.append(
            {
                "seed": seed,
                "drafter": name,
                "utterances": len(members),
                "rounds": rounds,
                "matched": matched,
                "matches_per_round": matched / rounds,
                "random_baseline": baseline,
            }
        )
    return out


# --------------------------------------------------------------------------
# theory suite


def theory_run(cfg: RunConfig, threads: int = 1):
    """Randomised bound-verification trials; adversarial trials only when epsilon is not fixed."""
    eps = cfg["theory.epsilon"]

    def mapper(fn, jobs):
        return parallel_map(fn, jobs, threads)

    return run_suite(
        trials=cfg["theory.trials"],
        sizes=cfg["theory.sizes"],
        eps_range=(cfg["theory.eps_min"], cfg["theory.eps_max"]),
        seed=cfg["run.seed"],
        n_intervals=cfg["theory.grid"],
        adversarial=cfg["theory.adversarial"] and eps is None,
        fixed_eps=eps,
        mapper=mapper,
    )
