"""Run configuration: flat ``key = value`` files with dotted section prefixes.

Lines starting with ``#`` are comments.  Lists are comma separated.  Every
key has a typed default in :data:`KEYS`; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError


class ConfigError(DomainError):
    """Malformed configuration file or value."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_str(text: str):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


def _opt_float(text: str):
    t = text.strip()
    return None if t.lower() in ("", "none") else float(t)


# key -> (parser, default, description)
KEYS: dict = {
    "run.seed": (int, 0, "master seed"),
    "run.plots": (_bool, True, "render PNG figures next to the tables"),
    "run.timing": (_bool, False, "also write measured wall-clock timings (not reproducible)"),
    "run.checkpoint": (_opt_str, None, "directory holding model.ckpt (and mid.ckpt, ar.ckpt)"),
    "run.target": (_opt_str, None, "autoregressive target checkpoint for speculate"),
    "task.d": (int, 16, "vocabulary size (the last id is the end token)"),
    "task.L": (int, 12, "sequence length"),
    "task.substitution": (float, 0.2, "channel substitution rate"),
    "task.deletion": (float, 0.05, "channel deletion rate"),
    "task.insertion": (float, 0.05, "channel insertion rate"),
    "task.concentration": (float, 0.3, "Dirichlet concentration of the Markov tables"),
    "task.seed": (int, 0, "seed for the Markov tables"),
    "task.reserve_eot": (_bool, True, "keep the end token out of references"),
    "data.n_train": (int, 20000, "training pairs"),
    "data.n_test": (int, 400, "test pairs"),
    "data.seed": (int, 1, "seed for dataset generation"),
    "data.train": (_opt_str, None, "optional JSONL training set written by gen-data"),
    "data.test": (_opt_str, None, "optional JSONL test set written by gen-data"),
    "path.kind": (str, "tri_factorized", "schedule: two_way_linear or tri_factorized"),
    "path.p": (float, 2.0, "factorized schedule exponent p"),
    "path.q": (float, 2.0 / 3.0, "factorized schedule exponent q"),
    "path.source": (str, "uniform", "source component: uniform or mid"),
    "path.middle": (_opt_str, "mid", "middle component: none, uniform or mid"),
    "model.buckets": (int, 8, "time buckets of the tabular posterior"),
    "model.context": (str, "left", "token context: local or left"),
    "model.features": (int, 0, "condition feature table size (0 means d)"),
    "model.feature_mode": (str, "local", "condition features: local or window"),
    "train.steps": (int, 10000, "SGD steps"),
    "train.lr": (float, 64.0, "learning rate"),
    "train.batch_size": (int, 128, "batch size"),
    "train.gumbel_temperature": (float, 0.5, "Gumbel-Softmax temperature"),
    "train.dropout": (float, 0.1, "condition dropout probability"),
    "train.prompt_prob": (float, 0.0, "probability of freezing a random prefix"),
    "sampler.nfe": (int, 8, "sampling steps K"),
    "sampler.temperature": (float, 0.01, "posterior temperature"),
    "sampler.candidates": (int, 1, "candidates per utterance"),
    "sampler.include_mid": (_bool, False, "keep the mid term in the sampling velocity"),
    "sampler.scoring": (str, "single", "single, mode, mbr, external or elbo"),
    "sampler.kind": (_opt_str, None, "sampling schedule (default two_way_linear)"),
    "sampler.trace": (_bool, False, "write the step trace"),
    "eval.seeds": (int, 5, "training seeds (ignored when run.checkpoint is set)"),
    "eval.include_mid": (_bool, True, "also compare sampling with the mid term (mid-path models only)"),
    "eval.nfe": (_ints, (4, 8, 16), "NFE values to sweep"),
    "eval.candidates": (_ints, (1, 4, 16), "candidate counts to sweep"),
    "eval.scoring": (_strs, ("single", "mode", "mbr", "external", "elbo"), "scoring methods to sweep"),
    "eval.temperature": (float, 0.1, "temperature for multi-candidate cells"),
    "eval.single_temperature": (float, 0.01, "temperature for single-candidate cells"),
    "ablate.seeds": (int, 5, "training seeds per configuration"),
    "ablate.nfe": (int, 8, "NFE for evaluation"),
    "speculate.block": (int, 4, "draft tokens per round"),
    "speculate.nfe": (int, 2, "drafter NFE"),
    "speculate.temperature": (float, 0.01, "drafter temperature"),
    "speculate.n_utterances": (int, 200, "test utterances"),
    "speculate.seeds": (int, 5, "seeds for the drafter comparison"),
    "theory.trials": (int, 50, "random trials per state-space size"),
    "theory.sizes": (_ints, (8, 27, 125), "state-space sizes (8, 27, 125)"),
    "theory.eps_min": (float, 0.0, "smallest perturbation size"),
    "theory.eps_max": (float, 0.5, "largest perturbation size"),
    "theory.epsilon": (_opt_float, None, "fixed perturbation size for every trial"),
    "theory.grid": (int, 2000, "time-grid intervals"),
    "theory.adversarial": (_bool, True, "add one adversarial trial per size"),
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; every key in :data:`KEYS` is present."""

    values: tuple

    def __getitem__(self, key: str):
        return dict(self.values)[key]

    def get(self, key: str, default=None):
        return dict(self.values).get(key, default)

    def section(self, prefix: str) -> dict:
        return {k[len(prefix) + 1 :]: v for k, v in self.values if k.startswith(prefix + ".")}

    def with_overrides(self, **overrides) -> "RunConfig":
        data = dict(self.values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            data[key] = v
        return RunConfig(tuple(sorted(data.items())))

    def to_text(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(tuple(sorted((k, spec[1]) for k, spec in KEYS.items())))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        data = dict(cls.default().values)
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"line {n}: unknown config key {key!r}")
            try:
                data[key] = KEYS[key][0](value)
            except ValueError as exc:
                raise ConfigError(f"line {n}: bad value for {key}: {exc}") from None
        return cls(tuple(sorted(data.items())))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


def key_reference() -> str:
    """Markdown table of every key, its default and meaning."""
    rows = ["| key | default | meaning |", "| --- | --- | --- |"]
    for k, (_, default, doc) in KEYS.items():
        rows.append(f"| `{k}` | `{_format(default)}` | {doc} |")
    return "\n".join(rows) + "\n"
