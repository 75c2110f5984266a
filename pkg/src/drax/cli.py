"""Command-line entry point: ``drax <command> [options]``.

Every command writes its resolved configuration to ``config.txt`` in the
output directory; running the same command with ``--config`` pointing at
that file reproduces every output byte for byte (measured timings, written
only with ``--timing``, are the exception).

Exit codes: 0 success, 1 usage or configuration error, 2 invariant
violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import runs
from .config import ConfigError, RunConfig
from .errors import (
    CompatibilityError,
    DomainError,
    InvariantViolation,
    RefineGridError,
    SingularityError,
    StepSizeError,
    TrainingDivergedError,
    UnsupportedScheduleError,
)
from .posterior import save_checkpoint
from .synthtask import write_dataset

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# output helpers


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows: list[dict], columns=None, delimiter: str = ",") -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write((rec if isinstance(rec, str) else json.dumps(rec, sort_keys=True)) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, out: str, threads: int) -> int:
    task, train, test = runs.build_data(cfg)
    write_dataset(os.path.join(out, "train.jsonl"), train)
    write_dataset(os.path.join(out, "test.jsonl"), test)
    with open(os.path.join(out, "task.json"), "w") as fh:
        json.dump(task.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: str, threads: int) -> int:
    result, target = runs.train_run(cfg)
    save_checkpoint(os.path.join(out, "model.ckpt"), result.model)
    if result.mid is not None:
        save_checkpoint(os.path.join(out, "mid.ckpt"), result.mid)
    save_checkpoint(os.path.join(out, "ar.ckpt"), target)
    rows = runs.loss_rows(result)
    write_csv(os.path.join(out, "loss.csv"), rows, ("step", "loss", "cdfm_loss", "mid_loss"))
    if cfg["run.plots"]:
        from . import plots

        plots.loss_curve(os.path.join(out, "loss.png"), rows)
    return EXIT_OK


def cmd_sample(cfg: RunConfig, out: str, threads: int) -> int:
    rows, trace, _ = runs.sample_run(cfg)
    write_jsonl(os.path.join(out, "transcripts.jsonl"), rows)
    if cfg["sampler.trace"]:
        L = cfg["task.L"]
        write_csv(os.path.join(out, "trace.tsv"), trace, ["utterance", "candidate", "step"] + [f"p{i}" for i in range(L)], delimiter="\t")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: str, threads: int) -> int:
    rows, mid_rows, timing = runs.eval_run(cfg, threads)
    write_csv(os.path.join(out, "eval.csv"), rows, runs.EVAL_COLUMNS)
    summary = runs.summarize(rows, ("nfe", "candidates", "temperature", "scoring"), ("wer", "cer", "oracle_wer", "rtfx"))
    write_csv(os.path.join(out, "eval_summary.csv"), summary)
    mid_summary = []
    if mid_rows:
        write_csv(os.path.join(out, "include_mid.csv"), mid_rows, runs.INCLUDE_MID_COLUMNS)
        mid_summary = runs.summarize(mid_rows, ("sampler", "include_mid"), ("wer", "cer"))
        write_csv(os.path.join(out, "include_mid_summary.csv"), mid_summary)
    if cfg["run.timing"]:
        write_csv(os.path.join(out, "timing.csv"), timing)
    if cfg["run.plots"]:
        from . import plots

        plots.eval_curves(os.path.join(out, "eval.png"), summary)
        if mid_summary:
            plots.include_mid_bars(os.path.join(out, "include_mid.png"), mid_summary)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, out: str, threads: int) -> int:
    rows = runs.ablate_run(cfg, threads)
    write_csv(os.path.join(out, "ablation.csv"), rows, runs.ABLATION_COLUMNS)
    summary = runs.ablation_summary(rows)
    write_csv(os.path.join(out, "ablation_summary.csv"), summary, ("config", "description", "wer", "wer_std", "cer", "seeds"))
    if cfg["run.plots"]:
        from . import plots

        plots.ablation_bars(os.path.join(out, "ablation.png"), summary, rows)
    return EXIT_OK


def cmd_speculate(cfg: RunConfig, out: str, threads: int) -> int:
    rows = runs.speculate_run(cfg, threads)
    write_csv(os.path.join(out, "speculate.csv"), rows, runs.SPECULATE_COLUMNS)
    summary = runs.speculate_summary(cfg, rows)
    write_csv(os.path.join(out, "speculate_summary.csv"), summary)
    if cfg["run.plots"]:
        from . import plots

        plots.speculate_bars(os.path.join(out, "speculate.png"), summary)
    return EXIT_OK


def cmd_theory(cfg: RunConfig, out: str, threads: int) -> int:
    from .theory import SUMMARY_COLUMNS, summary_rows

    records = runs.theory_run(cfg, threads)
    write_jsonl(os.path.join(out, "theory_trials.jsonl"), [r.to_json() for r in records])
    rows = summary_rows(records)
    write_csv(os.path.join(out, "theory_summary.csv"), rows, SUMMARY_COLUMNS)
    if cfg["run.plots"]:
        from . import plots

        plots.theory_slacks(os.path.join(out, "theory.png"), rows)
    failed = [r.trial for r in records if not r.passed]
    if failed:
        print(f"theory checks failed on trials {failed}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "train the posterior (and mid) model and write checkpoints"),
    "sample": (cmd_sample, "generate transcripts for the test conditions"),
    "eval": (cmd_eval, "sweep NFE, candidate count and scoring method"),
    "ablate-paths": (cmd_ablate, "compare the four path designs over several seeds"),
    "speculate": (cmd_speculate, "speculative decoding with a trained and a random drafter"),
    "theory": (cmd_theory, "randomised verification of the error bounds"),
    "gen-data": (cmd_gen_data, "write the synthetic train and test sets"),
}


# --------------------------------------------------------------------------
# argument handling


def _common(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    parser.add_argument("--config", metavar="PATH", default=s, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=s, help="master seed (run.seed)")
    parser.add_argument("--out", metavar="DIR", default=s, help="output directory (default: drax-out/<command>)")
    parser.add_argument("--threads", type=int, default=s, help="worker processes (fallback: DRAX_THREADS)")
    parser.add_argument("--no-plots", action="store_true", default=s, help="skip PNG figures (run.plots = false)")
    parser.add_argument("--timing", action="store_true", default=s, help="also write measured timings (run.timing = true)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", default=s, help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drax", description="Discrete flow matching toolkit on a synthetic noisy-channel task.")
    _common(parser)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p)
        if name in ("sample", "eval", "speculate"):
            p.add_argument("--checkpoint", metavar="DIR", default=argparse.SUPPRESS, help="directory with model.ckpt (run.checkpoint)")
        if name == "sample":
            p.add_argument("--nfe", type=int, default=argparse.SUPPRESS, help="sampling steps (sampler.nfe)")
            p.add_argument("--include-mid", action="store_true", default=argparse.SUPPRESS, help="keep the mid term (sampler.include_mid)")
            p.add_argument("--trace", action="store_true", default=argparse.SUPPRESS, help="write trace.tsv (sampler.trace)")
            p.add_argument("--candidates", type=int, default=argparse.SUPPRESS, help="candidates per utterance (sampler.candidates)")
            p.add_argument("--scoring", default=argparse.SUPPRESS, help="candidate selection (sampler.scoring)")
        if name == "speculate":
            p.add_argument("--target", metavar="PATH", default=argparse.SUPPRESS, help="autoregressive target checkpoint (run.target)")
        if name == "theory":
            p.add_argument("--epsilon", type=float, default=argparse.SUPPRESS, help="fixed perturbation size (theory.epsilon)")
            p.add_argument("--trials", type=int, default=argparse.SUPPRESS, help="trials per size (theory.trials)")
    return parser


_FLAG_KEYS = {
    "seed": "run.seed",
    "checkpoint": "run.checkpoint",
    "target": "run.target",
    "nfe": "sampler.nfe",
    "include_mid": "sampler.include_mid",
    "trace": "sampler.trace",
    "candidates": "sampler.candidates",
    "scoring": "sampler.scoring",
    "epsilon": "theory.epsilon",
    "trials": "theory.trials",
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig.default()
    extra = []
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        extra.append(item)
    if extra:
        cfg = RunConfig.from_text(cfg.to_text() + "\n".join(extra) + "\n")
    overrides = {}
    for attr, key in _FLAG_KEYS.items():
        if hasattr(args, attr):
            overrides[key] = getattr(args, attr)
    if getattr(args, "no_plots", False):
        overrides["run.plots"] = False
    if getattr(args, "timing", False):
        overrides["run.timing"] = True
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _threads(args) -> int:
    if hasattr(args, "threads"):
        return max(1, int(args.threads))
    env = os.environ.get("DRAX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DRAX_THREADS must be an integer, got {env!r}") from None
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        threads = _threads(args)
        out = getattr(args, "out", None) or os.path.join("drax-out", args.command)
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.txt"), "w") as fh:
            fh.write(cfg.to_text())
        fn = COMMANDS[args.command][0]
        return fn(cfg, out, threads)
    except InvariantViolation as exc:
        print(f"drax: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except TrainingDivergedError as exc:
        print(f"drax: training diverged: {exc} (last finite loss {exc.last_finite_loss})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SingularityError, StepSizeError, RefineGridError, FloatingPointError) as exc:
        print(f"drax: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CompatibilityError, DomainError, UnsupportedScheduleError, OSError) as exc:
        print(f"drax: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
