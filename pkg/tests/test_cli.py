import csv
import filecmp
import json
import os
import subprocess
import sys

import pytest

from drax import runs
from drax.cli import main
from drax.config import KEYS, ConfigError, RunConfig, key_reference
from drax.errors import InvariantViolation, StepSizeError

TINY = """
task.d = 6
task.L = 5
data.n_train = 500
data.n_test = 12
train.steps = 150
eval.seeds = 2
eval.nfe = 2,4
eval.candidates = 1,3
ablate.seeds = 2
speculate.seeds = 2
speculate.n_utterances = 8
theory.trials = 1
theory.sizes = 8
theory.grid = 200
"""

COMMANDS = ["gen-data", "train", "sample", "eval", "ablate-paths", "speculate", "theory"]


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(TINY)
    return str(path)


def fresh():
    runs._TRAINED.clear()
    runs.build_data.cache_clear()


def test_config_round_trip_and_reference():
    cfg = RunConfig.default().with_overrides(**{"task.d": 9, "eval.nfe": (2, 3), "path.middle": None, "theory.epsilon": 0.25})
    assert RunConfig.from_text(cfg.to_text()) == cfg
    ref = key_reference()
    assert all(f"`{k}`" in ref for k in KEYS)
    with pytest.raises(ConfigError):
        RunConfig.from_text("nope = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("task.d = many\n")


@pytest.mark.slow
@pytest.mark.parametrize("command", COMMANDS)
def test_rerun_from_emitted_config_is_byte_identical(command, tiny, tmp_path):
    fresh()
    first = tmp_path / "a"
    assert main([command, "--config", tiny, "--out", str(first)]) == 0
    second = tmp_path / "b"
    proc = subprocess.run(
        [sys.executable, "-m", "drax.cli", command, "--config", str(first / "config.txt"), "--out", str(second)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    names = sorted(os.listdir(first))
    assert names == sorted(os.listdir(second))
    _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
    assert not mismatch and not errors
    if command not in ("gen-data", "sample"):
        assert any(n.endswith(".png") for n in names)


def test_train_outputs_and_two_way_has_no_mid(tiny, tmp_path):
    fresh()
    out = tmp_path / "tri"
    assert main(["train", "--config", tiny, "--out", str(out), "--no-plots"]) == 0
    assert {"model.ckpt", "mid.ckpt", "ar.ckpt", "loss.csv", "config.txt"} <= set(os.listdir(out))
    assert not (out / "loss.png").exists()
    two = tmp_path / "two"
    code = main(["train", "--config", tiny, "--out", str(two), "--no-plots", "--set", "path.kind=two_way_linear", "--set", "path.middle=none"])
    assert code == 0
    assert not (two / "mid.ckpt").exists()
    rows = list(csv.DictReader(open(two / "loss.csv")))
    assert len(rows) == 150


def test_sample_trace_has_one_row_per_step(tiny, tmp_path):
    fresh()
    ckpt = tmp_path / "ckpt"
    assert main(["train", "--config", tiny, "--out", str(ckpt), "--no-plots"]) == 0
    out = tmp_path / "s"
    assert main(["sample", "--config", tiny, "--out", str(out), "--checkpoint", str(ckpt), "--nfe", "16", "--trace"]) == 0
    rows = list(csv.DictReader(open(out / "trace.tsv"), delimiter="\t"))
    per_utt = {}
    for r in rows:
        per_utt[r["utterance"]] = per_utt.get(r["utterance"], 0) + 1
    assert len(per_utt) == 12 and set(per_utt.values()) == {16}
    transcripts = [json.loads(line) for line in open(out / "transcripts.jsonl")]
    assert len(transcripts) == 12 and {"id", "tokens", "condition", "ref", "wer"} <= set(transcripts[0])
    again = tmp_path / "s2"
    assert main(["sample", "--config", tiny, "--out", str(again), "--checkpoint", str(ckpt), "--nfe", "16", "--trace"]) == 0
    assert (out / "transcripts.jsonl").read_bytes() == (again / "transcripts.jsonl").read_bytes()


def test_theory_epsilon_zero_and_row_count(tiny, tmp_path):
    out = tmp_path / "th"
    assert main(["theory", "--config", tiny, "--out", str(out), "--epsilon", "0", "--trials", "2", "--no-plots"]) == 0
    rows = list(csv.DictReader(open(out / "theory_summary.csv")))
    assert len(rows) == 2
    assert all(abs(float(r["claim1_slack"])) < 1e-12 and r["passed"] == "1" for r in rows)


def test_usage_errors_exit_with_one(tiny, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    assert main(["train", "--config", tiny, "--out", str(tmp_path), "--set", "task.nothing=1"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1
    assert main(["sample", "--config", tiny, "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none")]) == 1
    assert main(["train", "--config", tiny, "--out", str(tmp_path), "--set", "path.kind=cosine"]) == 1


def test_failures_map_to_exit_codes(tiny, tmp_path, monkeypatch):
    def invariant(*a, **k):
        raise InvariantViolation("speculative output differs from greedy")

    def numerical(*a, **k):
        raise StepSizeError("step too large")

    monkeypatch.setattr(runs, "speculate_run", invariant)
    assert main(["speculate", "--config", tiny, "--out", str(tmp_path)]) == 2
    monkeypatch.setattr(runs, "speculate_run", numerical)
    assert main(["speculate", "--config", tiny, "--out", str(tmp_path)]) == 3


def test_config_is_written_next_to_outputs(tiny, tmp_path):
    out = tmp_path / "g"
    assert main(["gen-data", "--config", tiny, "--out", str(out), "--seed", "3"]) == 0
    cfg = RunConfig.from_file(out / "config.txt")
    assert cfg["run.seed"] == 3 and cfg["task.d"] == 6
    assert sum(1 for _ in open(out / "train.jsonl")) == 500
    task = json.load(open(out / "task.json"))
    assert task["d"] == 6 and task["L"] == 5
