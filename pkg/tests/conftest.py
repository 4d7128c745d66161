"""Shared fixtures.

The two desk-scale training runs (full model and the no-differential
ablation) power the trained-model tests and take several minutes each.
Set DIFFPAINT_TEST_CACHE to a directory to keep them across pytest
invocations; without it they are trained once per session in a temp dir.
"""

import dataclasses
import hashlib
import os
import time
from pathlib import Path
from typing import NamedTuple

import pytest

from diffpaint.training import FINAL_CHECKPOINT, LOG_NAME, TrainConfig, Trainer

CACHE_ENV = "DIFFPAINT_TEST_CACHE"


class TrainedRun(NamedTuple):
    config: TrainConfig
    out_dir: Path
    checkpoint: Path
    log: Path
    seconds: float


def _config_key(config: TrainConfig) -> str:
    text = repr(dataclasses.asdict(config))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def _train_run(config: TrainConfig, base: Path) -> TrainedRun:
    out_dir = base / _config_key(config)
    checkpoint = out_dir / FINAL_CHECKPOINT
    duration_file = out_dir / "duration_seconds.txt"
    if not checkpoint.exists():
        started = time.time()
        Trainer(config, out_dir).train()
        duration_file.write_text(f"{time.time() - started:.1f}\n")
    return TrainedRun(
        config=config,
        out_dir=out_dir,
        checkpoint=checkpoint,
        log=out_dir / LOG_NAME,
        seconds=float(duration_file.read_text()),
    )


def _run_base(tmp_path_factory) -> Path:
    cache = os.environ.get(CACHE_ENV)
    if cache:
        base = Path(cache)
        base.mkdir(parents=True, exist_ok=True)
        return base
    return tmp_path_factory.mktemp("trained-runs")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> TrainedRun:
    """The reference desk-scale run: 2000 steps, pretrain 1000, batch 16,
    half-width model, seed 0 (the TrainConfig defaults)."""
    return _train_run(TrainConfig(seed=0), _run_base(tmp_path_factory))


@pytest.fixture(scope="session")
def nodiff_run(tmp_path_factory) -> TrainedRun:
    """Same schedule and seed with the differential pathway disabled."""
    return _train_run(TrainConfig(seed=0, no_differential=True), _run_base(tmp_path_factory))
