"""Experiment protocol: held-out rounds, pooled pretraining, per-subject fine-tuning.

The protocol mirrors the capture-study evaluation: one full grid round per
subject is held out for testing; the remaining samples are pooled and split
80:20 into train/validation for pretraining; each subject then gets a
fine-tuned copy (last two layers only) trained on their own non-held-out
data, and is evaluated on their held-out round.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, DataError
from .eyesim import GazeSample
from .regressor import (TrainResult, evaluate, fine_tune, model_init, train,
                        EvalReport)
from .seeds import make_rng, mix_seed

# Purpose tags for derived seeds (stable across releases).
TAG_SIMULATE = 0x51B
TAG_PRETRAIN = 0x9143
TAG_FINETUNE = 0xF17E
TAG_SPLIT = 0x0517


def worker_count() -> int:
    """Parallelism cap from FLATTRACK_THREADS (default 1 = sequential)."""
    raw = os.environ.get("FLATTRACK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FLATTRACK_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def parallel_map(fn, items):
    """Order-preserving map, fanned out over FLATTRACK_THREADS workers."""
    items = list(items)
    w = worker_count()
    if w <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items))


def seed_for_sample(master_seed: int, tag: int, sample_id: str) -> int:
    """Per-sample seed independent of manifest row order."""
    digest = hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()
    return mix_seed(master_seed, tag, int.from_bytes(digest, "little"))


def holdout_round_of(rounds: list[int], holdout_cfg: int) -> int:
    """Resolve the held-out round id: -1 means the last round."""
    if not rounds:
        raise DataError("subject has no rounds")
    if holdout_cfg < 0:
        return rounds[-1]
    if holdout_cfg not in rounds:
        raise DataError(f"configured holdout round {holdout_cfg} not present in {rounds}")
    return holdout_cfg


def split_train_val(items: list, ratio: float, rng: np.random.Generator):
    """Seeded shuffle split; sizes within one sample of the requested ratio."""
    n = len(items)
    if n < 2:
        raise DataError("need at least 2 samples to split")
    perm = rng.permutation(n)
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1)
    train_idx = perm[:n_train]
    val_idx = perm[n_train:]
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


@dataclass
class ProtocolSplit:
    """Audit record of the sample partition for one protocol run."""

    heldout: dict[int, list[GazeSample]]
    train_pool: list[GazeSample]
    val_pool: list[GazeSample]
    per_subject: dict[int, tuple[list[GazeSample], list[GazeSample]]] = field(
        default_factory=dict)


def partition_samples(samples: list[GazeSample],
                      config: ExperimentConfig) -> ProtocolSplit:
    subjects = sorted({s.subject_id for s in samples})
    if not subjects:
        raise DataError("no samples")
    holdout_cfg = config["train.holdout_round"]
    master = config["seed"]
    heldout: dict[int, list[GazeSample]] = {}
    rest: list[GazeSample] = []
    for sid in subjects:
        subj = [s for s in samples if s.subject_id == sid]
        rounds = sorted({s.round_id for s in subj})
        if len(rounds) < 2:
            raise DataError(f"subject {sid} needs >= 2 rounds to hold one out")
        hr = holdout_round_of(rounds, holdout_cfg)
        heldout[sid] = [s for s in subj if s.round_id == hr]
        rest.extend(s for s in subj if s.round_id != hr)
    ratio = config["train.split_ratio"]
    pool_train, pool_val = split_train_val(rest, ratio,
                                           make_rng(master, TAG_SPLIT, 0))
    split = ProtocolSplit(heldout=heldout, train_pool=pool_train,
                          val_pool=pool_val)
    for sid in subjects:
        subj_rest = [s for s in rest if s.subject_id == sid]
        split.per_subject[sid] = split_train_val(
            subj_rest, ratio, make_rng(master, TAG_SPLIT, 1, sid))
    return split


@dataclass
class ProtocolResult:
    base: TrainResult
    per_subject: dict[int, TrainResult]
    split: ProtocolSplit
    reports: dict[int, EvalReport] = field(default_factory=dict)

    @property
    def subject_mean_errs(self) -> dict[int, float]:
        return {sid: r.mean_err_deg for sid, r in self.reports.items()}


def run_protocol(samples: list[GazeSample], config: ExperimentConfig,
                 evaluate_heldout: bool = True,
                 latency_iters: int = 100) -> ProtocolResult:
    """Pretrain across subjects, fine-tune per subject, evaluate held-out rounds."""
    split = partition_samples(samples, config)
    screen = config.screen()
    master = config["seed"]
    base_model = model_init(master)
    base = train(base_model, split.train_pool, split.val_pool,
                 config.train_config(seed=mix_seed(master, TAG_PRETRAIN)),
                 screen)
    per_subject: dict[int, TrainResult] = {}
    reports: dict[int, EvalReport] = {}
    for sid in sorted(split.heldout):
        tr, va = split.per_subject[sid]
        cfg_ft = config.train_config(seed=mix_seed(master, TAG_FINETUNE, sid),
                                     finetune=True)
        per_subject[sid] = fine_tune(base.model, tr, va, cfg_ft, screen)
        if evaluate_heldout:
            reports[sid] = evaluate(per_subject[sid].model, split.heldout[sid],
                                    screen, latency_iters=latency_iters)
    return ProtocolResult(base=base, per_subject=per_subject, split=split,
                          reports=reports)


def aggregate_per_point(reports: dict[int, EvalReport]) -> dict[tuple[int, int], tuple[float, int]]:
    """Count-weighted mean error per grid point across subjects."""
    acc: dict[tuple[int, int], tuple[float, int]] = {}
    for rep in reports.values():
        for key, (err, count) in rep.per_point.items():
            if key in acc:
                e0, c0 = acc[key]
                acc[key] = ((e0 * c0 + err * count) / (c0 + count), c0 + count)
            else:
                acc[key] = (err, count)
    return dict(sorted(acc.items()))
