"""Cohort splits by admission time.

Three families: a held-out partition taking the most recent tenth of
admissions, five overlapping temporal windows whose final fifth supplies
validation and test patients, and a seeded random 8:1:1 partition.
Temporal plans guarantee every training admission precedes every
validation/test admission of the same plan.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from .. import core

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25


@dataclass
class SplitConfig:
    heldout_frac: float = 0.1
    n_windows: int = 5
    window_years: float = 5.0
    shift_years: float = 0.5
    eval_frac_of_window: float = 0.2
    random_train_frac: float = 0.8
    random_val_frac: float = 0.1
    seed: int = 0


@dataclass
class SplitPlan:
    name: str
    train: list[str]
    val: list[str]
    test: list[str]

    def all_ids(self) -> list[str]:
        return self.train + self.val + self.test


def _alternate(ordered: list[str]) -> tuple[list[str], list[str]]:
    return ordered[::2], ordered[1::2]


def make_splits(statics: dict[str, core.PatientStatics],
                config: SplitConfig) -> dict[str, SplitPlan]:
    order = sorted(statics, key=lambda p: (statics[p].admission_time, p))
    adm = {p: statics[p].admission_time for p in order}
    n = len(order)
    if n < 3:
        raise ValueError("need at least 3 patients to split")

    n_held = math.ceil(config.heldout_frac * n)
    held = order[n - n_held:]
    dev = order[:n - n_held]
    held_val, held_test = _alternate(held)
    plans = {"held_out": SplitPlan("held_out", list(dev), held_val, held_test)}

    d0, d1 = adm[dev[0]], adm[dev[-1]]
    span_days = (d1 - d0).total_seconds() / 86400.0
    window_days = config.window_years * DAYS_PER_YEAR
    shift_days = config.shift_years * DAYS_PER_YEAR
    needed = window_days + (config.n_windows - 1) * shift_days
    if span_days < needed:
        scale = span_days / needed if needed > 0 else 0.0
        window_days *= scale
        shift_days *= scale
        logger.warning(
            "cohort spans %.0f days; compressing temporal windows to %.0f days",
            span_days, window_days)

    for k in range(config.n_windows):
        end = d1 - timedelta(days=(config.n_windows - 1 - k) * shift_days)
        start = end - timedelta(days=window_days)
        cut = end - timedelta(days=config.eval_frac_of_window * window_days)
        members = [p for p in dev if start <= adm[p] <= end]
        train = [p for p in members if adm[p] <= cut]
        evals = [p for p in members if adm[p] > cut]
        val, test = _alternate(evals)
        plans[f"temporal_{k}"] = SplitPlan(f"temporal_{k}", train, val, test)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3001]))
    shuffled = [sorted(statics)[i] for i in rng.permutation(n)]
    n_tr = int(config.random_train_frac * n)
    n_val = int(config.random_val_frac * n)
    plans["random"] = SplitPlan(
        "random", shuffled[:n_tr], shuffled[n_tr:n_tr + n_val],
        shuffled[n_tr + n_val:])
    return plans


def write_splits(plans: dict[str, SplitPlan], path: str) -> None:
    with open(path, "w") as fh:
        json.dump({name: {"train": p.train, "val": p.val, "test": p.test}
                   for name, p in sorted(plans.items())}, fh, indent=1)


def load_splits(path: str) -> dict[str, SplitPlan]:
    with open(path) as fh:
        raw = json.load(fh)
    return {name: SplitPlan(name, spec["train"], spec["val"], spec["test"])
            for name, spec in raw.items()}
