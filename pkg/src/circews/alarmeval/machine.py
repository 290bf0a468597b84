"""Online alarm policy over a scored stay.

Scanning the grid in time order, an alarm fires at a stable point whose
score reaches the threshold, unless the machine is silenced.  Every alarm
silences the machine for silence_min minutes.  When a deterioration
episode ends during a silenced period, the remaining silence is replaced
by a short post-episode timer so the machine can re-arm for the next
episode instead of sleeping through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import GRID_STEP_MIN
from ..endpoint import FAILURE, STABLE


@dataclass
class AlarmPolicy:
    threshold: float
    silence_min: float = 30.0
    reset_min: float = 25.0


def run_alarms(states: np.ndarray, scores: np.ndarray,
               policy: AlarmPolicy) -> np.ndarray:
    """Grid indices where alarms fire.  scores may be NaN wherever the
    model produced no score; those points never alarm."""
    silenced_until = -np.inf
    alarms: list[int] = []
    for i in range(states.shape[0]):
        t = i * GRID_STEP_MIN
        if i > 0 and states[i - 1] == FAILURE and states[i] != FAILURE:
            t_end = (i - 1) * GRID_STEP_MIN
            if t_end < silenced_until:
                silenced_until = t_end + policy.reset_min
        if (states[i] == STABLE and np.isfinite(scores[i])
                and scores[i] >= policy.threshold and t >= silenced_until):
            alarms.append(i)
            silenced_until = t + policy.silence_min
    return np.asarray(alarms, dtype=np.int64)


def alarms_for_cohort(states: dict[str, np.ndarray],
                      scores: dict[str, np.ndarray],
                      policy: AlarmPolicy) -> dict[str, np.ndarray]:
    return {pid: run_alarms(states[pid], scores[pid], policy)
            for pid in sorted(states)}
