from .machine import AlarmPolicy, run_alarms
from .metrics import (EventScore, auroc, average_precision,
                      prevalence_scaling, score_events)

__all__ = [
    "AlarmPolicy", "run_alarms",
    "EventScore", "auroc", "average_precision", "prevalence_scaling",
    "score_events",
]
