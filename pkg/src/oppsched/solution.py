"""Common output record of the analytic queueing models."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class QModelSolution:
    mean_queue: float
    time_in_line: float
    service_time: float
    delay: float
    success_prob: float

    def as_dict(self) -> dict:
        return asdict(self)
