"""Automated trajectory quality gates.

Three checks run on every trajectory: no single key held for more than 60%
of the frames, never more than six simultaneous keys, and a minimum level
of interaction (at least one action change per 100 frames). A fourth,
likelihood-based check is pluggable: pass any scoring callback and a
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .keys import KEY_NAMES
from .trajectory import Trajectory

MAX_HOLD_FRACTION = 0.6
MAX_SIMULTANEOUS_KEYS = 6
MIN_CHANGES_PER_100_FRAMES = 1.0


@dataclass(frozen=True)
class QualityReport:
    hold_violation: bool
    simultaneity_violation: bool
    interaction_violation: bool
    score_violation: bool
    max_hold_fraction: float
    worst_key: Optional[str]
    max_simultaneous: int
    changes_per_100: float
    score: Optional[float] = None

    @property
    def passed(self) -> bool:
        return not (
            self.hold_violation
            or self.simultaneity_violation
            or self.interaction_violation
            or self.score_violation
        )


def quality_filter(
    traj: Trajectory,
    score_fn: Optional[Callable[[Trajectory], float]] = None,
    score_threshold: float = float("-inf"),
) -> QualityReport:
    """Pure function of the trajectory (and optional scoring hook)."""
    n = len(traj)
    if n == 0:
        raise ValueError("trajectory is empty")

    hold_counts: dict = {}
    max_simultaneous = 0
    for a in traj.actions:
        max_simultaneous = max(max_simultaneous, len(a.keys))
        for k in a.keys:
            hold_counts[k] = hold_counts.get(k, 0) + 1

    worst_key, worst_count = None, 0
    for k, count in hold_counts.items():
        if count > worst_count:
            worst_key, worst_count = k, count
    max_hold_fraction = worst_count / n

    changes = sum(
        1 for i in range(1, n) if traj.actions[i] != traj.actions[i - 1]
    )
    changes_per_100 = 100.0 * changes / n

    score = score_fn(traj) if score_fn is not None else None

    return QualityReport(
        hold_violation=max_hold_fraction > MAX_HOLD_FRACTION,
        simultaneity_violation=max_simultaneous > MAX_SIMULTANEOUS_KEYS,
        interaction_violation=changes_per_100 < MIN_CHANGES_PER_100_FRAMES,
        score_violation=score is not None and score < score_threshold,
        max_hold_fraction=max_hold_fraction,
        worst_key=KEY_NAMES.get(worst_key) if worst_key is not None else None,
        max_simultaneous=max_simultaneous,
        changes_per_100=changes_per_100,
        score=score,
    )
