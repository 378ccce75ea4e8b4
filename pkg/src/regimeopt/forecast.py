"""State labeling by end-of-train prevalence.

`sparse0` is the state most abundant in the trailing prevalence window of the
training labels; it is the forecast dominant state for the test horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .errors import ValidationError


@dataclass(frozen=True)
class StateLabeling:
    sparse0: int
    sparse1: int
    prevalence_window: int
    counts: tuple  # occurrences of state 0 and state 1 inside the window


def _labels(assignment) -> np.ndarray:
    if isinstance(assignment, ClusterAssignment):
        if assignment.n_states != 2:
            raise ValidationError("state labeling supports exactly 2 states")
        return assignment.labels
    return np.asarray(assignment)


def label_states(assignment, prevalence_window: int = 20) -> StateLabeling:
    """Majority state in the final window becomes sparse0; ties go to the
    state occupying the final training day."""
    labels = _labels(assignment)
    if set(np.unique(labels)) - {0, 1}:
        raise ValidationError("state labeling supports exactly 2 states")
    if prevalence_window < 1 or prevalence_window > len(labels):
        raise ValidationError(
            f"prevalence window {prevalence_window} outside train length {len(labels)}"
        )
    tail = labels[-prevalence_window:]
    counts = (int((tail == 0).sum()), int((tail == 1).sum()))
    if counts[0] > counts[1]:
        sparse0 = 0
    elif counts[1] > counts[0]:
        sparse0 = 1
    else:
        sparse0 = int(labels[-1])
    return StateLabeling(
        sparse0=sparse0,
        sparse1=1 - sparse0,
        prevalence_window=prevalence_window,
        counts=counts,
    )


def prevalence_grid_search(assignment, windows) -> dict[int, StateLabeling]:
    """Labeling per candidate prevalence window; pure reporting, no selection."""
    return {int(w): label_states(assignment, int(w)) for w in windows}
