"""Prosocial gating: the run is permitted only if it addresses enough issues.

Each issue flag contributes value 0.99 when asserted and 0.01 when not,
weighted by its share. Weights must sum to 1 within a small tolerance so
that three equal weights of 0.333 are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

TRUE_VALUE = 0.99
FALSE_VALUE = 0.01
WEIGHT_SUM_TOLERANCE = 0.01
DEFAULT_THRESHOLD = 0.336


@dataclass(frozen=True)
class IssueFlag:
    name: str
    asserted: bool
    weight: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"flag {self.name!r}: weight must be in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class ProsocialDecision:
    pscore: float
    threshold: float
    permitted: bool

    def display_score(self) -> str:
        return f"{self.pscore:.3f}"


def pscore(flags: list[IssueFlag]) -> float:
    """Weighted sum of issue values (0.99 asserted, 0.01 otherwise)."""
    if not flags:
        raise ValueError("at least one issue flag is required")
    total = sum(f.weight for f in flags)
    if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ValueError(f"flag weights must sum to 1 (+/- {WEIGHT_SUM_TOLERANCE}), got {total}")
    return sum((TRUE_VALUE if f.asserted else FALSE_VALUE) * f.weight for f in flags)


def gate(flags: list[IssueFlag], threshold: float = DEFAULT_THRESHOLD) -> ProsocialDecision:
    """Permit the run iff the prosocial score reaches the threshold.

    Comparison happens at full float precision; only display is rounded.
    """
    score = pscore(flags)
    return ProsocialDecision(pscore=score, threshold=threshold, permitted=score >= threshold)
