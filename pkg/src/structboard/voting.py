"""Per-case consensus rules over agent assessments.

Every rule keeps two aggregates: a decision score over the binary votes
(thresholded to produce the consensus decision) and a continuous score
over the raw risk scores (used for ranking metrics, which are degenerate
on binary votes alone).
"""

from __future__ import annotations

from dataclasses import dataclass

from .agents import AgentAssessment

RULE_NAMES = ("majority", "precision_weighted", "recall_weighted", "bprv")

DEFAULT_MAJORITY_THRESHOLD = 0.5
DEFAULT_PRECISION_THRESHOLD = 0.75
DEFAULT_RECALL_THRESHOLD = 0.25
DEFAULT_BPRV_THRESHOLD = 0.5


@dataclass(frozen=True)
class VoteResult:
    rule: str
    case_id: str
    decision_score: float
    risk_score: float
    decision: int
    threshold_used: float


def _single_case(assessments: list[AgentAssessment]) -> str:
    if not assessments:
        raise ValueError("no assessments to aggregate")
    cases = {a.case_id for a in assessments}
    if len(cases) != 1:
        raise ValueError(f"assessments span multiple cases: {sorted(cases)}")
    return assessments[0].case_id


def majority(
    assessments: list[AgentAssessment], threshold: float = DEFAULT_MAJORITY_THRESHOLD
) -> VoteResult:
    """Unweighted vote; an exact tie resolves negative."""
    case_id = _single_case(assessments)
    n = len(assessments)
    decision_score = sum(a.decision for a in assessments) / n
    risk_score = sum(a.risk_score for a in assessments) / n
    return VoteResult(
        rule="majority",
        case_id=case_id,
        decision_score=decision_score,
        risk_score=risk_score,
        decision=1 if decision_score > threshold else 0,
        threshold_used=threshold,
    )


def weighted_vote(
    assessments: list[AgentAssessment],
    weights: dict[str, float | None],
    threshold: float,
    rule: str = "precision_weighted",
) -> VoteResult:
    """Weight each agent's vote; undefined weights count as zero.

    Weights are normalized over the agents present, so the rule is invariant
    under positive rescaling. If every weight is zero or undefined the vote
    falls back to uniform weights.
    """
    case_id = _single_case(assessments)
    w = [max(0.0, weights.get(a.agent_id) or 0.0) for a in assessments]
    total = sum(w)
    if total == 0:
        w = [1.0] * len(assessments)
        total = float(len(assessments))
    decision_score = sum(wi * a.decision for wi, a in zip(w, assessments)) / total
    risk_score = sum(wi * a.risk_score for wi, a in zip(w, assessments)) / total
    return VoteResult(
        rule=rule,
        case_id=case_id,
        decision_score=decision_score,
        risk_score=risk_score,
        decision=1 if decision_score >= threshold else 0,
        threshold_used=threshold,
    )


def bprv(
    pwv: VoteResult, rwv: VoteResult, threshold: float = DEFAULT_BPRV_THRESHOLD
) -> VoteResult:
    """Midpoint of the precision- and recall-weighted votes."""
    if pwv.case_id != rwv.case_id:
        raise ValueError(f"case mismatch: {pwv.case_id!r} vs {rwv.case_id!r}")
    decision_score = (pwv.decision_score + rwv.decision_score) / 2.0
    risk_score = (pwv.risk_score + rwv.risk_score) / 2.0
    return VoteResult(
        rule="bprv",
        case_id=pwv.case_id,
        decision_score=decision_score,
        risk_score=risk_score,
        decision=1 if decision_score >= threshold else 0,
        threshold_used=threshold,
    )
