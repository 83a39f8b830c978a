"""Round orchestration: implicit round 0, explicit peer rounds, early stop.

Rounds are synchronous snapshots: in round n >= 1 every agent reads only
the sealed round n-1 assessments of its in-neighbors, never anything from
its own round, so case evaluation order cannot change any result. After
each explicit round the configured stop metric is compared against the
previous round and the run halts once the gain falls below Q.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .agents import (
    AgentAssessment,
    AgentFailure,
    AgentProfile,
    PeerContext,
    RetrievedNeighbor,
    nsf_assess,
    rag_retrieve,
    remote_assess,
    sf_assess,
)
from .dataset import Dataset, prevalence
from .evaluation import MetricRow, build_metric_row
from .mar import MarWriter
from .notes import Note, serialize
from .structure import StructureTemplate
from .voting import (
    DEFAULT_BPRV_THRESHOLD,
    DEFAULT_MAJORITY_THRESHOLD,
    DEFAULT_PRECISION_THRESHOLD,
    DEFAULT_RECALL_THRESHOLD,
    VoteResult,
    bprv,
    majority,
    weighted_vote,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundsConfig:
    q: float = 0.040  # early-stop threshold on the stop-metric gain
    max_rounds: int = 2
    stop_metric: str = "bprv:ap"
    lam: float = 0.5
    mu: float = 0.25
    decision_threshold: float = 0.5
    agent_seed: int = 0
    interaction_graph: dict[str, list[str]] | None = None  # agent -> in-neighbors
    majority_threshold: float = DEFAULT_MAJORITY_THRESHOLD
    precision_threshold: float = DEFAULT_PRECISION_THRESHOLD
    recall_threshold: float = DEFAULT_RECALL_THRESHOLD
    bprv_threshold: float = DEFAULT_BPRV_THRESHOLD
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.q < 0:
            raise ValueError("q must be >= 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 <= self.lam <= 1.0 or not 0.0 <= self.mu <= 1.0:
            raise ValueError("lambda and mu must be in [0, 1]")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class RoundState:
    """Sealed snapshot of one round; inputs for the next."""

    round: int
    assessments: dict[tuple[str, str], AgentAssessment]  # (agent_id, case_id)
    votes: dict[str, dict[str, VoteResult]]  # rule -> case_id
    metrics: dict[str, MetricRow]  # agent id or rule name
    metric_order: tuple[str, ...]
    labels: dict[str, int]
    failed: tuple[tuple[str, str], ...] = ()


def early_stop(p: float, o: float, q: float) -> bool:
    """Stop when the round-over-round gain is strictly below the threshold."""
    return p - o < q


def _complete_graph(agent_ids: list[str]) -> dict[str, list[str]]:
    return {a: [b for b in agent_ids if b != a] for a in agent_ids}


def stop_metric_value(state: RoundState, stop_metric: str) -> float:
    subject, _, metric = stop_metric.partition(":")
    row = state.metrics.get(subject)
    if row is None:
        raise ValueError(f"stop metric subject {subject!r} not present in round metrics")
    value = getattr(row, metric or "ap", None)
    if value is None:
        logger.warning("stop metric %s undefined in round %d; treating as 0", stop_metric, state.round)
        return 0.0
    return float(value)


def _assess_one(
    profile: AgentProfile,
    record,
    note: Note,
    template: StructureTemplate,
    rag: RetrievedNeighbor | None,
    peers: PeerContext | None,
    cfg: RoundsConfig,
    train_prevalence: float,
    round_index: int,
) -> AgentAssessment:
    if profile.kind == "sf_mock":
        return sf_assess(
            profile, record, note, template, rag=rag, peers=peers,
            lam=cfg.lam, mu=cfg.mu, round_index=round_index,
            threshold=cfg.decision_threshold,
        )
    if profile.kind == "nsf_mock":
        return nsf_assess(
            profile, record, note, train_prevalence, rag=rag, peers=peers,
            lam=cfg.lam, mu=cfg.mu, seed=cfg.agent_seed, round_index=round_index,
            threshold=cfg.decision_threshold, outcome_name=template.outcome_name,
        )
    return remote_assess(
        profile, record, note, template=template, rag=rag, peers=peers,
        round_index=round_index, threshold=cfg.decision_threshold,
    )


def run_rounds(
    agents: list[AgentProfile],
    test: Dataset,
    template: StructureTemplate,
    train: Dataset,
    cfg: RoundsConfig,
    mar: MarWriter | None = None,
) -> list[RoundState]:
    """Run round 0 plus explicit rounds until early stop or max_rounds.

    Every assessment is appended to the record writer as its round is
    sealed. An agent failing a case drops that case from the agent's
    metrics and from that case's votes only; a case failed by every agent
    is dropped with a warning.
    """
    if not agents:
        raise ValueError("at least one agent is required")
    if cfg.max_rounds > 1 and len(agents) < 2:
        raise ValueError("explicit rounds need at least two agents")
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValueError("agent ids must be unique")

    cases = test.subset("test") if test.split_tags else list(test.records)
    if not cases:
        raise ValueError("no test cases to assess")
    train_records = train.subset("train") if train.split_tags else list(train.records)
    train_for_rag = Dataset(schema=train.schema, records=train_records)
    train_prev = prevalence(train_records)

    notes = {rec.id: serialize(rec, test.schema) for rec in cases}
    neighbors: dict[str, RetrievedNeighbor] = {}
    if any(a.uses_rag for a in agents):
        neighbors = {rec.id: rag_retrieve(rec, train_for_rag) for rec in cases}

    graph = cfg.interaction_graph if cfg.interaction_graph is not None else _complete_graph(ids)
    mentioned = set(graph) | {a for targets in graph.values() for a in targets}
    unknown = mentioned - set(ids)
    if unknown:
        raise ValueError(f"interaction graph references unknown agents: {sorted(unknown)}")

    precision_weights = {a.id: a.valid_precision for a in agents}
    recall_weights = {a.id: a.valid_recall for a in agents}
    labels = {rec.id: int(rec.label) for rec in cases}

    states: list[RoundState] = []
    for round_index in range(cfg.max_rounds):
        previous = states[-1] if states else None
        already_failed = set(previous.failed) if previous is not None else set()
        tasks = []
        for profile in agents:
            for rec in cases:
                if (profile.id, rec.id) in already_failed:
                    # a permanently failed (agent, case) pair stays failed
                    continue
                peers = None
                if previous is not None:
                    peer_assessments = tuple(
                        previous.assessments[(nb, rec.id)]
                        for nb in graph.get(profile.id, [])
                        if (nb, rec.id) in previous.assessments
                    )
                    if peer_assessments:
                        peers = PeerContext(assessments=peer_assessments)
                rag = neighbors.get(rec.id) if profile.uses_rag else None
                tasks.append((profile, rec, peers, rag))

        def evaluate(task):
            profile, rec, peers, rag = task
            try:
                return (profile.id, rec.id), _assess_one(
                    profile, rec, notes[rec.id], template, rag, peers,
                    cfg, train_prev, round_index,
                ), None
            except AgentFailure as exc:
                return (profile.id, rec.id), None, exc

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(evaluate, tasks))
        else:
            results = [evaluate(t) for t in tasks]

        assessments: dict[tuple[str, str], AgentAssessment] = {}
        failed: list[tuple[str, str]] = []
        for key, assessment, error in results:
            if error is not None:
                logger.warning("agent %s failed case %s in round %d: %s", key[0], key[1], round_index, error)
                failed.append(key)
            else:
                assessments[key] = assessment
        if previous is not None:
            failed.extend(previous.failed)

        covered_cases = [rec for rec in cases if any((a, rec.id) in assessments for a in ids)]
        covered_ids = {r.id for r in covered_cases}
        dropped = [rec.id for rec in cases if rec.id not in covered_ids]
        if dropped:
            logger.warning("round %d: cases failed by every agent were dropped: %s", round_index, dropped)
        if not covered_cases:
            raise RuntimeError(f"round {round_index}: every agent failed every case")

        votes: dict[str, dict[str, VoteResult]] = {r: {} for r in ("majority", "precision_weighted", "recall_weighted", "bprv")}
        for rec in covered_cases:
            case_assessments = [assessments[(a, rec.id)] for a in ids if (a, rec.id) in assessments]
            votes["majority"][rec.id] = majority(case_assessments, cfg.majority_threshold)
            pwv = weighted_vote(case_assessments, precision_weights, cfg.precision_threshold, "precision_weighted")
            rwv = weighted_vote(case_assessments, recall_weights, cfg.recall_threshold, "recall_weighted")
            votes["precision_weighted"][rec.id] = pwv
            votes["recall_weighted"][rec.id] = rwv
            votes["bprv"][rec.id] = bprv(pwv, rwv, cfg.bprv_threshold)

        metrics: dict[str, MetricRow] = {}
        order: list[str] = []
        for profile in agents:
            agent_cases = [rec for rec in cases if (profile.id, rec.id) in assessments]
            if not agent_cases:
                continue
            scores = [assessments[(profile.id, rec.id)].risk_score for rec in agent_cases]
            decisions = [assessments[(profile.id, rec.id)].decision for rec in agent_cases]
            metrics[profile.id] = build_metric_row(
                profile.id, round_index, scores, decisions, [labels[rec.id] for rec in agent_cases]
            )
            order.append(profile.id)
        for rule, rule_votes in votes.items():
            case_ids = [rec.id for rec in covered_cases]
            metrics[rule] = build_metric_row(
                rule,
                round_index,
                [rule_votes[c].risk_score for c in case_ids],
                [rule_votes[c].decision for c in case_ids],
                [labels[c] for c in case_ids],
            )
            order.append(rule)

        state = RoundState(
            round=round_index,
            assessments=assessments,
            votes=votes,
            metrics=metrics,
            metric_order=tuple(order),
            labels=dict(labels),
            failed=tuple(sorted(set(failed))),
        )
        states.append(state)

        if mar is not None:
            for profile in agents:
                for rec in cases:
                    assessment = assessments.get((profile.id, rec.id))
                    if assessment is not None:
                        mar.record(assessment, profile.agent_name)

        if round_index >= 1:
            p = stop_metric_value(state, cfg.stop_metric)
            o = stop_metric_value(states[round_index - 1], cfg.stop_metric)
            if early_stop(p, o, cfg.q):
                logger.info(
                    "early stop after round %d: %s gain %.4f < %.4f",
                    round_index, cfg.stop_metric, p - o, cfg.q,
                )
                break
    return states
