"""Diagnostic agents: deterministic mocks and a remote chat-endpoint client.

Structure-following mocks score a case from the template clauses it
matches; non-structure-following mocks hover around the training
prevalence. Both apply the same optional retrieval blend and peer-belief
update, so round dynamics can be exercised without any model backend.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass

from .dataset import Dataset, PatientRecord
from .notes import Note, serialize, token_count
from .structure import StructureTemplate

POSITIVE_CODE = "1.01"
NEGATIVE_CODE = "0.00"
CODE_ALIASES = {"I.01": POSITIVE_CODE}  # typographic variant accepted on input
KNOWN_CODES = frozenset({POSITIVE_CODE, NEGATIVE_CODE})

AGENT_KINDS = ("sf_mock", "nsf_mock", "remote")

DEFAULT_DECISION_THRESHOLD = 0.5

# Synthetic documentation time for mock agents: wall clock would break
# byte-for-byte reproducibility of the records.
_SECONDS_PER_TOKEN = 0.02


class AgentFailure(RuntimeError):
    """An agent could not produce an assessment for a case."""


class ReplyParseError(AgentFailure):
    pass


class ReplyValidationError(AgentFailure):
    pass


class TransportFailure(AgentFailure):
    pass


def normalize_code(code: str) -> str:
    code = CODE_ALIASES.get(code, code)
    if code not in KNOWN_CODES:
        raise ValueError(f"unknown diagnosis code {code!r}")
    return code


def bin_confidence(c: float) -> str:
    """Map a numeric confidence to Low / Medium / High after 2-decimal rounding."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {c}")
    cents = int(round(c * 100))
    if cents <= 33:
        return "Low"
    if cents <= 67:
        return "Medium"
    return "High"


@dataclass(frozen=True)
class EndpointConfig:
    """Chat-completion endpoint settings for remote agents."""

    url: str
    model: str
    api_key_env: str = ""
    timeout: float = 30.0
    retries: int = 2
    retry_wait: float = 1.0
    temperature: float = 0.0
    concurrency: int = 4


@dataclass(frozen=True)
class AgentProfile:
    id: str
    agent_name: str
    kind: str
    uses_rag: bool = False
    bias: float = 0.0  # score offset (pre-sigmoid) for sf mocks
    gain: float = 4.0  # clause gain for sf mocks
    noise: float = 0.1  # per-case perturbation half-width for nsf mocks
    valid_precision: float | None = None
    valid_recall: float | None = None
    endpoint: EndpointConfig | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        for label, value in (("valid_precision", self.valid_precision), ("valid_recall", self.valid_recall)):
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{label} must be in [0, 1], got {value}")
        if self.kind == "remote" and self.endpoint is None:
            raise ValueError(f"remote agent {self.id!r} needs an endpoint config")


@dataclass(frozen=True)
class AgentAssessment:
    agent_id: str
    case_id: str
    round: int
    diagnosis_code: str
    decision: int
    risk_score: float
    confidence: float
    confidence_bin: str
    reasoning: str
    doc_tokens: int
    doc_seconds: float


@dataclass(frozen=True)
class PeerContext:
    """Sealed previous-round assessments from the agent's in-neighbors."""

    assessments: tuple[AgentAssessment, ...]

    def __post_init__(self) -> None:
        if not self.assessments:
            raise ValueError("peer context must contain at least one assessment")
        rounds = {a.round for a in self.assessments}
        if len(rounds) != 1:
            raise ValueError(f"peer assessments span multiple rounds: {sorted(rounds)}")


@dataclass(frozen=True)
class RetrievedNeighbor:
    note: Note
    label: int
    distance: int
    neighbor_id: str


def rag_retrieve(record: PatientRecord, train: Dataset) -> RetrievedNeighbor:
    """Nearest training note by Hamming distance over bins; ties go to the smallest id."""
    if not train.records:
        raise ValueError("cannot retrieve from an empty training set")
    feature_names = [f.name for f in train.schema]
    best: PatientRecord | None = None
    best_dist = -1
    for cand in train.records:
        dist = sum(1 for name in feature_names if cand.bins[name] != record.bins[name])
        if best is None or dist < best_dist or (dist == best_dist and cand.id < best.id):
            best, best_dist = cand, dist
    if best.label is None:
        raise ValueError(f"training record {best.id!r} is unlabeled")
    return RetrievedNeighbor(
        note=serialize(best, train.schema),
        label=int(best.label),
        distance=best_dist,
        neighbor_id=best.id,
    )


def peer_update(own_score: float, peers: PeerContext, lam: float) -> float:
    """Blend the agent's score with the confidence-weighted peer aggregate."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    total_conf = sum(p.confidence for p in peers.assessments)
    if total_conf > 0:
        aggregate = sum(p.confidence * p.risk_score for p in peers.assessments) / total_conf
    else:
        aggregate = sum(p.risk_score for p in peers.assessments) / len(peers.assessments)
    return lam * own_score + (1.0 - lam) * aggregate


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _finish(
    profile: AgentProfile,
    record: PatientRecord,
    round_index: int,
    score: float,
    reasoning: str,
    threshold: float,
    doc_seconds: float | None = None,
) -> AgentAssessment:
    score = min(1.0, max(0.0, score))
    decision = 1 if score >= threshold else 0
    confidence = abs(2.0 * score - 1.0)
    tokens = token_count(reasoning)
    return AgentAssessment(
        agent_id=profile.id,
        case_id=record.id,
        round=round_index,
        diagnosis_code=POSITIVE_CODE if decision else NEGATIVE_CODE,
        decision=decision,
        risk_score=score,
        confidence=confidence,
        confidence_bin=bin_confidence(confidence),
        reasoning=reasoning,
        doc_tokens=tokens,
        doc_seconds=round(tokens * _SECONDS_PER_TOKEN, 3) if doc_seconds is None else doc_seconds,
    )


def _context_sentences(
    rag: RetrievedNeighbor | None, peers: PeerContext | None, outcome: str
) -> list[str]:
    out = []
    if rag is not None:
        polarity = "positive" if rag.label else "negative"
        out.append(
            f"A similar previous case was {polarity} for {outcome} at feature distance {rag.distance}."
        )
    if peers is not None:
        avg = sum(p.risk_score for p in peers.assessments) / len(peers.assessments)
        out.append(f"Consulted {len(peers.assessments)} peer assessments with average risk {avg:.2f}.")
    return out


def _verdict_sentence(decision: int, outcome: str) -> str:
    if decision:
        return (
            f"The combination of indicators suggests an elevated likelihood of {outcome} "
            "within the prediction horizon."
        )
    return f"The overall pattern suggests a low likelihood of {outcome} within the prediction horizon."


def sf_assess(
    profile: AgentProfile,
    record: PatientRecord,
    note: Note,
    template: StructureTemplate,
    rag: RetrievedNeighbor | None = None,
    peers: PeerContext | None = None,
    lam: float = 0.5,
    mu: float = 0.25,
    round_index: int = 0,
    threshold: float = DEFAULT_DECISION_THRESHOLD,
) -> AgentAssessment:
    """Structure-following mock: score from matched template clauses.

    Base score is sigmoid(bias + gain * sum of matched-clause terms), where a
    clause at rank r out of k contributes +/- (k - r + 1) / k depending on its
    direction. Retrieval then blends mu of the neighbor label in; peers then
    apply the belief update with weight lambda on the agent's own score.
    """
    if not template.clauses:
        raise ValueError("structure template has no clauses")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    k = len(template.clauses)
    matched = [c for c in template.clauses if record.bins.get(c.feature) == c.bin]
    signal = sum(
        (1.0 if c.direction == "increased" else -1.0) * (k - c.rank + 1) / k for c in matched
    )
    score = _sigmoid(profile.bias + profile.gain * signal)
    if rag is not None:
        score = (1.0 - mu) * score + mu * rag.label
    if peers is not None:
        score = peer_update(score, peers, lam)

    outcome = template.outcome_name
    sentences = []
    for c in matched:
        direction = "increased" if c.direction == "increased" else "decreased"
        sentences.append(
            f"The patient has {c.display_name} in bin {c.bin}, indicating {direction} risk."
        )
    if not matched:
        sentences.append("No ranked indicators are present for this patient.")
    sentences.extend(_context_sentences(rag, peers, outcome))
    decision = 1 if min(1.0, max(0.0, score)) >= threshold else 0
    sentences.append(_verdict_sentence(decision, outcome))
    return _finish(profile, record, round_index, score, " ".join(sentences), threshold)


def nsf_assess(
    profile: AgentProfile,
    record: PatientRecord,
    note: Note,
    prevalence: float,
    rag: RetrievedNeighbor | None = None,
    peers: PeerContext | None = None,
    lam: float = 0.5,
    mu: float = 0.25,
    seed: int = 0,
    round_index: int = 0,
    threshold: float = DEFAULT_DECISION_THRESHOLD,
    outcome_name: str = "the outcome",
) -> AgentAssessment:
    """Non-structure-following mock: prevalence plus seeded per-case noise."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    rng = random.Random(f"{seed}:{profile.id}:{record.id}")
    score = prevalence + rng.uniform(-profile.noise, profile.noise)
    score = min(1.0, max(0.0, score))
    if rag is not None:
        score = (1.0 - mu) * score + mu * rag.label
    if peers is not None:
        score = peer_update(score, peers, lam)

    sentences = [
        "No global risk structure was applied; the estimate reflects the population base rate."
    ]
    sentences.extend(_context_sentences(rag, peers, outcome_name))
    decision = 1 if min(1.0, max(0.0, score)) >= threshold else 0
    sentences.append(_verdict_sentence(decision, outcome_name))
    return _finish(profile, record, round_index, score, " ".join(sentences), threshold)


# --- remote chat-endpoint agent ---------------------------------------------

_REQUIRED_REPLY_FIELDS = ("diagnosis", "risk_score", "confidence", "reasoning")

_endpoint_limits: dict[str, threading.BoundedSemaphore] = {}
_endpoint_limits_lock = threading.Lock()


def _endpoint_semaphore(cfg: EndpointConfig) -> threading.BoundedSemaphore:
    with _endpoint_limits_lock:
        sem = _endpoint_limits.get(cfg.url)
        if sem is None:
            sem = threading.BoundedSemaphore(max(1, cfg.concurrency))
            _endpoint_limits[cfg.url] = sem
        return sem


def build_prompt(
    note: Note,
    template: StructureTemplate | None,
    rag: RetrievedNeighbor | None = None,
    peers: PeerContext | None = None,
) -> list[dict[str, str]]:
    """Assemble chat messages for a remote diagnostic agent."""
    system = (
        "You are a clinical diagnostic agent. Reply with a single JSON object "
        'of the form {"diagnosis": "1.01" or "0.00", "risk_score": <0..1>, '
        '"confidence": <0..1>, "reasoning": "<free text>"}.'
    )
    parts = [f"Patient note: {note.text}"]
    if template is not None:
        parts.append(f"Global risk structure: {template.rendered_text}")
    if rag is not None:
        polarity = "positive" if rag.label else "negative"
        parts.append(f"Similar previous case ({polarity} outcome): {rag.note.text}")
    if peers is not None:
        for p in peers.assessments:
            parts.append(
                f"Peer {p.agent_id} (round {p.round}) risk {p.risk_score:.3f}, "
                f"confidence {p.confidence:.3f}: {p.reasoning}"
            )
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": "\n\n".join(parts)},
    ]


def _default_transport(url: str, payload: dict, headers: dict, timeout: float):
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    return resp.status_code, resp.text


def _extract_reply_object(content: str) -> dict:
    decoder = json.JSONDecoder()
    idx = content.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(content, idx)
        except json.JSONDecodeError:
            idx = content.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = content.find("{", idx + 1)
    raise ReplyParseError("reply contains no parsable JSON object")


def parse_reply(content: str) -> dict:
    """Validate the model reply and return its normalized fields."""
    obj = _extract_reply_object(content)
    missing = [f for f in _REQUIRED_REPLY_FIELDS if f not in obj]
    if missing:
        raise ReplyParseError(f"reply object is missing fields {missing}")
    try:
        code = normalize_code(str(obj["diagnosis"]))
    except ValueError as exc:
        raise ReplyValidationError(str(exc)) from exc
    try:
        risk = float(obj["risk_score"])
        confidence = float(obj["confidence"])
    except (TypeError, ValueError) as exc:
        raise ReplyValidationError(f"non-numeric score fields: {exc}") from exc
    if not 0.0 <= risk <= 1.0:
        raise ReplyValidationError(f"risk_score out of range: {risk}")
    if not 0.0 <= confidence <= 1.0:
        raise ReplyValidationError(f"confidence out of range: {confidence}")
    reasoning = str(obj["reasoning"])
    return {"diagnosis": code, "risk_score": risk, "confidence": confidence, "reasoning": reasoning}


def remote_assess(
    profile: AgentProfile,
    record: PatientRecord,
    note: Note,
    template: StructureTemplate | None = None,
    rag: RetrievedNeighbor | None = None,
    peers: PeerContext | None = None,
    round_index: int = 0,
    threshold: float = DEFAULT_DECISION_THRESHOLD,
    transport=None,
) -> AgentAssessment:
    """Query a chat-completion endpoint and turn the reply into an assessment.

    Transport errors and 429/5xx responses are retried up to the configured
    count; anything else (unparsable or invalid replies included) fails the
    case for this agent.
    """
    cfg = profile.endpoint
    if cfg is None:
        raise ValueError(f"agent {profile.id!r} has no endpoint configured")
    transport = transport or _default_transport
    payload = {
        "model": cfg.model,
        "messages": build_prompt(note, template, rag, peers),
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "") if cfg.api_key_env else ""
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    sem = _endpoint_semaphore(cfg)
    last_error: Exception | None = None
    started = time.perf_counter()
    for attempt in range(cfg.retries + 1):
        if attempt and cfg.retry_wait > 0:
            time.sleep(cfg.retry_wait * attempt)
        try:
            with sem:
                status, body = transport(cfg.url, payload, headers, cfg.timeout)
        except Exception as exc:  # connection errors, timeouts
            last_error = exc
            continue
        if status in (429, 500, 502, 503, 504):
            last_error = TransportFailure(f"endpoint returned HTTP {status}")
            continue
        if status != 200:
            raise TransportFailure(f"endpoint returned HTTP {status}: {body[:200]}")
        try:
            reply = json.loads(body)
            content = reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise ReplyParseError(f"malformed completion envelope: {exc}") from exc
        fields = parse_reply(content)
        score = fields["risk_score"]
        decision = 1 if score >= threshold else 0
        return AgentAssessment(
            agent_id=profile.id,
            case_id=record.id,
            round=round_index,
            diagnosis_code=POSITIVE_CODE if decision else NEGATIVE_CODE,
            decision=decision,
            risk_score=score,
            confidence=fields["confidence"],
            confidence_bin=bin_confidence(fields["confidence"]),
            reasoning=fields["reasoning"],
            doc_tokens=token_count(fields["reasoning"]),
            doc_seconds=time.perf_counter() - started,
        )
    raise TransportFailure(
        f"agent {profile.id!r} failed on case {record.id!r} after {cfg.retries + 1} attempts: {last_error}"
    )
