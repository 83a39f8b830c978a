"""Append-only multiagent records and their summaries.

Each record captures one agent's output for one case in one round using
the agent-based-terms fields (AN, AD, ADR, ACL, ADL, ATSD). Storage is
line-delimited JSON per run so the log stays human-auditable and can be
streamed; prior lines are never rewritten.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .agents import AgentAssessment, bin_confidence, normalize_code

DEFAULT_CODE_TABLE = {
    "1.01": {"icd9": "589.4", "icd10": "N17.9", "snomed": "140031000119103"},
}

CODE_TARGETS = ("icd9", "icd10", "snomed")


@dataclass(frozen=True)
class MAREntry:
    run_id: str
    round: int
    case_id: str
    an: str  # agent name
    ad: str  # diagnosis code
    adr: str  # diagnostic reasoning
    acl_label: str
    acl_numeric: float
    adl: int  # documentation length, tokens
    atsd: float  # documentation time, seconds
    ts: datetime


def validate_entry(entry: MAREntry) -> None:
    code = normalize_code(entry.ad)
    if code != entry.ad:
        raise ValueError(f"diagnosis code {entry.ad!r} must be stored normalized as {code!r}")
    expected = bin_confidence(entry.acl_numeric)
    if entry.acl_label != expected:
        raise ValueError(
            f"confidence label {entry.acl_label!r} inconsistent with numeric "
            f"{entry.acl_numeric} (expected {expected!r})"
        )
    if entry.adl < 0:
        raise ValueError(f"adl must be >= 0, got {entry.adl}")
    if entry.atsd < 0:
        raise ValueError(f"atsd must be >= 0, got {entry.atsd}")
    if entry.ts.tzinfo is None:
        raise ValueError("timestamp must be timezone-aware UTC")


def entry_to_json(entry: MAREntry) -> str:
    return json.dumps(
        {
            "run_id": entry.run_id,
            "round": entry.round,
            "case_id": entry.case_id,
            "an": entry.an,
            "ad": entry.ad,
            "adr": entry.adr,
            "acl_label": entry.acl_label,
            "acl_numeric": entry.acl_numeric,
            "adl": entry.adl,
            "atsd": entry.atsd,
            "ts": entry.ts.astimezone(timezone.utc).isoformat(),
        },
        ensure_ascii=False,
    )


def entry_from_json(line: str) -> MAREntry:
    doc = json.loads(line)
    return MAREntry(
        run_id=doc["run_id"],
        round=doc["round"],
        case_id=doc["case_id"],
        an=doc["an"],
        ad=doc["ad"],
        adr=doc["adr"],
        acl_label=doc["acl_label"],
        acl_numeric=doc["acl_numeric"],
        adl=doc["adl"],
        atsd=doc["atsd"],
        ts=datetime.fromisoformat(doc["ts"]),
    )


class MarStore:
    """Append-only JSONL store for one run's records."""

    def __init__(self, path: str | Path, sync: bool = True):
        self.path = Path(path)
        self.sync = sync
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, entry: MAREntry) -> None:
        """Append one record; it is on disk before this returns."""
        validate_entry(entry)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(entry_to_json(entry) + "\n")
            fh.flush()
            if self.sync:
                os.fsync(fh.fileno())

    def append_many(self, entries: Iterable[MAREntry]) -> int:
        """Append a batch with a single durability barrier at the end."""
        count = 0
        with open(self.path, "a", encoding="utf-8") as fh:
            for entry in entries:
                validate_entry(entry)
                fh.write(entry_to_json(entry) + "\n")
                count += 1
            fh.flush()
            if self.sync:
                os.fsync(fh.fileno())
        return count

    def read_all(self) -> list[MAREntry]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [entry_from_json(line) for line in fh if line.strip()]


class MarWriter:
    """Builds and appends records for a run; timestamps come from the clock."""

    def __init__(self, store: MarStore, run_id: str, clock: Callable[[], datetime]):
        self.store = store
        self.run_id = run_id
        self.clock = clock

    def record(self, assessment: AgentAssessment, agent_name: str) -> MAREntry:
        entry = MAREntry(
            run_id=self.run_id,
            round=assessment.round,
            case_id=assessment.case_id,
            an=agent_name,
            ad=assessment.diagnosis_code,
            adr=assessment.reasoning,
            acl_label=assessment.confidence_bin,
            acl_numeric=assessment.confidence,
            adl=assessment.doc_tokens,
            atsd=assessment.doc_seconds,
            ts=self.clock(),
        )
        self.store.append(entry)
        return entry


def fixed_clock(start: datetime, step_seconds: float = 1.0) -> Callable[[], datetime]:
    """Deterministic clock for reproducible runs: start + n * step."""
    if start.tzinfo is None:
        raise ValueError("clock start must be timezone-aware")
    state = {"n": 0}

    def tick() -> datetime:
        ts = start + timedelta(seconds=step_seconds * state["n"])
        state["n"] += 1
        return ts

    return tick


def map_code(
    code: str,
    target: str,
    code_table: dict[str, dict[str, str]] | None = None,
    name_aliases: dict[str, str] | None = None,
) -> str:
    """Map a diagnosis code (or agent name, for target "person_name") to a vocabulary.

    Unknown codes and unmapped targets raise; there is no silent passthrough.
    """
    if target == "person_name":
        aliases = name_aliases or {}
        if code not in aliases:
            raise ValueError(f"no person-name alias for agent {code!r}")
        return aliases[code]
    if target not in CODE_TARGETS:
        raise ValueError(f"unknown mapping target {target!r}")
    table = code_table if code_table is not None else DEFAULT_CODE_TABLE
    normalized = normalize_code(code)
    if normalized not in table:
        raise ValueError(f"code {normalized!r} has no {target} mapping")
    return table[normalized][target]


def load_code_table(path: str | Path) -> dict[str, dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        table = json.load(fh)
    for code, targets in table.items():
        missing = set(CODE_TARGETS) - set(targets)
        if missing:
            raise ValueError(f"mapping for {code!r} is missing targets {sorted(missing)}")
    return table


def _five_numbers(values: list[float]) -> dict[str, float]:
    pts = np.percentile(np.asarray(values, dtype=np.float64), [0, 25, 50, 75, 100])
    return {
        "min": float(pts[0]),
        "p25": float(pts[1]),
        "p50": float(pts[2]),
        "p75": float(pts[3]),
        "max": float(pts[4]),
    }


def burden_stats(entries: list[MAREntry]) -> dict[tuple[str, int], dict[str, dict[str, float]]]:
    """Documentation burden five-number summaries per (agent, round)."""
    if not entries:
        raise ValueError("no entries to summarize")
    groups: dict[tuple[str, int], list[MAREntry]] = {}
    for e in entries:
        groups.setdefault((e.an, e.round), []).append(e)
    return {
        key: {
            "atsd": _five_numbers([e.atsd for e in group]),
            "adl": _five_numbers([float(e.adl) for e in group]),
        }
        for key, group in sorted(groups.items())
    }


CASE_TYPES = ("TP", "FP", "TN", "FN")
CONFIDENCE_BINS = ("High", "Medium", "Low")


def confidence_breakdown(
    entries: list[MAREntry],
    outcomes: dict[tuple[str, str], str],
) -> dict[tuple[str, int, str], dict[str, float]]:
    """Percent of records in each confidence bin per (agent, round, case type).

    `outcomes` maps (agent name, case id) to the agent's confusion cell for
    that case; every entry must be covered.
    """
    counts: dict[tuple[str, int, str], dict[str, int]] = {}
    for e in entries:
        key = (e.an, e.case_id)
        if key not in outcomes:
            raise ValueError(f"missing outcome for agent {e.an!r} case {e.case_id!r}")
        case_type = outcomes[key]
        if case_type not in CASE_TYPES:
            raise ValueError(f"unknown case type {case_type!r}")
        cell = counts.setdefault((e.an, e.round, case_type), {b: 0 for b in CONFIDENCE_BINS})
        cell[e.acl_label] += 1
    result = {}
    for key, cell in sorted(counts.items()):
        total = sum(cell.values())
        result[key] = {b: 100.0 * cell[b] / total for b in CONFIDENCE_BINS}
    return result
