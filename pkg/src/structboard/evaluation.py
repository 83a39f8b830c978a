"""Classification metrics, reasoning-alignment scoring, and the run report.

AUCROC uses the rank-statistic form (ties credit one half) and average
precision sums precision over recall increments with tied scores handled
as one group; both match exhaustive pair counting and threshold
enumeration exactly, which the test suite asserts. Alignment scoring is
greedy token matching over a pluggable embedding; with the default
one-hot embedding it reduces to token-overlap precision/recall/F1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mar import MAREntry

Embedding = Callable[[str], np.ndarray]

VOTE_SUBJECTS = ("majority", "precision_weighted", "recall_weighted", "bprv")


@dataclass(frozen=True)
class MetricRow:
    subject: str
    round: int
    auc: float
    auc_degenerate: bool
    ap: float | None
    precision: float | None  # None when no positive predictions ("nan")
    recall: float | None
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class AlignmentScore:
    precision: float
    recall: float
    f1: float
    candidate_agent: str = ""
    reference_agent: str = ""
    case_type: str = ""


def _check_binary(labels: Sequence[int]) -> None:
    bad = {v for v in labels if v not in (0, 1)}
    if bad:
        raise ValueError(f"labels must be binary, got {sorted(bad)}")


def confusion_counts(decisions: Sequence[int], labels: Sequence[int]) -> tuple[int, int, int, int]:
    if len(decisions) != len(labels):
        raise ValueError(f"length mismatch: {len(decisions)} decisions vs {len(labels)} labels")
    if not labels:
        raise ValueError("empty input")
    _check_binary(labels)
    tp = fp = tn = fn = 0
    for d, y in zip(decisions, labels):
        if d:
            if y:
                tp += 1
            else:
                fp += 1
        else:
            if y:
                fn += 1
            else:
                tn += 1
    return tp, fp, tn, fn


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float | None, float | None]:
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def auc_is_degenerate(scores: Sequence[float], labels: Sequence[int]) -> bool:
    """True when AUC carries no ranking signal (one class, or all scores tied)."""
    return len(set(labels)) < 2 or len(set(scores)) < 2


def auc_roc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative (ties count half).

    Single-class label sets are reported as 0.5; use auc_is_degenerate to flag them.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    _check_binary(labels)
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        return 0.5
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # midrank for the tie group [i, j], 1-based
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Sum of precision times recall increment over descending score groups."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    _check_binary(labels)
    total_pos = sum(labels)
    if total_pos == 0:
        raise ValueError("average precision needs at least one positive label")
    pairs = sorted(zip(scores, labels), key=lambda p: -p[0])
    ap = 0.0
    tp = fp = 0
    recall_prev = 0.0
    i = 0
    while i < len(pairs):
        j = i
        while j + 1 < len(pairs) and pairs[j + 1][0] == pairs[i][0]:
            j += 1
        for _, y in pairs[i : j + 1]:
            if y:
                tp += 1
            else:
                fp += 1
        precision = tp / (tp + fp)
        recall = tp / total_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return ap


def build_metric_row(
    subject: str,
    round_index: int,
    scores: Sequence[float],
    decisions: Sequence[int],
    labels: Sequence[int],
) -> MetricRow:
    tp, fp, tn, fn = confusion_counts(decisions, labels)
    precision, recall = precision_recall(tp, fp, fn)
    ap = average_precision(scores, labels) if sum(labels) > 0 else None
    return MetricRow(
        subject=subject,
        round=round_index,
        auc=auc_roc(scores, labels),
        auc_degenerate=auc_is_degenerate(scores, labels),
        ap=ap,
        precision=precision,
        recall=recall,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def case_types(decisions: Sequence[int], labels: Sequence[int]) -> list[str]:
    """Per-case confusion cell (TP/FP/TN/FN) for one agent."""
    if len(decisions) != len(labels):
        raise ValueError("length mismatch")
    out = []
    for d, y in zip(decisions, labels):
        if d and y:
            out.append("TP")
        elif d and not y:
            out.append("FP")
        elif not d and y:
            out.append("FN")
        else:
            out.append("TN")
    return out


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def alignment_score(
    candidate: str,
    reference: str,
    embed: Embedding | None = None,
) -> AlignmentScore:
    """Greedy-matching similarity between two reasoning texts.

    Precision averages, over candidate tokens, the best cosine similarity to
    any reference token; recall is symmetric; F1 is their harmonic mean.
    Without an embedding provider tokens match only on identity.
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not cand or not ref:
        return AlignmentScore(precision=0.0, recall=0.0, f1=0.0)
    if embed is None:
        ref_set = set(ref)
        cand_set = set(cand)
        precision = sum(1.0 for t in cand if t in ref_set) / len(cand)
        recall = sum(1.0 for t in ref if t in cand_set) / len(ref)
    else:
        def matrix(tokens: list[str]) -> np.ndarray:
            vecs = np.stack([np.asarray(embed(t), dtype=np.float64) for t in tokens])
            norms = np.linalg.norm(vecs, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            return vecs / norms

        sim = matrix(cand) @ matrix(ref).T
        precision = float(sim.max(axis=1).mean())
        recall = float(sim.max(axis=0).mean())
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return AlignmentScore(precision=precision, recall=recall, f1=f1)


def bcr_score(a: float, alpha: float, b: float, beta: float) -> float:
    """Weighted blend of a classification metric and a reasoning metric."""
    if abs(alpha + beta - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {alpha} + {beta}")
    if not 0.0 <= a <= 1.0 or not 0.0 <= b <= 1.0:
        raise ValueError(f"metric values must be in [0, 1], got A={a}, B={b}")
    return a * alpha + b * beta


# --- consolidated report -----------------------------------------------------


@dataclass(frozen=True)
class BcrSpec:
    """One requested blend: classification metric of a subject vs. a
    candidate agent's mean alignment F1 for one case type."""

    candidate: str  # agent name (AN)
    case_type: str
    a_subject: str = "bprv"
    a_metric: str = "ap"
    alpha: float = 0.5
    beta: float = 0.5


@dataclass(frozen=True)
class ReportConfig:
    reference_agent: str  # agent name (AN) whose confusion cells group the alignment
    bcr_specs: tuple[BcrSpec, ...] = ()
    case_type_order: tuple[str, ...] = ("TP", "FP", "FN", "TN")


def _metric_row_dict(row: MetricRow) -> dict:
    return {
        "subject": row.subject,
        "auc": row.auc,
        "auc_degenerate": row.auc_degenerate,
        "ap": row.ap,
        "precision": row.precision,
        "recall": row.recall,
        "tp": row.tp,
        "fp": row.fp,
        "tn": row.tn,
        "fn": row.fn,
    }


def _adr_by_agent_round(entries: list[MAREntry]) -> dict[tuple[str, int], dict[str, MAREntry]]:
    grouped: dict[tuple[str, int], dict[str, MAREntry]] = {}
    for e in entries:
        grouped.setdefault((e.an, e.round), {})[e.case_id] = e
    return grouped


def build_report(
    rounds: list,
    mar_entries: list[MAREntry],
    cfg: ReportConfig,
    run_meta: dict | None = None,
    embed: Embedding | None = None,
) -> dict:
    """Assemble the consolidated evaluation document for a run.

    `rounds` are sealed RoundState objects. Sections: per-round metric
    tables, documentation burden, confidence breakdowns by confusion cell,
    alignment of every agent against the reference agent grouped by the
    reference's confusion cells, and the configured metric blends.
    """
    from .mar import burden_stats, confidence_breakdown

    if not rounds:
        raise ValueError("no rounds to report")

    metric_tables = []
    for state in rounds:
        rows = [_metric_row_dict(state.metrics[subject]) for subject in state.metric_order]
        metric_tables.append({"round": state.round, "rows": rows})

    by_agent_round = _adr_by_agent_round(mar_entries)
    agent_names = sorted({e.an for e in mar_entries})
    round_indices = sorted({e.round for e in mar_entries})

    burden = [
        {"agent": an, "round": rnd, "atsd": stats["atsd"], "adl": stats["adl"]}
        for (an, rnd), stats in burden_stats(mar_entries).items()
    ] if mar_entries else []

    # Confusion cell per (agent, case) from the recorded diagnosis codes.
    labels_by_round = {state.round: state.labels for state in rounds}
    outcomes_by_round: dict[int, dict[tuple[str, str], str]] = {}
    for rnd in round_indices:
        outcomes: dict[tuple[str, str], str] = {}
        labels = labels_by_round.get(rnd, {})
        for an in agent_names:
            for case_id, entry in by_agent_round.get((an, rnd), {}).items():
                if case_id not in labels:
                    continue
                decision = 1 if entry.ad == "1.01" else 0
                outcomes[(an, case_id)] = case_types([decision], [labels[case_id]])[0]
        outcomes_by_round[rnd] = outcomes

    confidence = []
    for rnd in round_indices:
        round_entries = [e for e in mar_entries if e.round == rnd and (e.an, e.case_id) in outcomes_by_round[rnd]]
        if not round_entries:
            continue
        breakdown = confidence_breakdown(round_entries, outcomes_by_round[rnd])
        for (an, _, case_type), bins in breakdown.items():
            confidence.append({"agent": an, "round": rnd, "case_type": case_type, "percent": bins})

    alignment = []
    alignment_means: dict[tuple[int, str, str], float] = {}
    reference = cfg.reference_agent
    for rnd in round_indices:
        ref_entries = by_agent_round.get((reference, rnd), {})
        labels = labels_by_round.get(rnd, {})
        ref_cells = {
            case_id: case_types([1 if e.ad == "1.01" else 0], [labels[case_id]])[0]
            for case_id, e in ref_entries.items()
            if case_id in labels
        }
        for an in agent_names:
            if an == reference:
                continue
            cand_entries = by_agent_round.get((an, rnd), {})
            for case_type in cfg.case_type_order:
                shared = [
                    c for c, cell in ref_cells.items() if cell == case_type and c in cand_entries
                ]
                if not shared:
                    continue
                scores = [
                    alignment_score(cand_entries[c].adr, ref_entries[c].adr, embed=embed)
                    for c in sorted(shared)
                ]
                mean_f1 = sum(s.f1 for s in scores) / len(scores)
                alignment_means[(rnd, an, case_type)] = mean_f1
                alignment.append(
                    {
                        "round": rnd,
                        "candidate": an,
                        "reference": reference,
                        "case_type": case_type,
                        "n_cases": len(shared),
                        "precision": sum(s.precision for s in scores) / len(scores),
                        "recall": sum(s.recall for s in scores) / len(scores),
                        "f1": mean_f1,
                    }
                )

    bcr_rows = []
    for spec in cfg.bcr_specs:
        for state in rounds:
            row = state.metrics.get(spec.a_subject)
            if row is None:
                continue
            a_value = getattr(row, spec.a_metric, None)
            b_value = alignment_means.get((state.round, spec.candidate, spec.case_type))
            if a_value is None or b_value is None:
                continue
            bcr_rows.append(
                {
                    "round": state.round,
                    "candidate": spec.candidate,
                    "reference": reference,
                    "case_type": spec.case_type,
                    "a_subject": spec.a_subject,
                    "a_metric": spec.a_metric,
                    "a": a_value,
                    "b": b_value,
                    "alpha": spec.alpha,
                    "beta": spec.beta,
                    "bcr": bcr_score(a_value, spec.alpha, b_value, spec.beta),
                }
            )

    report = {
        "metric_tables": metric_tables,
        "burden": burden,
        "confidence": confidence,
        "alignment": alignment,
        "bcr": bcr_rows,
    }
    if run_meta:
        report["run"] = run_meta
    return report


def _csv_cell(v) -> str:
    return "nan" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))


def metric_table_csv(report: dict) -> str:
    """Flatten the per-round metric tables to CSV ("nan" for undefined cells)."""
    lines = ["round,subject,auc,ap,precision,recall,tp,fp,tn,fn"]
    for table in report["metric_tables"]:
        for row in table["rows"]:
            lines.append(
                ",".join(
                    [
                        str(table["round"]),
                        row["subject"],
                        _csv_cell(row["auc"]),
                        _csv_cell(row["ap"]),
                        _csv_cell(row["precision"]),
                        _csv_cell(row["recall"]),
                        str(row["tp"]),
                        str(row["fp"]),
                        str(row["tn"]),
                        str(row["fn"]),
                    ]
                )
            )
    return "\n".join(lines) + "\n"
