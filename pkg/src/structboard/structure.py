"""Reference model, exact coalition attributions, and the structure template.

The reference model is a logistic scorer over bin-level dummy indicators
(one indicator per (feature, bin) pair). Attributions are computed by
exhaustive enumeration of the 2^d coalitions using an interventional value
function: indicators inside the coalition come from the instance, the rest
from a background record, and the coalition value is the mean model output
over the background. This is exact, so the efficiency, null-player, and
symmetry axioms hold up to float rounding and can be asserted in tests.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, FeatureSpec, PatientRecord

MAX_EXACT_DUMMIES = 15
MAX_INTERACTION_DUMMIES = 12

Dummy = tuple[str, int]


def schema_dummies(schema: list[FeatureSpec]) -> tuple[Dummy, ...]:
    """All (feature, bin) indicators in schema order, bins ascending."""
    return tuple((f.name, b) for f in schema for b in range(1, f.bin_count + 1))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ReferenceModel:
    """Logistic scorer over dummy indicators; self-describing dummy order."""

    weights: dict[Dummy, float]
    intercept: float
    dummies: tuple[Dummy, ...]
    loss_curve: tuple[float, ...] = ()

    @classmethod
    def for_schema(
        cls, weights: dict[Dummy, float], intercept: float, schema: list[FeatureSpec]
    ) -> "ReferenceModel":
        return cls(weights=weights, intercept=intercept, dummies=schema_dummies(schema))

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights.get(d, 0.0) for d in self.dummies])

    def encode(self, record: PatientRecord) -> np.ndarray:
        return np.array(
            [1.0 if record.bins.get(name) == b else 0.0 for name, b in self.dummies]
        )

    def score(self, record: PatientRecord) -> float:
        z = self.intercept + float(self.encode(record) @ self.weight_vector())
        return float(sigmoid(np.array([z]))[0])


@dataclass(frozen=True)
class Attribution:
    record_id: str
    phi: dict[Dummy, float]
    base_value: float


@dataclass(frozen=True)
class InteractionMatrix:
    dummies: tuple[Dummy, ...]
    values: np.ndarray  # symmetric, diagonal = main effects


@dataclass(frozen=True)
class RankEntry:
    dummy: Dummy
    mean_abs_phi: float
    mean_signed_phi: float
    rank: int


@dataclass(frozen=True)
class GlobalRanking:
    entries: tuple[RankEntry, ...]


@dataclass(frozen=True)
class TemplateClause:
    feature: str
    display_name: str
    bin: int
    bin_count: int
    rank: int
    direction: str  # "increased" | "decreased"


@dataclass(frozen=True)
class StructureTemplate:
    clauses: tuple[TemplateClause, ...]
    outcome_name: str
    rendered_text: str

    def to_json_dict(self) -> dict:
        return {
            "outcome_name": self.outcome_name,
            "rendered_text": self.rendered_text,
            "clauses": [
                {
                    "feature": c.feature,
                    "display_name": c.display_name,
                    "bin": c.bin,
                    "bin_count": c.bin_count,
                    "rank": c.rank,
                    "direction": c.direction,
                }
                for c in self.clauses
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StructureTemplate":
        clauses = tuple(TemplateClause(**c) for c in doc["clauses"])
        return cls(clauses=clauses, outcome_name=doc["outcome_name"], rendered_text=doc["rendered_text"])


def _log_loss(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def fit_reference_model(
    train: Dataset,
    epochs: int = 300,
    learning_rate: float = 0.5,
    seed: int = 0,
) -> ReferenceModel:
    """Fit the logistic reference model by full-batch gradient descent.

    The step size is halved whenever a step would increase the loss, so the
    recorded loss curve is non-increasing.
    """
    records = train.records
    if not records:
        raise ValueError("training set is empty")
    labels = {r.label for r in records}
    if labels != {0, 1}:
        raise ValueError("training set must contain both classes")

    dummies = schema_dummies(train.schema)
    index = {d: i for i, d in enumerate(dummies)}
    n, d = len(records), len(dummies)
    X = np.zeros((n, d))
    y = np.empty(n)
    for i, rec in enumerate(records):
        for name, b in rec.bins.items():
            X[i, index[(name, b)]] = 1.0
        y[i] = rec.label

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=d)
    b0 = float(rng.normal(0.0, 0.01))
    lr = learning_rate
    losses = [_log_loss(sigmoid(X @ w + b0), y)]
    for _ in range(epochs):
        p = sigmoid(X @ w + b0)
        grad_w = X.T @ (p - y) / n
        grad_b = float(np.mean(p - y))
        while True:
            w_try = w - lr * grad_w
            b_try = b0 - lr * grad_b
            loss_try = _log_loss(sigmoid(X @ w_try + b_try), y)
            if loss_try <= losses[-1] or lr < 1e-12:
                break
            lr *= 0.5
        if loss_try <= losses[-1]:
            w, b0 = w_try, b_try
            losses.append(loss_try)
        else:
            losses.append(losses[-1])
    weights = {dummy: float(w[i]) for dummy, i in index.items()}
    return ReferenceModel(
        weights=weights, intercept=b0, dummies=dummies, loss_curve=tuple(losses)
    )


_BIT_CACHE: dict[int, np.ndarray] = {}


def _bit_matrix(d: int) -> np.ndarray:
    """(2^d, d) matrix whose row m is the binary expansion of mask m."""
    if d not in _BIT_CACHE:
        masks = np.arange(1 << d, dtype=np.uint32)
        _BIT_CACHE[d] = ((masks[:, None] >> np.arange(d)) & 1).astype(np.float64)
    return _BIT_CACHE[d]


def _shapley_coefficients(d: int) -> np.ndarray:
    fact = [math.factorial(i) for i in range(d + 1)]
    return np.array([fact[s] * fact[d - s - 1] / fact[d] for s in range(d)])


def shapley_from_values(values: np.ndarray, d: int) -> np.ndarray:
    """Exact attribution for a game given its value on every coalition.

    `values[mask]` is the game value of the coalition encoded by the bitmask.
    """
    if len(values) != (1 << d):
        raise ValueError(f"expected {1 << d} coalition values, got {len(values)}")
    bits = _bit_matrix(d)
    sizes = bits.sum(axis=1).astype(int)
    coef = _shapley_coefficients(d)
    masks = np.arange(1 << d)
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = float(np.dot(coef[sizes[without]], values[without | bit] - values[without]))
    return phi


def interactions_from_values(values: np.ndarray, d: int, phi: np.ndarray) -> np.ndarray:
    """Pairwise interaction indices; diagonal set so rows sum to phi."""
    bits = _bit_matrix(d)
    sizes = bits.sum(axis=1).astype(int)
    if d >= 2:
        fact = [math.factorial(i) for i in range(d + 1)]
        coef = np.array([fact[s] * fact[d - s - 2] / (2.0 * fact[d - 1]) for s in range(d - 1)])
    masks = np.arange(1 << d)
    mat = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            bi, bj = 1 << i, 1 << j
            without = masks[(masks & (bi | bj)) == 0]
            delta = (
                values[without | bi | bj]
                - values[without | bi]
                - values[without | bj]
                + values[without]
            )
            val = float(np.dot(coef[sizes[without]], delta))
            mat[i, j] = mat[j, i] = val
    for i in range(d):
        mat[i, i] = phi[i] - (mat[i].sum() - mat[i, i])
    return mat


def _interventional_values(
    model: ReferenceModel,
    instance: PatientRecord,
    background: list[PatientRecord],
    linear: bool,
) -> np.ndarray:
    if not background:
        raise ValueError("background must be non-empty")
    d = len(model.dummies)
    w = model.weight_vector()
    x = model.encode(instance)
    Z = np.stack([model.encode(z) for z in background])
    base = model.intercept + Z @ w  # (B,)
    deltas = (x[None, :] - Z) * w[None, :]  # (B, d)
    raw = base[None, :] + _bit_matrix(d) @ deltas.T  # (2^d, B)
    vals = raw if linear else sigmoid(raw)
    return vals.mean(axis=1)


def _check_dummy_limit(d: int, limit: int) -> None:
    if d > limit:
        raise ValueError(
            f"{d} dummy indicators exceed the exact-enumeration limit of {limit}; "
            "reduce the feature set or bin counts (or rank fewer features)"
        )


def exact_shapley(
    model: ReferenceModel,
    instance: PatientRecord,
    background: list[PatientRecord],
    linear: bool = False,
) -> Attribution:
    """Exact per-dummy attribution of the model score for one instance."""
    d = len(model.dummies)
    _check_dummy_limit(d, MAX_EXACT_DUMMIES)
    values = _interventional_values(model, instance, background, linear)
    phi = shapley_from_values(values, d)
    return Attribution(
        record_id=instance.id,
        phi={dummy: float(phi[i]) for i, dummy in enumerate(model.dummies)},
        base_value=float(values[0]),
    )


def shapley_interactions(
    model: ReferenceModel,
    instance: PatientRecord,
    background: list[PatientRecord],
    linear: bool = False,
) -> InteractionMatrix:
    """Pairwise interaction matrix; diagonal holds the main effects."""
    d = len(model.dummies)
    _check_dummy_limit(d, MAX_INTERACTION_DUMMIES)
    values = _interventional_values(model, instance, background, linear)
    phi = shapley_from_values(values, d)
    return InteractionMatrix(
        dummies=model.dummies, values=interactions_from_values(values, d, phi)
    )


def sample_background(
    records: list[PatientRecord], size: int = 64, seed: int = 0
) -> list[PatientRecord]:
    """Deterministic background sample (without replacement) for attribution."""
    if not records:
        raise ValueError("cannot sample a background from an empty record list")
    if len(records) <= size:
        return list(records)
    return random.Random(seed).sample(records, size)


def rank_features(
    model: ReferenceModel,
    eval_set: list[PatientRecord],
    background: list[PatientRecord],
    k: int,
) -> GlobalRanking:
    """Rank dummies by mean |attribution| over the evaluation records.

    Ties break by feature name, then bin ascending. The signed mean that
    carries directionality is taken over the records where the dummy is
    active: absent-dummy attributions have the opposite sign and would
    otherwise cancel the presence effect to noise.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    d = len(model.dummies)
    if k > d:
        raise ValueError(f"k={k} exceeds the {d} available dummies")
    if not eval_set:
        raise ValueError("evaluation set is empty")
    abs_sum = np.zeros(d)
    signed_sum = np.zeros(d)
    active_sum = np.zeros(d)
    active_count = np.zeros(d)
    for rec in eval_set:
        values = _interventional_values(model, rec, background, linear=False)
        phi = shapley_from_values(values, d)
        abs_sum += np.abs(phi)
        signed_sum += phi
        active = model.encode(rec)
        active_sum += active * phi
        active_count += active
    mean_abs = abs_sum / len(eval_set)
    mean_signed = np.where(
        active_count > 0,
        active_sum / np.maximum(active_count, 1),
        signed_sum / len(eval_set),
    )
    order = sorted(
        range(d), key=lambda i: (-mean_abs[i], model.dummies[i][0], model.dummies[i][1])
    )
    entries = tuple(
        RankEntry(
            dummy=model.dummies[i],
            mean_abs_phi=float(mean_abs[i]),
            mean_signed_phi=float(mean_signed[i]),
            rank=rank,
        )
        for rank, i in enumerate(order[:k], start=1)
    )
    return GlobalRanking(entries=entries)


_ORDINALS = (
    "most", "second most", "third most", "fourth most", "fifth most",
    "sixth most", "seventh most", "eighth most", "ninth most", "tenth most",
    "eleventh most", "twelfth most",
)

_LOW_ORDINALS = (
    "lowest", "second lowest", "third lowest", "fourth lowest", "fifth lowest",
    "sixth lowest", "seventh lowest", "eighth lowest", "ninth lowest", "tenth lowest",
)


def _importance_ordinal(rank: int) -> str:
    if rank <= len(_ORDINALS):
        return _ORDINALS[rank - 1]
    return f"{rank}th most"


def _bin_descriptor(b: int, bin_count: int) -> str:
    if b == bin_count:
        return "highest"
    if b <= len(_LOW_ORDINALS):
        return _LOW_ORDINALS[b - 1]
    return f"{b}th lowest"


def render_clause(clause: TemplateClause, outcome_name: str) -> str:
    descriptor = _bin_descriptor(clause.bin, clause.bin_count)
    ordinal = _importance_ordinal(clause.rank)
    if clause.direction == "increased":
        phrase = "the highest risk" if clause.rank == 1 else "increased risk"
    else:
        phrase = "decreased risk"
    return (
        f"Having the {descriptor} bin (i.e., {clause.bin}) for {clause.display_name} "
        f"is the {ordinal} important feature and indicates {phrase} for {outcome_name}."
    )


def render_template(
    ranking: GlobalRanking, schema: list[FeatureSpec], outcome_name: str
) -> StructureTemplate:
    """Render the ranked dummies as the prose structure template."""
    if not ranking.entries:
        raise ValueError("ranking is empty")
    by_name = {f.name: f for f in schema}
    clauses = []
    for entry in ranking.entries:
        fname, b = entry.dummy
        spec = by_name[fname]
        clauses.append(
            TemplateClause(
                feature=fname,
                display_name=spec.display_name,
                bin=b,
                bin_count=spec.bin_count,
                rank=entry.rank,
                direction="increased" if entry.mean_signed_phi > 0 else "decreased",
            )
        )
    text = " ".join(render_clause(c, outcome_name) for c in clauses)
    return StructureTemplate(clauses=tuple(clauses), outcome_name=outcome_name, rendered_text=text)
