"""Binned tabular datasets with binary outcomes.

Records hold ordinal bins (1..bin_count per feature) plus a 0/1 outcome
label. Splits are stratified per class and fully seeded, so any run is
reproducible from its configuration alone.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field, replace

SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class FeatureSpec:
    """Ordinal feature with bins numbered 1..bin_count."""

    name: str
    bin_count: int
    display_name: str = ""

    def __post_init__(self) -> None:
        if self.bin_count < 2:
            raise ValueError(f"feature {self.name!r}: bin_count must be >= 2, got {self.bin_count}")
        if not self.display_name:
            object.__setattr__(self, "display_name", self.name)


@dataclass(frozen=True)
class PatientRecord:
    """One case: feature name -> ordinal bin, plus an optional 0/1 outcome."""

    id: str
    bins: dict[str, int]
    label: int | None = None


def validate_schema(schema: list[FeatureSpec]) -> None:
    if not schema:
        raise ValueError("schema must contain at least one feature")
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        raise ValueError("feature names must be unique within a schema")
    shown = [f.display_name for f in schema]
    if len(set(shown)) != len(shown):
        raise ValueError("display names must be unique within a schema")


def validate_record(record: PatientRecord, schema: list[FeatureSpec]) -> None:
    for spec in schema:
        if spec.name not in record.bins:
            raise ValueError(f"record {record.id!r}: missing feature {spec.name!r}")
        b = record.bins[spec.name]
        if not isinstance(b, int) or not 1 <= b <= spec.bin_count:
            raise ValueError(
                f"record {record.id!r}: bin out of range for {spec.name!r} "
                f"(got {b!r}, expected 1..{spec.bin_count})"
            )
    extra = set(record.bins) - {f.name for f in schema}
    if extra:
        raise ValueError(f"record {record.id!r}: unknown features {sorted(extra)}")
    if record.label is not None and record.label not in (0, 1):
        raise ValueError(f"record {record.id!r}: non-binary label {record.label!r}")


@dataclass(frozen=True)
class Dataset:
    """Schema + records + optional train/valid/test tags (a partition of ids)."""

    schema: list[FeatureSpec]
    records: list[PatientRecord]
    split_tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_schema(self.schema)
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValueError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            validate_record(rec, self.schema)
        if self.split_tags:
            if set(self.split_tags) != seen:
                raise ValueError("split tags must cover exactly the dataset ids")
            bad = {t for t in self.split_tags.values() if t not in SPLIT_NAMES}
            if bad:
                raise ValueError(f"unknown split tags: {sorted(bad)}")

    def subset(self, tag: str) -> list[PatientRecord]:
        """Records carrying the given split tag, in dataset order."""
        return [r for r in self.records if self.split_tags.get(r.id) == tag]

    def feature(self, name: str) -> FeatureSpec:
        for spec in self.schema:
            if spec.name == name:
                return spec
        raise KeyError(name)


def prevalence(records: list[PatientRecord]) -> float:
    """Fraction of positive labels; records must all be labeled."""
    if not records:
        raise ValueError("prevalence of an empty record list is undefined")
    labels = [r.label for r in records]
    if any(v is None for v in labels):
        raise ValueError("prevalence requires labeled records")
    return sum(labels) / len(labels)


def load_csv(path: str, schema: list[FeatureSpec]) -> Dataset:
    """Load a dataset from CSV (feature columns + "label" + "id")."""
    validate_schema(schema)
    feature_names = [f.name for f in schema]
    expected = set(feature_names) | {"label", "id"}
    records: list[PatientRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or [])
        if header != expected:
            missing = expected - header
            extra = header - expected
            detail = []
            if missing:
                detail.append(f"missing columns {sorted(missing)}")
            if extra:
                detail.append(f"unexpected columns {sorted(extra)}")
            raise ValueError(f"{path}: header does not match schema ({'; '.join(detail)})")
        for lineno, row in enumerate(reader, start=2):
            try:
                bins = {name: int(row[name]) for name in feature_names}
                label = int(row["label"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: non-integer cell ({exc})") from exc
            if label not in (0, 1):
                raise ValueError(f"{path}:{lineno}: non-binary label {label}")
            records.append(PatientRecord(id=row["id"], bins=bins, label=label))
    return Dataset(schema=schema, records=records)


def write_csv(ds: Dataset, path: str) -> None:
    """Inverse of load_csv; split tags are not persisted."""
    feature_names = [f.name for f in ds.schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(feature_names + ["label", "id"])
        for rec in ds.records:
            writer.writerow([rec.bins[n] for n in feature_names] + [rec.label, rec.id])


def stratified_split(
    ds: Dataset, ratios: tuple[float, float, float], seed: int
) -> Dataset:
    """Assign train/valid/test tags, stratified by label.

    Each class is shuffled with the seeded RNG and cut into contiguous
    slices at cumulative boundaries rounded to the nearest record, which
    keeps every split within one record of its exact per-class share.
    """
    if len(ratios) != len(SPLIT_NAMES):
        raise ValueError(f"expected {len(SPLIT_NAMES)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    nonzero = sum(1 for r in ratios if r > 0)

    by_class: dict[int, list[str]] = {}
    for rec in ds.records:
        if rec.label is None:
            raise ValueError(f"record {rec.id!r} is unlabeled; cannot stratify")
        by_class.setdefault(rec.label, []).append(rec.id)

    rng = random.Random(seed)
    tags: dict[str, str] = {}
    for label in sorted(by_class):
        ids = list(by_class[label])
        if len(ids) < nonzero:
            raise ValueError(
                f"class {label} has {len(ids)} records, fewer than the {nonzero} nonzero splits"
            )
        rng.shuffle(ids)
        n = len(ids)
        cuts = [0]
        acc = 0.0
        for r in ratios:
            acc += r
            cuts.append(int(math.floor(acc * n + 0.5)))
        cuts[-1] = n
        for name, lo, hi in zip(SPLIT_NAMES, cuts, cuts[1:]):
            for rid in ids[lo:hi]:
                tags[rid] = name
    return replace(ds, split_tags=tags)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def synth_generate(
    schema: list[FeatureSpec],
    n: int,
    planted: dict[tuple[str, int], float],
    intercept: float,
    seed: int,
) -> Dataset:
    """Generate records with uniform bins and a planted logistic outcome.

    The positive-label probability for a record is
    sigmoid(intercept + sum of planted weights whose (feature, bin) is active).
    """
    validate_schema(schema)
    if n < 1:
        raise ValueError("n must be >= 1")
    by_name = {f.name: f for f in schema}
    for fname, b in planted:
        if fname not in by_name:
            raise ValueError(f"planted weight references unknown feature {fname!r}")
        if not 1 <= b <= by_name[fname].bin_count:
            raise ValueError(f"planted weight references invalid bin ({fname!r}, {b})")

    rng = random.Random(seed)
    width = max(5, len(str(n - 1)))
    records = []
    for i in range(n):
        bins = {f.name: rng.randint(1, f.bin_count) for f in schema}
        logit = intercept + sum(planted.get((f.name, bins[f.name]), 0.0) for f in schema)
        label = 1 if rng.random() < _sigmoid(logit) else 0
        records.append(PatientRecord(id=f"r{i:0{width}d}", bins=bins, label=label))
    return Dataset(schema=schema, records=records)
