from __future__ import annotations

import pytest

from structboard.dataset import Dataset, FeatureSpec, PatientRecord


@pytest.fixture
def toy_schema() -> list[FeatureSpec]:
    return [
        FeatureSpec("egfr", 4, "eGFR"),
        FeatureSpec("hemoglobin", 4),
    ]


@pytest.fixture
def renal_schema() -> list[FeatureSpec]:
    return [
        FeatureSpec("egfr", 4, "estimated glomerular filtration rate (eGFR)"),
        FeatureSpec("bun", 4, "blood urea nitrogen"),
        FeatureSpec("hgb", 4, "hemoglobin"),
    ]


def make_record(rid: str, egfr: int, hemoglobin: int, label: int | None = None) -> PatientRecord:
    return PatientRecord(id=rid, bins={"egfr": egfr, "hemoglobin": hemoglobin}, label=label)


@pytest.fixture
def toy_dataset(toy_schema) -> Dataset:
    records = [
        make_record("p1", 1, 2, 1),
        make_record("p2", 2, 2, 0),
        make_record("p3", 3, 1, 0),
        make_record("p4", 4, 4, 1),
    ]
    return Dataset(schema=toy_schema, records=records)
