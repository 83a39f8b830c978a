from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structboard.dataset import Dataset, FeatureSpec, PatientRecord, stratified_split, synth_generate
from structboard.structure import (
    GlobalRanking,
    RankEntry,
    ReferenceModel,
    exact_shapley,
    fit_reference_model,
    interactions_from_values,
    rank_features,
    render_template,
    sample_background,
    schema_dummies,
    shapley_from_values,
    shapley_interactions,
)


def scalar_sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def random_problem(rng: np.random.Generator, max_dummies: int = 10, max_background: int = 16):
    """Random schema, logistic model, instance, and background."""
    while True:
        bin_counts = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 4)))]
        if sum(bin_counts) <= max_dummies:
            break
    schema = [FeatureSpec(f"f{i}", bc) for i, bc in enumerate(bin_counts)]
    dummies = schema_dummies(schema)
    weights = {d: float(rng.normal(0, 1.5)) for d in dummies}
    model = ReferenceModel.for_schema(weights, float(rng.normal(0, 0.5)), schema)

    def draw(rid: str) -> PatientRecord:
        return PatientRecord(
            rid, {s.name: int(rng.integers(1, s.bin_count + 1)) for s in schema}, None
        )

    instance = draw("x")
    background = [draw(f"b{i}") for i in range(int(rng.integers(1, max_background + 1)))]
    return model, instance, background


class TestFit:
    def _separable(self, toy_schema):
        pos = [PatientRecord(f"p{i}", {"egfr": 1, "hemoglobin": 1}, 1) for i in range(20)]
        neg = [PatientRecord(f"n{i}", {"egfr": 4, "hemoglobin": 4}, 0) for i in range(20)]
        return Dataset(schema=toy_schema, records=pos + neg)

    def test_separable_data_reaches_perfect_training_accuracy(self, toy_schema):
        ds = self._separable(toy_schema)
        model = fit_reference_model(ds, epochs=500, learning_rate=1.0, seed=0)
        correct = sum((model.score(r) >= 0.5) == bool(r.label) for r in ds.records)
        assert correct == len(ds.records)

    def test_independent_labels_give_small_weights(self, toy_schema):
        import random

        rng = random.Random(0)
        records = [
            PatientRecord(
                f"r{i}",
                {"egfr": rng.randint(1, 4), "hemoglobin": rng.randint(1, 4)},
                rng.randint(0, 1),
            )
            for i in range(400)
        ]
        ds = Dataset(schema=toy_schema, records=records)
        model = fit_reference_model(ds, epochs=200, learning_rate=0.5, seed=1)
        assert max(abs(w) for w in model.weights.values()) < 0.5
        accuracy = sum((model.score(r) >= 0.5) == bool(r.label) for r in records) / len(records)
        prevalence = sum(r.label for r in records) / len(records)
        assert accuracy <= max(prevalence, 1 - prevalence) + 0.1

    def test_deterministic_per_seed(self, toy_dataset):
        a = fit_reference_model(toy_dataset, epochs=50, learning_rate=0.5, seed=7)
        b = fit_reference_model(toy_dataset, epochs=50, learning_rate=0.5, seed=7)
        assert a.weights == b.weights
        assert a.intercept == b.intercept

    def test_loss_non_increasing(self, toy_dataset):
        model = fit_reference_model(toy_dataset, epochs=80, learning_rate=4.0, seed=2)
        curve = model.loss_curve
        assert all(curve[i + 1] <= curve[i] + 1e-12 for i in range(len(curve) - 1))

    def test_single_class_rejected(self, toy_schema):
        records = [PatientRecord(f"r{i}", {"egfr": 1, "hemoglobin": 1}, 1) for i in range(5)]
        with pytest.raises(ValueError, match="both classes"):
            fit_reference_model(Dataset(schema=toy_schema, records=records))


class TestExactShapley:
    def test_single_weight_closed_form(self, toy_schema):
        # with one nonzero weight the game value depends on that dummy alone:
        # phi_j = mean_z [sigmoid(b + w*x_j) - sigmoid(b + w*z_j)] and all
        # other attributions vanish
        w, b = 1.7, -0.4
        model = ReferenceModel.for_schema({("egfr", 1): w}, b, toy_schema)
        instance = PatientRecord("x", {"egfr": 1, "hemoglobin": 2}, None)
        background = [
            PatientRecord("b1", {"egfr": 2, "hemoglobin": 1}, None),
            PatientRecord("b2", {"egfr": 1, "hemoglobin": 3}, None),
            PatientRecord("b3", {"egfr": 4, "hemoglobin": 2}, None),
        ]
        att = exact_shapley(model, instance, background)
        z_vals = [1.0 if r.bins["egfr"] == 1 else 0.0 for r in background]
        expected = sum(
            scalar_sigmoid(b + w * 1.0) - scalar_sigmoid(b + w * z) for z in z_vals
        ) / len(background)
        assert att.phi[("egfr", 1)] == pytest.approx(expected, abs=1e-12)
        for dummy, phi in att.phi.items():
            if dummy != ("egfr", 1):
                assert phi == 0.0

    def test_instance_equal_to_only_background_record(self, toy_schema):
        model = ReferenceModel.for_schema({("egfr", 1): 2.0, ("hemoglobin", 2): -1.0}, 0.5, toy_schema)
        rec = PatientRecord("x", {"egfr": 1, "hemoglobin": 2}, None)
        att = exact_shapley(model, rec, [rec])
        assert all(phi == 0.0 for phi in att.phi.values())

    def test_efficiency_on_random_model(self, toy_schema):
        rng = np.random.default_rng(3)
        model, instance, background = random_problem(rng)
        att = exact_shapley(model, instance, background)
        total = sum(att.phi.values()) + att.base_value
        assert abs(total - model.score(instance)) <= 1e-9

    def test_dummy_limit_enforced(self):
        schema = [FeatureSpec(f"f{i}", 4) for i in range(4)]  # 16 dummies
        model = ReferenceModel.for_schema({}, 0.0, schema)
        rec = PatientRecord("x", {f"f{i}": 1 for i in range(4)}, None)
        with pytest.raises(ValueError, match="exceed the exact-enumeration limit"):
            exact_shapley(model, rec, [rec])

    def test_symmetric_dummies_get_equal_phi(self):
        schema = [FeatureSpec("a", 2), FeatureSpec("b", 2)]
        model = ReferenceModel.for_schema({("a", 1): 1.3, ("b", 1): 1.3}, -0.2, schema)
        instance = PatientRecord("x", {"a": 1, "b": 1}, None)
        background = [PatientRecord("z", {"a": 2, "b": 2}, None)]
        att = exact_shapley(model, instance, background)
        assert att.phi[("a", 1)] == pytest.approx(att.phi[("b", 1)], abs=1e-12)


class TestInteractions:
    def test_hand_built_two_player_game(self):
        # v(emptyset)=0, v({0})=0, v({1})=0, v({0,1})=1: each player gets
        # phi=0.5, the full pair interaction is carried off-diagonal (0.5
        # per side), and main effects vanish
        values = np.array([0.0, 0.0, 0.0, 1.0])
        phi = shapley_from_values(values, 2)
        mat = interactions_from_values(values, 2, phi)
        assert phi == pytest.approx([0.5, 0.5])
        assert mat[0, 1] == pytest.approx(0.5)
        assert mat[1, 0] == pytest.approx(0.5)
        assert mat[0, 0] == pytest.approx(0.0)

    def test_additive_value_function_has_no_interactions(self, toy_schema):
        rng = np.random.default_rng(11)
        model, instance, background = random_problem(rng, max_dummies=8)
        mat = shapley_interactions(model, instance, background, linear=True).values
        off = mat - np.diag(np.diag(mat))
        assert np.max(np.abs(off)) < 1e-6

    def test_symmetry_and_row_sums_on_random_model(self):
        rng = np.random.default_rng(7)
        model, instance, background = random_problem(rng, max_dummies=9)
        att = exact_shapley(model, instance, background)
        mat = shapley_interactions(model, instance, background).values
        assert np.array_equal(mat, mat.T)
        phi = np.array([att.phi[d] for d in model.dummies])
        assert np.max(np.abs(mat.sum(axis=1) - phi)) <= 1e-9


@given(seed=st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_shapley_axioms_property(seed):
    rng = np.random.default_rng(seed)
    model, instance, background = random_problem(rng)
    att = exact_shapley(model, instance, background)
    assert abs(sum(att.phi.values()) + att.base_value - model.score(instance)) <= 1e-9
    # force one dummy to be a null player and recheck
    null_dummy = model.dummies[int(rng.integers(len(model.dummies)))]
    weights = dict(model.weights)
    weights[null_dummy] = 0.0
    nulled = ReferenceModel(weights=weights, intercept=model.intercept, dummies=model.dummies)
    assert exact_shapley(nulled, instance, background).phi[null_dummy] == 0.0


class TestRankFeatures:
    def test_planted_dominant_weight_ranks_first(self, toy_schema):
        ds = synth_generate(toy_schema, 2000, {("egfr", 1): 4.0}, -1.0, seed=12)
        ds = stratified_split(ds, (0.7, 0.15, 0.15), seed=1)
        train = Dataset(schema=toy_schema, records=ds.subset("train"))
        model = fit_reference_model(train, epochs=200, learning_rate=0.5, seed=0)
        background = sample_background(ds.subset("train"), 16, seed=0)
        ranking = rank_features(model, ds.subset("valid")[:100], background, k=4)
        assert ranking.entries[0].dummy == ("egfr", 1)
        assert ranking.entries[0].mean_signed_phi > 0

    def test_full_ranking_when_k_equals_d(self, toy_schema):
        model = ReferenceModel.for_schema({("egfr", 1): 1.0}, 0.0, toy_schema)
        recs = [PatientRecord("a", {"egfr": 1, "hemoglobin": 2}, None)]
        bg = [PatientRecord("z", {"egfr": 3, "hemoglobin": 4}, None)]
        ranking = rank_features(model, recs, bg, k=8)
        assert [e.rank for e in ranking.entries] == list(range(1, 9))

    def test_tie_break_by_name_then_bin(self):
        schema = [FeatureSpec("a", 2), FeatureSpec("b", 2)]
        model = ReferenceModel.for_schema({}, 0.0, schema)  # all phi exactly 0
        recs = [PatientRecord("x", {"a": 1, "b": 1}, None)]
        bg = [PatientRecord("z", {"a": 2, "b": 2}, None)]
        ranking = rank_features(model, recs, bg, k=4)
        assert [e.dummy for e in ranking.entries] == [("a", 1), ("a", 2), ("b", 1), ("b", 2)]

    def test_k_bounds(self, toy_schema):
        model = ReferenceModel.for_schema({}, 0.0, toy_schema)
        recs = [PatientRecord("x", {"egfr": 1, "hemoglobin": 1}, None)]
        with pytest.raises(ValueError, match="k must be"):
            rank_features(model, recs, recs, k=0)
        with pytest.raises(ValueError, match="exceeds"):
            rank_features(model, recs, recs, k=9)


class TestRenderTemplate:
    def _ranking(self):
        return GlobalRanking(
            entries=(
                RankEntry(("egfr", 1), 0.3, 0.25, 1),
                RankEntry(("egfr", 2), 0.2, 0.15, 2),
                RankEntry(("bun", 4), 0.1, 0.05, 3),
                RankEntry(("bun", 2), 0.08, 0.02, 4),
                RankEntry(("bun", 1), 0.05, -0.04, 5),
            )
        )

    def test_rank_one_sentence_verbatim(self, renal_schema):
        template = render_template(self._ranking(), renal_schema, "acute kidney injury (AKI)")
        assert template.rendered_text.startswith(
            "Having the lowest bin (i.e., 1) for estimated glomerular filtration rate (eGFR) "
            "is the most important feature and indicates the highest risk for acute kidney injury (AKI)."
        )

    def test_rank_five_decreased_clause(self, renal_schema):
        template = render_template(self._ranking(), renal_schema, "AKI")
        assert "fifth most important feature and indicates decreased risk for AKI" in template.rendered_text

    def test_highest_bin_descriptor(self, renal_schema):
        template = render_template(self._ranking(), renal_schema, "AKI")
        assert "Having the highest bin (i.e., 4) for blood urea nitrogen" in template.rendered_text

    def test_clause_count_matches_ranking(self, renal_schema):
        template = render_template(self._ranking(), renal_schema, "AKI")
        assert len(template.clauses) == 5

    def test_empty_ranking_rejected(self, renal_schema):
        with pytest.raises(ValueError, match="empty"):
            render_template(GlobalRanking(entries=()), renal_schema, "AKI")

    def test_rendering_is_pure(self, renal_schema):
        a = render_template(self._ranking(), renal_schema, "AKI")
        b = render_template(self._ranking(), renal_schema, "AKI")
        assert a.rendered_text == b.rendered_text

    def test_json_round_trip(self, renal_schema):
        template = render_template(self._ranking(), renal_schema, "AKI")
        from structboard.structure import StructureTemplate

        assert StructureTemplate.from_json_dict(template.to_json_dict()) == template
