"""Tests for salience estimation and the global precision search."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from mixquant.analysis.reports import proxy_eval
from mixquant.calibration.models import CalibrationSet, GradientBundle, ToyModel
from mixquant.calibration.network import GradientMode, compute_gradients, forward
from mixquant.errors import DataError, UsageError
from mixquant.mixed_layer.partition import quantize_model
from mixquant.quant_core.models import SMALLBIT_SCHEME
from mixquant.salience_search.models import (
    ChannelSalience,
    PrecisionAssignment,
    SalienceEstimator,
    SalienceMode,
    SearchStrategy,
)
from mixquant.salience_search.search import (
    assignment_from_ranking,
    channel_salience,
    global_search,
    largebit_budget,
    layer_salience,
    local_search,
    loss_delta_ranking,
    loss_delta_salience,
    random_assignment,
    rank_channels,
    sort_salience,
    weight_deltas,
)
from mixquant.salience_search.storage import load_assignment, save_assignment


def _direct_salience(g: np.ndarray, delta: np.ndarray) -> float:
    t = sum(float(a) * float(b) for a, b in zip(g, delta, strict=True))
    return abs(t + 0.5 * t * t)


@pytest.fixture
def gradients(small_model: ToyModel, small_dataset: CalibrationSet) -> GradientBundle:
    return compute_gradients(small_model, small_dataset, GradientMode.PER_SAMPLE)


# ---------- channel salience ----------


class TestChannelSalience:
    def test_zero_delta(self) -> None:
        assert channel_salience([0.3, -1.0, 2.0], [0.0, 0.0, 0.0]) == 0.0

    def test_cancelling_terms(self) -> None:
        assert channel_salience([1.0, 2.0], [0.1, -0.05]) == 0.0

    def test_second_order_term(self) -> None:
        assert channel_salience([1.0, 2.0], [0.1, 0.05]) == pytest.approx(0.22, rel=1e-12)

    def test_length_mismatch(self) -> None:
        with pytest.raises(UsageError):
            channel_salience([1.0, 2.0], [0.1])

    def test_matches_direct_formula(self, rng: np.random.Generator) -> None:
        for _ in range(200):
            n = int(rng.integers(1, 40))
            g = rng.normal(size=n) * 10 ** rng.uniform(-3, 1)
            delta = rng.normal(size=n) * 10 ** rng.uniform(-3, 0)
            expected = _direct_salience(g, delta)
            assert channel_salience(g, delta) == pytest.approx(expected, rel=1e-12, abs=1e-300)

    def test_per_sample_mode_averages_absolute_values(self) -> None:
        g = np.array([[1.0, 0.0], [-1.0, 0.0]])
        delta = np.array([0.5, 0.0])
        # t = +0.5 and -0.5: |0.5 + 0.125| and |-0.5 + 0.125|
        assert channel_salience(g, delta, SalienceMode.PER_SAMPLE) == pytest.approx((0.625 + 0.375) / 2)
        # the aggregated gradient of the same samples is zero
        assert channel_salience(g.mean(axis=0), delta) == 0.0

    def test_quadratic_surrogate_is_exact(self, rng: np.random.Generator) -> None:
        for _ in range(50):
            g = rng.normal(size=16)
            c0 = rng.normal(size=16)
            c = c0 + rng.normal(size=16) * 0.1

            def loss(x: np.ndarray, g: np.ndarray = g, c0: np.ndarray = c0) -> float:
                t = float(g @ (x - c0))
                return t + 0.5 * t * t

            assert channel_salience(g, c - c0) == pytest.approx(abs(loss(c) - loss(c0)), rel=1e-12, abs=1e-15)

    def test_layer_salience_matches_rows(self, rng: np.random.Generator) -> None:
        grad = rng.normal(size=(5, 7))
        delta = rng.normal(size=(5, 7)) * 0.01
        scores = layer_salience(grad, delta)
        for row in range(5):
            assert scores[row] == pytest.approx(channel_salience(grad[row], delta[row]), rel=1e-12)

    @pytest.mark.parametrize(("sign", "scales"), [(1.0, (0.1, 0.5, 2.0, 10.0, 100.0)), (-1.0, (0.1, 0.5, 2.0, 10.0))])
    def test_ranking_survives_positive_gradient_scaling(
        self, rng: np.random.Generator, sign: float, scales: tuple[float, ...]
    ) -> None:
        grad = sign * rng.uniform(0.1, 1.0, size=(40, 32))
        delta = rng.uniform(0.0, 1e-3, size=(40, 32))
        t = np.einsum("oi,oi->o", grad, delta)
        base = np.argsort(-layer_salience(grad, delta), kind="stable")
        np.testing.assert_array_equal(base, np.argsort(-np.abs(t), kind="stable"))
        for lam in scales:
            np.testing.assert_array_equal(np.argsort(-layer_salience(lam * grad, delta), kind="stable"), base)


class TestReducedEstimators:
    def test_second_order_drops_first_order_term(self) -> None:
        assert channel_salience([1.0, 2.0], [0.1, 0.05], estimator=SalienceEstimator.SECOND_ORDER) == pytest.approx(
            0.02, rel=1e-12
        )

    def test_fisher_diagonal(self) -> None:
        # 0.5 * (1 * 0.01 + 4 * 0.0025)
        assert channel_salience([1.0, 2.0], [0.1, 0.05], estimator="fisher-diag") == pytest.approx(0.01, rel=1e-12)
        # no cancellation between inputs
        assert channel_salience([1.0, 2.0], [0.1, -0.05], estimator="fisher-diag") == pytest.approx(0.01, rel=1e-12)

    def test_per_sample_fisher_averages_squares(self) -> None:
        g = np.array([[1.0, 0.0], [-1.0, 0.0]])
        score = channel_salience(g, [0.5, 0.0], SalienceMode.PER_SAMPLE, SalienceEstimator.FISHER_DIAG)
        assert score == pytest.approx(0.125)

    def test_second_order_ranks_by_magnitude(self, rng: np.random.Generator) -> None:
        grad = rng.normal(size=(30, 16))
        delta = rng.normal(size=(30, 16)) * 0.01
        t = np.einsum("oi,oi->o", grad, delta)
        scores = layer_salience(grad, delta, estimator=SalienceEstimator.SECOND_ORDER)
        np.testing.assert_allclose(scores, 0.5 * t * t, rtol=1e-12)
        np.testing.assert_array_equal(np.argsort(-scores, kind="stable"), np.argsort(-np.abs(t), kind="stable"))

    @pytest.mark.parametrize("estimator", list(SalienceEstimator))
    def test_search_records_estimator(
        self, small_model: ToyModel, gradients: GradientBundle, estimator: SalienceEstimator
    ) -> None:
        assignment = global_search(small_model, gradients, SMALLBIT_SCHEME, 0.2, estimator=estimator)
        assert assignment.estimator == estimator
        assert assignment.n_largebit == 6
        assert local_search(small_model, gradients, SMALLBIT_SCHEME, 0.2, estimator=estimator).estimator == estimator


# ---------- budget ----------


@pytest.mark.parametrize(("percent", "total", "expected"), [(0.0, 10, 0), (1.0, 10, 10), (0.1, 136, 14), (0.5, 3, 2)])
def test_largebit_budget(percent: float, total: int, expected: int) -> None:
    assert largebit_budget(percent, total) == expected


@pytest.mark.parametrize("percent", [-0.1, 1.5, float("nan")])
def test_largebit_budget_rejects_bad_percent(percent: float) -> None:
    with pytest.raises(UsageError):
        largebit_budget(percent, 10)


# ---------- global search ----------


def test_sort_by_hand_example() -> None:
    entries = [
        ChannelSalience(layer_id=0, channel_id=0, salience=0.5),
        ChannelSalience(layer_id=0, channel_id=1, salience=0.1),
        ChannelSalience(layer_id=1, channel_id=0, salience=0.9),
    ]
    assignment = assignment_from_ranking(sort_salience(entries), ["L0", "L1"], [2, 1], 1 / 3)
    assert assignment.n_largebit == 1
    assert assignment.largebit_channels == {(1, 0)}
    assert assignment.smallbit_channels == {(0, 0), (0, 1)}


def test_ties_break_by_layer_then_channel() -> None:
    entries = [ChannelSalience(layer_id=layer, channel_id=ch, salience=1.0) for layer in (1, 0) for ch in (1, 0)]
    ordered = sort_salience(entries)
    assert [(e.layer_id, e.channel_id) for e in ordered] == [(0, 0), (0, 1), (1, 0), (1, 1)]


class TestGlobalSearch:
    def test_percent_zero_and_one(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        none = global_search(small_model, gradients, SMALLBIT_SCHEME, 0.0)
        assert none.n_largebit == 0
        assert not none.largebit_channels
        everything = global_search(small_model, gradients, SMALLBIT_SCHEME, 1.0)
        assert everything.n_largebit == everything.total_channels == 30
        assert not everything.smallbit_channels

    def test_partition_and_budget(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        for percent in (0.05, 0.1, 0.2, 0.5, 0.77):
            assignment = global_search(small_model, gradients, SMALLBIT_SCHEME, percent)
            assert assignment.n_largebit == largebit_budget(percent, 30)
            assert not assignment.largebit_channels & assignment.smallbit_channels
            assert len(assignment.largebit_channels | assignment.smallbit_channels) == 30

    def test_promoted_outrank_the_rest(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        ranking = rank_channels(small_model, gradients, SMALLBIT_SCHEME)
        scores = {(e.layer_id, e.channel_id): e.salience for e in ranking}
        assignment = global_search(small_model, gradients, SMALLBIT_SCHEME, 0.3)
        assert min(scores[c] for c in assignment.largebit_channels) >= max(
            scores[c] for c in assignment.smallbit_channels
        )

    def test_sets_nest_as_percent_grows(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        previous: set[tuple[int, int]] = set()
        for percent in (0.0, 0.1, 0.25, 0.5, 0.9, 1.0):
            current = global_search(small_model, gradients, SMALLBIT_SCHEME, percent).largebit_channels
            assert previous <= current
            previous = current

    def test_per_sample_mode(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        assignment = global_search(small_model, gradients, SMALLBIT_SCHEME, 0.2, SalienceMode.PER_SAMPLE)
        assert assignment.salience_mode == SalienceMode.PER_SAMPLE
        assert assignment.n_largebit == 6

    def test_per_sample_mode_needs_per_sample_gradients(
        self, small_model: ToyModel, small_dataset: CalibrationSet
    ) -> None:
        grads = compute_gradients(small_model, small_dataset)
        with pytest.raises(UsageError):
            global_search(small_model, grads, SMALLBIT_SCHEME, 0.2, SalienceMode.PER_SAMPLE)

    def test_shape_mismatch(self, small_model: ToyModel, gradients: GradientBundle) -> None:
        wrong = GradientBundle(
            aggregated=[np.zeros((3, 3))] + gradients.aggregated[1:], loss=gradients.loss, num_samples=80
        )
        with pytest.raises(DataError):
            global_search(small_model, wrong, SMALLBIT_SCHEME, 0.2)

    def test_weight_deltas_respect_bound(self, small_model: ToyModel) -> None:
        for delta, w in zip(weight_deltas(small_model, SMALLBIT_SCHEME), small_model.weights, strict=True):
            span = np.maximum(w.max(axis=1), 0) - np.minimum(w.min(axis=1), 0)
            assert (np.abs(delta) <= (span / 15 / 2 * (1 + 1e-4))[:, None]).all()


class TestSensitiveLayer:
    def test_promotion_concentrates_in_sensitive_layer(
        self, sensitive_model: ToyModel, default_dataset: CalibrationSet
    ) -> None:
        grads = compute_gradients(sensitive_model, default_dataset)
        assignment = global_search(sensitive_model, grads, SMALLBIT_SCHEME, 0.1)
        share = len(assignment.largebit[1]) / assignment.out_features[1]
        assert share > assignment.n_largebit / assignment.total_channels

    def test_loss_delta_oracle_agrees(self, sensitive_model: ToyModel, default_dataset: CalibrationSet) -> None:
        ranking = loss_delta_ranking(sensitive_model, default_dataset, SMALLBIT_SCHEME)
        top = ranking[: largebit_budget(0.1, len(ranking))]
        assert sum(e.layer_id == 1 for e in top) / 64 > 0.1

    def test_global_beats_layer_local(self, sensitive_model: ToyModel, default_dataset: CalibrationSet) -> None:
        grads = compute_gradients(sensitive_model, default_dataset)
        chosen = global_search(sensitive_model, grads, SMALLBIT_SCHEME, 0.1)
        local = local_search(sensitive_model, grads, SMALLBIT_SCHEME, 0.1)
        assert len(chosen.largebit[1]) > len(local.largebit[1])
        searched = proxy_eval(sensitive_model, quantize_model(sensitive_model, chosen), default_dataset)
        per_layer = proxy_eval(sensitive_model, quantize_model(sensitive_model, local), default_dataset)
        assert searched.loss_delta < per_layer.loss_delta


# ---------- brute-force oracle ----------


class TestLossDeltaSalience:
    def test_matches_ranking_entries(self, small_model: ToyModel, small_dataset: CalibrationSet) -> None:
        ranking = loss_delta_ranking(small_model, small_dataset, SMALLBIT_SCHEME)
        assert len(ranking) == 30
        for entry in ranking[::7]:
            direct = loss_delta_salience(small_model, small_dataset, SMALLBIT_SCHEME, entry.layer_id, entry.channel_id)
            assert direct == entry.salience

    def test_base_loss_can_be_supplied(self, small_model: ToyModel, small_dataset: CalibrationSet) -> None:
        base = forward(small_model, small_dataset).loss
        assert loss_delta_salience(small_model, small_dataset, SMALLBIT_SCHEME, 1, 4, base_loss=base) == (
            loss_delta_salience(small_model, small_dataset, SMALLBIT_SCHEME, 1, 4)
        )

    def test_grid_aligned_channel_costs_nothing(self, small_model: ToyModel, small_dataset: CalibrationSet) -> None:
        weights = [w.copy() for w in small_model.weights]
        # codes 0..15 with zero point 5 on a 0.25 grid survive 4-bit quantization exactly
        weights[0][2] = (np.array([0, 15, 3, 7, 9, 1, 12, 5, 6, 14, 2, 8]) - 5) * 0.25
        model = small_model.with_weights(weights)
        assert loss_delta_salience(model, small_dataset, SMALLBIT_SCHEME, 0, 2) == 0.0


# ---------- baselines ----------


def test_local_search_promotes_per_layer(small_model: ToyModel, small_dataset: CalibrationSet) -> None:
    grads = compute_gradients(small_model, small_dataset)
    assignment = local_search(small_model, grads, SMALLBIT_SCHEME, 0.5)
    assert assignment.strategy == SearchStrategy.LOCAL
    assert [len(layer) for layer in assignment.largebit] == [8, 5, 2]


def test_random_assignment_is_seeded() -> None:
    a = random_assignment(["a", "b"], [40, 60], 0.2, seed=1)
    b = random_assignment(["a", "b"], [40, 60], 0.2, seed=1)
    c = random_assignment(["a", "b"], [40, 60], 0.2, seed=2)
    assert a == b
    assert a.n_largebit == c.n_largebit == 20
    assert a.largebit_channels != c.largebit_channels
    assert a.salience_mode is None


# ---------- assignment JSON ----------


class TestAssignmentStorage:
    def test_round_trip(self, small_model: ToyModel, small_dataset: CalibrationSet, workdir: Path) -> None:
        grads = compute_gradients(small_model, small_dataset)
        assignment = global_search(small_model, grads, SMALLBIT_SCHEME, 0.2)
        save_assignment(assignment, workdir / "a.json")
        assert load_assignment(workdir / "a.json") == assignment
        payload = json.loads((workdir / "a.json").read_text(encoding="utf-8"))
        assert payload["N_largebit"] == 6
        assert payload["percent"] == 0.2

    def test_rejects_broken_partition(self, workdir: Path) -> None:
        payload = {
            "percent": 0.5,
            "N_largebit": 1,
            "layer_names": ["fc1"],
            "out_features": [2],
            "largebit": [[0]],
            "smallbit": [[0]],
        }
        (workdir / "bad.json").write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(DataError):
            load_assignment(workdir / "bad.json")

    def test_missing_file(self, workdir: Path) -> None:
        with pytest.raises(DataError):
            load_assignment(workdir / "absent.json")


def test_assignment_model_rejects_wrong_count() -> None:
    with pytest.raises(ValueError):
        PrecisionAssignment(
            percent=0.5, n_largebit=2, layer_names=["x"], out_features=[2], largebit=[[0]], smallbit=[[1]]
        )
