import json

import numpy as np
import pytest

from backend.errors import DataError, ShapeError
from backend.models.metrics_calculator import (
    MetricsCalculator,
    count,
    game,
    game_single,
    metrics,
)
from backend.utils.density import gt_density
from backend.utils.sklearn_comparison import SklearnComparison


def brute_force_game(pred, gt, level):
    """Assign every pixel to its cell, then sum per-cell absolute errors."""
    parts = 2**level
    height, width = pred.shape
    row_edges = [(i * height) // parts for i in range(parts + 1)]
    col_edges = [(i * width) // parts for i in range(parts + 1)]
    diff = np.zeros((parts, parts))
    for r in range(height):
        for c in range(width):
            i = int(np.searchsorted(row_edges, r, side="right")) - 1
            j = int(np.searchsorted(col_edges, c, side="right")) - 1
            diff[i, j] += pred[r, c] - gt[r, c]
    return float(np.abs(diff).sum())


class TestCountMetrics:
    def test_hand_example(self):
        assert metrics([12.0, 18.0], [10.0, 20.0]) == {"mae": 2.0, "mse": 2.0}

    def test_mse_is_root_mean_square(self):
        result = metrics([1.0, 4.0], [0.0, 0.0])
        assert result["mae"] == 2.5
        assert result["mse"] == pytest.approx(np.sqrt(8.5))

    def test_empty(self):
        with pytest.raises(DataError):
            metrics([], [])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            metrics([1.0], [1.0, 2.0])

    def test_against_direct_recomputation(self, rng):
        pairs = [(rng.random((12, 10)) * 0.3, rng.random((12, 10)) * 0.3) for _ in range(50)]
        errors = [p.sum() - g.sum() for p, g in pairs]
        result = metrics([p.sum() for p, _ in pairs], [g.sum() for _, g in pairs])
        assert result["mae"] == pytest.approx(sum(abs(e) for e in errors) / 50, abs=1e-9)
        assert result["mse"] == pytest.approx((sum(e * e for e in errors) / 50) ** 0.5, abs=1e-9)
        assert result["mse"] >= result["mae"]
        for level in range(4):
            brute = sum(brute_force_game(p, g, level) for p, g in pairs) / 50
            assert game([p for p, _ in pairs], [g for _, g in pairs], level) == pytest.approx(brute, abs=1e-9)

    def test_count_is_sum(self):
        assert count(np.full((4, 5), 0.5)) == 10.0


class TestGame:
    def test_misplaced_mass(self):
        pred = np.zeros((4, 4))
        gt = np.zeros((4, 4))
        pred[0, 0] = 1.0
        gt[3, 3] = 1.0
        assert game(pred, gt, 0) == 0.0
        assert game(pred, gt, 1) == 2.0

    def test_level_zero_is_count_error(self, rng):
        pred, gt = rng.random((9, 13)), rng.random((9, 13))
        assert game(pred, gt, 0) == pytest.approx(abs(pred.sum() - gt.sum()))

    def test_non_decreasing_in_level(self, rng):
        for _ in range(5):
            pred, gt = rng.random((17, 23)), rng.random((17, 23))
            values = [game(pred, gt, level) for level in range(5)]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("shape", [(8, 8), (7, 10), (3, 5)])
    @pytest.mark.parametrize("level", [0, 1, 2, 3])
    def test_matches_brute_force(self, rng, shape, level):
        pred, gt = rng.random(shape), rng.random(shape)
        assert game_single(pred, gt, level) == pytest.approx(brute_force_game(pred, gt, level), abs=1e-12)

    def test_literal_strips_ignore_rows(self):
        pred = np.zeros((4, 4))
        gt = np.zeros((4, 4))
        pred[0, 1] = 1.0
        gt[3, 1] = 1.0
        assert game(pred, gt, 1, literal=True) == 0.0
        assert game(pred, gt, 1) == 2.0

    def test_averaged_over_images(self):
        a, b = np.zeros((2, 2)), np.ones((2, 2))
        assert game([a, b], [a, a], 0) == 2.0

    def test_identical_maps_score_zero(self):
        gt = gt_density([(3.0, 4.0), (10.0, 12.0)], (16, 16)).values
        assert [game(gt, gt, level) for level in range(4)] == [0.0] * 4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            game(np.zeros((4, 4)), np.zeros((4, 5)), 1)

    def test_negative_level(self):
        with pytest.raises(ValueError):
            game(np.zeros((4, 4)), np.zeros((4, 4)), -1)


class TestMetricsCalculator:
    def _maps(self, rng, n=4):
        return [(rng.random((8, 8)), rng.random((8, 8))) for _ in range(n)]

    def test_arrival_order_does_not_matter(self, rng):
        maps = self._maps(rng)
        forward, backward = MetricsCalculator(), MetricsCalculator()
        for i, (p, g) in enumerate(maps):
            forward.add(forward.measure(i, f"s{i}", p, g, points=0))
        for i, (p, g) in reversed(list(enumerate(maps))):
            backward.add(backward.measure(i, f"s{i}", p, g, points=0))
        assert forward.report().to_json() == backward.report().to_json()

    def test_report_layout(self, rng):
        calc = MetricsCalculator()
        for i, (p, g) in enumerate(self._maps(rng, 3)):
            calc.add(calc.measure(i, f"s{i}", p, g, points=i))
        report = calc.report()
        payload = json.loads(report.to_json())
        assert list(payload) == ["mae", "mse", "game", "grid", "images", "sklearn_check"]
        assert len(payload["game"]) == 4
        assert payload["game"][0] == pytest.approx(payload["mae"])
        assert payload["images"][2]["points"] == 2
        assert payload["sklearn_check"]["agrees"] is True

    def test_duplicate_index(self, rng):
        calc = MetricsCalculator()
        (p, g), = self._maps(rng, 1)
        calc.add(calc.measure(0, "a", p, g, points=0))
        with pytest.raises(ValueError):
            calc.add(calc.measure(0, "a", p, g, points=0))

    def test_empty_report(self):
        with pytest.raises(DataError):
            MetricsCalculator().report()


class TestSklearnComparison:
    def test_matches_in_house_metrics(self, rng):
        pred, gt = rng.random(20) * 30, rng.random(20) * 30
        ours = metrics(pred, gt)
        theirs = SklearnComparison().calculate_sklearn_results(pred, gt)["metrics"]
        assert SklearnComparison.agrees(ours, theirs)
        assert theirs["r2"] is not None

    def test_r2_undefined_for_one_image(self):
        result = SklearnComparison().calculate_sklearn_results([3.0], [4.0])
        assert result["metrics"]["r2"] is None
        assert result["metrics"]["mae"] == 1.0
