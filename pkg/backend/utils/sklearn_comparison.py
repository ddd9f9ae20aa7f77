"""backend.utils.sklearn_comparison
+------------------------------------------------
Recompute the counting metrics with scikit-learn as an independent check
on the in-house MAE and root-mean-square error.

Example
-------
>>> comp = SklearnComparison()
>>> comp.calculate_sklearn_results([12.0, 18.0], [10.0, 20.0])["metrics"]["mae"]
2.0
"""

import numpy as np

from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score


class SklearnComparison:
    """Compare in-house count metrics with ``sklearn.metrics``."""

    def calculate_sklearn_results(
        self, pred_counts: np.ndarray, gt_counts: np.ndarray
    ) -> dict[str, object]:
        """MAE, root-MSE and R² of predicted against ground-truth counts."""
        try:
            y_pred: np.ndarray = np.asarray(pred_counts, dtype=float).reshape(-1)
            y_true: np.ndarray = np.asarray(gt_counts, dtype=float).reshape(-1)
            return {
                "n_images": int(y_true.size),
                "metrics": self._calculate_comparison_metrics(y_true, y_pred),
            }
        except Exception as exc:
            return {"error": True, "message": f"Sklearn comparison failed: {exc}"}

    @staticmethod
    def _calculate_comparison_metrics(
        y_true: np.ndarray, y_pred: np.ndarray
    ) -> dict[str, float | None]:
        metrics: dict[str, float | None] = {
            "mae": float(mean_absolute_error(y_true, y_pred)),
            "mse": float(np.sqrt(mean_squared_error(y_true, y_pred))),
            "r2": None,
        }
        # r2 is undefined for a single image or constant ground truth
        if y_true.size > 1 and np.ptp(y_true) > 0:
            metrics["r2"] = float(r2_score(y_true, y_pred))
        return metrics

    @staticmethod
    def agrees(report_metrics: dict[str, float], sklearn_metrics: dict[str, float | None], tol: float = 1e-9) -> bool:
        """True when MAE and root-MSE match to ``tol``."""
        return all(
            abs(float(report_metrics[key]) - float(sklearn_metrics[key] or 0.0)) <= tol
            for key in ("mae", "mse")
        )
