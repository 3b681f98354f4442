"""
Metrics comparing fitted quantile models with outlier-free references and oracles.

A "model" here is anything that maps a feature matrix to predictions: an
`MlpModel` (evaluated as is), a callable, or a fitted quantile taken from a
FitResult with `FitResult.quantile_model(alpha)`.
"""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

from robust_qr.core.data import Dataset
from robust_qr.core.losses import pinball
from robust_qr.core.net import MlpModel, predict
from robust_qr.core.trainers import FitResult
from robust_qr.exceptions import EmptyDatasetError, InvalidConfigurationError
from robust_qr.models import EvalRecord, EvalReport

QuantileModel = Union[MlpModel, Callable[[np.ndarray], np.ndarray]]


def _predict(model: QuantileModel, X) -> np.ndarray:
    if isinstance(model, MlpModel):
        return predict(model, X)
    if callable(model):
        return np.asarray(model(np.asarray(X, dtype=float)), dtype=float).ravel()
    raise TypeError(f"Cannot evaluate object of type {type(model).__name__} as a quantile model.")


def _eval_points(eval_points) -> np.ndarray:
    X = np.asarray(eval_points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise EmptyDatasetError("No evaluation points given.")
    return X


def frobenius_distance(model_a: QuantileModel, model_b: QuantileModel, eval_points) -> float:
    """sqrt(sum over rows of (f_a(x) - f_b(x))^2)."""
    X = _eval_points(eval_points)
    return float(np.linalg.norm(_predict(model_a, X) - _predict(model_b, X)))


def quantile_mse(model_a: QuantileModel, model_b: QuantileModel, eval_points) -> float:
    """Mean squared difference between two quantile models' predictions."""
    X = _eval_points(eval_points)
    return float(np.mean((_predict(model_a, X) - _predict(model_b, X)) ** 2))


def parameter_distance(model_a: MlpModel, model_b: MlpModel) -> float:
    """Euclidean distance between flattened parameters (same architecture only)."""
    if model_a.layers != model_b.layers:
        raise InvalidConfigurationError("Parameter distance needs identical architectures.")
    return float(np.linalg.norm(model_a.flat_parameters() - model_b.flat_parameters()))


def empirical_coverage(model: QuantileModel, data: Dataset, alpha: Optional[float] = None) -> float:
    """Fraction of rows with y <= f(x)."""
    coverage = float(np.mean(data.responses <= _predict(model, data.features)))
    if alpha is not None:
        logging.debug(f"coverage at alpha={alpha}: {coverage:.4f} on {data.n} rows")
    return coverage


def median_mse(model: QuantileModel, data: Dataset, inliers_only: bool = False) -> float:
    """Mean of (y - f(x))^2, optionally over the inlier rows only."""
    if inliers_only:
        data = data.inliers()
    return float(np.mean((data.responses - _predict(model, data.features)) ** 2))


def pinball_score(model: QuantileModel, data: Dataset, alpha: float) -> float:
    """Mean pinball loss of the model on data; lower is better."""
    return float(np.mean(pinball(data.responses - _predict(model, data.features), alpha)))


def build_report(
    fits: Sequence[FitResult],
    reference: FitResult,
    data: Dataset,
    coverage_data: Optional[Dataset] = None,
    config: Optional[dict] = None,
    wall_time_seconds: Optional[float] = None,
) -> EvalReport:
    """
    Assemble per-(method, alpha) metrics.

    Frobenius distances and quantile errors are measured over every feature row of
    `data` (outlier rows included). Coverage is measured on `coverage_data` when
    given (e.g. a clean held-out set), otherwise on `data`.

    Raises:
        InvalidConfigurationError: If the reference lacks an alpha some fit has.
    """
    if not fits:
        raise InvalidConfigurationError("No fits to report on.")
    alphas = list(fits[0].alphas)
    for fit in fits:
        missing = [alpha for alpha in fit.alphas if alpha not in reference.fits]
        if missing:
            raise InvalidConfigurationError(
                f"Reference has no fit for alpha {missing} (method {fit.method.value})."
            )

    coverage_data = coverage_data or data
    records = []
    for fit in fits:
        for alpha in fit.alphas:
            model = fit.quantile_model(alpha)
            target = reference.quantile_model(alpha)
            frobenius = frobenius_distance(model, target, data.features)

            median_error = None
            if alpha == 0.5:
                median_error = median_mse(model, data, inliers_only=data.inlier_mask is not None)

            parameter_gap = None
            if len(fit.specs) == 1 and fit.specs == reference.specs:
                parameter_gap = parameter_distance(fit.model(alpha), reference.model(alpha))

            quantile_fit = fit.fits[alpha]
            records.append(
                EvalRecord(
                    method=fit.method,
                    alpha=alpha,
                    frobenius_to_reference=frobenius,
                    frobenius_standardized=frobenius / reference.scaler.y_scale,
                    quantile_mse=quantile_mse(model, target, data.features),
                    coverage=empirical_coverage(model, coverage_data, alpha),
                    median_mse=median_error,
                    parameter_distance=parameter_gap,
                    final_loss=quantile_fit.final_loss,
                    epochs_run=quantile_fit.epochs_run,
                    stop_reason=quantile_fit.stop_reason,
                )
            )

    return EvalReport(
        dataset=data.name,
        provenance=data.provenance,
        methods=[fit.method for fit in fits],
        alphas=alphas,
        seed=fits[0].seed,
        records=records,
        config=config or {},
        wall_time_seconds=wall_time_seconds,
    )
