from __future__ import annotations

from typing import Sequence

from robust_qr.core.data import Dataset
from robust_qr.core.trainers.base_trainer import (
    BaseTrainer,
    FitResult,
    QuantileFit,
    SeedStreams,
    Standardizer,
    StepCallback,
)
from robust_qr.core.trainers.beta import BetaTrainer
from robust_qr.core.trainers.case_specific import CaseSpecificTrainer, RcpState
from robust_qr.core.trainers.quantile import QuantileTrainer
from robust_qr.core.trainers.trimmed import TrimmedTrainer, TrimSelection, select_trimmed
from robust_qr.exceptions import EmptyDatasetError, InvalidConfigurationError
from robust_qr.models import LayerSpec, MethodEnum, TrainConfig

TRAINERS: dict[MethodEnum, type[BaseTrainer]] = {
    MethodEnum.qr: QuantileTrainer,
    MethodEnum.tqr: TrimmedTrainer,
    MethodEnum.rcp: CaseSpecificTrainer,
    MethodEnum.beta_qr: BetaTrainer,
}


def train(
    data: Dataset,
    specs: Sequence[LayerSpec],
    cfg: TrainConfig,
    scaler: Standardizer | None = None,
    callback: StepCallback | None = None,
) -> FitResult:
    """Dispatch on cfg.method."""
    return TRAINERS[cfg.method](cfg, specs).fit(data, scaler=scaler, callback=callback)


def _expect(cfg: TrainConfig, method: MethodEnum):
    if cfg.method != method:
        raise InvalidConfigurationError(
            f"Expected a '{method.value}' config, got '{cfg.method.value}'."
        )


def train_qr(data, specs, cfg, scaler=None, callback=None) -> FitResult:
    _expect(cfg, MethodEnum.qr)
    return train(data, specs, cfg, scaler, callback)


def train_tqr(data, specs, cfg, scaler=None, callback=None) -> FitResult:
    _expect(cfg, MethodEnum.tqr)
    return train(data, specs, cfg, scaler, callback)


def train_rcp(data, specs, cfg, scaler=None, callback=None) -> FitResult:
    _expect(cfg, MethodEnum.rcp)
    return train(data, specs, cfg, scaler, callback)


def train_beta_qr(data, specs, cfg, scaler=None, callback=None) -> FitResult:
    _expect(cfg, MethodEnum.beta_qr)
    return train(data, specs, cfg, scaler, callback)


def fit_reference(
    data: Dataset,
    specs: Sequence[LayerSpec],
    cfg: TrainConfig,
    scaler: Standardizer | None = None,
) -> FitResult:
    """
    Plain QR on the inlier rows only: the outlier-free target robust fits are compared with.

    Standardization statistics come from the full dataset so that the reference
    and the robust fits share coordinates; with an all-true mask the result is
    identical to train_qr on the full data.

    Raises:
        InvalidConfigurationError: If the dataset has no inlier mask.
        EmptyDatasetError: If the mask keeps fewer than 2 rows.
    """
    if data.inlier_mask is None:
        raise InvalidConfigurationError(
            f"Dataset '{data.name}' has no inlier mask to fit a reference on."
        )
    if int(data.inlier_mask.sum()) < 2:
        raise EmptyDatasetError(
            f"Inlier mask of '{data.name}' keeps {int(data.inlier_mask.sum())} rows; at least 2 are needed."
        )
    if cfg.method != MethodEnum.qr:
        cfg = cfg.model_copy(update={"method": MethodEnum.qr})
    if scaler is None:
        scaler = Standardizer.fit(data) if cfg.standardize else Standardizer.identity(data.d)
    return train_qr(data.inliers(), specs, cfg, scaler=scaler)


__all__ = [
    "TRAINERS",
    "BaseTrainer",
    "BetaTrainer",
    "CaseSpecificTrainer",
    "FitResult",
    "QuantileFit",
    "QuantileTrainer",
    "RcpState",
    "SeedStreams",
    "Standardizer",
    "TrimmedTrainer",
    "TrimSelection",
    "fit_reference",
    "select_trimmed",
    "train",
    "train_beta_qr",
    "train_qr",
    "train_rcp",
    "train_tqr",
]
