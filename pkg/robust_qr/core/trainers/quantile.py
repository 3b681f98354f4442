import numpy as np

from robust_qr.core.trainers.base_trainer import (
    MiniBatchTrainer,
    mean_pinball,
    mean_pinball_upstream,
)
from robust_qr.models import MethodEnum


class QuantileTrainer(MiniBatchTrainer):
    """Plain quantile regression: mini-batch ADAM on the mean pinball loss."""

    method = MethodEnum.qr

    def batch_upstream(self, residuals, alpha, first_step, streams) -> np.ndarray:
        return mean_pinball_upstream(residuals, alpha)

    def objective(self, residuals, alpha) -> float:
        return mean_pinball(residuals, alpha)
