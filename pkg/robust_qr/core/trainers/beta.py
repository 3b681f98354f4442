import logging

import numpy as np

from robust_qr.core.data import Dataset
from robust_qr.core.losses import beta_pinball, beta_pinball_dr
from robust_qr.core.trainers.base_trainer import MiniBatchTrainer
from robust_qr.core.trainers.trimmed import TrimmedTrainer
from robust_qr.models import MethodEnum


class BetaTrainer(MiniBatchTrainer):
    """
    beta-QR: mini-batch ADAM on the mean density-power pinball loss.

    Each sample's gradient is weighted by exp(-beta * rho), so observations the
    current model finds very unlikely barely move it. With warm_start the descent
    begins from the trimmed fit that the same seed and trimming would produce.
    """

    method = MethodEnum.beta_qr

    @property
    def beta_cfg(self):
        return self.cfg.beta_cfg

    def validate(self, data: Dataset):
        super().validate(data)
        self.warm_trainer = None
        if self.cfg.warm_start:
            self.warm_trainer = TrimmedTrainer(self.cfg.model_copy(update={"method": MethodEnum.tqr}), self.specs)
            self.warm_trainer.validate(data)

    def start_model(self, X, y, alpha, streams):
        if self.warm_trainer is None:
            return super().start_model(X, y, alpha, streams)
        trimmed = self.warm_trainer.fit_quantile(X, y, alpha, streams, None)
        logging.info(
            f"beta_qr alpha={alpha}: warm start from the trimmed fit "
            f"(C={self.warm_trainer.trim_count}, objective {trimmed.final_loss:.6g})"
        )
        return trimmed.model

    def batch_upstream(self, residuals, alpha, first_step, streams) -> np.ndarray:
        return -np.asarray(beta_pinball_dr(residuals, alpha, self.beta_cfg)) / residuals.shape[0]

    def objective(self, residuals, alpha) -> float:
        return float(np.mean(beta_pinball(residuals, alpha, self.beta_cfg)))
