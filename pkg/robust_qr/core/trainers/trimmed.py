from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robust_qr.core.data import Dataset
from robust_qr.core.losses import pinball, pinball_dr
from robust_qr.core.trainers.base_trainer import MiniBatchTrainer, QuantileFit
from robust_qr.exceptions import InvalidConfigurationError
from robust_qr.models import MethodEnum


@dataclass
class TrimSelection:
    """The `keep` lowest-error samples; ties go to the lower index."""

    indices: np.ndarray
    threshold_error: float


def select_trimmed(errors, keep: int) -> TrimSelection:
    """
    Keep the `keep` samples with the smallest errors.

    Every kept error is <= every discarded error. Returned indices are ascending
    so that keeping everything preserves the original order.
    """
    errors = np.asarray(errors, dtype=float)
    if not 1 <= keep <= errors.size:
        raise InvalidConfigurationError(
            f"Cannot keep {keep} samples out of {errors.size}."
        )
    order = np.argsort(errors, kind="stable")
    kept = np.sort(order[:keep])
    return TrimSelection(indices=kept, threshold_error=float(errors[order[keep - 1]]))


def trimmed_count(trim_count: int, n: int, batch_rows: int) -> int:
    """Per-batch share of the C kept samples: floor(C / N * batch)."""
    return (trim_count * batch_rows) // n


class TrimmedTrainer(MiniBatchTrainer):
    """
    Least trimmed quantile regression.

    Each step keeps only the batch samples with the smallest pinball error and
    back-propagates their mean loss. The first step keeps a random subset of the
    same size. With batch_size >= N this is the classic iterative C-subset scheme.
    """

    method = MethodEnum.tqr

    def validate(self, data: Dataset):
        super().validate(data)
        self.n = data.n
        self.trim_count = self.cfg.resolved_trim_count(data.n)
        if self.trim_count > data.n:
            raise InvalidConfigurationError(
                f"Trim count C={self.trim_count} exceeds the {data.n} training samples."
            )
        batch_rows = min(self.cfg.batch_size, data.n)
        if trimmed_count(self.trim_count, data.n, batch_rows) < 1:
            raise InvalidConfigurationError(
                f"Trimming C={self.trim_count} of N={data.n} keeps no sample of a "
                f"{batch_rows}-row batch."
            )

    def batch_upstream(self, residuals, alpha, first_step, streams) -> np.ndarray:
        m = residuals.shape[0]
        keep = max(1, trimmed_count(self.trim_count, self.n, m))
        if first_step:
            kept = np.sort(streams.trim_rng.choice(m, size=keep, replace=False))
        else:
            kept = select_trimmed(pinball(residuals, alpha), keep).indices

        upstream = np.zeros(m)
        upstream[kept] = -np.asarray(pinball_dr(residuals[kept], alpha)) / keep
        return upstream

    def objective(self, residuals, alpha) -> float:
        """Mean pinball error over the C best-fitted samples."""
        errors = np.asarray(pinball(residuals, alpha)).ravel()
        kept = select_trimmed(errors, self.trim_count).indices
        return float(np.mean(errors[kept]))

    def finish(self, fit: QuantileFit, residuals, alpha) -> QuantileFit:
        fit.selected_indices = select_trimmed(
            np.asarray(pinball(residuals, alpha)).ravel(), self.trim_count
        ).indices
        return fit
