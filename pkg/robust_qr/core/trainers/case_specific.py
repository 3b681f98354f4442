from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from robust_qr.core.data import Dataset
from robust_qr.core.losses import pinball, pinball_dr, soft_threshold
from robust_qr.core.net import adam_step, backward_batch, forward_batch, predict
from robust_qr.core.trainers.base_trainer import (
    STOP_BUDGET,
    STOP_CONVERGED,
    BaseTrainer,
    QuantileFit,
    mean_pinball_upstream,
    scheduled_learning_rate,
)
from robust_qr.exceptions import InvalidConfigurationError, NumericalFailureError
from robust_qr.models import MethodEnum

# Objective increases smaller than this are treated as round-off.
MONOTONICITY_TOL = 1e-8


@dataclass
class RcpState:
    """One shift gamma_i per training observation."""

    gammas: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "RcpState":
        return cls(gammas=np.zeros(n))


def rcp_objective(residuals: np.ndarray, gammas: np.ndarray, alpha: float, lam: float) -> float:
    """(sum rho(r - gamma) + lam * sum |gamma|) / N."""
    return float(np.mean(pinball(residuals - gammas, alpha)) + lam * np.mean(np.abs(gammas)))


def update_gammas(residuals: np.ndarray, state: RcpState, alpha: float, lam: float, step: float) -> RcpState:
    """Proximal-gradient step on the gamma block: gradient step on the pinball term, then shrink."""
    grad = -np.asarray(pinball_dr(residuals - state.gammas, alpha))
    return RcpState(gammas=np.asarray(soft_threshold(state.gammas - step * grad, lam * step)))


class CaseSpecificTrainer(BaseTrainer):
    """
    Quantile regression with L1-penalized case-specific shifts (RCP).

    Alternates ADAM steps on the model with gamma fixed and a proximal step
    on gamma with the model fixed. Full batch only: gamma_i belongs to row i.
    """

    method = MethodEnum.rcp

    def validate(self, data: Dataset):
        super().validate(data)
        if self.cfg.lambda_ is None or self.cfg.lambda_ <= 0:
            raise InvalidConfigurationError("RCP requires a positive lambda (--lambda).")
        if self.cfg.batch_size < data.n:
            raise InvalidConfigurationError(
                f"RCP keeps one gamma per observation and runs full-batch; batch size "
                f"{self.cfg.batch_size} is smaller than the {data.n} training samples."
            )

    def fit_quantile(self, X, y, alpha, streams, callback):
        lam = self.cfg.lambda_
        model, state = self.initial_state(streams)
        rcp = RcpState.zeros(y.shape[0])

        previous = self.check_finite(
            rcp_objective(y - predict(model, X), rcp.gammas, alpha, lam), "initial objective"
        )
        initial_loss = previous
        losses: list[float] = []
        stop_reason = STOP_BUDGET
        violations = 0
        step = 0

        for round_index in range(self.cfg.outer_iters):
            state = replace(
                state, learning_rate=scheduled_learning_rate(self.cfg, round_index, self.cfg.outer_iters)
            )
            for _ in range(self.cfg.inner_steps):
                prediction, cache = forward_batch(model, X)
                upstream = mean_pinball_upstream(y - prediction - rcp.gammas, alpha)
                grads = backward_batch(model, cache, upstream)
                try:
                    model, state = adam_step(model, grads, state)
                except NumericalFailureError as exc:
                    raise NumericalFailureError(str(exc), epoch=round_index) from exc
                step += 1
                if callback is not None:
                    callback(alpha, step, model)

            residuals = y - predict(model, X)
            rcp = update_gammas(residuals, rcp, alpha, lam, self.cfg.gamma_lr)

            objective = self.check_finite(
                rcp_objective(residuals, rcp.gammas, alpha, lam), "objective", round_index
            )
            losses.append(objective)
            if objective > previous + MONOTONICITY_TOL:
                violations += 1
                logging.debug(
                    f"rcp alpha={alpha} round {round_index}: objective rose "
                    f"{previous:.8g} -> {objective:.8g}"
                )
            if abs(objective - previous) < self.cfg.convergence_tol:
                stop_reason = STOP_CONVERGED
                break
            previous = objective

        if violations:
            logging.warning(
                f"rcp alpha={alpha}: objective rose in {violations} of {len(losses)} rounds"
            )
        return QuantileFit(
            alpha=alpha,
            model=model,
            losses=losses,
            initial_loss=initial_loss,
            stop_reason=stop_reason,
            gammas=rcp.gammas,
            monotonicity_violations=violations,
        )
