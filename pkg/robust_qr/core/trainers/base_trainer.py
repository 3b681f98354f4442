from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from robust_qr.core.data import Dataset
from robust_qr.core.losses import pinball, pinball_dr
from robust_qr.core.net import (
    AdamState,
    MlpModel,
    adam_step,
    backward_batch,
    forward_batch,
    init_model,
    predict,
    validate_specs,
)
from robust_qr.exceptions import (
    EmptyDatasetError,
    InvalidConfigurationError,
    NumericalFailureError,
)
from robust_qr.models import LayerSpec, MethodEnum, TrainConfig

STOP_BUDGET = "epoch_budget"
STOP_CONVERGED = "converged"

# callback(alpha, step, model) after every parameter update
StepCallback = Callable[[float, int, MlpModel], None]


@dataclass
class Standardizer:
    """z-score of features and responses; zero-variance columns keep scale 1."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        x_scale = data.features.std(axis=0)
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
        y_scale = float(data.responses.std())
        return cls(
            x_mean=data.features.mean(axis=0),
            x_scale=x_scale,
            y_mean=float(data.responses.mean()),
            y_scale=y_scale if y_scale > 0 else 1.0,
        )

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(x_mean=np.zeros(d), x_scale=np.ones(d), y_mean=0.0, y_scale=1.0)

    def transform_x(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.x_mean.size)
        return (X - self.x_mean) / self.x_scale

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def inverse_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }


@dataclass
class QuantileFit:
    alpha: float
    model: MlpModel
    losses: list[float]
    initial_loss: float
    stop_reason: str
    selected_indices: Optional[np.ndarray] = None
    gammas: Optional[np.ndarray] = None
    monotonicity_violations: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else self.initial_loss

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def to_dict(self) -> dict:
        payload = {
            "alpha": self.alpha,
            "model": self.model.to_dict(),
            "losses": list(self.losses),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "stop_reason": self.stop_reason,
            "monotonicity_violations": self.monotonicity_violations,
        }
        if self.selected_indices is not None:
            payload["selected_indices"] = [int(i) for i in self.selected_indices]
        if self.gammas is not None:
            payload["gammas"] = self.gammas.tolist()
        return payload


@dataclass
class FitResult:
    method: MethodEnum
    config: TrainConfig
    specs: tuple[LayerSpec, ...]
    scaler: Standardizer
    fits: dict[float, QuantileFit] = field(default_factory=dict)

    @property
    def alphas(self) -> list[float]:
        return list(self.fits.keys())

    @property
    def seed(self) -> int:
        return self.config.seed

    def model(self, alpha: float) -> MlpModel:
        return self.fits[alpha].model

    def predict_standardized(self, alpha: float, X) -> np.ndarray:
        return predict(self.model(alpha), self.scaler.transform_x(X))

    def predict(self, alpha: float, X) -> np.ndarray:
        """Predicted alpha-quantile at X, in the response's original units."""
        return self.scaler.inverse_y(self.predict_standardized(alpha, X))

    def quantile_model(self, alpha: float):
        """The fitted alpha-quantile as a callable X -> predictions in original units."""
        return partial(self.predict, alpha)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "seed": self.seed,
            "config": self.config.model_dump(mode="json", by_alias=True),
            "architecture": [spec.model_dump(mode="json") for spec in self.specs],
            "scaler": self.scaler.to_dict(),
            "fits": [fit.to_dict() for fit in self.fits.values()],
        }


@dataclass
class SeedStreams:
    """Independent PRNG streams so that e.g. trimming draws never shift the batch order."""

    init_seed: int
    batch_rng: np.random.Generator
    trim_rng: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "SeedStreams":
        init_ss, batch_ss, trim_ss = np.random.SeedSequence(seed).spawn(3)
        return cls(
            init_seed=int(init_ss.generate_state(1)[0]),
            batch_rng=np.random.default_rng(batch_ss),
            trim_rng=np.random.default_rng(trim_ss),
        )

    def start_seeds(self, count: int) -> list[int]:
        """Init seeds of `count` multi-start candidates, the first being init_seed itself."""
        children = np.random.SeedSequence(self.init_seed).spawn(count - 1)
        return [self.init_seed] + [int(child.generate_state(1)[0]) for child in children]


class BaseTrainer(ABC):
    method: MethodEnum

    def __init__(self, cfg: TrainConfig, specs: Sequence[LayerSpec]):
        if cfg.method != self.method:
            raise InvalidConfigurationError(
                f"{type(self).__name__} trains '{self.method.value}', config asks for '{cfg.method.value}'."
            )
        self.cfg = cfg
        self.specs = tuple(specs)
        validate_specs(self.specs)

    def validate(self, data: Dataset):
        """Method-specific checks against the data; raise InvalidConfigurationError."""
        if data.d != self.specs[0].input_dim:
            raise InvalidConfigurationError(
                f"Architecture expects {self.specs[0].input_dim} features, data has {data.d}."
            )

    def fit(
        self,
        data: Dataset,
        scaler: Standardizer | None = None,
        callback: StepCallback | None = None,
    ) -> FitResult:
        """
        Fit one independent model per quantile level in cfg.alphas.

        Args:
            data: Training data (its inlier mask, if any, is ignored).
            scaler: Standardization to train in. Defaults to one fitted on `data`
                (or the identity when cfg.standardize is off).
            callback: Called after every optimizer step.

        Raises:
            EmptyDatasetError: If data has no rows.
            InvalidConfigurationError: On method parameters inconsistent with the data.
            NumericalFailureError: If the loss turns NaN/Inf.
        """
        if data.n < 1:
            raise EmptyDatasetError("Cannot train on an empty dataset.")
        self.validate(data)

        if scaler is None:
            scaler = Standardizer.fit(data) if self.cfg.standardize else Standardizer.identity(data.d)
        X = scaler.transform_x(data.features)
        y = scaler.transform_y(data.responses)

        result = FitResult(method=self.method, config=self.cfg, specs=self.specs, scaler=scaler)
        for alpha in self.cfg.alphas:
            # Same streams for every alpha: joint and separate runs coincide.
            streams = SeedStreams.from_seed(self.cfg.seed)
            fit = self.fit_quantile(X, y, alpha, streams, callback)
            logging.info(
                f"{self.method.value} alpha={alpha}: {fit.epochs_run} epochs, "
                f"final loss {fit.final_loss:.6g} ({fit.stop_reason})"
            )
            result.fits[alpha] = fit
        return result

    @abstractmethod
    def fit_quantile(
        self,
        X: np.ndarray,
        y: np.ndarray,
        alpha: float,
        streams: SeedStreams,
        callback: StepCallback | None,
    ) -> QuantileFit:
        """Train a single quantile model on standardized data."""

    def initial_state(self, streams: SeedStreams) -> tuple[MlpModel, AdamState]:
        model = init_model(self.specs, streams.init_seed)
        return model, AdamState.for_model(model, learning_rate=self.cfg.learning_rate)

    @staticmethod
    def check_finite(value: float, what: str, epoch: int | None = None) -> float:
        if not np.isfinite(value):
            raise NumericalFailureError(f"Non-finite {what}", epoch=epoch)
        return value


class MiniBatchTrainer(BaseTrainer):
    """
    Shared loop for the methods that are plain mini-batch ADAM on a per-sample loss:
    shuffle, step on every batch, evaluate the full objective once per epoch and stop
    on the epoch budget or when it changes by less than convergence_tol.
    """

    @abstractmethod
    def batch_upstream(
        self,
        residuals: np.ndarray,
        alpha: float,
        first_step: bool,
        streams: SeedStreams,
    ) -> np.ndarray:
        """d(batch objective)/d(prediction) for each row of the batch."""

    @abstractmethod
    def objective(self, residuals: np.ndarray, alpha: float) -> float:
        """Full-data objective tracked in the loss trajectory."""

    def finish(self, fit: QuantileFit, residuals: np.ndarray, alpha: float) -> QuantileFit:
        return fit

    def fit_quantile(self, X, y, alpha, streams, callback):
        model = self.start_model(X, y, alpha, streams)
        # A multi-start winner already took its random first step.
        return self.descend(
            model, X, y, alpha, streams, callback, self.cfg.epochs,
            random_first_step=self.cfg.n_starts == 1,
        )

    def start_model(self, X: np.ndarray, y: np.ndarray, alpha: float, streams: SeedStreams) -> MlpModel:
        """
        Parameters the main run starts from.

        With n_starts > 1 every candidate init is trained for start_epochs and the one
        with the lowest objective wins; the first candidate is the plain seeded init.
        """
        if self.cfg.n_starts == 1:
            return init_model(self.specs, streams.init_seed)

        best: QuantileFit | None = None
        best_index = 0
        for index, seed in enumerate(streams.start_seeds(self.cfg.n_starts)):
            candidate = self.descend(
                init_model(self.specs, seed), X, y, alpha, streams, None, self.cfg.start_epochs
            )
            logging.debug(
                f"{self.method.value} alpha={alpha} start {index}: objective {candidate.final_loss:.8g}"
            )
            if best is None or candidate.final_loss < best.final_loss:
                best, best_index = candidate, index
        logging.info(
            f"{self.method.value} alpha={alpha}: continuing from start {best_index} of "
            f"{self.cfg.n_starts} (objective {best.final_loss:.6g})"
        )
        return best.model

    def descend(
        self,
        model: MlpModel,
        X: np.ndarray,
        y: np.ndarray,
        alpha: float,
        streams: SeedStreams,
        callback: StepCallback | None,
        epochs: int,
        random_first_step: bool = True,
    ) -> QuantileFit:
        """Mini-batch ADAM from `model` with a fresh optimizer state."""
        state = AdamState.for_model(model, learning_rate=self.cfg.learning_rate)
        n = y.shape[0]
        batch_size = min(self.cfg.batch_size, n)

        initial_loss = self.check_finite(self.objective(y - predict(model, X), alpha), "initial loss")
        losses: list[float] = []
        previous = initial_loss
        stop_reason = STOP_BUDGET
        step = 0

        for epoch in range(epochs):
            state = replace(state, learning_rate=scheduled_learning_rate(self.cfg, epoch, epochs))
            order = streams.batch_rng.permutation(n) if batch_size < n else np.arange(n)
            for start in range(0, n, batch_size):
                rows = order[start : start + batch_size]
                prediction, cache = forward_batch(model, X[rows])
                first_step = random_first_step and step == 0
                upstream = self.batch_upstream(y[rows] - prediction, alpha, first_step, streams)
                grads = backward_batch(model, cache, upstream)
                try:
                    model, state = adam_step(model, grads, state)
                except NumericalFailureError as exc:
                    raise NumericalFailureError(str(exc), epoch=epoch) from exc
                step += 1
                if callback is not None:
                    callback(alpha, step, model)

            loss = self.check_finite(self.objective(y - predict(model, X), alpha), "loss", epoch)
            losses.append(loss)
            logging.debug(f"{self.method.value} alpha={alpha} epoch {epoch}: loss {loss:.8g}")
            if abs(loss - previous) < self.cfg.convergence_tol:
                stop_reason = STOP_CONVERGED
                break
            previous = loss

        fit = QuantileFit(
            alpha=alpha,
            model=model,
            losses=losses,
            initial_loss=initial_loss,
            stop_reason=stop_reason,
        )
        return self.finish(fit, y - predict(model, X), alpha)


def scheduled_learning_rate(cfg: TrainConfig, epoch: int, epochs: int) -> float:
    """Geometric decay from learning_rate to final_learning_rate across the epochs; constant when unset."""
    if cfg.final_learning_rate is None or epochs < 2:
        return cfg.learning_rate
    return cfg.learning_rate * (cfg.final_learning_rate / cfg.learning_rate) ** (epoch / (epochs - 1))


def mean_pinball_upstream(residuals: np.ndarray, alpha: float) -> np.ndarray:
    # d/df mean(rho(y - f)) = -rho'(r) / m
    return -np.asarray(pinball_dr(residuals, alpha)) / residuals.shape[0]


def mean_pinball(residuals: np.ndarray, alpha: float) -> float:
    return float(np.mean(pinball(residuals, alpha)))
