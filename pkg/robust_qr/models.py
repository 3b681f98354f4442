import enum
import math
from typing import Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)


class MethodEnum(str, enum.Enum):
    qr = "qr"
    tqr = "tqr"
    rcp = "rcp"
    beta_qr = "beta_qr"


class ActivationEnum(str, enum.Enum):
    identity = "identity"
    relu = "relu"


class DatasetSourceEnum(str, enum.Enum):
    bundled = "bundled"
    csv = "csv"
    synthetic = "synthetic"


class OutlierSideEnum(str, enum.Enum):
    both = "both"
    up = "up"
    down = "down"


class ArchitectureEnum(str, enum.Enum):
    linear = "linear"
    mlp = "mlp"


DEFAULT_ALPHAS = [0.25, 0.5, 0.75]
WIDE_ALPHAS = [0.05, 0.5, 0.95]

DEFAULT_BETA_GRID = [0.1, 0.5, 1.0, 2.0, 5.0]
DEFAULT_LAMBDA_GRID = [0.01, 0.1, 1.0, 10.0]
DEFAULT_TRIM_GRID = [0.70, 0.80, 0.90, 0.95]


def _check_alphas(alphas: list[float]) -> list[float]:
    if not alphas:
        raise ValueError("At least one quantile level is required.")
    for alpha in alphas:
        if not (0.0 < alpha < 1.0) or not math.isfinite(alpha):
            raise ValueError(f"Quantile level {alpha} must lie strictly inside (0, 1).")
    if len(set(alphas)) != len(alphas):
        raise ValueError(f"Quantile levels must be distinct, got {alphas}.")
    return alphas


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: PositiveInt
    output_dim: PositiveInt
    activation: ActivationEnum = ActivationEnum.identity


class BetaConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: PositiveFloat
    sigma: PositiveFloat = 1.0


class TrainConfig(BaseModel):
    """Hyperparameters of one training procedure, shared by every requested quantile level."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    method: MethodEnum = MethodEnum.qr
    epochs: PositiveInt = 500
    batch_size: PositiveInt = 128
    learning_rate: PositiveFloat = 1e-2
    # Decayed geometrically to this value by the last epoch; None keeps the rate constant.
    final_learning_rate: Optional[PositiveFloat] = None
    seed: NonNegativeInt = 0
    convergence_tol: PositiveFloat = 1e-8
    standardize: bool = True
    # n_starts > 1: train each candidate init for start_epochs, continue from the lowest objective
    n_starts: PositiveInt = 1
    start_epochs: PositiveInt = 50

    # beta_qr; warm_start begins from the tqr fit with the same trimming
    beta_cfg: Optional[BetaConfig] = None
    warm_start: bool = False
    # tqr: trim_count wins over trim_fraction
    trim_count: Optional[PositiveInt] = None
    trim_fraction: Optional[float] = None
    # rcp
    lambda_: Optional[PositiveFloat] = Field(default=None, alias="lambda")
    gamma_lr: PositiveFloat = 0.1
    outer_iters: PositiveInt = 100
    inner_steps: PositiveInt = 50

    @field_validator("alphas")
    @classmethod
    def validate_alphas(cls, alphas):
        return _check_alphas(alphas)

    @field_validator("trim_fraction")
    @classmethod
    def validate_trim_fraction(cls, value):
        if value is not None and not (0.0 < value <= 1.0):
            raise ValueError(f"Trim fraction {value} must lie in (0, 1].")
        return value

    @model_validator(mode="after")
    def validate_method_params(self):
        if self.method == MethodEnum.beta_qr and self.beta_cfg is None:
            raise ValueError("Method 'beta_qr' requires beta (--beta).")
        if self.method == MethodEnum.rcp and self.lambda_ is None:
            raise ValueError("Method 'rcp' requires lambda (--lambda).")
        if (
            self.method == MethodEnum.tqr
            and self.trim_count is None
            and self.trim_fraction is None
        ):
            raise ValueError("Method 'tqr' requires a trim fraction (--trim-fraction).")
        if self.warm_start and self.trim_count is None and self.trim_fraction is None:
            raise ValueError("A warm start from the trimmed fit requires --trim-fraction or --trim-count.")
        return self

    def resolved_trim_count(self, n: int) -> int:
        if self.trim_count is not None:
            return self.trim_count
        if self.trim_fraction is not None:
            return int(round(self.trim_fraction * n))
        return n


class SyntheticSpec(BaseModel):
    """Heteroscedastic x*sin(x) generator with gross outliers in the response."""

    model_config = ConfigDict(frozen=True)

    n: PositiveInt = 1000
    x_low: float = 0.0
    x_high: float = 10.0
    noise_scale: PositiveFloat = 0.5
    heteroscedastic: bool = True
    outlier_fraction: float = 0.01
    outlier_magnitude: PositiveFloat = 20.0
    # both: random sign per outlier; up/down: every outlier shifted the same way
    outlier_side: OutlierSideEnum = OutlierSideEnum.both
    seed: NonNegativeInt = 0

    @model_validator(mode="after")
    def validate_bounds(self):
        if not self.x_low < self.x_high:
            raise ValueError(f"x_low ({self.x_low}) must be smaller than x_high ({self.x_high}).")
        if self.heteroscedastic and self.x_high <= 0:
            raise ValueError("Heteroscedastic noise scales with |x|/x_high, so x_high must be positive.")
        if not (0.0 <= self.outlier_fraction < 1.0):
            raise ValueError(f"Outlier fraction {self.outlier_fraction} must lie in [0, 1).")
        return self

    def noise_level(self, x):
        """s(x): the standard deviation of the clean response at x."""
        if self.heteroscedastic:
            return self.noise_scale * (1.0 + abs(x) / self.x_high)
        return self.noise_scale


class RunConfig(BaseModel):
    """Everything a CLI command needs, resolved from defaults, a JSON file and flags."""

    model_config = ConfigDict(populate_by_name=True)

    command: str = "fit"
    source: DatasetSourceEnum = DatasetSourceEnum.bundled
    csv_path: Optional[str] = None
    # Star-cluster CSV in place of the bundled asset
    asset_path: Optional[str] = None
    x_columns: Optional[list[str]] = None
    y_column: Optional[str] = None
    inlier_column: str = "inlier"
    has_header: bool = True
    synthetic: Optional[SyntheticSpec] = None

    methods: list[MethodEnum] = Field(default_factory=lambda: list(MethodEnum))
    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    architecture: ArchitectureEnum = ArchitectureEnum.linear
    hidden_width: PositiveInt = 64
    depth: PositiveInt = 3

    epochs: PositiveInt = 500
    # None: full batch
    batch_size: Optional[PositiveInt] = None
    learning_rate: PositiveFloat = 1e-2
    final_learning_rate: Optional[PositiveFloat] = None
    seed: NonNegativeInt = 0
    convergence_tol: PositiveFloat = 1e-8
    standardize: bool = True
    n_starts: PositiveInt = 1
    start_epochs: PositiveInt = 50

    beta: Optional[PositiveFloat] = None
    sigma: PositiveFloat = 1.0
    warm_start: bool = False
    lambda_: Optional[PositiveFloat] = Field(default=None, alias="lambda")
    trim_fraction: Optional[float] = None
    trim_count: Optional[PositiveInt] = None
    gamma_lr: PositiveFloat = 0.1
    outer_iters: PositiveInt = 100
    inner_steps: PositiveInt = 50

    beta_grid: list[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_BETA_GRID))
    lambda_grid: list[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    trim_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_TRIM_GRID))
    val_fraction: float = 0.2
    workers: Optional[PositiveInt] = None
    # Train on the seeded training partition only (how grid cells are fitted).
    train_split: bool = False
    split_seed: Optional[NonNegativeInt] = None

    out_dir: str = "runs"
    overwrite: bool = True
    emit_plot_data: bool = True
    clean_test_size: int = 0

    provenance: dict[str, str] = Field(default_factory=dict)

    @field_validator("alphas")
    @classmethod
    def validate_alphas(cls, alphas):
        return _check_alphas(alphas)

    @field_validator("val_fraction")
    @classmethod
    def validate_val_fraction(cls, value):
        if not (0.0 < value < 1.0):
            raise ValueError(f"Validation fraction {value} must lie strictly inside (0, 1).")
        return value

    def train_config(self, method: MethodEnum, n: Optional[int] = None, **overrides) -> TrainConfig:
        """
        Build the per-method TrainConfig for a training set of n rows.

        RCP always runs full-batch, as does every method when batch_size is unset.
        Grid search passes the swept value as an override (beta, lambda_ or trim_fraction).
        """
        batch_size = self.batch_size
        if n is not None and (batch_size is None or method == MethodEnum.rcp):
            batch_size = n
        values = dict(
            alphas=self.alphas,
            method=method,
            epochs=self.epochs,
            batch_size=batch_size or TrainConfig.model_fields["batch_size"].default,
            learning_rate=self.learning_rate,
            final_learning_rate=self.final_learning_rate,
            seed=self.seed,
            convergence_tol=self.convergence_tol,
            standardize=self.standardize,
            n_starts=self.n_starts,
            start_epochs=self.start_epochs,
            gamma_lr=self.gamma_lr,
            outer_iters=self.outer_iters,
            inner_steps=self.inner_steps,
        )
        if method == MethodEnum.beta_qr and self.beta is not None:
            values["beta_cfg"] = BetaConfig(beta=self.beta, sigma=self.sigma)
        if method == MethodEnum.rcp:
            values["lambda"] = self.lambda_
        if method == MethodEnum.beta_qr and self.warm_start:
            values["warm_start"] = True
        if method == MethodEnum.tqr or values.get("warm_start"):
            values["trim_count"] = self.trim_count
            values["trim_fraction"] = self.trim_fraction

        if "beta" in overrides:
            values["beta_cfg"] = BetaConfig(beta=overrides.pop("beta"), sigma=self.sigma)
        if "lambda_" in overrides:
            values["lambda"] = overrides.pop("lambda_")
        if "trim_fraction" in overrides:
            values["trim_count"] = None
            values["trim_fraction"] = overrides.pop("trim_fraction")
        values.update(overrides)
        return TrainConfig(**values)


class EvalRecord(BaseModel):
    method: MethodEnum
    alpha: float
    frobenius_to_reference: float = Field(ge=0.0)
    frobenius_standardized: float = Field(ge=0.0)
    quantile_mse: float = Field(ge=0.0)
    coverage: float = Field(ge=0.0, le=1.0)
    median_mse: Optional[float] = Field(default=None, ge=0.0)
    parameter_distance: Optional[float] = Field(default=None, ge=0.0)
    final_loss: float
    epochs_run: int
    stop_reason: str


class EvalReport(BaseModel):
    dataset: str
    provenance: str = ""
    methods: list[MethodEnum]
    alphas: list[float]
    seed: int
    records: list[EvalRecord]
    config: dict = Field(default_factory=dict)
    # Kept out of report.json so that re-runs are byte-identical; see artifacts.write_report.
    wall_time_seconds: Optional[float] = None

    @model_validator(mode="after")
    def validate_record_count(self):
        expected = len(self.methods) * len(self.alphas)
        if len(self.records) != expected:
            raise ValueError(
                f"Report holds {len(self.records)} records, expected {expected} "
                f"({len(self.methods)} methods x {len(self.alphas)} alphas)."
            )
        return self

    def record(self, method: MethodEnum, alpha: float) -> EvalRecord:
        for record in self.records:
            if record.method == method and record.alpha == alpha:
                return record
        raise KeyError(f"No record for method {method.value} at alpha {alpha}.")

    def frobenius_table(self) -> dict[str, list[float]]:
        """Method -> Frobenius distances in alpha order."""
        return {
            method.value: [self.record(method, alpha).frobenius_to_reference for alpha in self.alphas]
            for method in self.methods
        }
