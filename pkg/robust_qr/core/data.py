from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from robust_qr.exceptions import (
    ChecksumMismatchError,
    DataError,
    DatasetParseError,
    EmptyDatasetError,
)
from robust_qr.models import OutlierSideEnum, SyntheticSpec
from robust_qr.utils.paths import get_resource_path

STAR_CLUSTER_ASSET = "robust_qr/assets/cyg_ob1.csv"
STAR_CLUSTER_SHA256 = "c68fb91ecfdd9c2f502e3bce93caf3b48966c8db1021e38f5ab136f5c1a6e1da"
STAR_CLUSTER_PROVENANCE = (
    "Hertzsprung-Russell diagram of the star cluster CYG OB1 (47 stars; "
    "x = log effective surface temperature, y = log light intensity), the classical "
    "robust-regression benchmark of Rousseeuw & Leroy. "
    "The four giant stars (log temperature < 3.6) form the high-leverage cluster and are "
    "marked inlier=0."
)

# Full double precision round-trip for every artifact written with pandas.
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    responses: np.ndarray
    inlier_mask: Optional[np.ndarray] = None
    name: str = "dataset"
    provenance: str = ""

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        responses = np.asarray(self.responses, dtype=float).ravel()

        if features.shape[0] < 1:
            raise EmptyDatasetError(f"Dataset '{self.name}' has no rows.")
        if features.shape[0] != responses.shape[0]:
            raise DataError(
                f"Dataset '{self.name}' has {features.shape[0]} feature rows "
                f"but {responses.shape[0]} responses."
            )
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(responses))):
            raise DataError(f"Dataset '{self.name}' contains non-finite values.")

        mask = self.inlier_mask
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).ravel()
            if mask.shape[0] != responses.shape[0]:
                raise DataError(
                    f"Inlier mask has {mask.shape[0]} entries for {responses.shape[0]} rows."
                )

        # frozen dataclass: normalize through object.__setattr__
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "inlier_mask", mask)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_outliers(self) -> int:
        return 0 if self.inlier_mask is None else int((~self.inlier_mask).sum())

    def subset(self, rows, name: str | None = None) -> "Dataset":
        """Rows given as an index array or a boolean mask; the inlier mask travels along."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        if rows.size == 0:
            raise EmptyDatasetError(f"Selection from '{self.name}' is empty.")
        return Dataset(
            features=self.features[rows],
            responses=self.responses[rows],
            inlier_mask=None if self.inlier_mask is None else self.inlier_mask[rows],
            name=name or self.name,
            provenance=self.provenance,
        )

    def inliers(self) -> "Dataset":
        if self.inlier_mask is None:
            return self
        return self.subset(self.inlier_mask, name=f"{self.name}-inliers")

    def to_frame(self) -> pd.DataFrame:
        columns = ["x"] if self.d == 1 else [f"x{j}" for j in range(self.d)]
        frame = pd.DataFrame(self.features, columns=columns)
        frame["y"] = self.responses
        if self.inlier_mask is not None:
            frame["inlier"] = self.inlier_mask.astype(int)
        return frame


def load_csv(
    path,
    x_columns: Sequence[str] | None = None,
    y_column: str | None = None,
    inlier_column: str = "inlier",
    has_header: bool = True,
    name: str | None = None,
    provenance: str = "",
) -> Dataset:
    """
    Read a comma-separated UTF-8 file into a Dataset, preserving row order.

    Without explicit columns the last non-inlier column is the response and the
    others are features. Headerless files use positional names c0, c1, ...

    Raises:
        DataError: If the file is missing or a column is unknown.
        DatasetParseError: On a non-numeric cell (naming its row and column) or a ragged row.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")

    try:
        frame = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.ParserError as exc:
        raise DatasetParseError(f"Ragged or malformed CSV {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"CSV file {path} is empty.") from exc

    if not has_header:
        frame.columns = [f"c{j}" for j in range(frame.shape[1])]
    frame.columns = [str(c).strip() for c in frame.columns]

    # pandas pads short rows instead of failing. Rows are numbered 1.. among data rows.
    for position, row in enumerate(frame.itertuples(index=False)):
        if any(pd.isna(cell) or cell == "" for cell in row):
            raise DatasetParseError(
                f"Row {position + 1} of {path} has missing cells.",
                row=position + 1,
            )

    columns = list(frame.columns)
    has_inlier = inlier_column in columns
    candidate = [c for c in columns if c != inlier_column]
    if y_column is None:
        if len(candidate) < 2:
            raise DataError(f"CSV {path} needs at least one feature and one response column.")
        y_column = candidate[-1]
    if x_columns is None:
        x_columns = [c for c in candidate if c != y_column]

    for column in list(x_columns) + [y_column]:
        if column not in columns:
            raise DataError(f"Column '{column}' not found in {path}; available: {columns}")

    numeric = {}
    for column in list(x_columns) + [y_column] + ([inlier_column] if has_inlier else []):
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            position = int(np.flatnonzero(bad)[0])
            row_number = position + 1
            raise DatasetParseError(
                f"Non-numeric value '{frame[column].iloc[position]}' at row {row_number}, "
                f"column '{column}' of {path}.",
                row=row_number,
                column=column,
            )
        # float() per cell is correctly rounded, so %.17g output reloads exactly
        numeric[column] = frame[column].to_numpy(dtype=object).astype(float)

    mask = None
    if has_inlier:
        raw = numeric[inlier_column]
        if not np.all(np.isin(raw, [0.0, 1.0])):
            raise DatasetParseError(f"Column '{inlier_column}' of {path} must only hold 0 or 1.")
        mask = raw.astype(bool)

    dataset = Dataset(
        features=np.column_stack([numeric[c] for c in x_columns]),
        responses=numeric[y_column],
        inlier_mask=mask,
        name=name or path.stem,
        provenance=provenance or f"csv:{path}",
    )
    logging.info(f"Loaded {dataset.n} rows x {dataset.d} features from {path}")
    return dataset


def write_csv(dataset: Dataset, path) -> Path:
    path = Path(path)
    dataset.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        digest.update(f.read())
    return digest.hexdigest()


def star_cluster_dataset(path=None) -> Dataset:
    """
    The bundled 47-star CYG OB1 dataset with the four giants masked as outliers.

    Args:
        path: Override for the bundled asset location.

    Raises:
        ChecksumMismatchError: If the bundled file has been altered.
    """
    asset = Path(path) if path else get_resource_path(STAR_CLUSTER_ASSET)
    if not asset.is_file():
        raise DataError(f"Star-cluster asset missing: {asset}")

    checksum = file_sha256(asset)
    if path is None and checksum != STAR_CLUSTER_SHA256:
        raise ChecksumMismatchError(
            f"Star-cluster asset {asset} is corrupted (sha256 {checksum}, "
            f"expected {STAR_CLUSTER_SHA256})."
        )

    return load_csv(
        asset,
        x_columns=["log_te"],
        y_column="log_light",
        name="cyg_ob1",
        provenance=STAR_CLUSTER_PROVENANCE,
    )


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    x ~ U(x_low, x_high), y = x sin(x) + s(x) eps; then ceil(fraction * n) responses
    get outlier_magnitude added with a random sign, or all
    upward or downward per outlier_side. Deterministic per spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    x = rng.uniform(spec.x_low, spec.x_high, size=spec.n)
    scale = spec.noise_level(x)
    y = x * np.sin(x) + scale * rng.standard_normal(spec.n)

    mask = np.ones(spec.n, dtype=bool)
    n_outliers = math.ceil(spec.outlier_fraction * spec.n)
    if n_outliers > 0:
        rows = rng.choice(spec.n, size=n_outliers, replace=False)
        signs = rng.choice(np.array([-1.0, 1.0]), size=n_outliers)
        if spec.outlier_side != OutlierSideEnum.both:
            signs = np.full(n_outliers, 1.0 if spec.outlier_side == OutlierSideEnum.up else -1.0)
        y[rows] = y[rows] + signs * spec.outlier_magnitude
        mask[rows] = False

    return Dataset(
        features=x.reshape(-1, 1),
        responses=y,
        inlier_mask=mask,
        name="toy",
        provenance=(
            f"synthetic x*sin(x), n={spec.n}, x in [{spec.x_low}, {spec.x_high}], "
            f"noise_scale={spec.noise_scale}, heteroscedastic={spec.heteroscedastic}, "
            f"outliers={n_outliers} ({spec.outlier_side.value} {spec.outlier_magnitude}), seed={spec.seed}"
        ),
    )


def conditional_quantile_oracle(spec: SyntheticSpec, x, alpha: float):
    """Exact alpha-quantile of the clean response at x: x sin(x) + s(x) * Phi^-1(alpha)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"Quantile level {alpha} must lie strictly inside (0, 1).")
    x = np.asarray(x, dtype=float)
    scale = spec.noise_level(x)
    # ppf(0.5) is exactly 0.0, so the median collapses to x*sin(x)
    value = x * np.sin(x) + scale * norm.ppf(alpha)
    return float(value) if value.ndim == 0 else value


def split(data: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """
    Seeded shuffle then partition into (train, validation).

    Raises:
        ValueError: If val_fraction is outside (0, 1).
        EmptyDatasetError: If either partition would be empty.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"Validation fraction {val_fraction} must lie strictly inside (0, 1).")

    order = np.random.default_rng(seed).permutation(data.n)
    n_val = int(round(val_fraction * data.n))
    if n_val == 0 or n_val == data.n:
        raise EmptyDatasetError(
            f"Splitting {data.n} rows with fraction {val_fraction} leaves an empty partition."
        )
    train_rows = order[n_val:]
    val_rows = order[:n_val]
    return (
        data.subset(train_rows, name=f"{data.name}-train"),
        data.subset(val_rows, name=f"{data.name}-val"),
    )
