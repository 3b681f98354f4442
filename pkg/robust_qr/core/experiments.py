"""
Experiment orchestration behind the CLI commands.

`run_experiment` is shared by `star-cluster`, `toy` and `fit`: the presets only
differ in their defaults (see PRESETS). `run_grid` sweeps method
hyperparameters and scores them on a validation split. `generate_data`
writes a synthetic dataset to CSV.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from robust_qr.core import artifacts
from robust_qr.core.data import (
    Dataset,
    conditional_quantile_oracle,
    gen_synthetic,
    load_csv,
    split,
    star_cluster_dataset,
)
from robust_qr.core.evaluation import build_report, pinball_score
from robust_qr.core.net import linear_architecture, relu_architecture
from robust_qr.core.trainers import FitResult, Standardizer, fit_reference, train
from robust_qr.exceptions import EmptyDatasetError, InvalidConfigurationError
from robust_qr.models import (
    ArchitectureEnum,
    DatasetSourceEnum,
    EvalReport,
    LayerSpec,
    MethodEnum,
    RunConfig,
    SyntheticSpec,
)

CURVE_POINTS = 200

STAR_CLUSTER_DEFAULTS = {
    "source": DatasetSourceEnum.bundled.value,
    "architecture": ArchitectureEnum.linear.value,
    "epochs": 5000,
    "batch_size": None,
    "learning_rate": 1e-2,
    "beta": 0.9,
    "lambda": 1.0,
    "trim_count": 42,
    "n_starts": 10,
    "start_epochs": 100,
    "warm_start": True,
    "outer_iters": 100,
    "inner_steps": 50,
    "out_dir": "runs/star-cluster",
}

TOY_DEFAULTS = {
    "source": DatasetSourceEnum.synthetic.value,
    "synthetic": SyntheticSpec(outlier_fraction=0.1, outlier_magnitude=50.0).model_dump(mode="json"),
    "architecture": ArchitectureEnum.mlp.value,
    "hidden_width": 64,
    "depth": 3,
    "epochs": 500,
    "batch_size": 128,
    "learning_rate": 5e-3,
    "final_learning_rate": 1e-5,
    "beta": 3.0,
    "lambda": 1.0,
    "trim_fraction": 0.9,
    "warm_start": True,
    "outer_iters": 500,
    "inner_steps": 10,
    "clean_test_size": 1000,
    "out_dir": "runs/toy",
}

FIT_DEFAULTS = {
    "source": DatasetSourceEnum.csv.value,
    "out_dir": "runs/fit",
}

GRID_DEFAULTS = {
    "source": DatasetSourceEnum.bundled.value,
    "architecture": ArchitectureEnum.linear.value,
    "epochs": 2000,
    "batch_size": None,
    "trim_count": None,
    "out_dir": "runs/grid",
}

GEN_DATA_DEFAULTS = {
    "source": DatasetSourceEnum.synthetic.value,
    "synthetic": SyntheticSpec().model_dump(mode="json"),
    "out_dir": "runs/data",
}

PRESETS = {
    "star-cluster": STAR_CLUSTER_DEFAULTS,
    "toy": TOY_DEFAULTS,
    "fit": FIT_DEFAULTS,
    "grid": GRID_DEFAULTS,
    "gen-data": GEN_DATA_DEFAULTS,
}

GRID_PARAMETERS = {
    MethodEnum.qr: None,
    MethodEnum.beta_qr: ("beta", "beta_grid"),
    MethodEnum.rcp: ("lambda_", "lambda_grid"),
    MethodEnum.tqr: ("trim_fraction", "trim_grid"),
}


@dataclass
class ExperimentOutcome:
    run: RunConfig
    data: Dataset
    fits: list[FitResult]
    reference: Optional[FitResult]
    report: Optional[EvalReport]
    out_dir: Path
    wall_time_seconds: float = 0.0


@dataclass(frozen=True)
class GridCell:
    index: int
    method: MethodEnum
    param: Optional[str]
    value: Optional[float]
    seed: int

    def overrides(self) -> dict:
        return {} if self.param is None else {self.param: self.value}


@dataclass(frozen=True)
class GridScore:
    cell: GridCell
    alpha: float
    score: float


@dataclass
class GridOutcome:
    run: RunConfig
    scores: list[GridScore]
    table: pd.DataFrame
    best: dict[MethodEnum, GridCell] = field(default_factory=dict)
    best_configs: dict[MethodEnum, RunConfig] = field(default_factory=dict)
    out_dir: Optional[Path] = None


def embedded_config(run: RunConfig) -> dict:
    """The resolved configuration as embedded in artifacts; provenance goes to run_info.json."""
    return run.model_dump(mode="json", by_alias=True, exclude={"provenance"})


def load_dataset(run: RunConfig) -> Dataset:
    if run.source == DatasetSourceEnum.bundled:
        return star_cluster_dataset(run.asset_path)
    if run.source == DatasetSourceEnum.csv:
        if not run.csv_path:
            raise InvalidConfigurationError("A CSV dataset needs a path (--data).")
        return load_csv(
            run.csv_path,
            x_columns=run.x_columns,
            y_column=run.y_column,
            inlier_column=run.inlier_column,
            has_header=run.has_header,
        )
    return gen_synthetic(run.synthetic or SyntheticSpec())


def training_data(run: RunConfig, data: Dataset) -> Dataset:
    if not run.train_split:
        return data
    seed = run.split_seed if run.split_seed is not None else run.seed
    train_part, _ = split(data, run.val_fraction, seed)
    return train_part


def build_architecture(run: RunConfig, input_dim: int) -> list[LayerSpec]:
    if run.architecture == ArchitectureEnum.linear:
        return linear_architecture(input_dim)
    return relu_architecture(input_dim, hidden_width=run.hidden_width, depth=run.depth)


def build_scaler(run: RunConfig, data: Dataset) -> Standardizer:
    return Standardizer.fit(data) if run.standardize else Standardizer.identity(data.d)


def fit_methods(
    run: RunConfig,
    data: Dataset,
    specs: Sequence[LayerSpec],
    scaler: Standardizer,
    methods: Optional[Sequence[MethodEnum]] = None,
    **overrides,
) -> list[FitResult]:
    fits = []
    for method in methods or run.methods:
        cfg = run.train_config(method, data.n, **overrides)
        logging.info(f"Training {method.value} on '{data.name}' ({data.n} rows), alphas {list(cfg.alphas)}")
        fits.append(train(data, specs, cfg, scaler=scaler))
    return fits


def prediction_grid(data: Dataset, points: int = CURVE_POINTS) -> np.ndarray:
    """Dense x grid over the observed range for one feature; the feature rows otherwise."""
    if data.d == 1:
        low, high = float(data.features.min()), float(data.features.max())
        return np.linspace(low, high, points).reshape(-1, 1)
    return data.features


def clean_test_set(run: RunConfig) -> Optional[Dataset]:
    """Outlier-free draw from the same generator, with a different seed."""
    if run.source != DatasetSourceEnum.synthetic or run.clean_test_size <= 0:
        return None
    spec = run.synthetic or SyntheticSpec()
    return gen_synthetic(
        spec.model_copy(update={"n": run.clean_test_size, "outlier_fraction": 0.0, "seed": spec.seed + 1})
    )


def _has_reference(data: Dataset) -> bool:
    return data.inlier_mask is not None and int(data.inlier_mask.sum()) >= 2


def run_experiment(run: RunConfig) -> ExperimentOutcome:
    """
    Fit every requested method, the outlier-free reference when the data carries
    an inlier mask, and write all artifacts to run.out_dir.

    Raises:
        InvalidConfigurationError, DataError, NumericalFailureError, OutputPathError
    """
    started = time.perf_counter()
    out_dir = artifacts.prepare_output_directory(run.out_dir, run.overwrite)

    data = training_data(run, load_dataset(run))
    specs = build_architecture(run, data.d)
    scaler = build_scaler(run, data)

    fits = fit_methods(run, data, specs, scaler)

    reference = None
    report = None
    if _has_reference(data):
        logging.info(f"Fitting the outlier-free reference on {int(data.inlier_mask.sum())} inliers")
        reference = fit_reference(data, specs, run.train_config(MethodEnum.qr, data.n), scaler=scaler)
    else:
        logging.info(f"Dataset '{data.name}' has no inlier mask; skipping the reference and report")

    config = embedded_config(run)
    if reference is not None:
        report = build_report(fits, reference, data, coverage_data=clean_test_set(run), config=config)

    artifacts.write_config(config, out_dir)
    for fit in fits:
        artifacts.write_fit(fit, out_dir)
        for alpha, quantile_fit in fit.fits.items():
            artifacts.write_trajectory(fit.method.value, alpha, quantile_fit.losses, out_dir)
    if reference is not None:
        artifacts.write_fit(reference, out_dir, name="reference")

    if run.emit_plot_data:
        _write_curves(run, data, fits, reference, out_dir)

    if report is not None:
        artifacts.write_report(report, out_dir)
        artifacts.SummaryRenderer(report).write(out_dir)

    wall_time = time.perf_counter() - started
    if report is not None:
        report.wall_time_seconds = wall_time
    artifacts.write_run_info(
        {"command": run.command, "wall_time_seconds": wall_time, "provenance": run.provenance},
        out_dir,
    )
    logging.info(f"{run.command} finished in {wall_time:.1f}s; artifacts in {out_dir}")
    return ExperimentOutcome(
        run=run,
        data=data,
        fits=fits,
        reference=reference,
        report=report,
        out_dir=out_dir,
        wall_time_seconds=wall_time,
    )


def _write_curves(run, data, fits, reference, out_dir):
    grid = prediction_grid(data)
    for fit in fits:
        artifacts.write_predictions(
            fit.method.value, grid, {alpha: fit.predict(alpha, grid) for alpha in fit.alphas}, out_dir
        )
    if reference is not None:
        artifacts.write_predictions(
            "reference", grid, {alpha: reference.predict(alpha, grid) for alpha in reference.alphas}, out_dir
        )
    if run.source == DatasetSourceEnum.synthetic:
        spec = run.synthetic or SyntheticSpec()
        artifacts.write_predictions(
            "oracle",
            grid,
            {alpha: conditional_quantile_oracle(spec, grid[:, 0], alpha) for alpha in run.alphas},
            out_dir,
        )


def grid_cells(run: RunConfig) -> list[GridCell]:
    """One cell per (method, swept value); cell seeds are run.seed + cell index."""
    cells = []
    for method in run.methods:
        parameter = GRID_PARAMETERS[method]
        if parameter is None:
            cells.append(GridCell(len(cells), method, None, None, run.seed + len(cells)))
            continue
        param, grid_field = parameter
        values = getattr(run, grid_field)
        if not values:
            raise InvalidConfigurationError(
                f"Empty {grid_field.replace('_', ' ')} for method '{method.value}' (--{grid_field.replace('_', '-')})."
            )
        for value in values:
            cells.append(GridCell(len(cells), method, param, float(value), run.seed + len(cells)))
    return cells


def score_grid_cell(
    run: RunConfig,
    cell: GridCell,
    train_data: Dataset,
    val_data: Dataset,
    specs: Sequence[LayerSpec],
    scaler: Standardizer,
) -> list[GridScore]:
    cell_run = run.model_copy(update={"seed": cell.seed})
    fit = fit_methods(cell_run, train_data, specs, scaler, methods=[cell.method], **cell.overrides())[0]
    return [
        GridScore(cell=cell, alpha=alpha, score=pinball_score(fit.quantile_model(alpha), val_data, alpha))
        for alpha in fit.alphas
    ]


def _scoring_data(val_data: Dataset) -> Dataset:
    if val_data.inlier_mask is None:
        return val_data
    if not val_data.inlier_mask.any():
        raise EmptyDatasetError(f"Validation split '{val_data.name}' holds no inlier rows to score on.")
    return val_data.inliers()


def rank_scores(scores: Sequence[GridScore]) -> pd.DataFrame:
    """Ranked table: rank 1 is the lowest validation pinball loss per (method, alpha); ties go to the earlier cell."""
    frame = pd.DataFrame(
        {
            "method": [s.cell.method.value for s in scores],
            "param": [s.cell.param.rstrip("_") if s.cell.param else "" for s in scores],
            "value": [s.cell.value if s.cell.value is not None else np.nan for s in scores],
            "alpha": [s.alpha for s in scores],
            "cell": [s.cell.index for s in scores],
            "seed": [s.cell.seed for s in scores],
            "score": [s.score for s in scores],
        }
    )
    frame = frame.sort_values(["method", "alpha", "score", "cell"], kind="mergesort").reset_index(drop=True)
    frame["rank"] = frame.groupby(["method", "alpha"], sort=False).cumcount() + 1
    return frame


def best_cells(scores: Sequence[GridScore]) -> dict[MethodEnum, GridCell]:
    """Per method, the cell with the lowest mean validation score across alphas."""
    totals: dict[int, list[float]] = {}
    cells: dict[int, GridCell] = {}
    for s in scores:
        totals.setdefault(s.cell.index, []).append(s.score)
        cells[s.cell.index] = s.cell

    best: dict[MethodEnum, GridCell] = {}
    for index in sorted(cells):
        cell = cells[index]
        current = best.get(cell.method)
        if current is None or np.mean(totals[index]) < np.mean(totals[current.index]):
            best[cell.method] = cell
    return best


def best_run_config(run: RunConfig, cell: GridCell) -> RunConfig:
    """A `fit` config that retrains exactly the given cell: same split, seed and swept value."""
    update = {
        "command": "fit",
        "methods": [cell.method],
        "seed": cell.seed,
        "train_split": True,
        "split_seed": run.seed,
        "out_dir": str(Path(run.out_dir) / f"best_{cell.method.value}"),
        "provenance": {},
    }
    if cell.param == "beta":
        update["beta"] = cell.value
    elif cell.param == "lambda_":
        update["lambda_"] = cell.value
    elif cell.param == "trim_fraction":
        update["trim_fraction"] = cell.value
        update["trim_count"] = None
    return run.model_copy(update=update)


def _worker_count(run: RunConfig, n_cells: int) -> int:
    return max(1, min(run.workers or os.cpu_count() or 1, n_cells))


def run_grid(run: RunConfig) -> GridOutcome:
    """
    Sweep the configured grid for each method, score each cell by validation
    pinball loss (on inlier validation rows when a mask exists), and write
    grid.csv plus a best_<method>.json `fit` config per method.
    """
    started = time.perf_counter()
    cells = grid_cells(run)
    out_dir = artifacts.prepare_output_directory(run.out_dir, run.overwrite)

    data = load_dataset(run)
    train_data, val_data = split(data, run.val_fraction, run.seed)
    val_data = _scoring_data(val_data)
    specs = build_architecture(run, data.d)
    scaler = build_scaler(run, train_data)

    workers = _worker_count(run, len(cells))
    logging.info(
        f"Grid search: {len(cells)} cells x {len(run.alphas)} alphas, "
        f"{train_data.n} train / {val_data.n} validation rows, {workers} workers"
    )
    if workers == 1:
        per_cell = [score_grid_cell(run, cell, train_data, val_data, specs, scaler) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(score_grid_cell, run, cell, train_data, val_data, specs, scaler) for cell in cells
            ]
            per_cell = [future.result() for future in futures]

    scores = [score for cell_scores in per_cell for score in cell_scores]
    table = rank_scores(scores)
    best = best_cells(scores)
    best_configs = {method: best_run_config(run, cell) for method, cell in best.items()}

    artifacts.write_config(embedded_config(run), out_dir)
    artifacts.write_frame(table, out_dir / "grid.csv")
    for method, config in best_configs.items():
        artifacts.write_json(embedded_config(config), out_dir / f"best_{method.value}.json")
        cell = best[method]
        chosen = f"{cell.param.rstrip('_')}={cell.value:g}" if cell.param else "no swept parameter"
        logging.info(f"Best {method.value}: {chosen} (cell {cell.index}, seed {cell.seed})")

    wall_time = time.perf_counter() - started
    artifacts.write_run_info(
        {"command": run.command, "wall_time_seconds": wall_time, "provenance": run.provenance, "workers": workers},
        out_dir,
    )
    return GridOutcome(run=run, scores=scores, table=table, best=best, best_configs=best_configs, out_dir=out_dir)


def generate_data(run: RunConfig) -> Path:
    """Write the synthetic dataset (x, y, inlier) to <out_dir>/data.csv."""
    out_dir = artifacts.prepare_output_directory(run.out_dir, run.overwrite)
    data = gen_synthetic(run.synthetic or SyntheticSpec())
    path = artifacts.write_frame(data.to_frame(), out_dir / "data.csv")
    artifacts.write_config(embedded_config(run), out_dir)
    logging.info(f"Wrote {data.n} rows ({data.n_outliers} outliers) to {path}")
    return path
