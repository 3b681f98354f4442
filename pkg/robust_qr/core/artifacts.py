import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from jinja2 import Template

from robust_qr.core.data import FLOAT_FORMAT
from robust_qr.core.trainers import FitResult
from robust_qr.exceptions import OutputPathError
from robust_qr.models import EvalReport

# Files a run may leave behind; overwriting a run directory removes only these.
ARTIFACT_PATTERNS = (
    "report.json",
    "run_info.json",
    "config.json",
    "summary.md",
    "grid.csv",
    "data.csv",
    "predictions_*.csv",
    "trajectory_*.csv",
    "fit_*.json",
    "best_*.json",
)


class OutputExistsError(OutputPathError):
    """The output directory holds artifacts of an earlier run and overwriting is off."""


class UnsafeOutputPathError(OutputPathError):
    """The output path is not a directory the tool may clean up."""


def prepare_output_directory(output_path: str, overwrite: bool = True) -> Path:
    """
    Create the run directory, or clear the artifacts of a previous run in it.

    Raises:
        UnsafeOutputPathError: For filesystem roots, the home directory or a path that is a file.
        OutputExistsError: If previous artifacts exist and overwrite is False.
        OutputPathError: If the directory cannot be created or written.
    """
    if not output_path:
        raise UnsafeOutputPathError("Output path is empty.")

    run_path = Path(output_path).expanduser().resolve()
    if _is_unsafe_output_root(run_path):
        raise UnsafeOutputPathError(f"Refusing to write artifacts into: {run_path}")
    if run_path.exists() and not run_path.is_dir():
        raise UnsafeOutputPathError(f"Output path is not a directory: {run_path}")

    stale = _existing_artifacts(run_path)
    if stale:
        if not overwrite:
            raise OutputExistsError(f"Output path already holds a run: {run_path}")
        _clear_artifacts(stale)

    try:
        run_path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputPathError(f"Failed to create output path {run_path}: {exc}") from exc
    if not os.access(run_path, os.W_OK):
        raise OutputPathError(f"Output path is not writable: {run_path}")
    return run_path


def _existing_artifacts(run_path: Path) -> list[Path]:
    if not run_path.is_dir():
        return []
    found = set()
    for pattern in ARTIFACT_PATTERNS:
        found.update(p for p in run_path.glob(pattern) if p.is_file())
    return sorted(found)


def _clear_artifacts(paths: Sequence[Path]):
    try:
        for path in paths:
            path.unlink()
    except OSError as exc:
        raise OutputPathError(f"Failed to clear previous artifacts: {exc}") from exc
    logging.info(f"Removed {len(paths)} artifacts of a previous run")


def _is_unsafe_output_root(path: Path) -> bool:
    return path == Path(path.anchor) or path == Path.home().resolve()


def atomic_write_text(path, text: str) -> Path:
    """Write text next to its destination, then rename over it."""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as tmp:
            tmp.write(text)
        os.replace(tmp_name, path)
    except OSError as exc:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise OutputPathError(f"Failed to write {path}: {exc}") from exc
    return path


def dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(payload, path) -> Path:
    return atomic_write_text(path, dump_json(payload))


def write_frame(frame: pd.DataFrame, path) -> Path:
    return atomic_write_text(
        path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    )


def alpha_label(alpha: float) -> str:
    return f"{alpha:g}"


def write_report(report: EvalReport, out_dir) -> Path:
    """report.json, without the wall time (see write_run_info)."""
    payload = report.model_dump(mode="json", exclude={"wall_time_seconds"})
    return write_json(payload, Path(out_dir) / "report.json")


def write_run_info(info: Mapping, out_dir) -> Path:
    """run_info.json: the per-invocation details (timings, config provenance) that differ between reruns."""
    return write_json(dict(info), Path(out_dir) / "run_info.json")


def write_config(config: dict, out_dir) -> Path:
    return write_json(config, Path(out_dir) / "config.json")


def write_predictions(method: str, x_grid, predictions: Mapping[float, np.ndarray], out_dir) -> Path:
    """predictions_<method>.csv: one x column (x0, x1, ... for several features) then q_<alpha>."""
    X = np.asarray(x_grid, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    columns = {"x": X[:, 0]} if X.shape[1] == 1 else {f"x{j}": X[:, j] for j in range(X.shape[1])}
    for alpha, values in predictions.items():
        values = np.asarray(values, dtype=float).ravel()
        if values.shape[0] != X.shape[0]:
            raise ValueError(
                f"{values.shape[0]} predictions for alpha {alpha}, expected {X.shape[0]}."
            )
        columns[f"q_{alpha_label(alpha)}"] = values
    return write_frame(pd.DataFrame(columns), Path(out_dir) / f"predictions_{method}.csv")


def write_trajectory(method: str, alpha: float, losses: Sequence[float], out_dir) -> Path:
    frame = pd.DataFrame(
        {"epoch": np.arange(1, len(losses) + 1), "loss": np.asarray(losses, dtype=float)}
    )
    return write_frame(frame, Path(out_dir) / f"trajectory_{method}_{alpha_label(alpha)}.csv")


def write_fit(fit: FitResult, out_dir, name: Optional[str] = None) -> Path:
    name = name or fit.method.value
    return write_json(fit.to_dict(), Path(out_dir) / f"fit_{name}.json")


class SummaryRenderer:
    TEMPLATE_FILE = os.path.join(os.path.dirname(os.path.dirname(__file__)), "templates", "summary.md.j2")

    def __init__(self, report: EvalReport):
        self.report = report

    def render(self) -> str:
        if not os.path.exists(self.TEMPLATE_FILE):
            raise FileNotFoundError(f"Template file not found: {self.TEMPLATE_FILE}")

        with open(self.TEMPLATE_FILE, "r", encoding="utf-8") as template_file:
            template = Template(template_file.read(), keep_trailing_newline=True)

        rows = []
        for method in self.report.methods:
            records = [self.report.record(method, alpha) for alpha in self.report.alphas]
            rows.append({"method": method.value, "records": records})

        return template.render(
            dataset=self.report.dataset,
            provenance=self.report.provenance,
            seed=self.report.seed,
            alphas=[alpha_label(alpha) for alpha in self.report.alphas],
            rows=rows,
        )

    def write(self, out_dir) -> Path:
        path = atomic_write_text(Path(out_dir) / "summary.md", self.render())
        logging.info(f"Summary written to: {path}")
        return path


def render_summary(report: EvalReport) -> str:
    return SummaryRenderer(report).render()
