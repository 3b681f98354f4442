from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from robust_qr.exceptions import InvalidConfigurationError
from robust_qr.models import DatasetSourceEnum, MethodEnum, RunConfig


@dataclass
class PreflightIssue:
    label: str
    detail: str = ""
    severity: str = "ok"


@dataclass
class PreflightResult:
    title: str
    issues: list[PreflightIssue] = field(default_factory=list)

    @property
    def has_blockers(self) -> bool:
        return any(issue.severity == "error" for issue in self.issues)

    @property
    def has_warnings(self) -> bool:
        return any(issue.severity == "warning" for issue in self.issues)

    def ok(self, label: str, detail: str = ""):
        self.issues.append(PreflightIssue(label=label, detail=detail, severity="ok"))

    def warning(self, label: str, detail: str = ""):
        self.issues.append(PreflightIssue(label=label, detail=detail, severity="warning"))

    def error(self, label: str, detail: str = ""):
        self.issues.append(PreflightIssue(label=label, detail=detail, severity="error"))

    def raise_for_blockers(self):
        """Log every issue and raise InvalidConfigurationError listing the errors."""
        for issue in self.issues:
            if issue.severity == "error":
                logging.error(f"{self.title}: {issue.label}: {issue.detail}")
            elif issue.severity == "warning":
                logging.warning(f"{self.title}: {issue.label}: {issue.detail}")
        if self.has_blockers:
            details = "; ".join(
                f"{issue.label}: {issue.detail}" for issue in self.issues if issue.severity == "error"
            )
            raise InvalidConfigurationError(details)


def _check_file(result: PreflightResult, label: str, path: str | None):
    if path and os.path.isfile(path):
        result.ok(label, path)
    elif path:
        result.error(label, f"File not found: {path}")
    else:
        result.error(label, "Path is not configured.")


def _check_output_directory(result: PreflightResult, out_dir: str):
    if not out_dir:
        result.error("Output directory", "Path is not configured (--out-dir).")
        return

    path = Path(out_dir).expanduser()
    if path.exists() and not path.is_dir():
        result.error("Output directory", f"Path exists and is not a directory: {path}")
        return

    # Closest existing ancestor decides whether we can create it.
    ancestor = path
    while not ancestor.exists() and ancestor != ancestor.parent:
        ancestor = ancestor.parent
    if os.access(ancestor, os.W_OK):
        result.ok("Output directory", str(path))
    else:
        result.error("Output directory", f"Not writable: {ancestor}")


def _check_dataset_source(result: PreflightResult, run: RunConfig):
    if run.asset_path and run.source != DatasetSourceEnum.bundled:
        result.error("Dataset source", "--asset only replaces the bundled star-cluster file.")
    if run.source == DatasetSourceEnum.csv:
        _check_file(result, "CSV dataset", run.csv_path)
        if run.synthetic is not None:
            result.error("Dataset source", "Give either a CSV path or a synthetic spec, not both.")
    elif run.source == DatasetSourceEnum.synthetic:
        if run.csv_path:
            result.error("Dataset source", "Give either a CSV path or a synthetic spec, not both.")
        else:
            result.ok("Dataset source", "synthetic")
    else:
        if run.csv_path or run.synthetic is not None:
            result.error("Dataset source", "The bundled dataset takes no CSV path or synthetic spec.")
        elif run.asset_path:
            _check_file(result, "Star-cluster asset", run.asset_path)
        else:
            result.ok("Dataset source", "bundled star cluster")


def _check_lambda_scale(result: PreflightResult, lambdas: list[float], alphas: list[float]):
    # Below max(alpha, 1 - alpha) the prox never zeroes a shift.
    floor = max(max(alpha, 1.0 - alpha) for alpha in alphas)
    small = [lam for lam in lambdas if lam < floor]
    if small:
        result.warning(
            "lambda scale",
            f"lambda {small} is below max(alpha, 1 - alpha) = {floor:g}; the shifts absorb "
            f"ordinary residuals and the quantiles collapse toward the median.",
        )


def _check_method_params(result: PreflightResult, run: RunConfig, sweep: bool):
    if not run.methods:
        result.error("Methods", "No method selected (--method).")
        return

    for method in run.methods:
        if method == MethodEnum.beta_qr:
            if sweep and not run.beta_grid:
                result.error("beta grid", "Grid search needs at least one beta (--beta-grid).")
            elif not sweep and run.beta is None:
                result.error("beta", "Method 'beta_qr' requires --beta.")
            else:
                result.ok("beta", str(run.beta_grid if sweep else run.beta))
            if run.warm_start and run.trim_count is None and run.trim_fraction is None:
                result.error("warm start", "A beta-QR warm start needs --trim-fraction or --trim-count.")
        elif method == MethodEnum.rcp:
            if sweep and not run.lambda_grid:
                result.error("lambda grid", "Grid search needs at least one lambda (--lambda-grid).")
            elif not sweep and run.lambda_ is None:
                result.error("lambda", "Method 'rcp' requires --lambda.")
            else:
                result.ok("lambda", str(run.lambda_grid if sweep else run.lambda_))
                _check_lambda_scale(result, run.lambda_grid if sweep else [run.lambda_], run.alphas)
            if run.provenance.get("batch_size") == "flag":
                result.warning(
                    "RCP batch size",
                    "RCP always runs full-batch; --batch-size is ignored for it.",
                )
        elif method == MethodEnum.tqr:
            fractions = run.trim_grid if sweep else [run.trim_fraction]
            if sweep and not run.trim_grid:
                result.error("trim grid", "Grid search needs at least one trim fraction (--trim-grid).")
            elif not sweep and run.trim_count is None and run.trim_fraction is None:
                result.error("trim fraction", "Method 'tqr' requires --trim-fraction.")
            elif any(f is not None and not (0.0 < f <= 1.0) for f in fractions):
                result.error("trim fraction", f"Trim fractions must lie in (0, 1], got {fractions}.")
            else:
                result.ok("trim fraction", str(run.trim_grid if sweep else run.trim_count or run.trim_fraction))


def validate_run_preflight(run: RunConfig) -> PreflightResult:
    """Collect everything that would make a run fail before any training starts."""
    sweep = run.command == "grid"
    result = PreflightResult(f"{run.command} preflight")

    _check_dataset_source(result, run)
    _check_output_directory(result, run.out_dir)
    _check_method_params(result, run, sweep)

    if sweep and run.source == DatasetSourceEnum.csv:
        result.warning(
            "Scoring",
            "Without an inlier column, validation scores include any outliers.",
        )

    return result
