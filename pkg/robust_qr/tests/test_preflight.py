import pytest

from robust_qr.core.experiments import PRESETS
from robust_qr.core.preflight import validate_run_preflight
from robust_qr.exceptions import InvalidConfigurationError
from robust_qr.models import MethodEnum, RunConfig


def _run(tmp_path, command="star-cluster", **overrides):
    values = {**PRESETS[command], "command": command, "out_dir": str(tmp_path / "out"), **overrides}
    return RunConfig.model_validate(values)


def _errors(result):
    return [issue.label for issue in result.issues if issue.severity == "error"]


class TestRunPreflight:
    def test_presets_have_no_blockers(self, tmp_path):
        for command in ("star-cluster", "toy", "grid"):
            assert not validate_run_preflight(_run(tmp_path, command)).has_blockers

    def test_missing_csv_is_blocker(self, tmp_path):
        run = _run(tmp_path, "fit", csv_path=str(tmp_path / "missing.csv"), methods=["qr"])
        result = validate_run_preflight(run)
        assert "CSV dataset" in _errors(result)

    def test_rcp_without_lambda_is_blocker(self, tmp_path, line_csv):
        run = _run(tmp_path, "fit", csv_path=str(line_csv), methods=["rcp"])
        result = validate_run_preflight(run)
        assert _errors(result) == ["lambda"]
        with pytest.raises(InvalidConfigurationError, match="requires --lambda"):
            result.raise_for_blockers()

    def test_beta_qr_without_beta_is_blocker(self, tmp_path, line_csv):
        run = _run(tmp_path, "fit", csv_path=str(line_csv), methods=["beta_qr"])
        assert _errors(validate_run_preflight(run)) == ["beta"]

    def test_empty_grid_is_blocker(self, tmp_path):
        run = _run(tmp_path, "grid", methods=[MethodEnum.beta_qr], beta_grid=[])
        assert "beta grid" in _errors(validate_run_preflight(run))

    def test_two_sources_are_blocker(self, tmp_path, line_csv):
        run = _run(tmp_path, "toy", source="csv", csv_path=str(line_csv))
        assert "Dataset source" in _errors(validate_run_preflight(run))

    def test_output_path_that_is_a_file_is_blocker(self, tmp_path):
        target = tmp_path / "taken"
        target.write_text("", encoding="utf-8")
        run = _run(tmp_path, out_dir=str(target))
        assert "Output directory" in _errors(validate_run_preflight(run))

    def test_explicit_batch_size_for_rcp_is_warning(self, tmp_path):
        run = _run(tmp_path, batch_size=16, provenance={"batch_size": "flag"})
        result = validate_run_preflight(run)
        assert result.has_warnings
        assert not result.has_blockers

    def test_small_lambda_is_warning(self, tmp_path):
        result = validate_run_preflight(_run(tmp_path, **{"lambda": 0.1}))
        warnings = [issue.label for issue in result.issues if issue.severity == "warning"]
        assert warnings == ["lambda scale"]
        assert not result.has_blockers

    def test_preset_lambda_is_on_the_pinball_scale(self, tmp_path):
        result = validate_run_preflight(_run(tmp_path))
        assert not result.has_warnings

    def test_missing_asset_is_blocker(self, tmp_path):
        run = _run(tmp_path, asset_path=str(tmp_path / "missing.csv"))
        assert "Star-cluster asset" in _errors(validate_run_preflight(run))

    def test_asset_with_csv_source_is_blocker(self, tmp_path, line_csv):
        run = _run(tmp_path, "fit", csv_path=str(line_csv), methods=["qr"], asset_path=str(line_csv))
        assert "Dataset source" in _errors(validate_run_preflight(run))
