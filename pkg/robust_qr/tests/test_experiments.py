import numpy as np
import pytest

from robust_qr.core.data import gen_synthetic
from robust_qr.core.evaluation import empirical_coverage
from robust_qr.core.experiments import PRESETS, run_experiment
from robust_qr.core.net import linear_architecture
from robust_qr.core.trainers import train
from robust_qr.models import BetaConfig, MethodEnum, OutlierSideEnum, RunConfig, SyntheticSpec, TrainConfig

ALPHAS = [0.25, 0.5, 0.75]


def _preset_run(tmp_path, command, **overrides):
    values = {**PRESETS[command], "command": command, "out_dir": str(tmp_path / command), **overrides}
    return RunConfig.model_validate(values)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_star_cluster_ordering(seed, tmp_path):
    report = run_experiment(_preset_run(tmp_path, "star-cluster", seed=seed)).report

    for alpha in ALPHAS:
        beta = report.record(MethodEnum.beta_qr, alpha)
        trimmed = report.record(MethodEnum.tqr, alpha)
        shifted = report.record(MethodEnum.rcp, alpha)
        plain = report.record(MethodEnum.qr, alpha)
        assert beta.frobenius_to_reference < trimmed.frobenius_to_reference < shifted.frobenius_to_reference
        assert plain.frobenius_to_reference >= 2.0 * beta.frobenius_to_reference
        assert beta.frobenius_standardized <= 2.0


def test_toy_robust_methods_halve_the_qr_error(tmp_path):
    run = _preset_run(tmp_path, "toy", methods=[MethodEnum.qr, MethodEnum.tqr, MethodEnum.beta_qr])
    table = run_experiment(run).report.frobenius_table()

    plain = sum(table["qr"])
    assert sum(table["tqr"]) <= 0.5 * plain
    assert sum(table["beta_qr"]) <= 0.5 * plain


def _coverage_deviations(seed):
    train_data = gen_synthetic(
        SyntheticSpec(
            n=4000,
            x_high=1.0,
            outlier_fraction=0.1,
            outlier_magnitude=200.0,
            outlier_side=OutlierSideEnum.up,
            seed=20 + seed,
        )
    )
    test_data = gen_synthetic(SyntheticSpec(n=20000, x_high=1.0, outlier_fraction=0.0, seed=40 + seed))
    common = dict(
        alphas=ALPHAS,
        epochs=1500,
        batch_size=train_data.n,
        learning_rate=0.01,
        final_learning_rate=1e-4,
        seed=seed,
    )
    configs = {
        "qr": TrainConfig(**common),
        "beta_qr": TrainConfig(
            method=MethodEnum.beta_qr,
            beta_cfg=BetaConfig(beta=6.0),
            warm_start=True,
            trim_fraction=0.9,
            **common,
        ),
    }
    deviations = {}
    for name, cfg in configs.items():
        fit = train(train_data, linear_architecture(1), cfg)
        deviations[name] = [abs(empirical_coverage(fit.quantile_model(a), test_data) - a) for a in ALPHAS]
    return deviations


def test_beta_qr_coverage_survives_one_sided_contamination():
    passing = 0
    for seed in range(3):
        deviations = _coverage_deviations(seed)
        passing += all(b <= q for b, q in zip(deviations["beta_qr"], deviations["qr"]))
    assert passing >= 2
