import logging

import numpy as np
import pytest
from pydantic import ValidationError

from robust_qr.core.data import Dataset
from robust_qr.core.evaluation import empirical_coverage
from robust_qr.core.losses import pinball
from robust_qr.core.net import init_model, relu_architecture
from robust_qr.core.trainers import (
    BetaTrainer,
    QuantileTrainer,
    SeedStreams,
    Standardizer,
    fit_reference,
    select_trimmed,
    train,
    train_beta_qr,
    train_qr,
    train_rcp,
    train_tqr,
)
from robust_qr.core.trainers.base_trainer import STOP_BUDGET, STOP_CONVERGED, scheduled_learning_rate
from robust_qr.core.trainers.trimmed import trimmed_count
from robust_qr.exceptions import InvalidConfigurationError
from robust_qr.models import BetaConfig, MethodEnum, TrainConfig
from robust_qr.tests.conftest import make_line

# Small enough that no run stops on convergence before the compared steps.
TINY_TOL = 1e-300


def _recorder():
    steps = []

    def callback(alpha, step, model):
        steps.append(model.flat_parameters())

    return steps, callback


def _random_data(n=40, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = X @ rng.standard_normal(d) + rng.standard_normal(n)
    return Dataset(features=X, responses=y)


class TestQuantileTrainer:
    def test_recovers_the_median_line(self, line_data, linear_specs):
        cfg = TrainConfig(alphas=[0.5], epochs=2000, batch_size=line_data.n, learning_rate=0.01)
        fit = train_qr(line_data, linear_specs, cfg)
        assert fit.predict(0.5, np.array([[0.5]]))[0] == pytest.approx(2.0, abs=0.15)

    def test_same_seed_same_parameters(self, line_data, linear_specs):
        cfg = TrainConfig(epochs=20, batch_size=16, seed=3)
        a = train_qr(line_data, linear_specs, cfg)
        b = train_qr(line_data, linear_specs, cfg)
        for alpha in cfg.alphas:
            assert np.array_equal(a.model(alpha).flat_parameters(), b.model(alpha).flat_parameters())

    def test_alphas_are_fitted_independently(self, line_data, linear_specs):
        joint = train_qr(line_data, linear_specs, TrainConfig(alphas=[0.25, 0.75], epochs=10, batch_size=16))
        alone = train_qr(line_data, linear_specs, TrainConfig(alphas=[0.75], epochs=10, batch_size=16))
        assert np.array_equal(joint.model(0.75).flat_parameters(), alone.model(0.75).flat_parameters())

    def test_quantiles_are_ordered_on_clean_data(self, line_data, linear_specs):
        cfg = TrainConfig(alphas=[0.25, 0.5, 0.75], epochs=1000, batch_size=line_data.n)
        fit = train_qr(line_data, linear_specs, cfg)
        X = np.array([[0.5]])
        assert fit.predict(0.25, X)[0] < fit.predict(0.5, X)[0] < fit.predict(0.75, X)[0]

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
    def test_constant_model_lands_on_the_empirical_quantile(self, alpha, linear_specs):
        responses = np.array([7.0, 2.0, 9.0, 4.0, 1.0, 8.0, 3.0, 6.0, 5.0])
        data = Dataset(features=np.zeros(responses.size), responses=responses)
        cfg = TrainConfig(
            alphas=[alpha], epochs=2000, batch_size=data.n, learning_rate=0.01, final_learning_rate=1e-4
        )
        fit = train_qr(data, linear_specs, cfg)
        # direct scan: the candidate constant with the smallest pinball sum
        scores = [pinball(responses - c, alpha).sum() for c in responses]
        assert fit.predict(alpha, np.zeros((1, 1)))[0] == pytest.approx(responses[int(np.argmin(scores))], abs=0.05)

    def test_wrong_method_config_is_rejected(self, line_data, linear_specs):
        with pytest.raises(InvalidConfigurationError, match="Expected a 'qr' config"):
            train_qr(line_data, linear_specs, TrainConfig(method=MethodEnum.tqr, trim_fraction=0.9))

    def test_feature_count_must_match_architecture(self, line_data):
        with pytest.raises(InvalidConfigurationError, match="expects 2 features"):
            train_qr(line_data, relu_architecture(2, hidden_width=4), TrainConfig(epochs=1))


@pytest.mark.parametrize(
    "cfg",
    [
        TrainConfig(method=MethodEnum.qr, epochs=200, batch_size=16),
        TrainConfig(method=MethodEnum.tqr, epochs=200, batch_size=16, trim_fraction=0.9),
        TrainConfig(method=MethodEnum.beta_qr, epochs=200, batch_size=16, beta_cfg=BetaConfig(beta=1.0)),
        TrainConfig(method=MethodEnum.rcp, batch_size=1000, lambda_=0.1, outer_iters=40, inner_steps=5),
    ],
    ids=lambda cfg: cfg.method.value,
)
def test_trajectories_are_finite_and_decrease(cfg, line_data, linear_specs):
    fit = train(line_data, linear_specs, cfg)
    for alpha, quantile_fit in fit.fits.items():
        losses = np.asarray(quantile_fit.losses)
        assert losses.size >= 1
        assert np.all(np.isfinite(losses))
        assert quantile_fit.final_loss <= quantile_fit.initial_loss
        assert quantile_fit.stop_reason in (STOP_BUDGET, STOP_CONVERGED)
        budget = cfg.outer_iters if cfg.method == MethodEnum.rcp else cfg.epochs
        assert losses.size <= budget


class TestTrimmed:
    def test_selection_example(self):
        assert select_trimmed([3.0, 1.0, 2.0], 2).indices.tolist() == [1, 2]

    def test_kept_errors_never_exceed_discarded(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 60))
            errors = rng.exponential(size=n)
            if rng.random() < 0.3:
                errors = np.round(errors, 1)
            keep = int(rng.integers(1, n))
            kept = select_trimmed(errors, keep).indices
            dropped = np.setdiff1d(np.arange(n), kept)
            assert kept.size == keep
            assert errors[kept].max() <= errors[dropped].min()

    def test_per_batch_share(self):
        assert trimmed_count(43, 47, 47) == 43
        assert trimmed_count(90, 100, 32) == 28

    def test_keeping_everything_reproduces_plain_qr(self, linear_specs):
        data = _random_data(n=40, d=1)
        common = dict(alphas=[0.3], epochs=10, batch_size=8, seed=5, convergence_tol=TINY_TOL)
        qr_steps, qr_callback = _recorder()
        tqr_steps, tqr_callback = _recorder()

        train_qr(data, linear_specs, TrainConfig(**common), callback=qr_callback)
        train_tqr(
            data,
            linear_specs,
            TrainConfig(method=MethodEnum.tqr, trim_count=data.n, **common),
            callback=tqr_callback,
        )

        assert len(qr_steps) == len(tqr_steps) == 50
        for a, b in zip(qr_steps, tqr_steps):
            assert np.allclose(a, b, rtol=0, atol=1e-6)

    def test_selected_indices_are_the_best_fitted_rows(self, contaminated_line, linear_specs):
        cfg = TrainConfig(
            method=MethodEnum.tqr,
            alphas=[0.5],
            epochs=1500,
            batch_size=contaminated_line.n,
            trim_count=contaminated_line.n - 1,
        )
        fit = train_tqr(contaminated_line, linear_specs, cfg)
        selected = fit.fits[0.5].selected_indices
        assert selected.size == contaminated_line.n - 1
        assert 17 not in selected

    def test_trim_count_above_n_is_rejected(self, line_data, linear_specs):
        cfg = TrainConfig(method=MethodEnum.tqr, trim_count=line_data.n + 1, epochs=1)
        with pytest.raises(InvalidConfigurationError, match="exceeds"):
            train_tqr(line_data, linear_specs, cfg)

    def test_fraction_that_keeps_nothing_per_batch_is_rejected(self, line_data, linear_specs):
        cfg = TrainConfig(method=MethodEnum.tqr, trim_count=1, batch_size=4, epochs=1)
        with pytest.raises(InvalidConfigurationError, match="keeps no sample"):
            train_tqr(line_data, linear_specs, cfg)


class TestBeta:
    def test_vanishing_beta_reproduces_plain_qr(self):
        data = _random_data(n=60, d=2, seed=1)
        specs = relu_architecture(2, hidden_width=8, depth=3)
        common = dict(alphas=[0.5], epochs=20, batch_size=12, seed=2, convergence_tol=TINY_TOL)
        qr_steps, qr_callback = _recorder()
        beta_steps, beta_callback = _recorder()

        train_qr(data, specs, TrainConfig(**common), callback=qr_callback)
        train_beta_qr(
            data,
            specs,
            TrainConfig(method=MethodEnum.beta_qr, beta_cfg=BetaConfig(beta=1e-8), **common),
            callback=beta_callback,
        )

        assert len(qr_steps) == len(beta_steps) == 100
        for a, b in zip(qr_steps, beta_steps):
            assert np.allclose(a, b, rtol=0, atol=1e-6)

    def test_constant_model_ignores_gross_outliers(self, linear_specs):
        responses = np.concatenate([np.linspace(-1.0, 1.0, 21), np.full(5, 50.0)])
        data = Dataset(features=np.zeros(responses.size), responses=responses)
        common = dict(
            alphas=[0.75], epochs=2000, batch_size=data.n, learning_rate=0.01,
            final_learning_rate=1e-4, standardize=False,
        )
        plain = train_qr(data, linear_specs, TrainConfig(**common))
        robust = train_beta_qr(
            data, linear_specs, TrainConfig(method=MethodEnum.beta_qr, beta_cfg=BetaConfig(beta=0.2), **common)
        )
        X = np.zeros((1, 1))
        # 0.75-quantile of all 26 responses vs of the 21 inliers
        assert plain.predict(0.75, X)[0] == pytest.approx(0.9, abs=0.05)
        assert robust.predict(0.75, X)[0] == pytest.approx(0.5, abs=0.15)

    def test_warm_start_is_the_trimmed_fit(self, contaminated_line, linear_specs):
        cfg = TrainConfig(
            method=MethodEnum.beta_qr, beta_cfg=BetaConfig(beta=1.0), warm_start=True, trim_fraction=0.9,
            alphas=[0.5], epochs=20, batch_size=16, seed=3,
        )
        trimmed = train_tqr(contaminated_line, linear_specs, cfg.model_copy(update={"method": MethodEnum.tqr}))

        trainer = BetaTrainer(cfg, linear_specs)
        trainer.validate(contaminated_line)
        scaler = Standardizer.fit(contaminated_line)
        start = trainer.start_model(
            scaler.transform_x(contaminated_line.features),
            scaler.transform_y(contaminated_line.responses),
            0.5,
            SeedStreams.from_seed(3),
        )
        assert np.array_equal(start.flat_parameters(), trimmed.model(0.5).flat_parameters())

    def test_warm_start_needs_a_trim_setting(self):
        with pytest.raises(ValidationError, match="warm start"):
            TrainConfig(method=MethodEnum.beta_qr, beta_cfg=BetaConfig(beta=1.0), warm_start=True)

    def test_requires_beta(self):
        with pytest.raises(ValidationError, match="requires beta"):
            TrainConfig(method=MethodEnum.beta_qr)


class TestCaseSpecific:
    def test_huge_lambda_reproduces_full_batch_qr(self, linear_specs):
        data = _random_data(n=30, d=1, seed=4)
        common = dict(alphas=[0.5], batch_size=data.n, seed=1, convergence_tol=TINY_TOL)
        qr_steps, qr_callback = _recorder()
        rcp_steps, rcp_callback = _recorder()

        train_qr(data, linear_specs, TrainConfig(epochs=100, **common), callback=qr_callback)
        fit = train_rcp(
            data,
            linear_specs,
            TrainConfig(method=MethodEnum.rcp, lambda_=1e6, outer_iters=10, inner_steps=10, **common),
            callback=rcp_callback,
        )

        assert len(qr_steps) == len(rcp_steps) == 100
        for a, b in zip(qr_steps, rcp_steps):
            assert np.allclose(a, b, rtol=0, atol=1e-6)
        assert np.all(fit.fits[0.5].gammas == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_largest_shift_lands_on_the_outlier(self, seed, linear_specs):
        data = make_line(n=50, seed=seed, outliers=(17,))
        cfg = TrainConfig(
            method=MethodEnum.rcp,
            alphas=[0.5],
            batch_size=data.n,
            lambda_=0.1,
            outer_iters=200,
            inner_steps=5,
            seed=seed,
        )
        fit = train_rcp(data, linear_specs, cfg)
        gammas = fit.fits[0.5].gammas
        assert int(np.argmax(np.abs(gammas))) == 17

    @pytest.mark.parametrize("alpha", [0.25, 0.75])
    def test_lambda_on_the_pinball_scale_keeps_coverage(self, alpha, linear_specs):
        data = make_line(n=200, noise=0.5)
        cfg = TrainConfig(
            method=MethodEnum.rcp, alphas=[alpha], batch_size=data.n, lambda_=1.0,
            outer_iters=100, inner_steps=10, final_learning_rate=1e-4,
        )
        fit = train_rcp(data, linear_specs, cfg)
        assert np.all(fit.fits[alpha].gammas == 0.0)
        assert empirical_coverage(fit.quantile_model(alpha), data) == pytest.approx(alpha, abs=0.05)

    def test_violations_are_logged_once_per_quantile(self, line_data, linear_specs, caplog):
        cfg = TrainConfig(
            method=MethodEnum.rcp, alphas=[0.5], lambda_=0.1, batch_size=line_data.n,
            outer_iters=20, inner_steps=3, learning_rate=0.5,
        )
        with caplog.at_level(logging.WARNING):
            fit = train_rcp(line_data, linear_specs, cfg)
        warnings = [record for record in caplog.records if record.levelno == logging.WARNING]
        assert len(warnings) == (1 if fit.fits[0.5].monotonicity_violations else 0)

    def test_mini_batches_are_rejected(self, line_data, linear_specs):
        cfg = TrainConfig(method=MethodEnum.rcp, lambda_=0.1, batch_size=16)
        with pytest.raises(InvalidConfigurationError, match="full-batch"):
            train_rcp(line_data, linear_specs, cfg)

    def test_requires_lambda(self):
        with pytest.raises(ValidationError, match="--lambda"):
            TrainConfig(method=MethodEnum.rcp)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValidationError):
            TrainConfig(method=MethodEnum.rcp, lambda_=0.0)

    def test_objective_violations_are_counted(self, line_data, linear_specs):
        cfg = TrainConfig(method=MethodEnum.rcp, lambda_=0.1, batch_size=line_data.n, outer_iters=20, inner_steps=3)
        fit = train_rcp(line_data, linear_specs, cfg)
        for quantile_fit in fit.fits.values():
            assert quantile_fit.monotonicity_violations >= 0
            assert quantile_fit.gammas.shape == (line_data.n,)


class TestMultiStart:
    def test_start_seeds(self):
        streams = SeedStreams.from_seed(4)
        seeds = streams.start_seeds(5)
        assert seeds[0] == streams.init_seed
        assert len(set(seeds)) == 5
        assert streams.start_seeds(1) == [streams.init_seed]

    def test_keeps_the_lowest_objective_candidate(self, contaminated_line, linear_specs):
        cfg = TrainConfig(alphas=[0.5], batch_size=contaminated_line.n, n_starts=4, start_epochs=5)
        trainer = QuantileTrainer(cfg, linear_specs)
        scaler = Standardizer.fit(contaminated_line)
        X = scaler.transform_x(contaminated_line.features)
        y = scaler.transform_y(contaminated_line.responses)

        chosen = trainer.start_model(X, y, 0.5, SeedStreams.from_seed(0))
        candidates = [
            trainer.descend(init_model(linear_specs, seed), X, y, 0.5, SeedStreams.from_seed(0), None, 5)
            for seed in SeedStreams.from_seed(0).start_seeds(4)
        ]
        best = min(candidates, key=lambda fit: fit.final_loss)
        assert np.array_equal(chosen.flat_parameters(), best.model.flat_parameters())

    def test_single_start_is_the_seeded_init(self, line_data, linear_specs):
        trainer = QuantileTrainer(TrainConfig(), linear_specs)
        streams = SeedStreams.from_seed(2)
        start = trainer.start_model(line_data.features.reshape(-1, 1), line_data.responses, 0.5, streams)
        assert np.array_equal(start.flat_parameters(), init_model(linear_specs, streams.init_seed).flat_parameters())


def test_learning_rate_schedule():
    decayed = TrainConfig(learning_rate=1e-2, final_learning_rate=1e-4)
    assert [scheduled_learning_rate(decayed, epoch, 3) for epoch in range(3)] == pytest.approx([1e-2, 1e-3, 1e-4])
    assert scheduled_learning_rate(decayed, 0, 1) == 1e-2
    assert scheduled_learning_rate(TrainConfig(learning_rate=1e-2), 7, 10) == 1e-2


class TestReference:
    def test_requires_an_inlier_mask(self, linear_specs):
        with pytest.raises(InvalidConfigurationError, match="no inlier mask"):
            fit_reference(_random_data(d=1), linear_specs, TrainConfig(epochs=1))

    def test_all_inlier_mask_equals_plain_qr(self, line_data, linear_specs):
        cfg = TrainConfig(epochs=30, batch_size=16)
        reference = fit_reference(line_data, linear_specs, cfg)
        plain = train_qr(line_data, linear_specs, cfg)
        for alpha in cfg.alphas:
            assert np.array_equal(reference.model(alpha).flat_parameters(), plain.model(alpha).flat_parameters())

    def test_uses_the_full_data_scaling(self, contaminated_line, linear_specs):
        reference = fit_reference(contaminated_line, linear_specs, TrainConfig(epochs=1))
        full = Standardizer.fit(contaminated_line)
        assert reference.scaler.y_mean == full.y_mean
        assert reference.scaler.y_scale == full.y_scale
        assert reference.method == MethodEnum.qr
