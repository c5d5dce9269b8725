# -*- coding: utf-8 -*-

"""
測試獨立驗證引擎：ALS 秩-k 最小化與 Monte-Carlo 誤差
"""

import math

import numpy as np
import pytest

from threeterm.errors import InvalidInput
from threeterm.oracle import als_rank_k, monte_carlo_error
from threeterm.stats import GeneratorSpec, InjectionSpec, build_model, gen_injection
from threeterm.transforms import Method, RankKTransform, fit_gbt1, fit_gbt2, fit_gklt, fit_pca3, regressors


class TestAls:
    def test_identity_full_rank(self, rng):
        x = rng.standard_normal((4, 60))
        res = als_rank_k(x, x, k=4, restarts=3)
        assert res.best_err == pytest.approx(0.0, abs=1e-12)
        assert res.restarts == 3 and len(res.per_restart_errs) == 3

    def test_unconstrained_matches_least_squares(self, make_samples):
        samples = make_samples(4, 4, 1, 80, seed=11)
        model = build_model(samples)
        t = fit_gbt1(model, 4, samples)
        x, y = samples["x"].data, samples["y"].data
        res = als_rank_k(x, y, k=4, restarts=5)
        assert res.best_err == pytest.approx(t.predicted_err, rel=1e-8, abs=1e-12)

    def test_brackets_pca3_closed_form(self, make_samples):
        """閉式解是秩-k 問題的全域最小值：ALS 不會更低，且可以逼近"""
        samples = make_samples(4, 4, 3, 200, seed=5)
        model = build_model(samples)
        t = fit_pca3(model, samples, 2)
        z = regressors(t, samples["y"], reuse_training_injections=True)
        res = als_rank_k(samples["x"].data, z, k=2, restarts=20, seed=1)
        scale = 1.0 + t.predicted_err
        assert res.best_err >= t.predicted_err - 1e-9 * scale
        assert res.best_err <= t.predicted_err * (1 + 1e-3) + 1e-9

    def test_brackets_gbt2_closed_form(self, small_problem):
        samples, model = small_problem
        t = fit_gbt2(model, samples, 3)
        z = regressors(t, samples["y"], reuse_training_injections=True)
        res = als_rank_k(samples["x"].data, z, k=3, restarts=10, seed=2)
        assert res.best_err >= t.predicted_err - 1e-9 * (1.0 + t.predicted_err)
        assert res.best_err <= t.predicted_err * (1 + 1e-3) + 1e-9

    def test_brackets_gklt_closed_form(self, make_samples):
        """m = n = 6、k = 3：ALS 在 [y; y²] 上逼近 GKLT 的閉式解"""
        samples = make_samples(6, 6, 1, 200, seed=13, spread=0.5)
        model = build_model(samples)
        t = fit_gklt(model, samples, 3)
        z = regressors(t, samples["y"])
        assert z.shape == (12, 200)
        res = als_rank_k(samples["x"].data, z, k=3, restarts=20, seed=3)
        assert res.best_err >= t.predicted_err - 1e-9 * (1.0 + t.predicted_err)
        assert res.best_err <= t.predicted_err * (1 + 1e-4) + 1e-12

    def test_parallel_restarts_are_deterministic(self, rng):
        x = rng.standard_normal((3, 40))
        z = rng.standard_normal((5, 40))
        a = als_rank_k(x, z, k=2, restarts=4, seed=9, workers=1)
        b = als_rank_k(x, z, k=2, restarts=4, seed=9, workers=4)
        assert a.per_restart_errs == b.per_restart_errs

    @pytest.mark.parametrize("kwargs", [{"k": 0}, {"k": 4}, {"k": 2, "restarts": 0}])
    def test_argument_checks(self, rng, kwargs):
        x = rng.standard_normal((3, 10))
        z = rng.standard_normal((5, 10))
        with pytest.raises(InvalidInput):
            als_rank_k(x, z, **kwargs)

    def test_sample_count_mismatch(self, rng):
        with pytest.raises(InvalidInput):
            als_rank_k(rng.standard_normal((3, 10)), rng.standard_normal((3, 11)), k=1)


def constant_transform(m, value):
    """x̂ ≡ value 的零秩轉換。"""
    return RankKTransform(
        method=Method.GBT1,
        t0=np.zeros((m, m)),
        t1=np.zeros((m, 0)),
        k=1,
        predicted_err=0.0,
        x_mean=np.full(m, value),
        y_mean=np.zeros(m),
    )


class TestMonteCarlo:
    def test_constant_estimator(self):
        """x ~ U[0,1)^m 時 E‖x − ½‖² = m/12"""
        spec = GeneratorSpec(m=4, p=500, sigma=1.0, seed=3)
        res = monte_carlo_error(constant_transform(4, 0.5), spec, trials=20, seed=1)
        assert res.trials == 20 and len(res.errors) == 20
        assert res.mean == pytest.approx(4 / 12, abs=5 * res.stderr + 0.01)

    def test_deterministic(self):
        spec = GeneratorSpec(m=3, p=50, seed=1)
        t = constant_transform(3, 0.5)
        a = monte_carlo_error(t, spec, trials=5, seed=4)
        b = monte_carlo_error(t, spec, trials=5, seed=4)
        assert a.errors == b.errors

    def test_single_trial_has_no_stderr(self):
        res = monte_carlo_error(constant_transform(2, 0.5), GeneratorSpec(m=2, p=30), trials=1)
        assert math.isnan(res.stderr)
        with pytest.raises(InvalidInput):
            monte_carlo_error(constant_transform(2, 0.5), GeneratorSpec(m=2, p=30), trials=0)

    def test_generalization_close_to_prediction(self):
        """大樣本訓練的 GBT1 在新資料上的誤差接近預測誤差"""
        spec = GeneratorSpec(m=4, p=2000, sigma=1.0, seed=6)
        data = spec.sample()
        samples = {"x": data.x, "y": data.y}
        t = fit_gbt1(build_model(samples), 2, samples)
        res = monte_carlo_error(t, spec, trials=20, seed=2)
        assert res.mean == pytest.approx(t.predicted_err, rel=0.1, abs=5 * res.stderr)

    def test_fresh_injections_match_gbt1(self):
        """新資料上重新抽的 w 與 x 無關：pca3 與 GBT1 的誤差差距在 3 個標準誤內"""
        spec = GeneratorSpec(m=4, p=2000, sigma=1.0, seed=8)
        data = spec.sample()
        w_spec = InjectionSpec(4, seed=21)
        samples = {"x": data.x, "y": data.y, "w": gen_injection(w_spec, spec.p, "w")}
        model = build_model(samples)
        pca3 = monte_carlo_error(fit_pca3(model, samples, 2, w_spec=w_spec), spec, trials=20, seed=5)
        gbt1 = monte_carlo_error(fit_gbt1(model, 2, samples), spec, trials=20, seed=5)
        assert abs(pca3.mean - gbt1.mean) <= 3 * math.hypot(pca3.stderr, gbt1.stderr)
