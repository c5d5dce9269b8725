# -*- coding: utf-8 -*-

"""
測試秩約束估計器：擬合、套用、預測誤差
"""

import logging

import numpy as np
import pytest

from threeterm import stats, transforms
from threeterm.errors import InvalidInput
from threeterm.matcore import pseudo_inverse
from threeterm.stats import InjectionSpec, analytic_model, build_model, center, cross_cov, gen_injection
from threeterm.transforms import (
    AuxKind,
    Method,
    apply,
    clean_error,
    fit,
    fit_gbt1,
    fit_gbt2,
    fit_gklt,
    fit_pca3,
    fit_pca3_ext,
    fit_ttf,
    gram_matrix,
    linear_filter_error,
    predicted_error,
    principal_components,
    training_error,
    ttf_error,
)

ALL_METHODS = ["gbt1", "gbt2", "gklt", "pca3", "pca3_ext", "ttf"]


def relative_gap(a, b):
    return abs(a - b) / (1.0 + abs(a))


class TestTrainingIdentity:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_predicted_equals_training_error(self, small_problem, method):
        samples, model = small_problem
        k = None if method == "ttf" else 2
        t = fit(method, model, samples, k=k)
        assert t.method is Method.parse(method)
        assert relative_gap(t.predicted_err, training_error(t, samples)) <= 1e-8

    @pytest.mark.parametrize("method", ["gbt1", "gbt2", "gklt", "pca3", "pca3_ext"])
    def test_predicted_error_function(self, small_problem, method):
        samples, model = small_problem
        t = fit(method, model, samples, k=3)
        assert predicted_error(method, model, k=3, samples=samples) == pytest.approx(t.predicted_err, rel=1e-12)

    def test_rank_and_shapes(self, small_problem):
        samples, model = small_problem
        t = fit_pca3_ext(model, samples, k=2, eta=4)
        assert t.t0.shape == (5, 4)
        assert t.t1.shape == (5, 3 + 4)
        assert np.linalg.matrix_rank(t.matrix) <= 2
        assert t.aux.kind is AuxKind.INJECTION
        assert t.injections.d == 7


class TestValidation:
    @pytest.mark.parametrize("k", [0, 5, 2.5, None])
    def test_k_out_of_range(self, small_problem, k):
        samples, model = small_problem
        with pytest.raises(InvalidInput):
            fit_gbt1(model, k)

    def test_gbt2_dimension(self, make_samples):
        samples = make_samples(4, 3, 2, 60, seed=1, v_dim=2)
        with pytest.raises(InvalidInput):
            fit_gbt2(build_model(samples), samples, 2)

    def test_missing_role(self, small_problem):
        samples, model = small_problem
        with pytest.raises(InvalidInput):
            fit_pca3(model.restrict(("x", "y")), samples, 2)

    def test_gklt_needs_samples(self, small_problem):
        _, model = small_problem
        with pytest.raises(InvalidInput):
            fit_gklt(model, None, 2)

    def test_unknown_method(self, small_problem):
        samples, model = small_problem
        with pytest.raises(InvalidInput):
            fit("pca4", model, samples, k=1)

    def test_negative_eta(self, small_problem):
        samples, model = small_problem
        with pytest.raises(InvalidInput):
            fit_pca3_ext(model, samples, 2, eta=-1)


class TestThreeTerm:
    def test_ext_eta_zero_equals_basic(self, small_problem):
        samples, model = small_problem
        basic = fit_pca3(model, samples, 2)
        ext = fit_pca3_ext(model, samples, 2, eta=0)
        np.testing.assert_allclose(ext.matrix, basic.matrix, atol=1e-12)
        assert ext.predicted_err == pytest.approx(basic.predicted_err, rel=1e-12)

    def test_eta_prefix_matches_truncated_h(self, small_problem):
        samples, model = small_problem
        short = dict(samples, h=samples["h"].prefix(3))
        a = fit_pca3_ext(model, samples, 2, eta=3)
        b = fit_pca3_ext(build_model(short), short, 2)
        np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)

    def test_ext_no_worse_than_basic(self, small_problem):
        samples, model = small_problem
        errs = [fit_pca3_ext(model, samples, 2, eta=eta).predicted_err for eta in range(7)]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_decorrelation(self, small_problem):
        samples, model = small_problem
        t = fit_pca3_ext(model, samples, 2)
        s, g = t.injections.rows(0, 3), t.injections.rows(3)
        y = samples["y"]
        scale = 1 + np.linalg.norm(model.block("y", "y"))
        for a, b in ((y, s), (y, g), (s, g)):
            assert np.linalg.norm(cross_cov(a, b)) <= 1e-10 * scale

    def test_analytic_model_matches_sampled(self, small_problem):
        """解析模型（無樣本）與同一組區塊的取樣模型給出相同的轉換"""
        samples, model = small_problem
        blocks = {(a, b): model.block(a, b) for a in ("x", "y", "w") for b in ("x", "y", "w")}
        analytic = analytic_model(blocks)
        a = fit_pca3(analytic, None, 2)
        b = fit_pca3(model, samples, 2)
        np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)
        assert a.predicted_err == pytest.approx(b.predicted_err, rel=1e-10)
        assert a.injections is None

    def test_gklt_constant_square_equals_gbt1(self, rng):
        """y ∈ {−1, +1}ⁿ 時 y² 為常數，中心化後為 0，GKLT 退化為 GBT1"""
        x = center(rng.random((3, 200)), "x")
        a = rng.standard_normal((3, 3))
        y = center(np.sign(a @ x.raw() + 0.3 * rng.standard_normal((3, 200))), "y")
        samples = {"x": x, "y": y}
        model = build_model(samples)
        gklt = fit_gklt(model, samples, 2)
        gbt1 = fit_gbt1(model, 2, samples)
        np.testing.assert_allclose(gklt.injections.data, 0.0, atol=1e-12)
        np.testing.assert_allclose(gklt.t0, gbt1.t0, atol=1e-10)
        np.testing.assert_allclose(gklt.t1, 0.0, atol=1e-10)
        assert gklt.predicted_err == pytest.approx(gbt1.predicted_err, rel=1e-10)

    def test_independent_injection_gives_no_gain(self, small_problem):
        """w 與 x、y 無關的解析模型：pca3 不會比 GBT1 好"""
        _, model = small_problem
        blocks = {(a, b): model.block(a, b) for a, b in (("x", "x"), ("x", "y"), ("y", "y"))}
        blocks.update({("w", "w"): np.eye(3) / 12, ("x", "w"): np.zeros((5, 3)), ("y", "w"): np.zeros((4, 3))})
        analytic = analytic_model(blocks)
        gbt1 = fit_gbt1(analytic, 2).predicted_err
        assert fit_pca3(analytic, None, 2).predicted_err >= gbt1 - 1e-9

    def test_pca3_inverts_e_yy_once(self, small_problem, monkeypatch):
        samples, model = small_problem
        expected = fit_pca3(model, samples, 2)
        e_yy = model.block("y", "y")
        calls = []

        def counting(m, *args, **kwargs):
            if np.shape(m) == e_yy.shape and np.array_equal(m, e_yy):
                calls.append(m)
            return pseudo_inverse(m, *args, **kwargs)

        monkeypatch.setattr(transforms, "pseudo_inverse", counting)
        monkeypatch.setattr(stats, "pseudo_inverse", counting)
        t = fit_pca3(model, samples, 2)
        assert len(calls) == 1
        np.testing.assert_array_equal(t.matrix, expected.matrix)
        np.testing.assert_array_equal(t.injections.data, expected.injections.data)

    def test_nonunique_flag(self, caplog):
        model = analytic_model({("x", "x"): np.eye(4), ("x", "y"): np.eye(4), ("y", "y"): np.eye(4)})
        with caplog.at_level(logging.WARNING, logger="threeterm.transforms"):
            t = fit_gbt1(model, 2)
        assert t.nonunique
        assert t.predicted_err == pytest.approx(2.0)
        assert "不唯一" in caplog.text


class TestApply:
    def test_fresh_injections_warn(self, small_problem, caplog):
        samples, model = small_problem
        spec = InjectionSpec(3, seed=8)
        t = fit_pca3(model, samples, 2, w_spec=spec)
        with caplog.at_level(logging.WARNING, logger="threeterm.transforms"):
            out = apply(t, samples["y"], seed=3)
        assert out.data.shape == (5, 100)
        assert "重新抽注入樣本" in caplog.text
        again = apply(t, samples["y"], seed=3)
        np.testing.assert_array_equal(out.data, again.data)

    def test_fresh_injections_need_spec(self, small_problem):
        samples, model = small_problem
        t = fit_pca3(model, samples, 2)
        with pytest.raises(InvalidInput):
            apply(t, samples["y"])

    def test_reuse_needs_same_p(self, small_problem):
        samples, model = small_problem
        t = fit_pca3(model, samples, 2)
        other = center(np.ones((4, 10)), "y")
        with pytest.raises(InvalidInput):
            apply(t, other, reuse_training_injections=True)

    def test_dimension_mismatch(self, small_problem):
        samples, model = small_problem
        t = fit_gbt1(model, 2, samples)
        with pytest.raises(InvalidInput):
            apply(t, samples["x"])

    def test_gklt_out_of_sample_uses_training_mean(self, make_samples):
        train = make_samples(4, 4, 2, 80, seed=3)
        t = fit_gklt(build_model(train), train, 2)
        y_new = center(train["y"].raw()[:, :10], "y")
        full = apply(t, train["y"])
        part = apply(t, y_new)
        np.testing.assert_allclose(part.raw(), full.raw()[:, :10], atol=1e-10)

    def test_gbt1_out_of_sample_is_linear(self, small_problem):
        samples, model = small_problem
        t = fit_gbt1(model, 3, samples)
        y = samples["y"]
        est = apply(t, y).raw()
        expected = t.t0 @ (y.raw() - t.y_mean[:, None]) + t.x_mean[:, None]
        np.testing.assert_allclose(est, expected, atol=1e-12)

    @pytest.mark.parametrize("method", ["gbt1", "gbt2", "gklt", "pca3", "pca3_ext"])
    def test_principal_components_reconstruct(self, small_problem, method):
        """basis·scores + x̄ 等於 apply 的輸出"""
        samples, model = small_problem
        t = fit(method, model, samples, k=2)
        pcs = principal_components(t, samples["y"], reuse_training_injections=True)
        assert pcs.scores.shape == (2, 100)
        recon = pcs.basis @ pcs.scores + t.x_mean[:, None]
        est = apply(t, samples["y"], reuse_training_injections=True)
        np.testing.assert_allclose(recon, est.raw(), atol=1e-9)

    def test_ttf_has_no_components(self, small_problem):
        samples, model = small_problem
        t = fit_ttf(model, samples)
        with pytest.raises(InvalidInput):
            principal_components(t, samples["y"], reuse_training_injections=True)


class TestErrors:
    def test_ttf_identity(self, small_problem):
        samples, model = small_problem
        t = fit_ttf(model, samples)
        assert t.k is None
        s = t.injections
        e_ss = cross_cov(s, s)
        gain = cross_cov(samples["x"], s) @ np.linalg.pinv(np.linalg.cholesky(e_ss).T)
        expected = linear_filter_error(model) - float(np.sum(gain * gain))
        assert t.predicted_err == pytest.approx(expected, rel=1e-9)
        assert ttf_error(build_model(dict(samples, s=s))) == pytest.approx(expected, rel=1e-9)

    def test_ttf_lower_than_full_rank_pca3(self, small_problem):
        samples, model = small_problem
        full = fit_pca3(model, samples, 4)
        assert fit_ttf(model, samples).predicted_err <= full.predicted_err + 1e-10

    def test_clean_error(self, small_problem):
        samples, model = small_problem
        vals = np.sort(np.linalg.eigvalsh(model.block("x", "x")))[::-1]
        expected = float(np.sum(vals[2:]))
        assert clean_error(model, 2) == pytest.approx(expected, rel=1e-10)
        assert clean_error(model, 2) <= fit_pca3_ext(model, samples, 2).predicted_err + 1e-10

    @pytest.mark.parametrize("method", ["gbt1", "gbt2", "gklt", "pca3", "pca3_ext"])
    def test_monotone_in_k(self, make_samples, method):
        for seed in range(5):
            samples = make_samples(6, 5, 4, 120, seed=seed, eta=5)
            model = build_model(samples)
            errs = [predicted_error(method, model, k=k, samples=samples) for k in range(1, 6)]
            tol = 1e-10 * (1.0 + model.trace("x"))
            assert all(b <= a + tol for a, b in zip(errs, errs[1:])), (seed, errs)

    def test_gram_is_psd(self, small_problem):
        samples, model = small_problem
        for method in ("gbt1", "gbt2", "pca3", "pca3_ext"):
            g = gram_matrix(method, model, samples=samples)
            np.testing.assert_allclose(g, g.T)
            assert np.linalg.eigvalsh(g).min() >= -1e-10

    def test_gbt2_random_v_vs_gbt1(self, small_problem):
        samples, model = small_problem
        assert fit_gbt2(model, samples, 2).predicted_err <= fit_gbt1(model, 2).predicted_err + 1e-10

    def test_ttf_without_injection_is_linear_filter(self, small_problem):
        _, model = small_problem
        plain = model.restrict(("x", "y"))
        assert fit_ttf(plain).predicted_err == pytest.approx(linear_filter_error(plain), rel=1e-12)


def test_fresh_injection_deterministic_per_seed(small_problem):
    samples, model = small_problem
    spec = InjectionSpec(3, seed=8)
    h_spec = InjectionSpec(6, seed=9)
    t = fit_pca3_ext(model, samples, 2, eta=6, w_spec=spec, h_spec=h_spec)
    a = apply(t, samples["y"], seed=1)
    b = apply(t, samples["y"], seed=2)
    assert not np.allclose(a.data, b.data)
    assert gen_injection(spec, 100).d == 3
