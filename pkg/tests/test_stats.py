# -*- coding: utf-8 -*-

"""
測試樣本處理、二階模型與注入向量
"""

import numpy as np
import pytest

from threeterm.errors import InvalidInput
from threeterm.stats import (
    Distribution,
    GeneratorSpec,
    InjectionSpec,
    ModelSource,
    SampleMatrix,
    SecondOrderModel,
    analytic_model,
    build_model,
    center,
    cross_cov,
    empirical_error,
    gen_injection,
    gen_linear_model,
    gen_observation,
    h_extension,
    hadamard_square,
    make_w_injection,
    s_injection,
)


class TestSampleMatrix:
    def test_center(self, rng):
        raw = rng.random((3, 50)) + 2.0
        sm = center(raw, "x")
        np.testing.assert_allclose(sm.data.mean(axis=1), 0.0, atol=1e-14)
        np.testing.assert_allclose(sm.raw(), raw)
        assert (sm.d, sm.p) == (3, 50)

    def test_needs_samples(self):
        with pytest.raises(InvalidInput):
            center(np.zeros((2, 0)))
        with pytest.raises(InvalidInput):
            SampleMatrix(np.zeros((2, 0)), np.zeros(2))

    def test_empty_dimension_allowed(self):
        sm = center(np.zeros((0, 4)), "h")
        assert (sm.d, sm.p) == (0, 4)

    def test_nonfinite(self):
        with pytest.raises(InvalidInput):
            center(np.array([[1.0, np.inf]]))

    def test_read_only(self, rng):
        sm = center(rng.random((2, 5)))
        with pytest.raises(ValueError):
            sm.data[0, 0] = 1.0

    def test_stack_and_concat(self, rng):
        a = center(rng.random((2, 6)), "y")
        b = center(rng.random((3, 6)), "w")
        z = SampleMatrix.stack([a, b])
        assert z.d == 5 and z.dim_label == "z"
        np.testing.assert_allclose(z.raw()[:2], a.raw())

        c = center(rng.random((2, 4)), "x")
        joined = SampleMatrix.concat_samples([a.relabel("x"), c])
        assert joined.p == 10
        np.testing.assert_allclose(joined.raw()[:, 6:], c.raw())
        with pytest.raises(InvalidInput):
            SampleMatrix.stack([a, center(rng.random((1, 7)))])

    def test_unknown_label(self):
        with pytest.raises(InvalidInput):
            SampleMatrix(np.zeros((1, 2)), np.zeros(1), "q")


class TestCovariance:
    def test_cross_cov_one_over_p(self, rng):
        a = center(rng.random((2, 40)))
        b = center(rng.random((3, 40)))
        np.testing.assert_allclose(cross_cov(a, b), a.data @ b.data.T / 40)
        with pytest.raises(InvalidInput):
            cross_cov(a, center(rng.random((2, 41))))

    def test_empirical_error_raw_coordinates(self, rng):
        x = center(rng.random((2, 10)))
        shifted = center(x.raw() + 1.0)
        assert empirical_error(x, shifted) == pytest.approx(2.0)
        assert empirical_error(x, x) == 0.0

    def test_build_model_mismatched_p(self, rng):
        with pytest.raises(InvalidInput):
            build_model({"x": center(rng.random((2, 10))), "y": center(rng.random((2, 11)))})

    def test_build_model_blocks(self, small_problem):
        samples, model = small_problem
        assert model.source is ModelSource.SAMPLED
        assert model.p == 100
        np.testing.assert_allclose(model.block("y", "x"), model.block("x", "y").T)
        np.testing.assert_allclose(model.block("x", "w"), cross_cov(samples["x"], samples["w"]))
        assert model.dim("h") == 6

    def test_analytic_model(self):
        model = analytic_model({("x", "x"): np.eye(2), ("x", "y"): np.ones((2, 3)), ("y", "y"): 4 * np.eye(3)})
        np.testing.assert_allclose(model.block("y", "x"), np.ones((3, 2)))
        assert model.source is ModelSource.ANALYTIC
        with pytest.raises(InvalidInput):
            analytic_model({("x", "x"): np.diag([1.0, -1.0])})
        with pytest.raises(InvalidInput):
            analytic_model({("x", "x"): np.eye(2), ("x", "y"): np.ones((2, 3))})
        with pytest.raises(InvalidInput):
            analytic_model({("x", "x"): np.eye(2), ("x", "y"): np.ones((3, 3)), ("y", "y"): np.eye(3)})

    def test_derive_matches_samples(self, small_problem):
        """代數推導的區塊等於推導後樣本的共變異數"""
        samples, model = small_problem
        c = np.arange(12.0).reshape(3, 4) / 10
        derived = model.derive("s", {"w": np.eye(3), "y": -c}, against=("x", "y"))
        s = SampleMatrix(samples["w"].data - c @ samples["y"].data, np.zeros(3), "s")
        np.testing.assert_allclose(derived.block("s", "s"), cross_cov(s, s), atol=1e-12)
        np.testing.assert_allclose(derived.block("x", "s"), cross_cov(samples["x"], s), atol=1e-12)

    def test_direct_model_checks_transpose(self):
        dims = {"x": 2, "y": 3}
        blocks = {("x", "x"): np.eye(2), ("x", "y"): np.ones((2, 3)), ("y", "y"): np.eye(3)}
        with pytest.raises(InvalidInput, match="缺少"):
            SecondOrderModel(blocks=blocks, dims=dims)
        with pytest.raises(InvalidInput, match="不一致"):
            SecondOrderModel(blocks={**blocks, ("y", "x"): np.zeros((3, 2))}, dims=dims)
        with pytest.raises(InvalidInput, match="不一致"):
            SecondOrderModel(blocks={**blocks, ("y", "x"): np.ones((3, 2)), ("y", "y"): np.triu(np.ones((3, 3)))}, dims=dims)
        model = SecondOrderModel(blocks={**blocks, ("y", "x"): np.ones((3, 2))}, dims=dims)
        assert model.roles == ("x", "y")

    def test_prefix_and_restrict(self, small_problem):
        _, model = small_problem
        short = model.with_prefix("h", 2)
        assert short.dim("h") == 2
        np.testing.assert_allclose(short.block("h", "h"), model.block("h", "h")[:2, :2])
        sub = model.restrict(("x", "y"))
        assert sub.roles == ("x", "y")
        with pytest.raises(InvalidInput):
            sub.block("x", "w")


class TestInjections:
    @pytest.mark.parametrize("dist", ["uniform", "gaussian"])
    def test_prefix_property(self, dist):
        long = gen_injection(InjectionSpec(10, dist, seed=5), 30)
        short = gen_injection(InjectionSpec(4, dist, seed=5), 30)
        np.testing.assert_array_equal(short.data, long.data[:4])

    def test_deterministic_and_centered(self):
        a = gen_injection(InjectionSpec(3, seed=1), 20)
        b = gen_injection(InjectionSpec(3, seed=1), 20)
        np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_allclose(a.data.mean(axis=1), 0.0, atol=1e-15)

    def test_uniform_variance(self):
        w = gen_injection(InjectionSpec(34, "uniform", seed=0), 366)
        var = float(np.mean(w.data * w.data))
        assert abs(var - 1 / 12) <= 0.15 / 12

    def test_empty_injection(self):
        h = gen_injection(InjectionSpec(0), 7, "h")
        assert (h.d, h.p) == (0, 7)

    def test_distribution_aliases(self):
        assert Distribution.parse("gaussian") is Distribution.GAUSSIAN01
        assert Distribution.parse("uniform01_centered") is Distribution.UNIFORM01_CENTERED
        with pytest.raises(InvalidInput):
            Distribution.parse("laplace")
        with pytest.raises(InvalidInput):
            InjectionSpec(-1)

    def test_s_injection_decorrelates(self, small_problem):
        samples, model = small_problem
        y = samples["y"]
        s = s_injection(y, samples["w"], model.block("w", "y"), model.block("y", "y"))
        assert s.dim_label == "s"
        scale = 1 + np.linalg.norm(model.block("y", "y"))
        assert np.linalg.norm(cross_cov(y, s)) <= 1e-10 * scale

    def test_s_injection_checks(self, small_problem):
        samples, model = small_problem
        with pytest.raises(InvalidInput):
            s_injection(samples["y"], center(np.ones((3, 5))), model.block("w", "y"), model.block("y", "y"))
        with pytest.raises(InvalidInput):
            s_injection(samples["y"], samples["w"], model.block("w", "x"), model.block("y", "y"))

    def test_precomputed_gain(self, small_problem):
        samples, model = small_problem
        y, w = samples["y"], samples["w"]
        e_wy, e_yy = model.block("w", "y"), model.block("y", "y")
        gain = e_wy @ np.linalg.pinv(e_yy)
        np.testing.assert_allclose(
            s_injection(y, w, e_wy, e_yy, gain=gain).data, s_injection(y, w, e_wy, e_yy).data, atol=1e-12
        )
        with pytest.raises(InvalidInput, match="G_wy"):
            s_injection(y, w, e_wy, e_yy, gain=gain.T)

    def test_h_extension_decorrelates(self, small_problem):
        samples, model = small_problem
        y, h = samples["y"], samples["h"]
        s = s_injection(y, samples["w"], model.block("w", "y"), model.block("y", "y"))
        z = SampleMatrix.stack([y, s])
        e_hz = cross_cov(h, z)
        e_zz = cross_cov(z, z)
        ext = h_extension(z, h, e_hz, e_zz, n_y=y.d)
        assert ext.d == s.d + h.d
        g = ext.rows(s.d)
        scale = 1 + np.linalg.norm(model.block("y", "y"))
        assert np.linalg.norm(cross_cov(y, g)) <= 1e-10 * scale
        assert np.linalg.norm(cross_cov(s, g)) <= 1e-10 * scale
        np.testing.assert_array_equal(ext.rows(0, s.d).data, s.data)

        empty = h_extension(z, h.prefix(0), e_hz[:0], e_zz, n_y=y.d)
        np.testing.assert_array_equal(empty.data, s.data)

    def test_hadamard_square(self, rng):
        y = center(rng.standard_normal((3, 25)) + 1.0, "y")
        v = hadamard_square(y)
        np.testing.assert_allclose(v.raw(), y.raw() ** 2)
        np.testing.assert_allclose(v.data.mean(axis=1), 0.0, atol=1e-13)

    def test_make_w_injection_sources(self, small_problem):
        samples, model = small_problem
        x, y = samples["x"], samples["y"]
        spec = InjectionSpec(3, seed=9)
        np.testing.assert_array_equal(make_w_injection("random", spec, x, y).data, gen_injection(spec, y.p).data)
        np.testing.assert_allclose(make_w_injection("square", spec, x, y).raw(), y.raw() ** 2)
        optimal = make_w_injection("optimal", spec, x, y)
        assert optimal.d == x.d
        with pytest.raises(InvalidInput):
            make_w_injection("fourier", spec, x, y)


class TestGenerators:
    def test_linear_model(self):
        data = gen_linear_model(4, 50, sigma=0.0, seed=3)
        np.testing.assert_allclose(data.y.raw(), data.mixing @ data.x.raw(), atol=1e-12)

    def test_noise_scales_with_sigma(self):
        x = gen_linear_model(3, 40, 0.0, seed=2).x
        y0, a = gen_observation(x, 0.0, seed=11)
        y1, _ = gen_observation(x, 1.0, seed=11)
        y2, _ = gen_observation(x, 2.0, seed=11)
        np.testing.assert_allclose(y2.raw() - y0.raw(), 2 * (y1.raw() - y0.raw()), atol=1e-12)
        np.testing.assert_allclose(y0.raw(), a @ x.raw(), atol=1e-12)
        with pytest.raises(InvalidInput):
            gen_observation(x, -1.0, seed=1)

    def test_noise_covariance_near_identity(self):
        data = gen_linear_model(8, 5000, sigma=1.0, seed=6)
        noise = center(data.y.raw() - data.mixing @ data.x.raw(), "y")
        diag = np.diag(cross_cov(noise, noise))
        assert np.all(np.abs(diag - 1.0) <= 0.1)

    def test_uniform_mixing(self):
        x = gen_linear_model(3, 10, 0.0, seed=2).x
        _, a = gen_observation(x, 0.0, seed=1, a_dist="uniform")
        assert np.all(a >= 0) and np.all(a < 1)
        with pytest.raises(InvalidInput):
            gen_observation(x, 0.0, seed=1, a_dist="cauchy")

    def test_generator_spec(self):
        spec = GeneratorSpec.parse("m=34,p=366,sigma=1")
        assert (spec.m, spec.p, spec.sigma, spec.seed) == (34, 366, 1.0, 0)
        a = spec.sample(1)
        b = spec.sample(2)
        np.testing.assert_array_equal(a.mixing, b.mixing)
        assert not np.allclose(a.x.data, b.x.data)
        for bad in ("m=3", "m=3,p=x", "m=3,p=4,q=1", "m3,p=4"):
            with pytest.raises(InvalidInput):
                GeneratorSpec.parse(bad)
