# -*- coding: utf-8 -*-

"""
共用 fixture：隨機二階模型、樣本產生器
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from threeterm.stats import (  # noqa: E402
    InjectionSpec,
    build_model,
    center,
    gen_injection,
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 較長的驗收實驗（pytest -m 'not slow' 可略過）")


def random_samples(m, n, ell, p, seed, eta=0, sigma=1.0, v_dim=None, spread=0.0):
    """y = A·x + σ·ξ（A 為 n×m 常態矩陣），加上 w、h、v 注入。

    spread > 0 時 x 的第 i 個分量乘上 1 + spread·i，拉開 E_xx 的特徵值。
    """
    rng = np.random.default_rng(seed)
    scales = 1.0 + spread * np.arange(m)
    x = center(scales[:, None] * rng.random((m, p)), "x")
    a = rng.standard_normal((n, m))
    y = center(a @ x.raw() + sigma * rng.standard_normal((n, p)), "y")
    samples = {
        "x": x,
        "y": y,
        "w": gen_injection(InjectionSpec(ell, seed=seed + 1), p, "w"),
        "h": gen_injection(InjectionSpec(eta, seed=seed + 2), p, "h"),
        "v": gen_injection(InjectionSpec(n if v_dim is None else v_dim, seed=seed + 3), p, "v"),
    }
    return samples


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_samples():
    return random_samples


@pytest.fixture
def small_problem():
    """m=5, n=4, ℓ=3, η=6, p=100 的取樣模型。"""
    samples = random_samples(5, 4, 3, 100, seed=7, eta=6)
    return samples, build_model(samples)
