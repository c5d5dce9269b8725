"""
獨立驗證引擎

- als_rank_k：以交替最小平方法（ALS）直接最小化 (1/p)·‖X − L·R·Z‖_F²，
  用來對照閉式解的全域最優性。
- monte_carlo_error：在同一產生器（同一個 A）抽出的新資料上估計誤差。

這裡的函式只給測試與驗收實驗使用，擬合流程不會呼叫。
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import InvalidInput
from .matcore import as_matrix, pseudo_inverse
from .stats import GeneratorSpec, empirical_error
from .transforms import RankKTransform, apply

logger = logging.getLogger(__name__)

ALS_REL_TOL = 1e-12
ALS_MAX_ITERS = 500


@dataclass(frozen=True)
class OracleResult:
    best_err: float
    restarts: int
    converged: bool
    per_restart_errs: List[float]


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    stderr: float
    trials: int
    errors: List[float]


def _als_once(x: np.ndarray, z: np.ndarray, z_pinv: np.ndarray, k: int, iters: int, seed) -> Tuple[float, bool]:
    p = x.shape[1]
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((k, z.shape[0]))
    prev = math.inf
    for _ in range(iters):
        rz = r @ z
        l = x @ rz.T @ pseudo_inverse(rz @ rz.T)
        r = pseudo_inverse(l) @ x @ z_pinv
        resid = x - l @ (r @ z)
        err = float(np.sum(resid * resid) / p)
        if prev - err <= ALS_REL_TOL * max(prev if math.isfinite(prev) else err, 1e-300):
            return err, True
        prev = err
    return prev, False


def als_rank_k(
    x,
    z,
    k: int,
    restarts: int = 20,
    iters: int = ALS_MAX_ITERS,
    seed: int = 0,
    workers: int = 1,
) -> OracleResult:
    """ALS 求 min_{rank(T)≤k} (1/p)‖X − T·Z‖_F²，T = L·R。

    每個子問題都用偽逆精確求解；多次隨機重啟取最小值。
    """
    x = as_matrix(x, "X")
    z = as_matrix(z, "Z")
    if x.shape[1] != z.shape[1]:
        raise InvalidInput(f"X 與 Z 樣本數不一致：{x.shape[1]} vs {z.shape[1]}")
    if not 1 <= k <= min(x.shape[0], z.shape[0]):
        raise InvalidInput(f"k 必須在 [1, {min(x.shape[0], z.shape[0])}] 之間，收到 {k}")
    if restarts < 1:
        raise InvalidInput(f"重啟次數必須 ≥ 1，收到 {restarts}")

    z_pinv = pseudo_inverse(z)
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda s: _als_once(x, z, z_pinv, k, iters, s), seeds))

    errs = [e for e, _ in results]
    best = int(np.argmin(errs))
    if not results[best][1]:
        logger.warning("ALS 最佳重啟在 %d 次迭代內未收斂", iters)
    logger.debug("ALS k=%d：%d 次重啟，最佳誤差 %.6g", k, restarts, errs[best])
    return OracleResult(
        best_err=max(errs[best], 0.0),
        restarts=restarts,
        converged=results[best][1],
        per_restart_errs=errs,
    )


def monte_carlo_error(t: RankKTransform, spec: GeneratorSpec, trials: int, seed: int = 0) -> MonteCarloResult:
    """在新抽的資料集上平均 (1/p)‖X − X̂‖_F²；注入向量也重新抽。"""
    if trials < 1:
        raise InvalidInput(f"trials 必須 ≥ 1，收到 {trials}")
    states = np.random.SeedSequence(seed).generate_state(trials)
    errors = []
    for trial_seed in states:
        data = spec.sample(int(trial_seed))
        xhat = apply(t, data.y, reuse_training_injections=False, seed=int(trial_seed))
        errors.append(empirical_error(data.x, xhat))
    arr = np.asarray(errors)
    stderr = float(arr.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    return MonteCarloResult(mean=float(arr.mean()), stderr=stderr, trials=trials, errors=errors)


__all__ = ["MonteCarloResult", "OracleResult", "als_rank_k", "monte_carlo_error"]
