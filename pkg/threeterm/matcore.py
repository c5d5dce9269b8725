"""
矩陣譜分解基礎工具

所有估計器都建立在這些確定性的函式上：
SVD、Moore-Penrose 偽逆、半正定矩陣平方根、截斷 SVD 與正交投影。
全部是純函式，回傳值不可變，可在執行緒之間共用。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import InvalidInput, NumericalError

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
SYMMETRY_TOL = 1e-8
PSD_CLAMP_TOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def as_matrix(m, name: str = "M") -> np.ndarray:
    """轉成 float64 的二維陣列，並檢查是否全為有限值。"""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InvalidInput(f"{name} 必須是二維矩陣，收到 ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} 含有非有限值 (NaN/Inf)")
    return a


@dataclass(frozen=True)
class RankTolerance:
    """數值秩的截斷門檻。

    預設採用 max(m, n)·σ₁·ε；給定 absolute 時直接使用該值。
    floor 是門檻下限，用於由其他區塊相減得到、尺度應參照原始區塊的矩陣。
    """

    absolute: Optional[float] = None
    floor: float = 0.0

    def resolve(self, shape: Tuple[int, int], sigma_max: float) -> float:
        if self.absolute is not None:
            if self.absolute < 0:
                raise InvalidInput(f"門檻必須非負，收到 {self.absolute}")
            return float(self.absolute)
        return max(float(max(shape) * sigma_max * EPS), float(self.floor))


DEFAULT_TOLERANCE = RankTolerance()


@dataclass(frozen=True)
class SpectralData:
    """完整 SVD：M = U·Σ·Vᵀ，sigma 非遞增。"""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    tol: float
    eff_rank: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape[0], self.v.shape[0]

    @property
    def vt(self) -> np.ndarray:
        return self.v.T

    def sigma_matrix(self) -> np.ndarray:
        m, n = self.shape
        s = np.zeros((m, n))
        r = len(self.sigma)
        s[:r, :r] = np.diag(self.sigma)
        return s

    def reconstruct(self) -> np.ndarray:
        return self.u @ self.sigma_matrix() @ self.v.T


@dataclass(frozen=True)
class Projector:
    """正交投影矩陣 P（對稱且冪等）。"""

    p: np.ndarray

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def rank(self) -> int:
        return int(round(float(np.trace(self.p))))

    def apply(self, m) -> np.ndarray:
        return self.p @ as_matrix(m)


@dataclass(frozen=True)
class TruncatedSVD:
    """截斷 SVD [M]_k 的結果。

    nonunique 為 True 表示 σ_k 與 σ_{k+1} 在門檻內相等，[M]_k 不唯一；
    此時保留分解中前 k 個奇異向量。
    """

    matrix: np.ndarray
    k: int
    residual: float
    nonunique: bool
    spectral: SpectralData


def _lapack_svd(a: np.ndarray):
    try:
        return scipy.linalg.svd(a, full_matrices=True, check_finite=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd 未收斂，改用 gesvd")
    try:
        return scipy.linalg.svd(a, full_matrices=True, check_finite=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD 不收斂：{exc}") from exc


def svd(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> SpectralData:
    """完整 SVD，含有效秩與所用門檻。"""
    a = as_matrix(m)
    rows, cols = a.shape
    if a.size == 0:
        return SpectralData(
            u=_frozen(np.eye(rows)),
            sigma=_frozen(np.zeros(0)),
            v=_frozen(np.eye(cols)),
            tol=tol_policy.resolve(a.shape, 0.0),
            eff_rank=0,
        )

    u, s, vt = _lapack_svd(a)
    s = np.clip(s, 0.0, None)
    sigma_max = float(s[0]) if len(s) else 0.0
    tol = tol_policy.resolve(a.shape, sigma_max)
    return SpectralData(
        u=_frozen(u),
        sigma=_frozen(s),
        v=_frozen(vt.T),
        tol=tol,
        eff_rank=int(np.count_nonzero(s > tol)),
    )


def numerical_rank(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> int:
    return svd(m, tol_policy).eff_rank


def pseudo_inverse(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> np.ndarray:
    """Moore-Penrose 偽逆 M†（n×m）。"""
    a = as_matrix(m)
    sd = svd(a, tol_policy)
    r = sd.eff_rank
    if r == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    return (sd.v[:, :r] / sd.sigma[:r]) @ sd.u[:, :r].T


def truncated(m, k: int, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> TruncatedSVD:
    """最佳 Frobenius 範數秩-k 近似 [M]_k（Eckart–Young）。"""
    if k < 0:
        raise InvalidInput(f"秩預算 k 必須非負，收到 {k}")
    a = as_matrix(m)
    sd = svd(a, tol_policy)

    if k >= sd.eff_rank:
        # k 不小於 rank(M) 時定義 [M]_k = M
        tail = float(np.sum(sd.sigma[sd.eff_rank:] ** 2))
        return TruncatedSVD(matrix=_frozen(a.copy()), k=k, residual=tail, nonunique=False, spectral=sd)

    approx = (sd.u[:, :k] * sd.sigma[:k]) @ sd.v[:, :k].T
    nonunique = k > 0 and (sd.sigma[k - 1] - sd.sigma[k]) <= sd.tol
    if nonunique:
        logger.warning("截斷 SVD 不唯一：σ_%d ≈ σ_%d (%.3e)", k, k + 1, sd.sigma[k])
    return TruncatedSVD(
        matrix=_frozen(approx),
        k=k,
        residual=float(np.sum(sd.sigma[k:] ** 2)),
        nonunique=bool(nonunique),
        spectral=sd,
    )


def symmetrize(m, name: str = "M", tol: float = SYMMETRY_TOL) -> np.ndarray:
    """檢查近似對稱後回傳 (M+Mᵀ)/2。"""
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise InvalidInput(f"{name} 必須是方陣，收到 {a.shape}")
    asym = np.linalg.norm(a - a.T)
    if asym > tol * (1.0 + np.linalg.norm(a)):
        raise InvalidInput(f"{name} 不對稱：‖M−Mᵀ‖_F = {asym:.3e}")
    return (a + a.T) / 2.0


def eigh_descending(m, name: str = "M") -> Tuple[np.ndarray, np.ndarray]:
    """對稱特徵分解，特徵值由大到小排列。"""
    a = symmetrize(m, name)
    if a.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    try:
        vals, vecs = scipy.linalg.eigh(a, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{name} 特徵分解失敗：{exc}") from exc
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def _psd_eigen(m, name: str) -> Tuple[np.ndarray, np.ndarray]:
    vals, vecs = eigh_descending(m, name)
    if vals.size == 0:
        return vals, vecs
    scale = float(np.max(np.abs(vals)))
    floor = -PSD_CLAMP_TOL * scale
    if vals[-1] < floor:
        raise InvalidInput(f"{name} 不是半正定矩陣：最小特徵值 {vals[-1]:.3e}")
    if vals[-1] < -1e-12 * scale:
        logger.warning("%s 的負特徵值 %.3e 已截為 0", name, vals[-1])
    return np.clip(vals, 0.0, None), vecs


def sqrt_psd(m) -> np.ndarray:
    """半正定矩陣的對稱平方根 M^{1/2}。"""
    vals, vecs = _psd_eigen(m, "M")
    if vals.size == 0:
        return np.zeros((0, 0))
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return (root + root.T) / 2.0


def sqrt_pinv_psd(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> np.ndarray:
    """(M^{1/2})†，唯一且對稱半正定。

    秩由 M 本身的特徵值判定，避免平方根放大捨入誤差。
    """
    vals, vecs = _psd_eigen(m, "M")
    if vals.size == 0:
        return np.zeros((0, 0))
    tol = tol_policy.resolve((vals.size, vals.size), float(vals[0]))
    keep = vals > tol
    v = vecs[:, keep]
    root = (v / np.sqrt(vals[keep])) @ v.T
    return (root + root.T) / 2.0


def left_projector(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> Projector:
    """投影到 M 值域（列空間）的正交投影 P_{M,L}。"""
    sd = svd(m, tol_policy)
    uk = sd.u[:, : sd.eff_rank]
    p = uk @ uk.T
    return Projector(p=_frozen((p + p.T) / 2.0))


def right_projector(m, tol_policy: RankTolerance = DEFAULT_TOLERANCE) -> Projector:
    """投影到 Mᵀ 值域的正交投影 P_{M,R}。"""
    sd = svd(m, tol_policy)
    vk = sd.v[:, : sd.eff_rank]
    p = vk @ vk.T
    return Projector(p=_frozen((p + p.T) / 2.0))


def block_diag(*blocks) -> np.ndarray:
    return scipy.linalg.block_diag(*[as_matrix(b) for b in blocks])


__all__ = [
    "DEFAULT_TOLERANCE",
    "Projector",
    "RankTolerance",
    "SpectralData",
    "TruncatedSVD",
    "as_matrix",
    "block_diag",
    "eigh_descending",
    "left_projector",
    "numerical_rank",
    "pseudo_inverse",
    "right_projector",
    "sqrt_pinv_psd",
    "sqrt_psd",
    "svd",
    "symmetrize",
    "truncated",
]
