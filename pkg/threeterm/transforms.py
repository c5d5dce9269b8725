"""
秩約束二階估計器

GBT1、GBT2、GKLT、三項 PCA（基本型與 h 延伸型）及無約束的三項濾波器 (TTF)。
每個估計器都寫成同一個形式：

    x̂ = T·z，  T = U_k·U_kᵀ·F，  F = [E_xa·E_aa† ...]，  G = Σ E_xa·E_aa†·E_ax

其中 U_k 是 G 前 k 個特徵向量；預測誤差為 tr(E_xx) − Σ_{i≤k} λ_i(G)。
三項 PCA 的 z = [y; s]（或 [y; s; g]）用區塊對角的 E_zz† 計算，
GBT2/GKLT 的 q = [y; v] 則用整塊 2n×2n 偽逆。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInput, NumericalError
from .matcore import EPS, RankTolerance, eigh_descending, pseudo_inverse, sqrt_pinv_psd
from .stats import (
    DECORRELATION_TOL,
    InjectionSpec,
    SampleMatrix,
    SecondOrderModel,
    center,
    empirical_error,
    gen_injection,
    h_extension,
    hadamard_square,
    s_injection,
)

logger = logging.getLogger(__name__)

NEGATIVE_ERROR_TOL = 1e-9
DERIVED_RANK_TOL = 1e-10
_DERIVED_FROM = {"s": "w", "g": "h"}


class Method(str, Enum):
    GBT1 = "gbt1"
    GBT2 = "gbt2"
    GKLT = "gklt"
    PCA3 = "pca3"
    PCA3_EXT = "pca3_ext"
    TTF = "ttf"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            known = ", ".join(m.value for m in cls)
            raise InvalidInput(f"未知的方法：{value}（可用：{known}）") from None

    @property
    def rank_constrained(self) -> bool:
        return self is not Method.TTF


class AuxKind(str, Enum):
    """第二組迴歸量的來源。"""

    NONE = "none"
    INJECTION = "injection"  # s 或 s̃ = [s; g]
    AUXILIARY = "auxiliary"  # GBT2 的 v
    SQUARE = "square"  # GKLT 的 y²


@dataclass(frozen=True)
class Auxiliary:
    """重建第二組迴歸量所需的狀態。

    training 存放訓練時的樣本（s、s̃ 或 v），spec 是 w 或 v 的注入規格。
    """

    kind: AuxKind = AuxKind.NONE
    training: Optional[SampleMatrix] = None
    spec: Optional[InjectionSpec] = None
    h_spec: Optional[InjectionSpec] = None
    g_wy: Optional[np.ndarray] = None
    g_hz: Optional[np.ndarray] = None
    square_mean: Optional[np.ndarray] = None
    dim: int = 0


@dataclass(frozen=True)
class RankKTransform:
    """已擬合的估計器 x̂ = T₀·y + T₁·(第二組迴歸量) + 平均。"""

    method: Method
    t0: np.ndarray
    t1: np.ndarray
    k: Optional[int]
    predicted_err: float
    nonunique: bool = False
    x_mean: Optional[np.ndarray] = None
    y_mean: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    encoder: Optional[np.ndarray] = None
    spectrum: Optional[np.ndarray] = None
    aux: Auxiliary = field(default_factory=Auxiliary)

    @property
    def m(self) -> int:
        return self.t0.shape[0]

    @property
    def n(self) -> int:
        return self.t0.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.t0, self.t1])

    @property
    def injections(self) -> Optional[SampleMatrix]:
        return self.aux.training


@dataclass(frozen=True)
class PrincipalComponents:
    scores: np.ndarray
    basis: np.ndarray

    @property
    def k(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class _Solution:
    t: np.ndarray
    basis: Optional[np.ndarray]
    encoder: Optional[np.ndarray]
    spectrum: np.ndarray
    err: float
    nonunique: bool


# ----------------------------------------------------------------------------
# 共用計算
# ----------------------------------------------------------------------------


def error_from_spectrum(trace_xx: float, spectrum: np.ndarray, k: int) -> float:
    """ε = tr(E_xx) − Σ_{i≤k} λ_i(G)；捨入造成的小負值截為 0。"""
    err = trace_xx - float(np.sum(spectrum[:k]))
    if err < 0:
        if err < -NEGATIVE_ERROR_TOL * (1.0 + abs(trace_xx)):
            raise NumericalError(f"預測誤差為負：{err:.3e}")
        err = 0.0
    return err


def _floor(model: SecondOrderModel, roles: Sequence[str]) -> float:
    """去相關後的角色以原始注入的尺度截斷秩。"""
    refs = [model.trace(_DERIVED_FROM[r]) for r in roles if r in _DERIVED_FROM and model.has(_DERIVED_FROM[r])]
    return DERIVED_RANK_TOL * max(refs) if refs else 0.0


def _gram(
    model: SecondOrderModel,
    groups: Sequence[Sequence[str]],
    pinvs: Optional[Mapping[Tuple[str, ...], np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """F = [E_xa·E_aa† ...] 與 G = Σ E_xa·E_aa†·E_ax；pinvs 存放已算好的 E_aa†。"""
    pinvs = pinvs or {}
    m = model.dim("x")
    filters: List[np.ndarray] = []
    gram = np.zeros((m, m))
    for group in groups:
        e_xa = model.cross("x", group)
        if e_xa.shape[1] == 0:
            filters.append(e_xa)
            continue
        e_aa_pinv = pinvs.get(tuple(group))
        if e_aa_pinv is None:
            e_aa_pinv = pseudo_inverse(model.joint(group), RankTolerance(floor=_floor(model, group)))
        f = e_xa @ e_aa_pinv
        filters.append(f)
        gram = gram + f @ e_xa.T
    asym = np.linalg.norm(gram - gram.T)
    if asym > 1e-8 * (1.0 + np.linalg.norm(gram)):
        raise NumericalError(f"G 無法對稱化：‖G−Gᵀ‖_F = {asym:.3e}")
    return np.hstack(filters), (gram + gram.T) / 2.0


def _solve(model: SecondOrderModel, groups: Sequence[Sequence[str]], k: int, pinvs=None) -> _Solution:
    """最小範數解 T = U_k·U_kᵀ·F。"""
    filt, gram = _gram(model, groups, pinvs)
    vals, vecs = eigh_descending(gram, "G")
    vals = np.clip(vals, 0.0, None)
    basis = vecs[:, :k]
    encoder = basis.T @ filt
    tol = max(gram.shape) * EPS * max(float(vals[0]) if vals.size else 0.0, 0.0)
    nonunique = k < vals.size and vals[k - 1] > tol and (vals[k - 1] - vals[k]) <= tol
    if nonunique:
        logger.warning("σ_k(G) ≈ σ_{k+1}(G)，k=%d 的解不唯一，保留前 k 個特徵向量", k)
    err = error_from_spectrum(model.trace("x"), vals, k)
    logger.debug("G 前幾個特徵值 %s，誤差 %.6g", np.array2string(vals[: min(5, vals.size)], precision=4), err)
    return _Solution(t=basis @ encoder, basis=basis, encoder=encoder, spectrum=vals, err=err, nonunique=bool(nonunique))


def _check_k(k, model: SecondOrderModel) -> int:
    m, n = model.dim("x"), model.dim("y")
    if k is None or int(k) != k or not 1 <= k <= min(m, n):
        raise InvalidInput(f"k 必須在 [1, {min(m, n)}] 之間，收到 {k}")
    return int(k)


def _means(model: SecondOrderModel, samples: Optional[Mapping[str, SampleMatrix]]):
    x_mean = np.zeros(model.dim("x"))
    y_mean = np.zeros(model.dim("y"))
    if samples:
        if "x" in samples:
            x_mean = samples["x"].mean
        if "y" in samples:
            y_mean = samples["y"].mean
    return x_mean, y_mean


def _check_decorrelated(model: SecondOrderModel, a: str, b: str) -> None:
    resid = np.linalg.norm(model.block(a, b))
    scale = 1.0 + np.linalg.norm(model.block(b, b))
    if resid > DECORRELATION_TOL * scale:
        logger.warning("E_%s%s 去相關後仍有 ‖·‖_F = %.3e（值域條件不成立）", a, b, resid)


def _with_s(model: SecondOrderModel) -> Tuple[SecondOrderModel, np.ndarray, np.ndarray]:
    """加入 s = w − G_wy·y，G_wy = E_wy·E_yy†；另回傳 E_yy†。"""
    model.require("x", "y", "w")
    e_yy_pinv = pseudo_inverse(model.block("y", "y"))
    g_wy = model.block("w", "y") @ e_yy_pinv
    against = [r for r in ("x", "y", "h") if model.has(r)]
    out = model.derive("s", {"w": np.eye(model.dim("w")), "y": -g_wy}, against=against)
    _check_decorrelated(out, "y", "s")
    return out, g_wy, e_yy_pinv


def _with_g(model_s: SecondOrderModel) -> Tuple[SecondOrderModel, np.ndarray]:
    """加入 g = h − G_hz·z，z = [y; s]，G_hz = E_hz·E_zz†。"""
    n = model_s.dim("y")
    g_hz = model_s.cross("h", ["y", "s"]) @ pseudo_inverse(model_s.joint(["y", "s"]))
    eta = model_s.dim("h")
    out = model_s.derive(
        "g",
        {"h": np.eye(eta), "y": -g_hz[:, :n], "s": -g_hz[:, n:]},
        against=("x", "y", "s"),
    )
    if eta:
        _check_decorrelated(out, "y", "g")
        _check_decorrelated(out, "s", "g")
    return out, g_hz


def _with_square(model: SecondOrderModel, samples: Optional[Mapping[str, SampleMatrix]]) -> Tuple[SecondOrderModel, SampleMatrix]:
    if not samples or "x" not in samples or "y" not in samples:
        raise InvalidInput("GKLT 需要 x 與 y 的樣本以計算 y² 的共變異數")
    v = hadamard_square(samples["y"])
    base = model.restrict(("x", "y"))
    return base.extend({"x": samples["x"], "y": samples["y"]}, "v", v), v


def _prepare(method: Method, model: SecondOrderModel, samples=None, eta: Optional[int] = None):
    """回傳 (延伸後模型, 迴歸量分組, 中間量)。"""
    if method is Method.GBT1:
        model.require("x", "y")
        return model, [["y"]], {}
    if method is Method.GBT2:
        model.require("x", "y", "v")
        if model.dim("v") != model.dim("y"):
            raise InvalidInput(f"GBT2 的 v 維度必須等於 n = {model.dim('y')}，收到 {model.dim('v')}")
        return model, [["y", "v"]], {}
    if method is Method.GKLT:
        model_v, v = _with_square(model, samples)
        return model_v, [["y", "v"]], {"v": v}
    if method in (Method.PCA3, Method.TTF):
        if method is Method.TTF and not model.has("w"):
            model.require("x", "y")
            return model, [["y"]], {}
        model_s, g_wy, e_yy_pinv = _with_s(model)
        return model_s, [["y"], ["s"]], {"g_wy": g_wy, "pinvs": {("y",): e_yy_pinv}}
    if method is Method.PCA3_EXT:
        if eta is not None:
            if eta < 0:
                raise InvalidInput(f"η 必須非負，收到 {eta}")
            if eta == 0 and not model.has("h"):
                model_s, g_wy, e_yy_pinv = _with_s(model)
                g_hz = np.zeros((0, model.dim("y") + model.dim("w")))
                return model_s, [["y"], ["s"]], {"g_wy": g_wy, "g_hz": g_hz, "pinvs": {("y",): e_yy_pinv}}
            model = model.with_prefix("h", eta)
        model.require("x", "y", "w", "h")
        model_s, g_wy, e_yy_pinv = _with_s(model)
        model_g, g_hz = _with_g(model_s)
        return model_g, [["y"], ["s", "g"]], {"g_wy": g_wy, "g_hz": g_hz, "pinvs": {("y",): e_yy_pinv}}
    raise InvalidInput(f"未知的方法：{method}")


# ----------------------------------------------------------------------------
# 擬合
# ----------------------------------------------------------------------------


def _rank_k_transform(method, model, groups, k, samples, aux: Auxiliary, pinvs=None) -> RankKTransform:
    sol = _solve(model, groups, k, pinvs)
    n = model.dim("y")
    x_mean, y_mean = _means(model, samples)
    return RankKTransform(
        method=method,
        t0=sol.t[:, :n],
        t1=sol.t[:, n:],
        k=k,
        predicted_err=sol.err,
        nonunique=sol.nonunique,
        x_mean=x_mean,
        y_mean=y_mean,
        basis=sol.basis,
        encoder=sol.encoder,
        spectrum=sol.spectrum,
        aux=aux,
    )


def fit_gbt1(model: SecondOrderModel, k: int, samples: Optional[Mapping[str, SampleMatrix]] = None) -> RankKTransform:
    """GBT1：T₀ = U_{G_y,k}·U_{G_y,k}ᵀ·E_xy·E_yy†。"""
    model.require("x", "y")
    k = _check_k(k, model)
    return _rank_k_transform(Method.GBT1, model, [["y"]], k, samples, Auxiliary())


def fit_gbt2(
    model: SecondOrderModel,
    samples: Optional[Mapping[str, SampleMatrix]],
    k: int,
    v_spec: Optional[InjectionSpec] = None,
) -> RankKTransform:
    """GBT2：q = [y; v]，R₁ = U_{G_q,k}，[P₁ P₂] = R₁ᵀ·E_xq·E_qq†。"""
    model_v, groups, _ = _prepare(Method.GBT2, model)
    k = _check_k(k, model_v)
    training = samples.get("v") if samples else None
    aux = Auxiliary(kind=AuxKind.AUXILIARY, training=training, spec=v_spec, dim=model_v.dim("v"))
    return _rank_k_transform(Method.GBT2, model_v, groups, k, samples, aux)


def fit_gklt(model: SecondOrderModel, samples: Mapping[str, SampleMatrix], k: int) -> RankKTransform:
    """GKLT：以 GBT2 的方式處理 [y; y²]。"""
    model_v, groups, extra = _prepare(Method.GKLT, model, samples)
    k = _check_k(k, model_v)
    v = extra["v"]
    aux = Auxiliary(kind=AuxKind.SQUARE, training=v, square_mean=v.mean, dim=v.d)
    return _rank_k_transform(Method.GKLT, model_v, groups, k, samples, aux)


def _injection_samples(model_s, samples, g_wy, g_hz=None) -> Optional[SampleMatrix]:
    if not samples or "y" not in samples or "w" not in samples:
        return None
    y = samples["y"]
    s = s_injection(y, samples["w"], model_s.block("w", "y"), model_s.block("y", "y"), gain=g_wy)
    if g_hz is None:
        return s
    eta = g_hz.shape[0]
    if eta == 0:
        return s
    if "h" not in samples:
        raise InvalidInput("h 延伸需要 h 的樣本")
    z = SampleMatrix.stack([y, s], label="z")
    return h_extension(
        z,
        samples["h"].prefix(eta),
        model_s.cross("h", ["y", "s"]),
        model_s.joint(["y", "s"]),
        n_y=y.d,
        gain=g_hz,
    )


def fit_pca3(
    model: SecondOrderModel,
    samples: Optional[Mapping[str, SampleMatrix]],
    k: int,
    w_spec: Optional[InjectionSpec] = None,
) -> RankKTransform:
    """基本三項 PCA：T₀ = U_{G_z,k}U_{G_z,k}ᵀG_xy，T₁ = U_{G_z,k}U_{G_z,k}ᵀG_xs。"""
    model_s, groups, extra = _prepare(Method.PCA3, model)
    k = _check_k(k, model_s)
    aux = Auxiliary(
        kind=AuxKind.INJECTION,
        training=_injection_samples(model_s, samples, extra["g_wy"]),
        spec=w_spec,
        g_wy=extra["g_wy"],
        dim=model_s.dim("s"),
    )
    return _rank_k_transform(Method.PCA3, model_s, groups, k, samples, aux, extra["pinvs"])


def fit_pca3_ext(
    model: SecondOrderModel,
    samples: Optional[Mapping[str, SampleMatrix]],
    k: int,
    eta: Optional[int] = None,
    w_spec: Optional[InjectionSpec] = None,
    h_spec: Optional[InjectionSpec] = None,
) -> RankKTransform:
    """h 延伸三項 PCA：以 s̃ = [s; g] 取代 s，η = dim(h)。

    eta 小於模型中 h 的維度時只取 h 的前 eta 個分量（巢狀掃描）。
    """
    model_g, groups, extra = _prepare(Method.PCA3_EXT, model, eta=eta)
    k = _check_k(k, model_g)
    g_hz = extra["g_hz"]
    training = _injection_samples(model_g, samples, extra["g_wy"], g_hz)
    eta_eff = g_hz.shape[0]
    aux = Auxiliary(
        kind=AuxKind.INJECTION,
        training=training,
        spec=w_spec,
        h_spec=h_spec.with_dim(eta_eff) if h_spec is not None else None,
        g_wy=extra["g_wy"],
        g_hz=g_hz,
        dim=model_g.dim("s") + eta_eff,
    )
    return _rank_k_transform(Method.PCA3_EXT, model_g, groups, k, samples, aux, extra["pinvs"])


def fit_ttf(
    model: SecondOrderModel,
    samples: Optional[Mapping[str, SampleMatrix]] = None,
    w_spec: Optional[InjectionSpec] = None,
) -> RankKTransform:
    """三項濾波器：A₀ = E_xy·E_yy†，A₁ = E_xs·E_ss†（無秩約束）。"""
    model_s, groups, extra = _prepare(Method.TTF, model)
    filt, _ = _gram(model_s, groups, extra.get("pinvs"))
    n = model_s.dim("y")
    x_mean, y_mean = _means(model_s, samples)
    if "g_wy" in extra:
        aux = Auxiliary(
            kind=AuxKind.INJECTION,
            training=_injection_samples(model_s, samples, extra["g_wy"]),
            spec=w_spec,
            g_wy=extra["g_wy"],
            dim=model_s.dim("s"),
        )
    else:
        aux = Auxiliary()
    return RankKTransform(
        method=Method.TTF,
        t0=filt[:, :n],
        t1=filt[:, n:],
        k=None,
        predicted_err=ttf_error(model_s),
        x_mean=x_mean,
        y_mean=y_mean,
        aux=aux,
    )


def fit(
    method,
    model: SecondOrderModel,
    samples: Optional[Mapping[str, SampleMatrix]] = None,
    k: Optional[int] = None,
    eta: Optional[int] = None,
    w_spec: Optional[InjectionSpec] = None,
    h_spec: Optional[InjectionSpec] = None,
) -> RankKTransform:
    """依方法名稱分派到對應的擬合函式。"""
    method = Method.parse(method)
    if method is Method.GBT1:
        return fit_gbt1(model, k, samples)
    if method is Method.GBT2:
        return fit_gbt2(model, samples, k, v_spec=w_spec)
    if method is Method.GKLT:
        return fit_gklt(model, samples, k)
    if method is Method.PCA3:
        return fit_pca3(model, samples, k, w_spec=w_spec)
    if method is Method.PCA3_EXT:
        return fit_pca3_ext(model, samples, k, eta=eta, w_spec=w_spec, h_spec=h_spec)
    return fit_ttf(model, samples, w_spec=w_spec)


# ----------------------------------------------------------------------------
# 誤差
# ----------------------------------------------------------------------------


def _filter_gain(model: SecondOrderModel, role: str) -> float:
    """‖E_xa·(E_aa^{1/2})†‖_F²。"""
    floor = _floor(model, [role])
    if model.dim(role) == 0 or model.trace(role) <= floor:
        return 0.0
    m = model.block("x", role) @ sqrt_pinv_psd(model.block(role, role), RankTolerance(floor=floor))
    return float(np.sum(m * m))


def linear_filter_error(model: SecondOrderModel) -> float:
    """最佳線性濾波器 A₀ = E_xy·E_yy† 的誤差。"""
    model.require("x", "y")
    return error_from_spectrum(model.trace("x"), np.array([_filter_gain(model, "y")]), 1)


def ttf_error(model: SecondOrderModel) -> float:
    """‖E_xx^{1/2}‖² − ‖E_xy E_yy^{1/2†}‖² − ‖E_xs E_ss^{1/2†}‖²。"""
    gains = [_filter_gain(model, "y")]
    if model.has("s"):
        gains.append(_filter_gain(model, "s"))
    return error_from_spectrum(model.trace("x"), np.array([sum(gains)]), 1)


def clean_error(model: SecondOrderModel, k: int) -> float:
    """y = x 時 GBT1 的誤差 ε_(y=x)（無雜訊資料上的 PCA）。"""
    model.require("x")
    e_xx = model.block("x", "x")
    clean = SecondOrderModel(
        blocks={("x", "x"): e_xx, ("x", "y"): e_xx, ("y", "x"): e_xx, ("y", "y"): e_xx},
        dims={"x": model.dim("x"), "y": model.dim("x")},
        source=model.source,
        p=model.p,
    )
    return _solve(clean, [["y"]], _check_k(k, clean)).err


def predicted_error(
    method,
    model: SecondOrderModel,
    k: Optional[int] = None,
    eta: Optional[int] = None,
    samples: Optional[Mapping[str, SampleMatrix]] = None,
) -> float:
    """ε = ‖E_xx^{1/2}‖² − Σ_{i≤k} σ_i(G)，‖E_xx^{1/2}‖² 以 tr(E_xx) 計算。"""
    method = Method.parse(method)
    prepared, groups, extra = _prepare(method, model, samples, eta)
    if method is Method.TTF:
        return ttf_error(prepared)
    k = _check_k(k, prepared)
    _, gram = _gram(prepared, groups, extra.get("pinvs"))
    vals, _ = eigh_descending(gram, "G")
    return error_from_spectrum(prepared.trace("x"), vals, k)


def gram_matrix(method, model: SecondOrderModel, eta: Optional[int] = None, samples=None) -> np.ndarray:
    """方法對應的 G（G_y、G_q 或 G_z）。"""
    prepared, groups, extra = _prepare(Method.parse(method), model, samples, eta)
    return _gram(prepared, groups, extra.get("pinvs"))[1]


def injection_gram(model: SecondOrderModel) -> np.ndarray:
    """G_s = E_xs·E_ss†·E_sx。"""
    model_s, _, _ = _with_s(model)
    return _gram(model_s, [["s"]])[1]


# ----------------------------------------------------------------------------
# 套用
# ----------------------------------------------------------------------------


def _fresh_seed(base: int, salt: int) -> int:
    return int(np.random.SeedSequence([int(base), int(salt)]).generate_state(1)[0])


def _second_block(t: RankKTransform, y: SampleMatrix, yc: np.ndarray, reuse: bool, seed: Optional[int]) -> np.ndarray:
    aux = t.aux
    p = y.p
    if aux.kind is AuxKind.NONE:
        return np.zeros((0, p))
    if aux.kind is AuxKind.SQUARE:
        raw = y.raw()
        return raw * raw - aux.square_mean[:, None]

    if reuse:
        if aux.training is None:
            raise InvalidInput("此轉換沒有保存訓練注入樣本")
        if aux.training.p != p:
            raise InvalidInput(f"沿用訓練注入需要相同樣本數：{aux.training.p} vs {p}")
        return aux.training.data

    if aux.spec is None:
        raise InvalidInput("沒有注入規格，無法為新資料抽注入樣本")
    salt = 1 if seed is None else seed
    logger.warning("%s：對新資料重新抽注入樣本（seed salt=%d）", t.method.value, salt)
    first = gen_injection(aux.spec.with_seed(_fresh_seed(aux.spec.seed, salt)), p).data
    if aux.kind is AuxKind.AUXILIARY:
        return first
    s = first - aux.g_wy @ yc
    if aux.g_hz is None or aux.g_hz.shape[0] == 0:
        return s
    if aux.h_spec is None:
        raise InvalidInput("沒有 h 注入規格，無法為新資料抽 h 樣本")
    h = gen_injection(aux.h_spec.with_seed(_fresh_seed(aux.h_spec.seed, salt)), p).data
    g = h - aux.g_hz @ np.vstack([yc, s])
    return np.vstack([s, g])


def regressors(
    t: RankKTransform,
    y: SampleMatrix,
    reuse_training_injections: bool = False,
    seed: Optional[int] = None,
) -> np.ndarray:
    """z = [y − ȳ; 第二組迴歸量]。"""
    if y.d != t.n:
        raise InvalidInput(f"y 維度 {y.d} 與轉換的 n = {t.n} 不符")
    yc = y.raw() - t.y_mean[:, None]
    return np.vstack([yc, _second_block(t, y, yc, reuse_training_injections, seed)])


def apply(
    t: RankKTransform,
    y: SampleMatrix,
    reuse_training_injections: bool = False,
    seed: Optional[int] = None,
) -> SampleMatrix:
    """x̂ = T₀·y + T₁·s (+ 延伸列) + x̄。"""
    z = regressors(t, y, reuse_training_injections, seed)
    est = t.matrix @ z + t.x_mean[:, None]
    return center(est, "x")


def principal_components(
    t: RankKTransform,
    y: SampleMatrix,
    reuse_training_injections: bool = False,
    seed: Optional[int] = None,
) -> PrincipalComponents:
    """主成分 u = P·z 與重建基底 R = U_{G,k}，T = R·P。"""
    if not t.method.rank_constrained or t.basis is None:
        raise InvalidInput(f"{t.method.value} 沒有主成分（無秩約束）")
    z = regressors(t, y, reuse_training_injections, seed)
    return PrincipalComponents(scores=t.encoder @ z, basis=t.basis)


def training_error(t: RankKTransform, samples: Mapping[str, SampleMatrix]) -> float:
    """訓練集上的 (1/p)·‖X − X̂‖_F²。"""
    xhat = apply(t, samples["y"], reuse_training_injections=True)
    return empirical_error(samples["x"], xhat)


__all__ = [
    "AuxKind",
    "Auxiliary",
    "Method",
    "PrincipalComponents",
    "RankKTransform",
    "apply",
    "clean_error",
    "error_from_spectrum",
    "fit",
    "fit_gbt1",
    "fit_gbt2",
    "fit_gklt",
    "fit_pca3",
    "fit_pca3_ext",
    "fit_ttf",
    "gram_matrix",
    "injection_gram",
    "linear_filter_error",
    "predicted_error",
    "principal_components",
    "regressors",
    "training_error",
    "ttf_error",
]
