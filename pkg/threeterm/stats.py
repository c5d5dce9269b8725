"""
樣本處理與二階統計模型

- 中心化、1/p 慣例的交叉共變異數
- 合成資料產生器（y = A x + ξ、隨機注入向量）
- 注入向量的去相關：s = w − G_wy·y 與 h 延伸 g = h − G_hz·z
- Hadamard 平方 y²

所有產生器都吃明確的 seed，不保留隱藏狀態，可安全地平行執行。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInput
from .matcore import SYMMETRY_TOL, as_matrix, eigh_descending, pseudo_inverse

logger = logging.getLogger(__name__)

ROLES = ("x", "y", "w", "h", "v", "s", "g", "z")
DECORRELATION_TOL = 1e-10


class Distribution(str, Enum):
    """注入向量的分佈。"""

    UNIFORM01_CENTERED = "uniform01_centered"
    GAUSSIAN01 = "gaussian01"

    @classmethod
    def parse(cls, value) -> "Distribution":
        if isinstance(value, cls):
            return value
        aliases = {"uniform": cls.UNIFORM01_CENTERED, "gaussian": cls.GAUSSIAN01}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise InvalidInput(f"未知的分佈：{value}") from None


class ModelSource(str, Enum):
    ANALYTIC = "analytic"
    SAMPLED = "sampled"


# ----------------------------------------------------------------------------
# 樣本矩陣
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleMatrix:
    """d×p 樣本矩陣（每欄一個樣本），已扣除樣本平均 mean。

    d = 0 只用於空的注入向量（η = 0）。
    """

    data: np.ndarray
    mean: np.ndarray
    dim_label: str = "x"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInput(f"樣本矩陣必須是二維，收到 ndim={data.ndim}")
        if data.shape[1] < 1:
            raise InvalidInput("樣本數 p 必須 ≥ 1")
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if mean.shape[0] != data.shape[0]:
            raise InvalidInput(f"mean 長度 {mean.shape[0]} 與維度 {data.shape[0]} 不符")
        if self.dim_label not in ROLES:
            raise InvalidInput(f"未知的角色標籤：{self.dim_label}")
        data.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mean", mean)

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def raw(self) -> np.ndarray:
        """加回平均後的原始樣本。"""
        return self.data + self.mean[:, None]

    def rows(self, start: int, stop: Optional[int] = None) -> "SampleMatrix":
        stop = self.d if stop is None else stop
        return SampleMatrix(self.data[start:stop], self.mean[start:stop], self.dim_label)

    def prefix(self, n: int) -> "SampleMatrix":
        """前 n 列；巢狀 η 掃描用。"""
        if n < 0 or n > self.d:
            raise InvalidInput(f"前綴長度 {n} 超出維度 {self.d}")
        return self.rows(0, n)

    def relabel(self, label: str) -> "SampleMatrix":
        return SampleMatrix(self.data, self.mean, label)

    @classmethod
    def stack(cls, parts: Sequence["SampleMatrix"], label: str = "z") -> "SampleMatrix":
        """沿維度方向堆疊 [a; b; ...]。"""
        if not parts:
            raise InvalidInput("沒有可堆疊的樣本矩陣")
        _check_same_p(parts)
        return cls(
            np.vstack([m.data for m in parts]),
            np.concatenate([m.mean for m in parts]),
            label,
        )

    @classmethod
    def concat_samples(cls, parts: Sequence["SampleMatrix"], label: str = "x") -> "SampleMatrix":
        """沿樣本方向串接 [X₁ X₂ ...] 後重新中心化。"""
        if not parts:
            raise InvalidInput("沒有可串接的樣本矩陣")
        dims = {m.d for m in parts}
        if len(dims) != 1:
            raise InvalidInput(f"串接的樣本維度不一致：{sorted(dims)}")
        return center(np.hstack([m.raw() for m in parts]), label)


def _check_same_p(parts: Iterable[SampleMatrix]) -> int:
    ps = {m.p for m in parts}
    if len(ps) != 1:
        raise InvalidInput(f"樣本數不一致：{sorted(ps)}")
    return ps.pop()


def center(raw, label: str = "x") -> SampleMatrix:
    """扣除樣本平均，保留平均值。"""
    a = np.asarray(raw, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] == 0:
        raise InvalidInput("中心化需要至少一個樣本")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("樣本含有非有限值 (NaN/Inf)")
    if a.shape[0] == 0:
        return SampleMatrix(a, np.zeros(0), label)
    mean = a.mean(axis=1)
    return SampleMatrix(a - mean[:, None], mean, label)


def cross_cov(a: SampleMatrix, b: SampleMatrix) -> np.ndarray:
    """E_ab = (1/p)·A·Bᵀ。"""
    if a.p != b.p:
        raise InvalidInput(f"樣本數不一致：{a.p} vs {b.p}")
    c = a.data @ b.data.T / a.p
    if a is b:
        c = (c + c.T) / 2.0
    return c


def empirical_error(x: SampleMatrix, xhat: SampleMatrix) -> float:
    """(1/p)·‖X − X̂‖_F²，在原始（未中心化）座標比較。"""
    if x.p != xhat.p or x.d != xhat.d:
        raise InvalidInput(f"形狀不一致：{x.data.shape} vs {xhat.data.shape}")
    diff = (x.data - xhat.data) + (x.mean - xhat.mean)[:, None]
    return float(np.sum(diff * diff) / x.p)


# ----------------------------------------------------------------------------
# 二階模型
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SecondOrderModel:
    """角色間的共變異數區塊 E_ab 集合。

    blocks 同時存放 (a, b) 與 (b, a)，保證 E_ab = E_baᵀ。
    p 只有在 source 為 sampled 時有值。
    """

    blocks: Mapping[Tuple[str, str], np.ndarray]
    dims: Mapping[str, int]
    source: ModelSource = ModelSource.ANALYTIC
    p: Optional[int] = None

    def __post_init__(self):
        for (a, b), blk in self.blocks.items():
            if blk.shape != (self.dims[a], self.dims[b]):
                raise InvalidInput(f"E_{a}{b} 形狀 {blk.shape} 與維度 ({self.dims[a]}, {self.dims[b]}) 不符")
        for (a, b), blk in self.blocks.items():
            other = self.blocks.get((b, a))
            if other is None:
                raise InvalidInput(f"有 E_{a}{b} 卻缺少 E_{b}{a}")
            if a > b:
                continue
            asym = np.linalg.norm(blk - other.T)
            if asym > SYMMETRY_TOL * (1.0 + np.linalg.norm(blk)):
                raise InvalidInput(f"E_{a}{b} 與 E_{b}{a}ᵀ 不一致：‖·‖_F = {asym:.3e}")

    @property
    def roles(self) -> Tuple[str, ...]:
        return tuple(self.dims)

    def has(self, *roles: str) -> bool:
        return all(r in self.dims for r in roles)

    def require(self, *roles: str) -> None:
        missing = [r for r in roles if r not in self.dims]
        if missing:
            raise InvalidInput(f"模型缺少角色：{', '.join(missing)}")

    def dim(self, role: str) -> int:
        self.require(role)
        return self.dims[role]

    def block(self, a: str, b: str) -> np.ndarray:
        try:
            return self.blocks[(a, b)]
        except KeyError:
            raise InvalidInput(f"模型中沒有 E_{a}{b}") from None

    def cross(self, a: str, roles: Sequence[str]) -> np.ndarray:
        """[E_{a r1} E_{a r2} ...]。"""
        parts = [self.block(a, r) for r in roles]
        if not parts:
            return np.zeros((self.dim(a), 0))
        return np.hstack(parts)

    def joint(self, roles: Sequence[str]) -> np.ndarray:
        """堆疊向量 [r1; r2; ...] 的共變異數矩陣。"""
        if not roles:
            return np.zeros((0, 0))
        return np.vstack([self.cross(a, roles) for a in roles])

    def trace(self, role: str) -> float:
        return float(np.trace(self.block(role, role)))

    def derive(
        self,
        name: str,
        combination: Mapping[str, np.ndarray],
        against: Optional[Sequence[str]] = None,
    ) -> "SecondOrderModel":
        """加入新角色 name = Σ_a C_a·a，並計算它與 against 中各角色的區塊。"""
        if not combination:
            raise InvalidInput("線性組合不可為空")
        terms = {a: as_matrix(c, f"C_{a}") for a, c in combination.items()}
        dims = {c.shape[0] for c in terms.values()}
        if len(dims) != 1:
            raise InvalidInput(f"線性組合的輸出維度不一致：{sorted(dims)}")
        d = dims.pop()
        for a, c in terms.items():
            if c.shape[1] != self.dim(a):
                raise InvalidInput(f"C_{a} 欄數 {c.shape[1]} 與 dim({a}) = {self.dim(a)} 不符")

        others = [r for r in (self.roles if against is None else against) if r != name]
        blocks = {k: v for k, v in self.blocks.items() if name not in k}
        for b in others:
            e = sum(c @ self.block(a, b) for a, c in terms.items())
            blocks[(name, b)] = e
            blocks[(b, name)] = e.T

        own = np.zeros((d, d))
        for a, ca in terms.items():
            for b, cb in terms.items():
                own = own + ca @ self.block(a, b) @ cb.T
        blocks[(name, name)] = (own + own.T) / 2.0

        new_dims = dict(self.dims)
        new_dims[name] = d
        return SecondOrderModel(blocks=blocks, dims=new_dims, source=self.source, p=self.p)

    def with_prefix(self, role: str, n: int) -> "SecondOrderModel":
        """只保留角色 role 的前 n 個分量。"""
        if n < 0 or n > self.dim(role):
            raise InvalidInput(f"前綴長度 {n} 超出 dim({role}) = {self.dim(role)}")
        blocks = {}
        for (a, b), blk in self.blocks.items():
            if a == role:
                blk = blk[:n, :]
            if b == role:
                blk = blk[:, :n]
            blocks[(a, b)] = blk
        dims = dict(self.dims)
        dims[role] = n
        return SecondOrderModel(blocks=blocks, dims=dims, source=self.source, p=self.p)

    def restrict(self, roles: Sequence[str]) -> "SecondOrderModel":
        self.require(*roles)
        keep = set(roles)
        blocks = {k: v for k, v in self.blocks.items() if k[0] in keep and k[1] in keep}
        return SecondOrderModel(blocks=blocks, dims={r: self.dims[r] for r in roles}, source=self.source, p=self.p)

    def extend(self, samples: Mapping[str, SampleMatrix], new_role: str, new: SampleMatrix) -> "SecondOrderModel":
        """以樣本加入新角色的區塊（只和 samples 裡有的角色計算）。"""
        blocks = dict(self.blocks)
        for r, sm in samples.items():
            if r in self.dims and r != new_role:
                e = cross_cov(new, sm)
                blocks[(new_role, r)] = e
                blocks[(r, new_role)] = e.T
        blocks[(new_role, new_role)] = cross_cov(new, new)
        dims = dict(self.dims)
        dims[new_role] = new.d
        return SecondOrderModel(blocks=blocks, dims=dims, source=self.source, p=self.p)


def build_model(samples: Mapping[str, SampleMatrix]) -> SecondOrderModel:
    """由樣本計算所有角色兩兩之間的 1/p 共變異數。"""
    if not samples:
        raise InvalidInput("至少需要一個角色的樣本")
    p = _check_same_p(samples.values())
    roles = list(samples)
    blocks: Dict[Tuple[str, str], np.ndarray] = {}
    for i, a in enumerate(roles):
        for b in roles[i:]:
            e = cross_cov(samples[a], samples[a] if a == b else samples[b])
            blocks[(a, b)] = e
            blocks[(b, a)] = e.T if a != b else e
    dims = {r: samples[r].d for r in roles}
    return SecondOrderModel(blocks=blocks, dims=dims, source=ModelSource.SAMPLED, p=p)


def analytic_model(blocks: Mapping[Tuple[str, str], np.ndarray]) -> SecondOrderModel:
    """由給定的解析共變異數區塊建立模型；只需給一個方向。"""
    full: Dict[Tuple[str, str], np.ndarray] = {}
    dims: Dict[str, int] = {}
    for (a, b), blk in blocks.items():
        e = as_matrix(blk, f"E_{a}{b}")
        for role, size in ((a, e.shape[0]), (b, e.shape[1])):
            if dims.setdefault(role, size) != size:
                raise InvalidInput(f"角色 {role} 的維度不一致：{dims[role]} vs {size}")
        if (b, a) in full and a != b and not np.allclose(full[(b, a)], e.T, atol=1e-10, rtol=0):
            raise InvalidInput(f"E_{a}{b} 與 E_{b}{a}ᵀ 不一致")
        full[(a, b)] = e
        full[(b, a)] = e.T
    for r in dims:
        if (r, r) not in full:
            raise InvalidInput(f"缺少對角區塊 E_{r}{r}")
        vals, _ = eigh_descending(full[(r, r)], f"E_{r}{r}")
        if vals.size and vals[-1] < -1e-10 * max(1.0, float(np.sum(np.abs(vals)))):
            raise InvalidInput(f"E_{r}{r} 不是半正定矩陣")
        full[(r, r)] = (full[(r, r)] + full[(r, r)].T) / 2.0
    return SecondOrderModel(blocks=full, dims=dims, source=ModelSource.ANALYTIC)


# ----------------------------------------------------------------------------
# 注入向量
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class InjectionSpec:
    """w- 或 h- 注入向量的規格；相同規格產生完全相同的樣本。"""

    dim: int
    dist: Distribution = Distribution.UNIFORM01_CENTERED
    seed: int = 0

    def __post_init__(self):
        if self.dim < 0:
            raise InvalidInput(f"注入維度必須非負，收到 {self.dim}")
        object.__setattr__(self, "dist", Distribution.parse(self.dist))

    def with_dim(self, dim: int) -> "InjectionSpec":
        return InjectionSpec(dim, self.dist, self.seed)

    def with_seed(self, seed: int) -> "InjectionSpec":
        return InjectionSpec(self.dim, self.dist, seed)


def gen_injection(spec: InjectionSpec, p: int, label: str = "w") -> SampleMatrix:
    """依規格抽 dim×p 樣本並中心化。

    依列順序填值，所以同一 seed 下較小 dim 的結果是較大 dim 的前綴。
    """
    if p < 1:
        raise InvalidInput(f"樣本數 p 必須 ≥ 1，收到 {p}")
    rng = np.random.default_rng(spec.seed)
    if spec.dist is Distribution.UNIFORM01_CENTERED:
        raw = rng.random((spec.dim, p))
    else:
        raw = rng.standard_normal((spec.dim, p))
    if spec.dim == 0:
        return SampleMatrix(np.zeros((0, p)), np.zeros(0), label)
    return center(raw, label)


def decorrelation_gain(e_ay, e_yy) -> np.ndarray:
    """G_ay = E_ay·E_yy†。"""
    return as_matrix(e_ay, "E_ay") @ pseudo_inverse(e_yy)


def _check_gain(gain, shape: Tuple[int, int], name: str) -> np.ndarray:
    gain = as_matrix(gain, name)
    if gain.shape != shape:
        raise InvalidInput(f"{name} 形狀 {gain.shape} 應為 {shape}")
    return gain


def s_injection(y: SampleMatrix, w: SampleMatrix, e_wy, e_yy, gain: Optional[np.ndarray] = None) -> SampleMatrix:
    """s = w − E_wy·E_yy†·y，使 s 與 y 不相關。

    gain 是已算好的 G_wy = E_wy·E_yy†，給定時不再重算偽逆。
    """
    if y.p != w.p:
        raise InvalidInput(f"y 與 w 樣本數不一致：{y.p} vs {w.p}")
    e_wy = as_matrix(e_wy, "E_wy")
    e_yy = as_matrix(e_yy, "E_yy")
    if e_wy.shape != (w.d, y.d) or e_yy.shape != (y.d, y.d):
        raise InvalidInput(f"區塊維度不符：E_wy {e_wy.shape}, E_yy {e_yy.shape}, dim(w)={w.d}, dim(y)={y.d}")
    gain = e_wy @ pseudo_inverse(e_yy) if gain is None else _check_gain(gain, (w.d, y.d), "G_wy")
    return SampleMatrix(w.data - gain @ y.data, w.mean - gain @ y.mean, "s")


def h_extension(
    z: SampleMatrix,
    h: SampleMatrix,
    e_hz,
    e_zz,
    n_y: int,
    gain: Optional[np.ndarray] = None,
) -> SampleMatrix:
    """組出延伸注入 s̃ = [s; g]，其中 g = h − E_hz·E_zz†·z。

    z = [y; s]，前 n_y 列是 y，其餘是 s。gain 是已算好的 G_hz。
    """
    if z.p != h.p:
        raise InvalidInput(f"z 與 h 樣本數不一致：{z.p} vs {h.p}")
    if not 0 <= n_y <= z.d:
        raise InvalidInput(f"n_y = {n_y} 超出 dim(z) = {z.d}")
    s = z.rows(n_y).relabel("s")
    if h.d == 0:
        return s
    e_hz = as_matrix(e_hz, "E_hz")
    e_zz = as_matrix(e_zz, "E_zz")
    if e_hz.shape != (h.d, z.d) or e_zz.shape != (z.d, z.d):
        raise InvalidInput(f"區塊維度不符：E_hz {e_hz.shape}, E_zz {e_zz.shape}")
    gain = e_hz @ pseudo_inverse(e_zz) if gain is None else _check_gain(gain, (h.d, z.d), "G_hz")
    g = SampleMatrix(h.data - gain @ z.data, h.mean - gain @ z.mean, "g")
    return SampleMatrix.stack([s, g], label="s")


def hadamard_square(y: SampleMatrix) -> SampleMatrix:
    """原始（未中心化）樣本逐元素平方後再中心化。"""
    raw = y.raw()
    return center(raw * raw, "v")


# ----------------------------------------------------------------------------
# 合成資料
# ----------------------------------------------------------------------------


class LinearModelSample(NamedTuple):
    x: SampleMatrix
    y: SampleMatrix
    mixing: np.ndarray


def draw_mixing(m: int, seed: int, a_dist: str = "normal") -> np.ndarray:
    """混合矩陣 A（m×m）：normal 為常態分佈，uniform 為 [0,1) 均勻分佈。"""
    rng = np.random.default_rng(seed)
    if a_dist == "normal":
        return rng.standard_normal((m, m))
    if a_dist == "uniform":
        return rng.random((m, m))
    raise InvalidInput(f"未知的混合矩陣分佈：{a_dist}")


def gen_observation(
    x: SampleMatrix,
    sigma: float,
    seed: int,
    mixing: Optional[np.ndarray] = None,
    a_dist: str = "normal",
) -> Tuple[SampleMatrix, np.ndarray]:
    """觀測 y = A·x + ξ，ξ ~ N(0, σ²I)。

    雜訊先以單位變異數抽出再乘上 σ，同一 seed 的 σ 掃描只改變雜訊強度。
    """
    if sigma < 0:
        raise InvalidInput(f"σ 必須非負，收到 {sigma}")
    a = draw_mixing(x.d, seed, a_dist) if mixing is None else as_matrix(mixing, "A")
    if a.shape[1] != x.d:
        raise InvalidInput(f"A 的欄數 {a.shape[1]} 與 dim(x) = {x.d} 不符")
    noise = np.random.default_rng([seed, 1]).standard_normal((a.shape[0], x.p))
    y_raw = a @ x.raw()
    if sigma > 0:
        y_raw = y_raw + sigma * noise
    return center(y_raw, "y"), a


def gen_linear_model(
    m: int,
    p: int,
    sigma: float,
    seed: int,
    mixing: Optional[np.ndarray] = None,
) -> LinearModelSample:
    """y = A·x + ξ：x 為 [0,1) 均勻分佈，A 為常態分佈，ξ ~ N(0, σ²I)。

    給定 mixing 時沿用同一個 A（Monte-Carlo 評估用）。
    """
    if m < 1 or p < 1:
        raise InvalidInput(f"需要 m ≥ 1 且 p ≥ 1，收到 m={m}, p={p}")
    if sigma < 0:
        raise InvalidInput(f"σ 必須非負，收到 {sigma}")
    a = draw_mixing(m, seed) if mixing is None else as_matrix(mixing, "A")
    x = center(np.random.default_rng([seed, 0]).random((m, p)), "x")
    y, a = gen_observation(x, sigma, seed, mixing=a)
    return LinearModelSample(x=x, y=y, mixing=a)


@dataclass(frozen=True)
class GeneratorSpec:
    """合成資料產生器規格 m, p, σ 與 seed；mixing 由 seed 決定。"""

    m: int
    p: int
    sigma: float = 1.0
    seed: int = 0

    def mixing(self) -> np.ndarray:
        return draw_mixing(self.m, self.seed)

    def sample(self, seed: Optional[int] = None) -> LinearModelSample:
        """以 trial seed 抽新資料，但沿用同一個 A。"""
        return gen_linear_model(
            self.m, self.p, self.sigma, self.seed if seed is None else seed, mixing=self.mixing()
        )

    @classmethod
    def parse(cls, text: str) -> "GeneratorSpec":
        """解析 `m=34,p=366,sigma=1[,seed=0]`。"""
        values: Dict[str, str] = {}
        for part in text.split(","):
            if not part.strip():
                continue
            key, sep, val = part.partition("=")
            if not sep:
                raise InvalidInput(f"無法解析產生器參數：{part!r}")
            values[key.strip()] = val.strip()
        unknown = set(values) - {"m", "p", "sigma", "seed"}
        if unknown or "m" not in values or "p" not in values:
            raise InvalidInput(f"產生器參數需要 m 與 p（可選 sigma, seed），收到 {text!r}")
        try:
            return cls(
                m=int(values["m"]),
                p=int(values["p"]),
                sigma=float(values.get("sigma", 1.0)),
                seed=int(values.get("seed", 0)),
            )
        except ValueError as exc:
            raise InvalidInput(f"無法解析產生器參數 {text!r}：{exc}") from None


def make_w_injection(
    source: str,
    spec: InjectionSpec,
    x: SampleMatrix,
    y: SampleMatrix,
) -> SampleMatrix:
    """依來源建立 w-注入。

    random：隨機注入；square：w = y²；optimal：w = E_xy·E_yy†·y（最佳線性估計）。
    """
    if source == "random":
        return gen_injection(spec, y.p, "w")
    if source == "square":
        return hadamard_square(y).relabel("w")
    if source == "optimal":
        gain = decorrelation_gain(cross_cov(x, y), cross_cov(y, y))
        return SampleMatrix(gain @ y.data, gain @ y.mean, "w")
    raise InvalidInput(f"未知的 w 來源：{source}")


__all__ = [
    "DECORRELATION_TOL",
    "Distribution",
    "GeneratorSpec",
    "InjectionSpec",
    "LinearModelSample",
    "ModelSource",
    "ROLES",
    "SampleMatrix",
    "SecondOrderModel",
    "analytic_model",
    "build_model",
    "center",
    "cross_cov",
    "decorrelation_gain",
    "draw_mixing",
    "empirical_error",
    "gen_injection",
    "gen_linear_model",
    "gen_observation",
    "h_extension",
    "hadamard_square",
    "make_w_injection",
    "s_injection",
]
