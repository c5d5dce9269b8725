"""
實驗編排

讀入資料（CSV 或合成產生器）、依設定擬合各估計器、η / σ 掃描、
Monte-Carlo 評估、浮點運算量模型與計時，最後把結果表寫成 CSV 或 JSON。
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .errors import InvalidInput, ThreeTermError
from .oracle import monte_carlo_error
from .stats import (
    ROLES,
    Distribution,
    GeneratorSpec,
    InjectionSpec,
    SampleMatrix,
    build_model,
    center,
    gen_injection,
    gen_observation,
    make_w_injection,
)
from .transforms import Method, clean_error, fit, fit_gbt1, training_error

logger = logging.getLogger(__name__)

COMMANDS = ("fit", "eval", "sweep-eta", "sweep-noise", "bench", "flops")
RESULT_COLUMNS = [
    "case",
    "method",
    "k",
    "ell",
    "eta",
    "sigma",
    "seed",
    "predicted_err",
    "empirical_err",
    "wall_time_s",
]
FLOP_COLUMNS = ["m", "k", "c_pca3", "c_gbt2", "c_gklt", "ratio_gbt2", "ratio_gklt"]
DEFAULT_METHODS = {
    "fit": ("gbt1", "gbt2", "gklt", "pca3", "pca3_ext", "ttf"),
    "eval": ("gbt1", "pca3", "pca3_ext"),
    "sweep-eta": ("pca3_ext",),
    "sweep-noise": ("pca3_ext",),
    "bench": ("pca3", "gbt2", "gklt"),
    "flops": (),
}
BENCH_METHODS = {"pca3", "gbt2", "gklt"}
W_SOURCES = ("random", "square", "optimal")
CLEAN_METHOD = "gbt1_clean"
IDENTITY_TOL = 1e-6

# 注入向量的子 seed 標記
_SEED_W, _SEED_H, _SEED_V = 1, 2, 3


def log_stage(message: str) -> None:
    """輸出階段提示"""
    logger.info("[階段] %s", message)


def _child_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), tag]).generate_state(1)[0])


# ----------------------------------------------------------------------------
# 設定
# ----------------------------------------------------------------------------


def _as_tuple(value) -> tuple:
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


@dataclass(frozen=True)
class ExperimentConfig:
    """一次實驗的完整設定；可由 JSON 設定檔與命令列旗標覆寫。

    k 為空時使用 max(1, min(m, n) // 2)；methods 為空時使用該指令的預設方法。
    generator 的 seed 決定混合矩陣 A，seeds 則是每次抽資料（x、ξ、注入）的 seed。
    """

    command: str = "fit"
    dataset: Optional[str] = None
    generator: Optional[str] = None
    roles: Mapping[str, Tuple[int, int]] = field(default_factory=dict)
    cases: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    methods: Tuple[str, ...] = ()
    k: Tuple[int, ...] = ()
    eta_grid: Tuple[int, ...] = (0,)
    sigma_grid: Tuple[float, ...] = ()
    seeds: Tuple[int, ...] = (0,)
    ell: Optional[int] = None
    w_source: str = "random"
    dist: str = "uniform"
    a_dist: str = "normal"
    m_grid: Tuple[int, ...] = ()
    repetitions: int = 3
    trials: int = 20
    workers: int = 1
    output: Optional[str] = None
    format: str = "csv"

    def __post_init__(self):
        for name in ("methods", "k", "eta_grid", "sigma_grid", "seeds", "m_grid"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        roles = {str(r): tuple(int(c) for c in span) for r, span in dict(self.roles).items()}
        cases = {str(c): tuple(str(r) for r in _as_tuple(rs)) for c, rs in dict(self.cases).items()}
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "cases", cases)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidInput(f"設定檔含有未知欄位：{', '.join(sorted(unknown))}")
        try:
            return cls(**dict(data))
        except (TypeError, ValueError) as exc:
            raise InvalidInput(f"設定值無效：{exc}") from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as exc:
            raise InvalidInput(f"無法讀取設定檔 {path}：{exc}") from None
        except UnicodeDecodeError as exc:
            raise InvalidInput(f"設定檔 {path} 不是 UTF-8 編碼：{exc}") from None
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"設定檔 {path} 第 {exc.lineno} 行 JSON 格式錯誤：{exc.msg}") from None
        if not isinstance(data, dict):
            raise InvalidInput(f"設定檔 {path} 必須是 JSON 物件")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, dict):
                value = {key: list(v) for key, v in value.items()}
            out[f.name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)

    def replace(self, **overrides) -> "ExperimentConfig":
        """覆寫非 None 的欄位。"""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in ("output", "format")}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def resolved_methods(self) -> Tuple[str, ...]:
        return self.methods or DEFAULT_METHODS.get(self.command, ())

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise InvalidInput(f"未知的指令：{self.command}")
        if self.format not in ("csv", "json"):
            raise InvalidInput(f"輸出格式必須是 csv 或 json，收到 {self.format}")
        for m in self.resolved_methods():
            Method.parse(m)
        if self.command in ("bench", "flops"):
            if not self.m_grid or any(m < 1 for m in self.m_grid):
                raise InvalidInput("bench / flops 需要非空且皆為正整數的 m_grid")
            if self.command == "bench":
                bad = set(self.resolved_methods()) - BENCH_METHODS
                if bad:
                    raise InvalidInput(f"bench 只支援 pca3、gbt2、gklt，收到 {', '.join(sorted(bad))}")
                if self.repetitions < 3:
                    raise InvalidInput(f"bench 至少需要 3 次重複，收到 {self.repetitions}")
        else:
            if bool(self.dataset) == bool(self.generator):
                raise InvalidInput("必須指定 --data 或 --gen 其中之一")
            if self.dataset and not self.roles:
                raise InvalidInput("CSV 資料需要角色對應（--roles）")
        if self.command in ("sweep-eta", "sweep-noise") and "pca3_ext" not in self.resolved_methods():
            raise InvalidInput(f"{self.command} 需要 pca3_ext 方法")
        if self.command == "sweep-noise" and not self.sigma_grid:
            raise InvalidInput("sweep-noise 需要非空的 σ 網格")
        if self.command == "eval":
            if not self.generator:
                raise InvalidInput("eval 只支援合成產生器（--gen）")
            if self.w_source != "random":
                raise InvalidInput("eval 的新資料需要隨機 w-注入（--w-source random）")
            if self.trials < 1:
                raise InvalidInput(f"trials 必須 ≥ 1，收到 {self.trials}")
        if not self.eta_grid or any(e < 0 for e in self.eta_grid):
            raise InvalidInput("η 網格必須非空且非負")
        if not self.seeds:
            raise InvalidInput("seed 網格不可為空")
        if any(k < 1 for k in self.k):
            raise InvalidInput(f"k 必須 ≥ 1，收到 {list(self.k)}")
        if any(s < 0 for s in self.sigma_grid):
            raise InvalidInput("σ 必須非負")
        if self.ell is not None and self.ell < 1:
            raise InvalidInput(f"ℓ 必須 ≥ 1，收到 {self.ell}")
        if self.w_source not in W_SOURCES:
            raise InvalidInput(f"未知的 w 來源：{self.w_source}")
        if self.workers < 1:
            raise InvalidInput(f"workers 必須 ≥ 1，收到 {self.workers}")
        Distribution.parse(self.dist)
        return self


# ----------------------------------------------------------------------------
# 結果
# ----------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class ResultRow:
    case: str
    method: str
    k: int
    ell: int
    eta: int
    sigma: float
    seed: int
    predicted_err: float
    empirical_err: float
    wall_time_s: float

    def sort_key(self):
        sigma = math.inf if math.isnan(self.sigma) else self.sigma
        return (self.case, self.method, self.k, self.eta, sigma, self.seed)

    def as_record(self) -> Dict[str, str]:
        return {name: _fmt(getattr(self, name)) for name in RESULT_COLUMNS}

    def as_json(self) -> Dict[str, Any]:
        out = {}
        for name in RESULT_COLUMNS:
            value = getattr(self, name)
            if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
                value = int(value)
            elif isinstance(value, (np.floating, float)):
                value = float(value)
            out[name] = value
        return out

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "ResultRow":
        try:
            return cls(
                case=str(record["case"]),
                method=str(record["method"]),
                k=int(record["k"]),
                ell=int(record["ell"]),
                eta=int(record["eta"]),
                sigma=float(record["sigma"]),
                seed=int(record["seed"]),
                predicted_err=float(record["predicted_err"]),
                empirical_err=float(record["empirical_err"]),
                wall_time_s=float(record["wall_time_s"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"結果列格式錯誤：{exc}") from None


class FlopCounts(NamedTuple):
    m: int
    k: int
    c_pca3: int
    c_gbt2: int
    c_gklt: int

    @property
    def ratio_gbt2(self) -> float:
        return self.c_pca3 / self.c_gbt2

    @property
    def ratio_gklt(self) -> float:
        return self.c_pca3 / self.c_gklt

    def as_record(self) -> Dict[str, str]:
        return {name: _fmt(getattr(self, name)) for name in FLOP_COLUMNS}


@dataclass(frozen=True)
class ExperimentResult:
    rows: List[ResultRow]
    metadata: Dict[str, Any]
    flops: List[FlopCounts] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        """可直接畫圖的結果表。"""
        return pd.DataFrame([r.as_json() for r in self.rows], columns=RESULT_COLUMNS)


def _sorted(rows: Sequence[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=ResultRow.sort_key)


def _metadata_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def write_result(result: ExperimentResult, path, fmt: str = "csv") -> Path:
    """寫出結果；CSV 另外寫一個 .meta.json 存放 metadata。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = dict(sorted(result.metadata.items()))
    if fmt == "json":
        if result.flops:
            payload = {"metadata": metadata, "flops": [dict(zip(FLOP_COLUMNS, _flop_values(c))) for c in result.flops]}
        else:
            payload = {"metadata": metadata, "rows": [r.as_json() for r in result.rows]}
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    elif fmt == "csv":
        if result.flops:
            frame = pd.DataFrame([c.as_record() for c in result.flops], columns=FLOP_COLUMNS)
        else:
            frame = pd.DataFrame([r.as_record() for r in result.rows], columns=RESULT_COLUMNS)
        frame.to_csv(path, index=False, lineterminator="\n")
        _metadata_path(path).write_text(json.dumps(metadata, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    else:
        raise InvalidInput(f"輸出格式必須是 csv 或 json，收到 {fmt}")
    logger.info("結果已寫入 %s", path)
    return path


def _flop_values(c: FlopCounts) -> List[Any]:
    return [c.m, c.k, c.c_pca3, c.c_gbt2, c.c_gklt, c.ratio_gbt2, c.ratio_gklt]


def read_result(path, fmt: Optional[str] = None) -> ExperimentResult:
    """讀回 write_result 寫出的結果表（不含 flops 表）。"""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInput(f"無法讀取結果檔 {path}：{exc}") from None
        rows = [ResultRow.from_record(r) for r in payload.get("rows", [])]
        return ExperimentResult(rows=rows, metadata=payload.get("metadata", {}))

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InvalidInput(f"無法讀取結果檔 {path}：{exc}") from None
    if list(frame.columns) != RESULT_COLUMNS:
        raise InvalidInput(f"結果檔標頭不符：{list(frame.columns)}")
    rows = [ResultRow.from_record(rec) for rec in frame.to_dict(orient="records")]
    meta_path = _metadata_path(path)
    metadata = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return ExperimentResult(rows=rows, metadata=metadata)


# ----------------------------------------------------------------------------
# 資料讀入
# ----------------------------------------------------------------------------


def load_roles(path) -> Dict[str, Tuple[int, int]]:
    """角色檔：JSON 物件，角色名稱 → [起始欄, 結束欄)。"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise InvalidInput(f"無法讀取角色檔 {path}：{exc}") from None
    except UnicodeDecodeError as exc:
        raise InvalidInput(f"角色檔 {path} 不是 UTF-8 編碼：{exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"角色檔 {path} 第 {exc.lineno} 行 JSON 格式錯誤：{exc.msg}") from None
    if not isinstance(data, dict):
        raise InvalidInput("角色檔必須是 JSON 物件")
    return _check_roles(data)


def _check_roles(roles: Mapping[str, Sequence[int]]) -> Dict[str, Tuple[int, int]]:
    spans: Dict[str, Tuple[int, int]] = {}
    for role, span in roles.items():
        if not isinstance(span, (list, tuple)) or len(span) != 2:
            raise InvalidInput(f"角色 {role} 的欄位範圍必須是 [start, end)")
        start, end = span
        if not (isinstance(start, (int, np.integer)) and isinstance(end, (int, np.integer))) or not 0 <= start < end:
            raise InvalidInput(f"角色 {role} 的欄位範圍無效：{list(span)}")
        spans[str(role)] = (int(start), int(end))
    ordered = sorted(spans.items(), key=lambda kv: kv[1])
    for (ra, (_, ea)), (rb, (sb, _)) in zip(ordered, ordered[1:]):
        if sb < ea:
            raise InvalidInput(f"角色 {ra} 與 {rb} 的欄位範圍重疊")
    return spans


def ingest_csv(path, roles: Mapping[str, Sequence[int]]) -> Dict[str, SampleMatrix]:
    """讀入 CSV（首列為標頭，每列一個樣本），依角色切出欄位並轉置為 d×p。"""
    spans = _check_roles(roles)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise InvalidInput(f"{path} 是空檔案") from None
    except UnicodeDecodeError as exc:
        raise InvalidInput(f"{path} 不是 UTF-8 編碼：{exc}") from None
    except pd.errors.ParserError as exc:
        raise InvalidInput(f"{path} 欄位數不一致：{exc}") from None
    except OSError as exc:
        raise InvalidInput(f"無法讀取 {path}：{exc}") from None

    if raw.shape[0] < 2:
        raise InvalidInput(f"{path} 只有標頭，沒有樣本")
    # 首列為標頭；第 i 列資料對應檔案第 i + 2 行
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(c) for c in raw.iloc[0]]
    ragged = frame.isna().any(axis=1).to_numpy()
    if ragged.any():
        line = int(np.argmax(ragged)) + 2
        raise InvalidInput(f"{path} 第 {line} 行欄位數不足")
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        raise InvalidInput(f"{path} 第 {row + 2} 行欄位 {frame.columns[col]!r} 不是有限數值：{frame.iat[row, col]!r}")

    ncols = values.shape[1]
    out: Dict[str, SampleMatrix] = {}
    for role, (start, end) in spans.items():
        if end > ncols:
            raise InvalidInput(f"角色 {role} 的欄位範圍 [{start}, {end}) 超出欄數 {ncols}")
        out[role] = center(values[:, start:end].T, role if role in ROLES else "x")
    logger.debug("讀入 %s：p=%d，角色 %s", path, values.shape[0], {r: m.d for r, m in out.items()})
    return out


# ----------------------------------------------------------------------------
# 擬合單元
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class _Case:
    label: str
    x: Optional[SampleMatrix] = None
    given: Mapping[str, SampleMatrix] = field(default_factory=dict)


@dataclass(frozen=True)
class _Unit:
    case: _Case
    sigma: float
    seed: int


def _annotate(exc: ThreeTermError, **point) -> ThreeTermError:
    where = ", ".join(f"{k}={v}" for k, v in point.items())
    return type(exc)(f"{exc} at {where}")


def _cases(config: ExperimentConfig) -> List[_Case]:
    if config.generator:
        return [_Case(label="gen")]
    data = ingest_csv(config.dataset, config.roles)
    if config.cases:
        cases = []
        for label, names in config.cases.items():
            missing = [r for r in names if r not in data]
            if missing:
                raise InvalidInput(f"案例 {label} 引用了未定義的角色：{', '.join(missing)}")
            cases.append(_Case(label=label, x=SampleMatrix.concat_samples([data[r] for r in names], "x")))
        return cases
    if "x" not in data:
        raise InvalidInput("角色對應缺少 x")
    given = {r: data[r] for r in ("y", "w", "h", "v") if r in data}
    return [_Case(label=Path(config.dataset).stem, x=data["x"], given=given)]


def _sigmas(config: ExperimentConfig, case: _Case) -> Tuple[float, ...]:
    if "y" in case.given:
        if config.sigma_grid:
            raise InvalidInput("資料已提供 y，不能再指定 σ 網格")
        return (math.nan,)
    if config.sigma_grid:
        return config.sigma_grid
    if config.generator:
        return (GeneratorSpec.parse(config.generator).sigma,)
    return (1.0,)


def _samples(config: ExperimentConfig, unit: _Unit, eta_max: int) -> Dict[str, SampleMatrix]:
    """組出一個網格點的 x, y, w, h, v 樣本。"""
    case, sigma, seed = unit.case, unit.sigma, unit.seed
    if config.generator:
        spec = GeneratorSpec.parse(config.generator)
        spec = dataclasses.replace(spec, sigma=sigma)
        data = spec.sample(seed)
        x, y = data.x, data.y
    else:
        x = case.x
        y = case.given.get("y")
        if y is None:
            y, _ = gen_observation(x, sigma, seed, a_dist=config.a_dist)
    p, n = y.p, y.d

    dist = Distribution.parse(config.dist)
    ell = config.ell or n
    samples = {"x": x, "y": y}
    if "w" in case.given:
        samples["w"] = case.given["w"]
    else:
        w_spec = InjectionSpec(ell, dist, _child_seed(seed, _SEED_W))
        samples["w"] = make_w_injection(config.w_source, w_spec, x, y)
    if "h" in case.given:
        if case.given["h"].d < eta_max:
            raise InvalidInput(f"資料中的 h 只有 {case.given['h'].d} 維，η 網格需要 {eta_max}")
        samples["h"] = case.given["h"]
    else:
        samples["h"] = gen_injection(InjectionSpec(eta_max, dist, _child_seed(seed, _SEED_H)), p, "h")
    if "v" in case.given:
        samples["v"] = case.given["v"]
    else:
        samples["v"] = gen_injection(InjectionSpec(n, dist, _child_seed(seed, _SEED_V)), p, "v")
    return samples


def _specs(config: ExperimentConfig, unit: _Unit, samples: Mapping[str, SampleMatrix]):
    """重新抽注入時所需的規格；資料檔提供的注入沒有規格。"""
    dist = Distribution.parse(config.dist)
    w_spec = h_spec = v_spec = None
    if "w" not in unit.case.given and config.w_source == "random":
        w_spec = InjectionSpec(samples["w"].d, dist, _child_seed(unit.seed, _SEED_W))
    if "h" not in unit.case.given:
        h_spec = InjectionSpec(samples["h"].d, dist, _child_seed(unit.seed, _SEED_H))
    if "v" not in unit.case.given:
        v_spec = InjectionSpec(samples["v"].d, dist, _child_seed(unit.seed, _SEED_V))
    return w_spec, h_spec, v_spec


def _ks(config: ExperimentConfig, m: int, n: int) -> Tuple[int, ...]:
    if config.k:
        bad = [k for k in config.k if not 1 <= k <= min(m, n)]
        if bad:
            raise InvalidInput(f"k 必須在 [1, {min(m, n)}] 之間，收到 {bad}")
        return config.k
    return (max(1, min(m, n) // 2),)


def _ell(method: Method, samples: Mapping[str, SampleMatrix]) -> int:
    if method in (Method.PCA3, Method.PCA3_EXT, Method.TTF):
        return samples["w"].d
    if method is Method.GBT2:
        return samples["v"].d
    return 0


def _check_identity(row: ResultRow) -> None:
    if abs(row.predicted_err - row.empirical_err) > IDENTITY_TOL * (1.0 + row.predicted_err):
        logger.warning(
            "%s %s k=%d η=%d：預測誤差 %.9g 與訓練誤差 %.9g 不一致",
            row.case, row.method, row.k, row.eta, row.predicted_err, row.empirical_err,
        )


def _fit_unit(config: ExperimentConfig, unit: _Unit, baselines: bool, monte_carlo: bool) -> List[ResultRow]:
    methods = [Method.parse(m) for m in config.resolved_methods()]
    if baselines:
        methods += [m for m in (Method.GBT1, Method.GBT2) if m not in methods]
    eta_max = max(config.eta_grid) if Method.PCA3_EXT in methods else 0
    samples = _samples(config, unit, eta_max)
    w_spec, h_spec, v_spec = _specs(config, unit, samples)
    model = build_model(samples)
    m, n = samples["x"].d, samples["y"].d
    gen_spec = None
    if monte_carlo:
        gen_spec = dataclasses.replace(GeneratorSpec.parse(config.generator), sigma=unit.sigma)

    rows: List[ResultRow] = []

    def record(method_name: str, k: int, ell: int, eta: int, predicted: float, empirical: float, wall: float):
        row = ResultRow(
            case=unit.case.label,
            method=method_name,
            k=k,
            ell=ell,
            eta=eta,
            sigma=float(unit.sigma),
            seed=int(unit.seed),
            predicted_err=float(predicted),
            empirical_err=float(empirical),
            wall_time_s=float(wall),
        )
        if not monte_carlo:
            _check_identity(row)
        rows.append(row)

    for k in _ks(config, m, n):
        for method in methods:
            if method is Method.TTF and k != _ks(config, m, n)[0]:
                continue
            etas = config.eta_grid if method is Method.PCA3_EXT else (0,)
            for eta in etas:
                try:
                    start = time.perf_counter()
                    t = fit(
                        method,
                        model,
                        samples,
                        k=None if method is Method.TTF else k,
                        eta=eta if method is Method.PCA3_EXT else None,
                        w_spec=v_spec if method is Method.GBT2 else w_spec,
                        h_spec=h_spec,
                    )
                    wall = time.perf_counter() - start
                    if monte_carlo:
                        mc = monte_carlo_error(t, gen_spec, config.trials, seed=_child_seed(unit.seed, 7))
                        empirical = mc.mean
                    else:
                        empirical = training_error(t, samples)
                except ThreeTermError as exc:
                    raise _annotate(
                        exc, case=unit.case.label, method=method.value, k=k, eta=eta, sigma=unit.sigma, seed=unit.seed
                    ) from exc
                record(method.value, 0 if method is Method.TTF else k, _ell(method, samples), eta, t.predicted_err, empirical, wall)

        if baselines:
            start = time.perf_counter()
            predicted = clean_error(model, k)
            clean = {"x": samples["x"], "y": samples["x"].relabel("y")}
            empirical = training_error(fit_gbt1(build_model(clean), k, clean), clean)
            record(CLEAN_METHOD, k, 0, 0, predicted, empirical, time.perf_counter() - start)
    return rows


def _grid(config: ExperimentConfig) -> List[_Unit]:
    units = []
    for case in _cases(config):
        for sigma in _sigmas(config, case):
            for seed in config.seeds:
                units.append(_Unit(case=case, sigma=sigma, seed=int(seed)))
    return units


def _run_grid(config: ExperimentConfig, baselines: bool = False, monte_carlo: bool = False) -> ExperimentResult:
    units = _grid(config)
    log_stage(f"{config.command}：{len(units)} 個網格點，workers={config.workers}")

    def task(unit: _Unit) -> List[ResultRow]:
        rows = _fit_unit(config, unit, baselines, monte_carlo)
        logger.debug("完成 case=%s σ=%s seed=%d（%d 列）", unit.case.label, unit.sigma, unit.seed, len(rows))
        return rows

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(task, units))
    else:
        chunks = [task(u) for u in units]
    rows = _sorted([r for chunk in chunks for r in chunk])
    log_stage(f"{config.command} 完成：{len(rows)} 列")
    return ExperimentResult(rows=rows, metadata=_metadata(config, units, monte_carlo))


def _metadata(config: ExperimentConfig, units: Sequence[_Unit], monte_carlo: bool = False) -> Dict[str, Any]:
    meta: Dict[str, Any] = {
        "command": config.command,
        "config_hash": config.config_hash(),
        "evaluation": "monte_carlo" if monte_carlo else "training",
        "version": __version__,
    }
    if config.generator:
        spec = GeneratorSpec.parse(config.generator)
        meta.update(p=spec.p, m=spec.m, n=spec.m)
    elif units:
        first = units[0].case
        x = first.x
        y = first.given.get("y")
        meta.update(p=x.p, m=x.d, n=y.d if y is not None else x.d)
    return meta


# ----------------------------------------------------------------------------
# 指令
# ----------------------------------------------------------------------------


def fit_table(config: ExperimentConfig) -> ExperimentResult:
    """對每個案例、σ、seed 擬合所有方法並記錄預測與訓練誤差。"""
    return _run_grid(config)


def evaluate(config: ExperimentConfig) -> ExperimentResult:
    """在訓練資料上擬合，再以同一產生器的新資料做 Monte-Carlo 評估。"""
    return _run_grid(config, monte_carlo=True)


def sweep_eta(config: ExperimentConfig) -> ExperimentResult:
    """巢狀 η 掃描：同一條長 h 取前綴，另記錄 GBT1、GBT2 與 y = x 的基準。"""
    if "pca3_ext" not in config.resolved_methods():
        raise InvalidInput("sweep-eta 需要 pca3_ext 方法")
    return _run_grid(config, baselines=True)


def sweep_noise(config: ExperimentConfig) -> ExperimentResult:
    """(σ, η) 網格掃描；同一 seed 下只改變雜訊強度。"""
    if not config.sigma_grid:
        raise InvalidInput("sweep-noise 需要非空的 σ 網格")
    return sweep_eta(config)


def flop_model(m: int, k: int) -> FlopCounts:
    """m = n = ℓ 時三種方法的浮點運算量（整數運算）。"""
    if int(m) != m or int(k) != k or m < 1 or not 1 <= k <= m:
        raise InvalidInput(f"需要 m ≥ 1 且 1 ≤ k ≤ m，收到 m={m}, k={k}")
    m, k = int(m), int(k)
    m2, m3 = m * m, m * m * m
    return FlopCounts(
        m=m,
        k=k,
        c_pca3=52 * m3 + 2 * m2 * (k + 1),
        c_gbt2=140 * m3 + 2 * m2 * (k + 2),
        c_gklt=240 * m3 + 4 * m2 * (k + 1) + m * k,
    )


def flop_table(config: ExperimentConfig) -> ExperimentResult:
    counts = []
    for m in config.m_grid:
        for k in config.k or (max(1, m // 2),):
            counts.append(flop_model(m, k))
    return ExperimentResult(rows=[], metadata=_metadata(config, []), flops=counts)


def bench(config: ExperimentConfig) -> ExperimentResult:
    """計時：m = ℓ、p = 3m、σ = 1，一次暖身後取中位數。"""
    methods = [Method.parse(m) for m in config.resolved_methods()]
    dist = Distribution.parse(config.dist)
    rows = []
    for m in config.m_grid:
        for seed in config.seeds:
            log_stage(f"bench m={m} seed={seed}")
            data = GeneratorSpec(m=m, p=3 * m, sigma=1.0, seed=int(seed)).sample()
            w_spec = InjectionSpec(m, dist, _child_seed(seed, _SEED_W))
            v_spec = InjectionSpec(m, dist, _child_seed(seed, _SEED_V))
            samples = {
                "x": data.x,
                "y": data.y,
                "w": gen_injection(w_spec, 3 * m, "w"),
                "v": gen_injection(v_spec, 3 * m, "v"),
            }
            model = build_model(samples)
            for k in config.k or (max(1, m // 2),):
                if not 1 <= k <= m:
                    raise InvalidInput(f"k 必須在 [1, {m}] 之間，收到 {k} at m={m}")
                for method in methods:
                    spec = v_spec if method is Method.GBT2 else w_spec
                    fit(method, model, samples, k=k, w_spec=spec)
                    times = []
                    for _ in range(config.repetitions):
                        start = time.perf_counter()
                        t = fit(method, model, samples, k=k, w_spec=spec)
                        times.append(time.perf_counter() - start)
                    rows.append(
                        ResultRow(
                            case=f"m={m}",
                            method=method.value,
                            k=int(k),
                            ell=m,
                            eta=0,
                            sigma=1.0,
                            seed=int(seed),
                            predicted_err=float(t.predicted_err),
                            empirical_err=float(training_error(t, samples)),
                            wall_time_s=float(statistics.median(times)),
                        )
                    )
    meta = _metadata(config, [])
    meta.update(m=max(config.m_grid), n=max(config.m_grid), p=3 * max(config.m_grid), repetitions=config.repetitions)
    return ExperimentResult(rows=_sorted(rows), metadata=meta)


_HANDLERS = {
    "fit": fit_table,
    "eval": evaluate,
    "sweep-eta": sweep_eta,
    "sweep-noise": sweep_noise,
    "bench": bench,
    "flops": flop_table,
}


def run(config: ExperimentConfig) -> ExperimentResult:
    """驗證設定、執行指令並寫出結果檔。"""
    config.validate()
    log_stage(f"開始 {config.command}（config {config.config_hash()[:12]}）")
    result = _HANDLERS[config.command](config)
    if config.output:
        write_result(result, config.output, config.format)
    return result


__all__ = [
    "COMMANDS",
    "ExperimentConfig",
    "ExperimentResult",
    "FlopCounts",
    "RESULT_COLUMNS",
    "ResultRow",
    "bench",
    "evaluate",
    "fit_table",
    "flop_model",
    "flop_table",
    "ingest_csv",
    "load_roles",
    "log_stage",
    "read_result",
    "run",
    "sweep_eta",
    "sweep_noise",
    "write_result",
]
