"""
threeterm - 秩約束三項 PCA 與相關二階估計器

由觀測 y 與注入向量重建參考訊號 x：GBT1、GBT2、GKLT、三項 PCA（含 h 延伸）
及無約束三項濾波器，加上驗證用的 ALS oracle 與實驗框架。
"""

__version__ = "0.3.0"

from .errors import InvalidInput, NumericalError, ThreeTermError
from .matcore import (
    RankTolerance,
    left_projector,
    pseudo_inverse,
    right_projector,
    sqrt_pinv_psd,
    sqrt_psd,
    svd,
    truncated,
)
from .stats import (
    GeneratorSpec,
    InjectionSpec,
    SampleMatrix,
    SecondOrderModel,
    analytic_model,
    build_model,
    center,
    gen_injection,
    gen_linear_model,
    h_extension,
    hadamard_square,
    s_injection,
)
from .transforms import (
    Method,
    RankKTransform,
    apply,
    fit_gbt1,
    fit_gbt2,
    fit_gklt,
    fit_pca3,
    fit_pca3_ext,
    fit_ttf,
    predicted_error,
    principal_components,
)
from .oracle import als_rank_k, monte_carlo_error
from .harness import ExperimentConfig, ExperimentResult, flop_model, ingest_csv, run

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "GeneratorSpec",
    "InjectionSpec",
    "InvalidInput",
    "Method",
    "NumericalError",
    "RankKTransform",
    "RankTolerance",
    "SampleMatrix",
    "SecondOrderModel",
    "ThreeTermError",
    "__version__",
    "als_rank_k",
    "analytic_model",
    "apply",
    "build_model",
    "center",
    "fit_gbt1",
    "fit_gbt2",
    "fit_gklt",
    "fit_pca3",
    "fit_pca3_ext",
    "fit_ttf",
    "flop_model",
    "gen_injection",
    "gen_linear_model",
    "h_extension",
    "hadamard_square",
    "ingest_csv",
    "left_projector",
    "monte_carlo_error",
    "predicted_error",
    "principal_components",
    "pseudo_inverse",
    "right_projector",
    "run",
    "s_injection",
    "sqrt_pinv_psd",
    "sqrt_psd",
    "svd",
    "truncated",
]
