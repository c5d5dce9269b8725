#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
threeterm 命令列工具

子指令：fit、eval、sweep-eta、sweep-noise、bench、flops。
設定來源依序覆寫：預設值 → --config JSON → 命令列旗標。

範例：
    python -m threeterm fit --gen m=8,p=160,sigma=1 --method gbt1,pca3 --k 4
    python -m threeterm sweep-eta --gen m=34,p=366,sigma=1 --k 17 --eta 0:500:10 --out eta.csv
    python -m threeterm flops --m-grid 34,10000 --format json --out flops.json
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import List, Optional, Sequence

import pandas as pd

from . import __version__
from .errors import EXIT_FAILURE, EXIT_OK, InvalidInput, ThreeTermError, exit_code_for
from .harness import COMMANDS, FLOP_COLUMNS, RESULT_COLUMNS, ExperimentConfig, ExperimentResult, load_roles, run

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_grid(text: str, kind=int) -> List:
    """解析 `a,b,c` 或 `start:stop:step`（包含 stop）。"""
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError("需要 start:stop:step")
            start, stop, step = (kind(p) for p in parts)
            if step <= 0:
                raise ValueError("step 必須為正")
            values = []
            current = start
            while current <= stop + (1e-12 if kind is float else 0):
                values.append(current)
                current = start + step * len(values)
            return values
        return [kind(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise InvalidInput(f"無法解析網格 {text!r}：{exc}") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    src = parser.add_argument_group("資料")
    src.add_argument("--data", dest="dataset", help="CSV 資料檔（首列為標頭，每列一個樣本）")
    src.add_argument("--gen", dest="generator", help="合成產生器，例如 m=34,p=366,sigma=1[,seed=0]")
    src.add_argument("--roles", help="角色檔：JSON 物件，角色 → [start_col, end_col)")
    src.add_argument("--config", help="JSON 設定檔（欄位名稱同 ExperimentConfig）")

    fit = parser.add_argument_group("擬合")
    fit.add_argument("--method", help="方法清單，逗號分隔（gbt1,gbt2,gklt,pca3,pca3_ext,ttf）")
    fit.add_argument("--k", help="秩 k，整數或清單")
    fit.add_argument("--eta", help="η 網格，例如 0,10,20 或 0:500:10")
    fit.add_argument("--sigma", help="σ 網格，例如 0,0.5,1 或 0:2:0.25")
    fit.add_argument("--seed", help="資料 seed，整數或清單")
    fit.add_argument("--ell", type=int, help="w-注入維度 ℓ（預設 n）")
    fit.add_argument("--w-source", choices=["random", "square", "optimal"], help="w-注入來源")
    fit.add_argument("--dist", choices=["uniform", "gaussian"], help="注入向量分佈")
    fit.add_argument("--trials", type=int, help="Monte-Carlo 次數（eval）")
    fit.add_argument("--m-grid", help="m 網格（bench / flops）")
    fit.add_argument("--reps", type=int, dest="repetitions", help="計時重複次數（bench，至少 3）")
    fit.add_argument("--workers", type=int, help="平行執行緒數")

    out = parser.add_argument_group("輸出")
    out.add_argument("--out", dest="output", help="結果檔路徑（未指定時輸出 CSV 到終端）")
    out.add_argument("--format", choices=["csv", "json"], help="結果格式")
    out.add_argument("-v", "--verbose", action="store_true", help="顯示除錯訊息")
    out.add_argument("-q", "--quiet", action="store_true", help="只顯示警告與錯誤")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threeterm",
        description="秩約束三項 PCA 與相關估計器的實驗工具",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "在訓練資料上擬合並比較預測與訓練誤差",
        "eval": "擬合後以新資料做 Monte-Carlo 評估",
        "sweep-eta": "巢狀 η 掃描（含 GBT1、GBT2、y = x 基準）",
        "sweep-noise": "(σ, η) 網格掃描",
        "bench": "計時比較 pca3、gbt2、gklt（p = 3m）",
        "flops": "浮點運算量表",
    }
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]))
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """預設值 → --config → 命令列旗標。"""
    base = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {
        "command": args.command,
        "dataset": args.dataset,
        "generator": args.generator,
        "roles": load_roles(args.roles) if args.roles else None,
        "methods": [m.strip() for m in args.method.split(",") if m.strip()] if args.method else None,
        "k": parse_grid(args.k) if args.k else None,
        "eta_grid": parse_grid(args.eta) if args.eta else None,
        "sigma_grid": parse_grid(args.sigma, float) if args.sigma else None,
        "seeds": parse_grid(args.seed) if args.seed else None,
        "ell": args.ell,
        "w_source": args.w_source,
        "dist": args.dist,
        "trials": args.trials,
        "m_grid": parse_grid(args.m_grid) if args.m_grid else None,
        "repetitions": args.repetitions,
        "workers": args.workers,
        "output": args.output,
        "format": args.format,
    }
    config = base.replace(**overrides)
    # 命令列指定的資料來源取代設定檔裡的另一種來源
    if args.dataset and not args.generator:
        config = dataclasses.replace(config, generator=None)
    if args.generator and not args.dataset:
        config = dataclasses.replace(config, dataset=None)
    return config


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _emit(result: ExperimentResult) -> None:
    if result.flops:
        frame = pd.DataFrame([c.as_record() for c in result.flops], columns=FLOP_COLUMNS)
    else:
        frame = pd.DataFrame([r.as_record() for r in result.rows], columns=RESULT_COLUMNS)
    frame.to_csv(sys.stdout, index=False, lineterminator="\n")


def _report_error(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload, ensure_ascii=False) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose, args.quiet)
    try:
        config = config_from_args(args)
        result = run(config)
        if not config.output:
            _emit(result)
        return EXIT_OK
    except ThreeTermError as exc:
        code = exit_code_for(exc)
        _report_error(exc, code)
        return code
    except KeyboardInterrupt:
        logger.warning("使用者中斷")
        return 130
    except Exception as exc:  # noqa: BLE001
        logger.exception("未預期的錯誤")
        _report_error(exc, EXIT_FAILURE)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
