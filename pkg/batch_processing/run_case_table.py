#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
批次執行實驗設定檔
把資料夾裡每個 *.json 設定檔交給 threeterm.harness.run
支持從上次中斷的地方繼續
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from threeterm.errors import ThreeTermError  # noqa: E402
from threeterm.harness import ExperimentConfig, run  # noqa: E402

logger = logging.getLogger("run_case_table")

PROGRESS_FILE = "case_table_progress.json"


def load_progress(progress_file=PROGRESS_FILE):
    """載入進度文件"""
    if os.path.exists(progress_file):
        with open(progress_file, "r", encoding="utf-8") as f:
            return json.load(f)
    return {"processed": [], "failed": {}}


def save_progress(progress, progress_file=PROGRESS_FILE):
    """保存進度"""
    with open(progress_file, "w", encoding="utf-8") as f:
        json.dump(progress, f, indent=2, ensure_ascii=False)


def find_configs(base_path):
    """查找所有設定檔"""
    return sorted(str(p) for p in Path(base_path).glob("*.json") if not p.name.endswith(".meta.json"))


def process_config(config_path, out_dir):
    """執行單一設定檔；輸出檔名沿用設定檔名稱"""
    config = ExperimentConfig.from_json(config_path)
    if not config.output:
        suffix = ".json" if config.format == "json" else ".csv"
        config = config.replace(output=str(Path(out_dir) / (Path(config_path).stem + suffix)))
    result = run(config)
    return len(result.rows) or len(result.flops), config.output


def run_all(base_path, out_dir, progress_file=PROGRESS_FILE, retry_failed=False):
    """處理資料夾中所有尚未完成的設定檔，回傳進度。"""
    progress = load_progress(progress_file)
    configs = find_configs(base_path)
    logger.info("找到 %d 個設定檔", len(configs))

    done = set(progress["processed"])
    failed = progress["failed"]
    remaining = [c for c in configs if c not in done and (retry_failed or c not in failed)]
    logger.info("剩餘待處理: %d 個", len(remaining))
    if not remaining:
        logger.info("所有設定檔都已處理完成！")
        return progress

    Path(out_dir).mkdir(parents=True, exist_ok=True)
    start_time = time.time()
    for i, config_path in enumerate(remaining, 1):
        logger.info("[%d/%d] 處理: %s", i, len(remaining), os.path.basename(config_path))
        try:
            n_rows, output = process_config(config_path, out_dir)
            logger.info("  成功: %d 列 → %s", n_rows, output)
            progress["processed"].append(config_path)
            failed.pop(config_path, None)
        except KeyboardInterrupt:
            logger.warning("用戶中斷！進度已保存。")
            save_progress(progress, progress_file)
            raise
        except ThreeTermError as e:
            logger.error("  失敗: %s", e)
            failed[config_path] = f"{type(e).__name__}: {e}"
        save_progress(progress, progress_file)

        elapsed = time.time() - start_time
        if i < len(remaining):
            eta = (elapsed / i) * (len(remaining) - i)
            logger.info("已用時 %.1f 分鐘，預計剩餘 %.1f 分鐘", elapsed / 60, eta / 60)

    logger.info("處理完成！成功 %d 個，失敗 %d 個", len(progress["processed"]), len(failed))
    return progress


def main():
    parser = argparse.ArgumentParser(description="批次執行 threeterm 設定檔（可中斷後續跑）")
    parser.add_argument("config_dir", help="放置 *.json 設定檔的資料夾")
    parser.add_argument("--out-dir", default="results", help="結果輸出資料夾")
    parser.add_argument("--progress", default=PROGRESS_FILE, help="進度檔路徑")
    parser.add_argument("--retry-failed", action="store_true", help="重新執行先前失敗的設定檔")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        progress = run_all(args.config_dir, args.out_dir, args.progress, args.retry_failed)
    except KeyboardInterrupt:
        sys.exit(130)
    sys.exit(1 if progress["failed"] else 0)


if __name__ == "__main__":
    main()
