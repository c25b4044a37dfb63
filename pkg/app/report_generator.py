"""
實驗結果摘要報告
EvalRecord → 每個 (setting, pairing, method, size) 的 mean / std / count，
輸出 CSV (供繪圖) 與 Markdown 表格
"""

import logging
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np
import pandas as pd

from app.data_io import EvalRecord
from app.methods import DISPLAY_NAMES, METHODS

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ['setting', 'pairing', 'method', 'size', 'metric', 'mean', 'std', 'count']


def size_sort_key(size: str) -> Tuple[int, Tuple[int, ...]]:
    """'120' → (120,)；'1+3' → 先依 repetition 數、再依字典序"""
    parts = tuple(int(p) for p in str(size).split('+'))
    return (len(parts), parts) if '+' in str(size) else (1, parts)


def _method_rank(name: str) -> int:
    order = list(METHODS)
    return order.index(name) if name in order else len(order)


def summarize_records(records: Iterable[EvalRecord]) -> pd.DataFrame:
    """
    彙總結果

    std 為母體標準差 (ddof=0)，只有一筆時為 0
    """
    rows = [r.to_dict() for r in records]
    if not rows:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    df = pd.DataFrame(rows)
    grouped = (
        df.groupby(['setting', 'pairing', 'method', 'size', 'metric'], sort=False)['value']
        .agg(mean='mean', std=lambda v: float(np.std(v, ddof=0)), count='count')
        .reset_index()
    )
    grouped['_method'] = grouped['method'].map(_method_rank)
    grouped['_size'] = grouped['size'].map(size_sort_key)
    grouped = grouped.sort_values(['setting', 'pairing', '_method', '_size'], kind='mergesort')
    return grouped.drop(columns=['_method', '_size']).reset_index(drop=True)[SUMMARY_COLUMNS]


def format_markdown(summary: pd.DataFrame) -> str:
    """Markdown 表格 (mean ± std)"""
    lines = ["# 實驗結果摘要", ""]
    if summary.empty:
        lines.append("(沒有任何結果)")
        return "\n".join(lines) + "\n"

    for (setting, pairing), block in summary.groupby(['setting', 'pairing'], sort=False):
        metric = block['metric'].iloc[0]
        lines += [f"## {setting} / {pairing} ({metric} accuracy)", "",
                  "| 方法 | 訓練量 | 平均 ± 標準差 | 次數 |", "|---|---|---|---|"]
        for _, row in block.iterrows():
            name = DISPLAY_NAMES.get(row['method'], row['method'])
            lines.append(f"| {name} | {row['size']} | {row['mean']:.4f} ± {row['std']:.4f} | {int(row['count'])} |")
        lines.append("")
    return "\n".join(lines)


def format_table(summary: pd.DataFrame) -> str:
    """純文字表格 (stdout 用，內容固定不含時間)"""
    if summary.empty:
        return "(no records)"
    shown = summary.copy()
    shown['mean'] = shown['mean'].map(lambda v: f"{v:.4f}")
    shown['std'] = shown['std'].map(lambda v: f"{v:.4f}")
    return shown.to_string(index=False)


def write_summary(records: List[EvalRecord], out_dir) -> pd.DataFrame:
    """寫出 summary.csv 與 summary.md，回傳摘要表"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize_records(records)

    csv_path = out_dir / "summary.csv"
    summary.to_csv(csv_path, index=False, float_format='%.17g')
    logger.info(f"✅ 摘要 CSV: {csv_path}")

    md_path = out_dir / "summary.md"
    with open(md_path, 'w', encoding='utf-8') as f:
        f.write(format_markdown(summary))
    logger.info(f"✅ 摘要 Markdown: {md_path}")
    return summary
