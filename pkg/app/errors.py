"""
領域例外定義
CLI 依例外類別名稱輸出可機器解析的錯誤行 (error=<ClassName>)
"""

import numpy as np


class HtlError(Exception):
    """本專案所有領域例外的共同基底"""


class SingularSystemError(HtlError, np.linalg.LinAlgError):
    """LS-SVM 擴增線性系統在加入 jitter 後仍為奇異"""


class DimensionMismatchError(HtlError, ValueError):
    """特徵維度或矩陣形狀不一致"""


class SchemaError(HtlError, ValueError):
    """資料容器或 manifest 格式錯誤"""

    def __init__(self, message: str, row: int = None, column: str = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row={row}")
        if column is not None:
            where.append(f"column={column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class RecordFormatError(HtlError, ValueError):
    """結果檔 (records.jsonl) 某一行無法解析"""

    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"第 {line_number} 行: {message}")


class GridSearchError(HtlError, RuntimeError):
    """所有格點皆訓練失敗"""

    def __init__(self, causes: dict):
        self.causes = dict(causes)
        detail = "; ".join(f"C={c:g},gamma={g:g}: {msg}" for (c, g), msg in self.causes.items())
        super().__init__(f"所有格點皆失敗 ({len(self.causes)} 點): {detail}")


class PairingError(HtlError, ValueError):
    """資料集無法滿足指定的 target/source 配對"""


class ModelFormatError(HtlError, ValueError):
    """模型檔版本或內容不支援"""
