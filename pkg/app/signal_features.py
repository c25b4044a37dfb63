"""
sEMG 特徵擷取模組 (向量化版)
原始訊號 → 滑動視窗 → MAV / VAR / WL / 平均 / MDWT 特徵 → 標準化
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import pywt

from app.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

SUBJECT_KINDS = ('intact', 'amputee')


class FeatureKind(str, Enum):
    """特徵種類 (封閉列舉)"""
    MAV = 'mav'
    VAR = 'var'
    WL = 'wl'
    AVG_MVW = 'avg'
    MDWT = 'mdwt'

    @classmethod
    def parse(cls, value: Union[str, "FeatureKind"]) -> "FeatureKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {'avg_mvw': 'avg', 'average': 'avg'}
        text = aliases.get(text, text)
        for kind in cls:
            if kind.value == text:
                return kind
        raise ValueError(f"未知的特徵種類: {value!r}，可用: {[k.value for k in cls]}")


@dataclass
class EmgRecording:
    """單一受試者的原始多通道訊號與逐樣本標籤"""
    samples: np.ndarray
    sampling_rate: float
    stimulus: np.ndarray
    repetition: np.ndarray
    subject_id: str
    subject_kind: str = 'intact'
    n_movements: Optional[int] = None
    n_repetitions: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        self.stimulus = np.asarray(self.stimulus).astype(np.int64)
        self.repetition = np.asarray(self.repetition).astype(np.int64)
        self.subject_id = str(self.subject_id)

        if self.samples.ndim != 2:
            raise ValueError(f"samples 必須是 time×channels 矩陣，實際維度: {self.samples.ndim}")
        n = self.samples.shape[0]
        if self.stimulus.shape != (n,) or self.repetition.shape != (n,):
            raise ValueError(
                f"stimulus/repetition 長度必須等於樣本數 {n}，"
                f"實際: {self.stimulus.shape}, {self.repetition.shape}"
            )
        if not self.sampling_rate > 0:
            raise ValueError(f"sampling_rate 必須 > 0，實際: {self.sampling_rate}")
        if self.subject_kind not in SUBJECT_KINDS:
            raise ValueError(f"subject_kind 必須是 {SUBJECT_KINDS}，實際: {self.subject_kind!r}")

        if self.n_movements is None:
            self.n_movements = int(self.stimulus.max()) if n else 0
        if self.n_repetitions is None:
            self.n_repetitions = int(self.repetition.max()) if n else 0
        if n:
            if self.stimulus.min() < 0 or self.stimulus.max() > self.n_movements:
                raise ValueError(f"stimulus 超出範圍 0..{self.n_movements}")
            if self.repetition.min() < 0 or self.repetition.max() > self.n_repetitions:
                raise ValueError(f"repetition 超出範圍 0..{self.n_repetitions}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class WindowSpec:
    """滑動視窗參數 (毫秒)"""
    length_ms: float = 200.0
    increment_ms: float = 10.0

    def to_samples(self, sampling_rate: float) -> tuple:
        """
        換算成樣本數

        Returns:
            (window_length, step) 皆為樣本數
        """
        if not 0 < self.increment_ms <= self.length_ms:
            raise ValueError(
                f"需滿足 0 < increment_ms <= length_ms，實際: {self.increment_ms}, {self.length_ms}"
            )
        length = int(round(self.length_ms * sampling_rate / 1000.0))
        step = int(round(self.increment_ms * sampling_rate / 1000.0))
        if length < 2:
            raise ValueError(f"視窗長度至少 2 個樣本，{self.length_ms} ms @ {sampling_rate} Hz = {length}")
        return length, max(step, 1)


@dataclass
class WindowSet:
    """已切好的視窗 (n_windows × length × channels) 與各視窗標籤"""
    windows: np.ndarray
    labels: np.ndarray
    repetitions: np.ndarray
    starts: np.ndarray

    @classmethod
    def from_array(cls, windows) -> "WindowSet":
        """由裸陣列建立 (標籤皆為 0)，方便單元測試與臨時計算"""
        arr = np.asarray(windows, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :, None]
        elif arr.ndim == 2:
            arr = arr[:, :, None]
        n = arr.shape[0]
        zeros = np.zeros(n, dtype=np.int64)
        return cls(arr, zeros, zeros.copy(), np.arange(n, dtype=np.int64))

    def __len__(self) -> int:
        return self.windows.shape[0]


@dataclass
class FeatureMatrix:
    """
    特徵矩陣: 所有學習器共用的資料單位

    row_ids 是擷取時指派的來源標記，用於檢查測試資料不會外洩到訓練流程
    """
    features: np.ndarray
    labels: np.ndarray
    repetitions: np.ndarray
    row_ids: Optional[np.ndarray] = None
    subject_id: str = ''

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.labels = np.asarray(self.labels).astype(np.int64)
        self.repetitions = np.asarray(self.repetitions).astype(np.int64)
        n = self.features.shape[0]
        if self.row_ids is None:
            self.row_ids = np.arange(n, dtype=np.int64)
        self.row_ids = np.asarray(self.row_ids).astype(np.int64)
        if not (len(self.labels) == len(self.repetitions) == len(self.row_ids) == n):
            raise ValueError(
                f"特徵/標籤/repetition/row_ids 列數不一致: "
                f"{n}, {len(self.labels)}, {len(self.repetitions)}, {len(self.row_ids)}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("特徵矩陣含有非有限值 (NaN/Inf)")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def take(self, index) -> "FeatureMatrix":
        """依布林遮罩或索引取子集 (保留 row_ids)"""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return FeatureMatrix(self.features[index], self.labels[index], self.repetitions[index],
                             self.row_ids[index], self.subject_id)

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("concat 需要至少一個 FeatureMatrix")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise DimensionMismatchError(f"特徵維度不一致: {sorted(dims)}")
        return FeatureMatrix(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.repetitions for p in parts]),
            np.concatenate([p.row_ids for p in parts]),
            parts[0].subject_id,
        )

    def to_frame(self) -> pd.DataFrame:
        """轉為長表格 (f0..f{d-1}, label, repetition, row_id)"""
        df = pd.DataFrame(self.features, columns=[f"f{j}" for j in range(self.dim)])
        df['label'] = self.labels
        df['repetition'] = self.repetitions
        df['row_id'] = self.row_ids
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, subject_id: str = '') -> "FeatureMatrix":
        required = {'label', 'repetition', 'row_id'}
        if not required.issubset(df.columns):
            raise ValueError(f"缺少必要欄位，需求: {required}, 實際: {df.columns.tolist()}")
        feature_cols = sorted((c for c in df.columns if c.startswith('f') and c[1:].isdigit()),
                              key=lambda c: int(c[1:]))
        return cls(df[feature_cols].to_numpy(dtype=float), df['label'].to_numpy(),
                   df['repetition'].to_numpy(), df['row_id'].to_numpy(), subject_id)


@dataclass
class Standardizer:
    """以訓練矩陣擬合的逐特徵 z-score 參數"""
    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


# ============================================================
# 視窗切分
# ============================================================

def _label_runs(stimulus: np.ndarray, repetition: np.ndarray) -> List[tuple]:
    """找出 (stimulus, repetition) 不變的最大連續區段 [start, stop)"""
    n = len(stimulus)
    if n == 0:
        return []
    change = np.flatnonzero((np.diff(stimulus) != 0) | (np.diff(repetition) != 0)) + 1
    bounds = np.concatenate([[0], change, [n]])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def segment_windows(rec: EmgRecording, spec: WindowSpec) -> WindowSet:
    """
    切出完全落在同一 (stimulus, repetition) 區段內的視窗

    Args:
        rec: 原始紀錄
        spec: 視窗參數

    Returns:
        依時間排序的 WindowSet；跨越標籤邊界的視窗直接捨棄，紀錄太短則為空
    """
    length, step = spec.to_samples(rec.sampling_rate)
    starts = []
    for a, b in _label_runs(rec.stimulus, rec.repetition):
        run_len = b - a
        if run_len >= length:
            starts.append(a + step * np.arange((run_len - length) // step + 1))

    if not starts:
        empty = np.zeros(0, dtype=np.int64)
        return WindowSet(np.zeros((0, length, rec.n_channels)), empty, empty.copy(), empty.copy())

    starts = np.concatenate(starts).astype(np.int64)
    # sliding_window_view 的視窗維度在最後: (T-L+1, C, L)
    view = np.lib.stride_tricks.sliding_window_view(rec.samples, length, axis=0)
    windows = np.ascontiguousarray(view[starts].transpose(0, 2, 1))
    return WindowSet(windows, rec.stimulus[starts].copy(), rec.repetition[starts].copy(), starts)


# ============================================================
# 特徵計算
# ============================================================

def _zscore_columns(values: np.ndarray) -> np.ndarray:
    """批次內逐欄 z-score，標準差為 0 的欄位輸出 0"""
    if values.shape[0] < 2:
        return np.zeros_like(values)
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    out = np.zeros_like(values)
    ok = std > 0
    out[:, ok] = (values[:, ok] - mean[ok]) / std[ok]
    return out


def _mvw_blocks(W: np.ndarray) -> np.ndarray:
    """未縮放的 [MAV | VAR | WL] 區塊，(n, 3C)"""
    mav = np.abs(W).mean(axis=1)
    var = W.var(axis=1, ddof=1)
    wl = np.abs(np.diff(W, axis=1)).sum(axis=1)
    return np.hstack([mav, var, wl])


def _average_blocks(z: np.ndarray) -> np.ndarray:
    c = z.shape[1] // 3
    return (z[:, :c] + z[:, c:2 * c] + z[:, 2 * c:]) / 3.0


def mdwt_min_length(wavelet: str = 'db7') -> int:
    return pywt.Wavelet(wavelet).dec_len


def _mdwt(windows: np.ndarray, wavelet: str, level: int) -> np.ndarray:
    min_len = mdwt_min_length(wavelet)
    if windows.shape[1] < min_len:
        raise ValueError(
            f"MDWT 需要視窗長度 >= {min_len} 個樣本 ({wavelet} 濾波器長度)，實際: {windows.shape[1]}"
        )
    with warnings.catch_warnings():
        # 短視窗搭配 3 層分解會觸發邊界效應警告，數值仍有定義
        warnings.simplefilter('ignore', UserWarning)
        coeffs = pywt.wavedec(windows, wavelet, level=level, axis=1)
    # coeffs = [cA_level, cD_level, ..., cD_1]，各自 (n, len_j, C)
    marginals = np.stack([np.abs(c).sum(axis=1) for c in coeffs], axis=2)
    n, channels, per_channel = marginals.shape
    return marginals.reshape(n, channels * per_channel)


def extract_features(windows: Union[WindowSet, np.ndarray], kind: Union[str, FeatureKind],
                     wavelet: str = 'db7', level: int = 3, subject_id: str = '') -> FeatureMatrix:
    """
    逐視窗、逐通道計算特徵

    Args:
        windows: WindowSet 或 (n, L, C) 陣列
        kind: 特徵種類
        wavelet / level: MDWT 參數

    Returns:
        FeatureMatrix，維度 d = C (MAV/VAR/WL/AVG) 或 C × (level+1) (MDWT)
    """
    if not isinstance(windows, WindowSet):
        windows = WindowSet.from_array(windows)
    kind = FeatureKind.parse(kind)
    W = windows.windows
    if len(windows) == 0:
        raise ValueError("extract_features 需要至少一個視窗")
    length = W.shape[1]
    if kind in (FeatureKind.VAR, FeatureKind.WL, FeatureKind.AVG_MVW) and length < 2:
        raise ValueError(f"{kind.value.upper()} 需要每個視窗至少 2 個樣本，實際: {length}")

    if kind == FeatureKind.MAV:
        feats = np.abs(W).mean(axis=1)
    elif kind == FeatureKind.VAR:
        feats = W.var(axis=1, ddof=1)
    elif kind == FeatureKind.WL:
        feats = np.abs(np.diff(W, axis=1)).sum(axis=1)
    elif kind == FeatureKind.AVG_MVW:
        feats = _average_blocks(_zscore_columns(_mvw_blocks(W)))
    else:
        feats = _mdwt(W, wavelet, level)

    return FeatureMatrix(feats, windows.labels, windows.repetitions,
                         np.arange(len(windows), dtype=np.int64), subject_id)


def feature_dim(kind: Union[str, FeatureKind], channels: int, level: int = 3) -> int:
    kind = FeatureKind.parse(kind)
    return channels * (level + 1 if kind == FeatureKind.MDWT else 1)


# ============================================================
# 資料列處理
# ============================================================

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def balance_rest(fm: FeatureMatrix, seed: int) -> FeatureMatrix:
    """
    將休息 (label 0) 視窗無放回均勻抽樣至「每個動作平均列數」

    非休息列完全不動；休息列保留原 repetition 編號；相同 seed 結果相同
    """
    rest_idx = np.flatnonzero(fm.labels == 0)
    move_idx = np.flatnonzero(fm.labels != 0)
    if rest_idx.size == 0:
        return fm
    if move_idx.size == 0:
        raise ValueError("balance_rest 需要至少一個動作類別")

    _, counts = np.unique(fm.labels[move_idx], return_counts=True)
    target = _round_half_up(counts.mean())
    if rest_idx.size <= target:
        return fm

    rng = np.random.default_rng(seed)
    kept_rest = rng.choice(rest_idx, size=target, replace=False)
    keep = np.sort(np.concatenate([kept_rest, move_idx]))
    logger.debug(f"balance_rest: 休息列 {rest_idx.size} → {target}")
    return fm.take(keep)


def drop_rest(fm: FeatureMatrix) -> FeatureMatrix:
    """移除休息列"""
    return fm.take(fm.labels != 0)


def subsample_regular(fm: FeatureMatrix, factor: int, offset: int = 0) -> FeatureMatrix:
    """以固定間隔抽樣: 保留 index ≡ offset (mod factor) 的列"""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor 必須 >= 1，實際: {factor}")
    if not 0 <= offset < factor:
        raise ValueError(f"offset 必須在 [0, {factor}) 內，實際: {offset}")
    if factor == 1:
        return fm
    return fm.take(np.arange(offset, fm.n_rows, factor))


def fit_standardizer(fm: FeatureMatrix) -> Standardizer:
    """以樣本標準差 (ddof=1) 擬合逐特徵 z-score"""
    if fm.n_rows == 0:
        raise ValueError("fit_standardizer 需要非空矩陣")
    mean = fm.features.mean(axis=0)
    if fm.n_rows > 1:
        std = fm.features.std(axis=0, ddof=1)
    else:
        std = np.zeros(fm.dim)
    std = np.where(np.isfinite(std), std, 0.0)
    return Standardizer(mean, std)


def apply_standardizer(std: Standardizer, fm: FeatureMatrix) -> FeatureMatrix:
    """套用 z-score；訓練時標準差為 0 的特徵一律映射為 0"""
    if fm.dim != std.dim:
        raise DimensionMismatchError(f"Standardizer 維度 {std.dim} 與矩陣維度 {fm.dim} 不符")
    ok = std.std > 0
    z = np.zeros_like(fm.features)
    z[:, ok] = (fm.features[:, ok] - std.mean[ok]) / std.std[ok]
    return FeatureMatrix(z, fm.labels, fm.repetitions, fm.row_ids, fm.subject_id)


def combine_mvw(std: Standardizer, fm: FeatureMatrix) -> FeatureMatrix:
    """
    以 std 逐型 z-score [MAV | VAR | WL] 區塊後取平均 (3C → C 維)

    std 應由訓練列擬合；以整批資料擬合時與 extract_features(kind=avg) 相同
    """
    if fm.dim % 3:
        raise DimensionMismatchError(f"MVW 區塊維度必須是 3 的倍數，實際: {fm.dim}")
    z = apply_standardizer(std, fm).features
    return FeatureMatrix(_average_blocks(z), fm.labels, fm.repetitions, fm.row_ids, fm.subject_id)


class FeatureExtractor:
    """視窗 + 特徵擷取的組合器"""

    def __init__(self, window: WindowSpec = WindowSpec(), kind: Union[str, FeatureKind] = FeatureKind.AVG_MVW,
                 wavelet: str = 'db7', level: int = 3):
        self.window = window
        self.kind = FeatureKind.parse(kind)
        self.wavelet = wavelet
        self.level = level

    @property
    def needs_fit(self) -> bool:
        """AVG 的逐型縮放參數須由訓練列擬合 (見 run_raw / finalize)"""
        return self.kind == FeatureKind.AVG_MVW

    def _empty(self, rec: EmgRecording, d: int) -> FeatureMatrix:
        logger.warning(f"⚠️ {rec.subject_id}: 紀錄短於一個視窗，沒有可用特徵")
        empty = np.zeros(0, dtype=np.int64)
        return FeatureMatrix(np.zeros((0, d)), empty, empty, empty, rec.subject_id)

    def run(self, rec: EmgRecording) -> FeatureMatrix:
        """
        紀錄 → FeatureMatrix

        紀錄短於一個視窗時回傳空矩陣 (不視為錯誤)
        """
        windows = segment_windows(rec, self.window)
        if len(windows) == 0:
            return self._empty(rec, feature_dim(self.kind, rec.n_channels, self.level))

        fm = extract_features(windows, self.kind, self.wavelet, self.level, subject_id=rec.subject_id)
        logger.info(f"✓ {rec.subject_id}: {fm.n_rows} 個視窗, {fm.dim} 維 {self.kind.value.upper()} 特徵")
        return fm

    def run_raw(self, rec: EmgRecording) -> FeatureMatrix:
        """同 run，但 AVG 回傳未縮放的 [MAV | VAR | WL] 區塊 (3C 維)，待 finalize 以訓練列縮放"""
        if not self.needs_fit:
            return self.run(rec)
        windows = segment_windows(rec, self.window)
        if len(windows) == 0:
            return self._empty(rec, 3 * rec.n_channels)
        if windows.windows.shape[1] < 2:
            raise ValueError(f"AVG 需要每個視窗至少 2 個樣本，實際: {windows.windows.shape[1]}")
        fm = FeatureMatrix(_mvw_blocks(windows.windows), windows.labels, windows.repetitions,
                           np.arange(len(windows), dtype=np.int64), rec.subject_id)
        logger.info(f"✓ {rec.subject_id}: {fm.n_rows} 個視窗, {fm.dim} 維 MVW 區塊 (待縮放)")
        return fm

    def finalize(self, fit_rows: FeatureMatrix, *parts: FeatureMatrix) -> List[FeatureMatrix]:
        """以 fit_rows 擬合 AVG 的逐型縮放並套用到 parts；其他種類原樣回傳"""
        if not self.needs_fit:
            return list(parts)
        std = fit_standardizer(fit_rows)
        return [combine_mvw(std, p) for p in parts]
