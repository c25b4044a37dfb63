"""
LS-SVM 基礎學習器 (對偶形式)

對偶系統 [[0, 1ᵀ], [1, K + I/C]] · [b; α] = [0; y] 以分塊消去求解:
    H = K + I/C,  u = H⁻¹1,  v = H⁻¹y,  b = 1ᵀv / 1ᵀu,  α = v − b·u
同一個 Cholesky 分解供所有 one-vs-all 子問題、留一法 (LOO) 與 MultiKT 共用
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from app.errors import DimensionMismatchError, SingularSystemError
from app.kernels import KernelSpec, gram, gram_cross

logger = logging.getLogger(__name__)

JITTER = 1e-10


@dataclass(frozen=True)
class HyperParams:
    """正則化參數 C 與核函數"""
    C: float
    kernel: KernelSpec = KernelSpec()

    def __post_init__(self):
        if not float(self.C) > 0:
            raise ValueError(f"C 必須 > 0，實際: {self.C}")
        object.__setattr__(self, 'C', float(self.C))

    @classmethod
    def rbf(cls, C: float, gamma: float) -> "HyperParams":
        return cls(C, KernelSpec.rbf(gamma))

    @classmethod
    def linear(cls, C: float) -> "HyperParams":
        return cls(C, KernelSpec.linear())

    def to_dict(self) -> dict:
        return {'C': self.C, 'kernel': self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "HyperParams":
        return cls(data['C'], KernelSpec.from_dict(data['kernel']))


class LssvmSystem:
    """
    H = K + I/C 的共用分解

    分解失敗時對角線加一次 1e-10 再試，仍失敗則拋出 SingularSystemError
    """

    def __init__(self, K: np.ndarray, C: float):
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise DimensionMismatchError(f"Gram 矩陣必須是方陣，實際: {K.shape}")
        self.n = K.shape[0]
        self.C = float(C)
        self.K = K
        H = K + np.eye(self.n) / self.C
        try:
            self._factor = cho_factor(H, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            logger.debug("Cholesky 分解失敗，加入 jitter 重試")
            try:
                self._factor = cho_factor(H + JITTER * np.eye(self.n), lower=True)
            except np.linalg.LinAlgError as e:
                raise SingularSystemError(f"擴增系統為奇異矩陣 (N={self.n}, C={self.C:g}): {e}") from e

        ones = np.ones(self.n)
        self.u = cho_solve(self._factor, ones)
        self.s = float(ones @ self.u)
        if not np.isfinite(self.s) or self.s <= 0:
            raise SingularSystemError(f"1ᵀH⁻¹1 = {self.s}，系統無法求解")
        self._P = None

    def solve(self, Y: np.ndarray):
        """
        求解一或多組目標

        Args:
            Y: (N,) 或 (N, G)

        Returns:
            (alpha, b)，形狀與 Y 對應
        """
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.n:
            raise DimensionMismatchError(f"目標長度 {Y.shape[0]} 與系統大小 {self.n} 不符")
        V = cho_solve(self._factor, Y)
        b = V.sum(axis=0) / self.s
        if Y.ndim == 1:
            alpha = V - b * self.u
            return alpha, float(b)
        alpha = V - np.outer(self.u, b)
        return alpha, b

    def alpha_operator(self) -> np.ndarray:
        """擴增矩陣反矩陣的 α 區塊 P = H⁻¹ − u uᵀ / (1ᵀu)，滿足 α = P y"""
        if self._P is None:
            H_inv = cho_solve(self._factor, np.eye(self.n))
            P = H_inv - np.outer(self.u, self.u) / self.s
            self._P = 0.5 * (P + P.T)
        return self._P

    def loo_diagonal(self) -> np.ndarray:
        return np.diag(self.alpha_operator()).copy()


@dataclass
class BinaryLssvm:
    """二元 LS-SVM: f(x) = Σ_j α_j K(x_j, x) + b"""
    X: np.ndarray
    alpha: np.ndarray
    b: float
    hp: HyperParams
    targets: Optional[np.ndarray] = None
    system: Optional[LssvmSystem] = field(default=None, repr=False, compare=False)

    def decision_function(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[0] == 0:
            return np.zeros(0)
        _check_dim(self.X, Z)
        return gram_cross(self.hp.kernel, Z, self.X) @ self.alpha + self.b


@dataclass
class OvaModel:
    """
    one-vs-all LS-SVM 集合

    各類別的二元模型共用訓練輸入與 Gram 分解；也是 source hypothesis 的表示
    """
    classes: np.ndarray
    X: np.ndarray
    alpha: np.ndarray
    bias: np.ndarray
    hp: HyperParams
    targets: Optional[np.ndarray] = None
    system: Optional[LssvmSystem] = field(default=None, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def binaries(self) -> List[BinaryLssvm]:
        return [
            BinaryLssvm(self.X, self.alpha[:, g], float(self.bias[g]), self.hp,
                        None if self.targets is None else self.targets[:, g], self.system)
            for g in range(self.n_classes)
        ]

    def decision_function(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        _check_dim(self.X, Z)
        return gram_cross(self.hp.kernel, Z, self.X) @ self.alpha + self.bias[None, :]


def _check_dim(X: np.ndarray, Z: np.ndarray):
    if Z.ndim != 2 or Z.shape[1] != X.shape[1]:
        raise DimensionMismatchError(f"查詢維度 {Z.shape[-1]} 與訓練維度 {X.shape[1]} 不符")


def _check_inputs(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise ValueError("訓練資料至少需要 1 筆")
    if not np.all(np.isfinite(X)):
        raise ValueError("訓練特徵含有非有限值 (NaN/Inf)")
    return X


def build_system(X: np.ndarray, hp: HyperParams) -> LssvmSystem:
    return LssvmSystem(gram(hp.kernel, X), hp.C)


def train_binary(X, y, hp: HyperParams, system: Optional[LssvmSystem] = None) -> BinaryLssvm:
    """
    訓練二元 LS-SVM

    Args:
        X: (N, d) 訓練輸入
        y: (N,) 目標，通常為 ±1 (允許全部同號)
        hp: 超參數
        system: 可重用的分解 (需對應相同 X 與 hp)
    """
    X = _check_inputs(X)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatchError(f"y 長度 {y.shape[0]} 與 X 列數 {X.shape[0]} 不符")
    system = system or build_system(X, hp)
    alpha, b = system.solve(y)
    return BinaryLssvm(X, alpha, b, hp, y.copy(), system)


def ova_targets(labels, classes) -> np.ndarray:
    """one-vs-all 目標矩陣: 類別 g 為 +1，其餘 −1"""
    labels = np.asarray(labels)
    classes = np.asarray(classes)
    return np.where(labels[:, None] == classes[None, :], 1.0, -1.0)


def resolve_classes(labels, classes: Optional[Sequence[int]] = None) -> np.ndarray:
    labels = np.asarray(labels).astype(np.int64)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError(f"one-vs-all 訓練需要至少 2 個類別，實際: {present.tolist()}")
    if classes is None:
        return present
    classes = np.unique(np.asarray(classes).astype(np.int64))
    missing = np.setdiff1d(present, classes)
    if missing.size:
        raise ValueError(f"標籤 {missing.tolist()} 不在類別清單 {classes.tolist()} 中")
    return classes


def train_ova(X, labels, hp: HyperParams, classes: Optional[Sequence[int]] = None,
              system: Optional[LssvmSystem] = None) -> OvaModel:
    """
    one-vs-all 訓練

    Args:
        classes: 任務的完整類別清單 (預設為訓練標籤中出現者)；
                 子集中缺席的類別仍會以全 −1 目標訓練
    """
    X = _check_inputs(X)
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape[0] != X.shape[0]:
        raise DimensionMismatchError(f"labels 長度 {labels.shape[0]} 與 X 列數 {X.shape[0]} 不符")
    classes = resolve_classes(labels, classes)
    Y = ova_targets(labels, classes)
    system = system or build_system(X, hp)
    alpha, bias = system.solve(Y)
    return OvaModel(classes, X, alpha, np.atleast_1d(bias), hp, Y, system)


def predict_scores(model, Z) -> np.ndarray:
    """BinaryLssvm → (M,)；OvaModel → (M, G)"""
    return model.decision_function(Z)


def argmax_labels(scores: np.ndarray, classes) -> np.ndarray:
    """逐列取最大分數；同分時取最小類別索引 (np.argmax 取第一個)"""
    classes = np.asarray(classes)
    if scores.shape[0] == 0:
        return np.zeros(0, dtype=classes.dtype)
    return classes[np.argmax(scores, axis=1)]


def predict_labels(model: OvaModel, Z) -> np.ndarray:
    return argmax_labels(model.decision_function(Z), model.classes)


def loo_scores(model: BinaryLssvm) -> np.ndarray:
    """
    閉式留一法預測: ỹ_i = y_i − α_i / P_ii

    等同於去掉樣本 i 重新訓練後在 x_i 上的預測
    """
    n = model.X.shape[0]
    if n < 2:
        raise ValueError("留一法需要至少 2 筆訓練資料")
    if model.targets is None:
        raise ValueError("模型未保留訓練目標，無法計算留一法分數")
    system = model.system or build_system(model.X, model.hp)
    d = system.loo_diagonal()
    return model.targets - model.alpha / d


def loo_scores_ova(model: OvaModel) -> np.ndarray:
    """所有類別一次計算的留一法分數 (N, G)"""
    n = model.X.shape[0]
    if n < 2:
        raise ValueError("留一法需要至少 2 筆訓練資料")
    if model.targets is None:
        raise ValueError("模型未保留訓練目標，無法計算留一法分數")
    system = model.system or build_system(model.X, model.hp)
    d = system.loo_diagonal()
    return model.targets - model.alpha / d[:, None]


def decision_residual(model: BinaryLssvm) -> np.ndarray:
    """訓練殘差 ξ_i = y_i − f(x_i)，最佳解滿足 α_i = C·ξ_i"""
    return model.targets - model.decision_function(model.X)
