"""
假設遷移學習 (Hypothesis Transfer)

- MultiKT: 殘差 LS-SVM 學習 y − Σ_k β_{k,g} ŝ_{k,g}(x)，β 以留一法 hinge 上界逐類別最佳化
- Prior: 以 source 原始分數為特徵的 Linear LS-SVM
只使用 source 模型 (hypothesis)，不接觸 source 訓練資料
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from app.errors import DimensionMismatchError
from app.lssvm import (
    HyperParams, LssvmSystem, OvaModel, argmax_labels, build_system,
    ova_targets, resolve_classes, train_ova,
)

logger = logging.getLogger(__name__)

BETA_ITERATIONS = 300
_FEASIBILITY_TOL = 1e-12


@dataclass
class SourceHypothesis:
    """預先訓練好的 source 模型 (OvaModel) 與其受試者編號"""
    model: OvaModel
    subject_id: str

    @property
    def classes(self) -> np.ndarray:
        return self.model.classes

    def score_matrix(self, X, classes: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        原始 (未縮放) 分數 N×G

        Args:
            classes: 依此類別順序排列欄位 (預設為 source 自身的類別順序)
        """
        scores = self.model.decision_function(X)
        if classes is None:
            return scores
        classes = np.asarray(classes)
        index = np.searchsorted(self.model.classes, classes)
        index = np.clip(index, 0, len(self.model.classes) - 1)
        if not np.array_equal(self.model.classes[index], classes):
            raise DimensionMismatchError(
                f"source {self.subject_id} 類別 {self.model.classes.tolist()} 與任務類別 {classes.tolist()} 不符"
            )
        return scores[:, index]


def _require_sources(sources: Sequence[SourceHypothesis]):
    if not sources:
        raise ValueError("至少需要一個 source hypothesis (K >= 1)")


def source_tensor(sources: Sequence[SourceHypothesis], X, classes=None) -> np.ndarray:
    """(K, N, G) 的 source 分數張量"""
    _require_sources(sources)
    return np.stack([s.score_matrix(X, classes) for s in sources], axis=0)


def source_scores(sources: Sequence[SourceHypothesis], X, classes=None) -> np.ndarray:
    """
    水平串接各 source 的分數矩陣: 欄位 k·G + g 為 source k 的類別 g 分數

    Returns:
        N × (K·G)
    """
    T = source_tensor(sources, X, classes)
    K, N, G = T.shape
    return T.transpose(1, 0, 2).reshape(N, K * G)


@dataclass
class TransferWeights:
    """β 矩陣 (source × class)，非負且每一欄 2-norm ≤ 1"""
    beta: np.ndarray
    objectives: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if np.any(self.beta < 0):
            raise ValueError("β 必須非負")
        norms = np.linalg.norm(self.beta, axis=0)
        if np.any(norms > 1.0 + _FEASIBILITY_TOL):
            raise ValueError(f"每個類別的 ‖β‖₂ 必須 <= 1，實際最大值: {norms.max():.6g}")

    @classmethod
    def zeros(cls, n_sources: int, n_classes: int) -> "TransferWeights":
        return cls(np.zeros((n_sources, n_classes)))

    @property
    def shape(self):
        return self.beta.shape

    def total_weight(self) -> np.ndarray:
        """各 source 的總權重 Σ_g β_{k,g}"""
        return self.beta.sum(axis=1)


def project_beta(column: np.ndarray) -> np.ndarray:
    """投影至 {β >= 0, ‖β‖₂ <= 1}: 先截斷負值，超出單位球則縮放"""
    column = np.maximum(column, 0.0)
    norm = np.linalg.norm(column)
    if norm > 1.0:
        column = column / norm
        # 浮點誤差可能讓範數略大於 1
        norm = np.linalg.norm(column)
        if norm > 1.0:
            column = column / np.nextafter(norm, np.inf)
    return column


def loo_affine(system: LssvmSystem, y: np.ndarray, S: np.ndarray):
    """
    殘差模型的留一法預測對 β 為仿射: ỹ(β) = c0 + Gm·β

    Args:
        system: 目標資料的分解
        y: (N,) ±1 目標
        S: (N, K) 各 source 對此類別的分數

    Returns:
        (c0, Gm)
    """
    P = system.alpha_operator()
    d = np.diag(P)
    c0 = y - (P @ y) / d
    Gm = (P @ S) / d[:, None]
    return c0, Gm


def loo_objective(beta_col: np.ndarray, y: np.ndarray, c0: np.ndarray, Gm: np.ndarray) -> float:
    """留一法 hinge 總和: Σ max(0, 1 − y_i·ỹ_i(β))"""
    margins = y * (c0 + Gm @ beta_col)
    return float(np.maximum(0.0, 1.0 - margins).sum())


def _optimize_column(y, c0, Gm, iterations):
    beta = np.zeros(Gm.shape[1])
    best_beta = beta.copy()
    best_obj = loo_objective(beta, y, c0, Gm)
    history = [best_obj]
    for t in range(1, iterations + 1):
        margins = y * (c0 + Gm @ beta)
        active = margins < 1.0
        if not np.any(active):
            break
        grad = -(Gm[active].T @ y[active])
        beta = project_beta(beta - grad / np.sqrt(t))
        obj = loo_objective(beta, y, c0, Gm)
        history.append(obj)
        if obj < best_obj:
            best_obj, best_beta = obj, beta.copy()
    return best_beta, best_obj, history


def optimize_beta(X, labels, sources: Sequence[SourceHypothesis], hp: HyperParams,
                  classes: Optional[Sequence[int]] = None, iterations: int = BETA_ITERATIONS,
                  system: Optional[LssvmSystem] = None) -> TransferWeights:
    """
    逐類別以 projected subgradient 最小化留一法 hinge 上界

    步長 1/√t；從 β = 0 出發並保留目標值最低的迭代，因此結果不劣於 β = 0

    Returns:
        TransferWeights (K × G)，objectives 為每個類別的最終目標值
    """
    _require_sources(sources)
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).astype(np.int64)
    if X.shape[0] < 2:
        raise ValueError("β 最佳化需要至少 2 筆訓練資料 (留一法)")
    classes = resolve_classes(labels, classes)
    Y = ova_targets(labels, classes)
    system = system or build_system(X, hp)
    T = source_tensor(sources, X, classes)

    beta = np.zeros((len(sources), len(classes)))
    objectives = np.zeros(len(classes))
    for g in range(len(classes)):
        c0, Gm = loo_affine(system, Y[:, g], T[:, :, g].T)
        beta[:, g], objectives[g], _ = _optimize_column(Y[:, g], c0, Gm, iterations)

    logger.debug(f"β 最佳化完成: 各 source 總權重 {beta.sum(axis=1).round(4).tolist()}")
    return TransferWeights(beta, objectives)


@dataclass
class MultiKtModel:
    """MultiKT: 每個類別一個殘差 LS-SVM + β + source 參考"""
    residual: OvaModel
    weights: TransferWeights
    sources: List[SourceHypothesis]
    hp: HyperParams

    @property
    def classes(self) -> np.ndarray:
        return self.residual.classes

    def decision_function(self, Z) -> np.ndarray:
        scores = self.residual.decision_function(Z)
        if scores.shape[0] == 0:
            return scores
        T = source_tensor(self.sources, Z, self.classes)
        return scores + np.einsum('kg,kng->ng', self.weights.beta, T)


def train_multikt(X, labels, sources: Sequence[SourceHypothesis], hp: HyperParams,
                  beta: Optional[TransferWeights] = None, classes: Optional[Sequence[int]] = None,
                  iterations: int = BETA_ITERATIONS, system: Optional[LssvmSystem] = None) -> MultiKtModel:
    """
    訓練 MultiKT

    Args:
        beta: 給定的 β；None 時以 optimize_beta 求得

    β = 0 時與一般 one-vs-all LS-SVM 完全相同
    """
    _require_sources(sources)
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).astype(np.int64)
    classes = resolve_classes(labels, classes)
    system = system or build_system(X, hp)
    if beta is None:
        beta = optimize_beta(X, labels, sources, hp, classes, iterations, system)
    elif not isinstance(beta, TransferWeights):
        beta = TransferWeights(beta)
    if beta.shape != (len(sources), len(classes)):
        raise DimensionMismatchError(f"β 形狀 {beta.shape} 應為 {(len(sources), len(classes))}")

    Y = ova_targets(labels, classes)
    T = source_tensor(sources, X, classes)
    R = Y - np.einsum('kg,kng->ng', beta.beta, T)
    alpha, bias = system.solve(R)
    residual = OvaModel(classes, X, alpha, np.atleast_1d(bias), hp, R, system)
    return MultiKtModel(residual, beta, list(sources), hp)


def predict_multikt(model: MultiKtModel, Z):
    """
    Returns:
        (labels, scores)；類別分數 = 殘差分數 + Σ_k β_{k,g} ŝ_{k,g}(z)
    """
    scores = model.decision_function(Z)
    return argmax_labels(scores, model.classes), scores


@dataclass
class PriorModel:
    """Prior 基準: Linear LS-SVM 建立在 source 原始分數 (d = K·G) 之上"""
    ova: OvaModel
    sources: List[SourceHypothesis]

    @property
    def classes(self) -> np.ndarray:
        return self.ova.classes

    def decision_function(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[0] == 0:
            return np.zeros((0, len(self.classes)))
        return self.ova.decision_function(source_scores(self.sources, Z, self.classes))


def train_prior(X, labels, sources: Sequence[SourceHypothesis], C: float,
                classes: Optional[Sequence[int]] = None) -> PriorModel:
    _require_sources(sources)
    labels = np.asarray(labels).astype(np.int64)
    classes = resolve_classes(labels, classes)
    F = source_scores(sources, X, classes)
    ova = train_ova(F, labels, HyperParams.linear(C), classes)
    return PriorModel(ova, list(sources))


def predict_prior(model: PriorModel, Z) -> np.ndarray:
    return argmax_labels(model.decision_function(Z), model.classes)
