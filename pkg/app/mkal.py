"""
MKAL: 多核自適應學習

K+1 個特徵空間 (目標 RBF + 每個 source 的分數 Linear 核) 上的結構化多類 hinge，
以 (2,p)-norm 正則化，透過隨機次梯度下降訓練 T 個 epoch。

更新方式 (線上 p-norm MKL 風格):
    θ_t = ((t−1)/t)·θ_{t−1} + (1/(λt))·(φ̄(x_i, y_i) − φ̄(x_i, r))   (違反邊界時)
    w_k = θ_k · (‖θ_k‖ / ‖θ‖_{2,q})^{q−2},  q = p/(p−1)
每個 epoch 結束時計算一次事後目標值，回傳目標值最低的係數。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from app.accel import HAVE_NUMBA, njit
from app.errors import DimensionMismatchError
from app.kernels import KernelSpec, gram, gram_cross
from app.lssvm import argmax_labels, resolve_classes
from app.transfer import SourceHypothesis

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MkalConfig:
    """p ∈ (1, 2]、epoch 數 T、正則化 λ、亂數種子"""
    p: float = 1.04
    epochs: int = 300
    lam: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 1.0 < float(self.p) <= 2.0:
            raise ValueError(f"p 必須在 (1, 2] 內，實際: {self.p}")
        if int(self.epochs) < 1:
            raise ValueError(f"epochs 必須 >= 1，實際: {self.epochs}")
        if not float(self.lam) > 0:
            raise ValueError(f"lambda 必須 > 0，實際: {self.lam}")

    @property
    def q(self) -> float:
        """對偶指數 q = p/(p−1)"""
        return self.p / (self.p - 1.0) if self.p < 2.0 else 2.0

    def to_dict(self) -> dict:
        return {'p': float(self.p), 'epochs': int(self.epochs), 'lambda': float(self.lam), 'seed': int(self.seed)}

    @classmethod
    def from_dict(cls, data: dict) -> "MkalConfig":
        return cls(data.get('p', 1.04), data.get('epochs', 300),
                   data.get('lambda', data.get('lam', 1e-3)), data.get('seed', 0))


@dataclass
class KernelBank:
    """
    K+1 個 Gram 矩陣: index 0 為目標特徵的 RBF，index k >= 1 為 source k 分數的 Linear 核

    訓練用為方形 (N×N)；交叉版本為 N×M (train × query)
    """
    grams: np.ndarray
    descriptors: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.grams = np.ascontiguousarray(np.asarray(self.grams, dtype=float))
        if self.grams.ndim != 3:
            raise DimensionMismatchError(f"KernelBank 必須是 (K+1, N, M) 張量，實際: {self.grams.shape}")

    @property
    def size(self) -> int:
        return self.grams.shape[0]

    @property
    def n_train(self) -> int:
        return self.grams.shape[1]

    def __len__(self) -> int:
        return self.size


def _descriptors(gamma: float, sources: Sequence[SourceHypothesis]) -> List[dict]:
    out = [{'kind': 'target', 'kernel': KernelSpec.rbf(gamma).to_dict()}]
    out += [{'kind': 'source', 'subject_id': s.subject_id, 'kernel': KernelSpec.linear().to_dict()}
            for s in sources]
    return out


def build_kernel_bank(X, sources: Sequence[SourceHypothesis], gamma: float,
                      classes: Optional[Sequence[int]] = None) -> KernelBank:
    """
    建立訓練用 kernel bank

    K = 0 時只有目標 RBF 一個核
    """
    X = np.asarray(X, dtype=float)
    grams = [gram(KernelSpec.rbf(gamma), X)]
    for source in sources:
        S = source.score_matrix(X, classes)
        grams.append(gram(KernelSpec.linear(), S))
    return KernelBank(np.stack(grams), _descriptors(gamma, sources))


def build_cross_bank(X_train, Z, sources: Sequence[SourceHypothesis], gamma: float,
                     classes: Optional[Sequence[int]] = None) -> KernelBank:
    """train × query 的交叉 kernel bank，順序與 build_kernel_bank 相同"""
    X_train = np.asarray(X_train, dtype=float)
    Z = np.asarray(Z, dtype=float)
    grams = [gram_cross(KernelSpec.rbf(gamma), X_train, Z)]
    for source in sources:
        grams.append(gram_cross(KernelSpec.linear(), source.score_matrix(X_train, classes),
                                source.score_matrix(Z, classes)))
    return KernelBank(np.stack(grams), _descriptors(gamma, sources))


@dataclass
class MkalModel:
    """係數張量 (kernel × 訓練樣本 × 類別) 與設定"""
    coef: np.ndarray
    classes: np.ndarray
    config: MkalConfig
    descriptors: List[dict] = field(default_factory=list)
    bank: Optional[KernelBank] = field(default=None, repr=False, compare=False)
    objectives: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n_kernels(self) -> int:
        return self.coef.shape[0]


# ============================================================
# SGD 核心 (numba 可用時 JIT 編譯)
# ============================================================

@njit(cache=True)
def _block_scales(Q, q, out):
    """由 ‖θ_k‖² (Q) 計算對偶映射倍率 (‖θ_k‖ / ‖θ‖_{2,q})^{q−2}"""
    n_k = Q.shape[0]
    max_norm = 0.0
    for k in range(n_k):
        v = np.sqrt(Q[k]) if Q[k] > 0.0 else 0.0
        out[k] = v
        if v > max_norm:
            max_norm = v
    if max_norm == 0.0:
        for k in range(n_k):
            out[k] = 0.0
        return
    total = 0.0
    for k in range(n_k):
        out[k] = out[k] / max_norm
        total += out[k] ** q
    total = total ** (1.0 / q)
    for k in range(n_k):
        if out[k] > 0.0:
            out[k] = (out[k] / total) ** (q - 2.0)
        else:
            out[k] = 0.0


@njit(cache=True)
def _epoch_objective(A, KA, Q, y, scale, lam, p):
    """事後目標值: λ/2 ‖w̄‖²_{2,p} + 平均結構化 hinge"""
    n_k, n, G = A.shape
    hinge = 0.0
    for i in range(n):
        correct = 0.0
        for k in range(n_k):
            correct += scale[k] * KA[k, i, y[i]]
        other = -np.inf
        for g in range(G):
            if g == y[i]:
                continue
            s = 0.0
            for k in range(n_k):
                s += scale[k] * KA[k, i, g]
            if s > other:
                other = s
        xi = 1.0 - (correct - other)
        if xi > 0.0:
            hinge += xi
    reg = 0.0
    for k in range(n_k):
        norm_k = scale[k] * (np.sqrt(Q[k]) if Q[k] > 0.0 else 0.0)
        reg += norm_k ** p
    reg = reg ** (2.0 / p) if reg > 0.0 else 0.0
    return 0.5 * lam * reg + hinge / n


@njit(cache=True)
def _run_epochs(grams, y, orders, lam, p, q, n_classes):
    n_k = grams.shape[0]
    n = grams.shape[1]
    G = n_classes
    epochs = orders.shape[0]

    A = np.zeros((n_k, n, G))
    KA = np.zeros((n_k, n, G))
    Q = np.zeros(n_k)
    scale = np.zeros(n_k)
    scores = np.zeros(G)
    sigma = 1.0

    best = np.zeros((n_k, n, G))
    best_obj = 1.0
    objectives = np.zeros(epochs)
    t = 0

    for epoch in range(epochs):
        for j in range(n):
            i = orders[epoch, j]
            t += 1
            _block_scales(Q, q, scale)
            for g in range(G):
                s = 0.0
                for k in range(n_k):
                    s += scale[k] * KA[k, i, g]
                scores[g] = sigma * s
            yi = y[i]
            r = -1
            for g in range(G):
                if g == yi:
                    continue
                if r < 0 or scores[g] > scores[r]:
                    r = g
            margin = scores[yi] - scores[r]

            # θ ← ((t−1)/t)·θ，以延遲倍率 sigma 表示
            if t > 1:
                sigma *= (t - 1.0) / t

            if margin < 1.0:
                e = 1.0 / (lam * t) / sigma
                for k in range(n_k):
                    Q[k] += 2.0 * e * (KA[k, i, yi] - KA[k, i, r]) + 2.0 * e * e * grams[k, i, i]
                    A[k, i, yi] += e
                    A[k, i, r] -= e
                    for m in range(n):
                        gv = e * grams[k, m, i]
                        KA[k, m, yi] += gv
                        KA[k, m, r] -= gv

        # epoch 結束: 吸收 sigma 並重新精確計算 Q，避免累積誤差
        for k in range(n_k):
            acc = 0.0
            for m in range(n):
                for g in range(G):
                    A[k, m, g] *= sigma
                    KA[k, m, g] *= sigma
                    acc += A[k, m, g] * KA[k, m, g]
            Q[k] = acc
        sigma = 1.0

        _block_scales(Q, q, scale)
        obj = _epoch_objective(A, KA, Q, y, scale, lam, p)
        objectives[epoch] = obj
        if obj < best_obj:
            best_obj = obj
            for k in range(n_k):
                for m in range(n):
                    for g in range(G):
                        best[k, m, g] = scale[k] * A[k, m, g]

    return best, objectives


def shuffle_orders(n: int, epochs: int, seed: int) -> np.ndarray:
    """每個 epoch 的樣本順序 (由 seed 決定)"""
    rng = np.random.default_rng(seed)
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def train_mkal(bank: KernelBank, labels, cfg: MkalConfig = MkalConfig(),
               classes: Optional[Sequence[int]] = None) -> MkalModel:
    """
    訓練 MKAL

    Args:
        bank: 訓練用 kernel bank (方形)
        labels: (N,) 類別標籤
        cfg: MkalConfig
        classes: 任務類別清單 (預設為出現於 labels 者)

    相同 (bank, labels, cfg) 保證得到相同的係數張量
    """
    labels = np.asarray(labels).astype(np.int64)
    n = bank.n_train
    if bank.grams.shape[2] != n:
        raise DimensionMismatchError(f"訓練用 kernel bank 必須是方形，實際: {bank.grams.shape}")
    if labels.shape[0] != n:
        raise DimensionMismatchError(f"labels 長度 {labels.shape[0]} 與 bank 大小 {n} 不符")
    if n < 2:
        raise ValueError("MKAL 需要至少 2 筆訓練資料")
    classes = resolve_classes(labels, classes)
    y = np.searchsorted(classes, labels).astype(np.int64)

    orders = shuffle_orders(n, int(cfg.epochs), cfg.seed)
    if not HAVE_NUMBA and n * cfg.epochs > 200_000:
        logger.warning("⚠️ 未安裝 numba，MKAL 以純 Python 迴圈執行，速度會很慢")
    coef, objectives = _run_epochs(bank.grams, y, orders, float(cfg.lam), float(cfg.p),
                                   float(cfg.q), len(classes))
    return MkalModel(coef, classes, cfg, list(bank.descriptors), bank, objectives)


def mkal_scores(model: MkalModel, cross_bank: KernelBank) -> np.ndarray:
    """類別分數 (M, G) = Σ_kernels Σ_train coef · crossGram"""
    if cross_bank.size != model.n_kernels or cross_bank.n_train != model.coef.shape[1]:
        raise DimensionMismatchError(
            f"cross bank 形狀 {cross_bank.grams.shape[:2]} 與模型 {model.coef.shape[:2]} 不符"
        )
    return np.einsum('kig,kim->mg', model.coef, cross_bank.grams)


def predict_mkal(model: MkalModel, cross_bank: KernelBank) -> np.ndarray:
    return argmax_labels(mkal_scores(model, cross_bank), model.classes)


def group_norms(model: MkalModel, bank: Optional[KernelBank] = None) -> np.ndarray:
    """各核區塊的 ‖w_k‖₂ (以 Gram 二次型計算)"""
    bank = bank if bank is not None else model.bank
    if bank is None:
        raise ValueError("group_norms 需要訓練用 kernel bank")
    sq = np.array([np.sum(model.coef[k] * (bank.grams[k] @ model.coef[k])) for k in range(model.n_kernels)])
    return np.sqrt(np.maximum(sq, 0.0))


def mkal_objective(model: MkalModel, bank: KernelBank, labels) -> float:
    """訓練目標值 (正則項 + 平均 hinge)；全零解的值為 1"""
    labels = np.asarray(labels).astype(np.int64)
    y = np.searchsorted(model.classes, labels)
    scores = mkal_scores(model, bank)
    n = scores.shape[0]
    correct = scores[np.arange(n), y]
    masked = scores.copy()
    masked[np.arange(n), y] = -np.inf
    hinge = np.maximum(0.0, 1.0 - (correct - masked.max(axis=1))).mean()
    norms = group_norms(model, bank)
    p = model.config.p
    reg = np.sum(norms ** p) ** (2.0 / p) if np.any(norms > 0) else 0.0
    return float(0.5 * model.config.lam * reg + hinge)


def block_entropy(norms) -> float:
    """區塊範數分佈的正規化熵 (0 = 完全集中於單一區塊)"""
    norms = np.asarray(norms, dtype=float)
    total = norms.sum()
    if norms.size < 2 or total <= 0:
        return 0.0
    prob = norms / total
    prob = prob[prob > 0]
    return float(-(prob * np.log(prob)).sum() / np.log(norms.size))
