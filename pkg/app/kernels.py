"""
核函數與 Gram 矩陣
所有學習器共用；距離以 ‖x‖² + ‖z‖² − 2⟨x, z⟩ 批次計算
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.errors import DimensionMismatchError

RBF = 'rbf'
LINEAR = 'linear'


@dataclass(frozen=True)
class KernelSpec:
    """RBF(gamma) 或 Linear"""
    variant: str = RBF
    gamma: Optional[float] = 1.0

    def __post_init__(self):
        variant = str(self.variant).lower()
        object.__setattr__(self, 'variant', variant)
        if variant == RBF:
            if self.gamma is None or not float(self.gamma) > 0:
                raise ValueError(f"RBF gamma 必須 > 0，實際: {self.gamma}")
            object.__setattr__(self, 'gamma', float(self.gamma))
        elif variant == LINEAR:
            object.__setattr__(self, 'gamma', None)
        else:
            raise ValueError(f"未知的核函數: {self.variant!r}")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(RBF, gamma)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(LINEAR, None)

    def to_dict(self) -> dict:
        return {'variant': self.variant, 'gamma': self.gamma}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(data['variant'], data.get('gamma'))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatchError(f"輸入必須是 2 維矩陣，實際維度: {X.ndim}")
    return X


def squared_distances(X, Z) -> np.ndarray:
    """成對平方距離，數值誤差造成的微小負值截為 0"""
    X = _as_matrix(X)
    Z = _as_matrix(Z)
    if X.shape[1] != Z.shape[1]:
        raise DimensionMismatchError(f"維度不一致: {X.shape[1]} vs {Z.shape[1]}")
    xx = np.einsum('ij,ij->i', X, X)
    zz = np.einsum('ij,ij->i', Z, Z)
    d2 = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kernel_eval(spec: KernelSpec, x, x_prime) -> float:
    """單點核函數值: RBF = exp(−γ‖x−x′‖²)，Linear = ⟨x, x′⟩"""
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != x_prime.shape:
        raise DimensionMismatchError(f"維度不一致: {x.shape[0]} vs {x_prime.shape[0]}")
    if spec.variant == LINEAR:
        return float(x @ x_prime)
    diff = x - x_prime
    return float(np.exp(-spec.gamma * (diff @ diff)))


def gram_cross(spec: KernelSpec, X, Z) -> np.ndarray:
    """rows(X) × rows(Z) 的交叉 Gram 矩陣"""
    X = _as_matrix(X)
    Z = _as_matrix(Z)
    if X.shape[1] != Z.shape[1]:
        raise DimensionMismatchError(f"維度不一致: {X.shape[1]} vs {Z.shape[1]}")
    if spec.variant == LINEAR:
        return X @ Z.T
    return np.exp(-spec.gamma * squared_distances(X, Z))


def gram(spec: KernelSpec, X) -> np.ndarray:
    """方形 Gram 矩陣 (強制對稱；RBF 對角線為 1)"""
    X = _as_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("gram 需要非空輸入")
    K = gram_cross(spec, X, X)
    K = 0.5 * (K + K.T)
    if spec.variant == RBF:
        np.fill_diagonal(K, 1.0)
    return K
