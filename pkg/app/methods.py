"""
學習方法註冊表
四種方法 (No-Transfer / Prior / MultiKT / MKAL) 共用 fit(fm) / predict(X) 介面，
供 grid search、實驗流程與 CLI 使用
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.lssvm import HyperParams, predict_labels, train_ova
from app.mkal import MkalConfig, build_cross_bank, build_kernel_bank, predict_mkal, train_mkal
from app.signal_features import FeatureMatrix
from app.transfer import (
    BETA_ITERATIONS, SourceHypothesis, predict_multikt, predict_prior,
    train_multikt, train_prior,
)

logger = logging.getLogger(__name__)


@dataclass
class MethodContext:
    """方法訓練時共用的外部資訊 (source 模型、任務類別、MKAL/β 設定)"""
    sources: List[SourceHypothesis] = field(default_factory=list)
    classes: Optional[np.ndarray] = None
    mkal: MkalConfig = MkalConfig()
    beta_iterations: int = BETA_ITERATIONS

    @property
    def source_ids(self) -> List[str]:
        return [s.subject_id for s in self.sources]


class BaseMethod:
    """所有方法的共同介面"""
    name = ''
    needs_sources = False
    uses_gamma = True

    def __init__(self, hp: HyperParams, context: Optional[MethodContext] = None):
        self.hp = hp
        self.context = context or MethodContext()
        self.model = None
        if self.needs_sources and not self.context.sources:
            raise ValueError(f"{self.name} 需要至少一個 source hypothesis")

    def fit(self, fm: FeatureMatrix) -> "BaseMethod":
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def _require_fitted(self):
        if self.model is None:
            raise ValueError(f"{self.name} 尚未訓練")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(C={self.hp.C:g}, kernel={self.hp.kernel.variant}, gamma={self.hp.kernel.gamma})"


class NoTransfer(BaseMethod):
    """只用目標資料的 one-vs-all RBF LS-SVM"""
    name = 'notransfer'

    def fit(self, fm: FeatureMatrix) -> "NoTransfer":
        self.model = train_ova(fm.features, fm.labels, self.hp, self.context.classes)
        return self

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return predict_labels(self.model, X)


class Prior(BaseMethod):
    """Linear LS-SVM 建立在 source 分數上 (只使用 C)"""
    name = 'prior'
    needs_sources = True
    uses_gamma = False

    def fit(self, fm: FeatureMatrix) -> "Prior":
        self.model = train_prior(fm.features, fm.labels, self.context.sources, self.hp.C, self.context.classes)
        return self

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return predict_prior(self.model, X)


class MultiKt(BaseMethod):
    name = 'multikt'
    needs_sources = True

    def fit(self, fm: FeatureMatrix) -> "MultiKt":
        self.model = train_multikt(fm.features, fm.labels, self.context.sources, self.hp,
                                   classes=self.context.classes, iterations=self.context.beta_iterations)
        return self

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return predict_multikt(self.model, X)[0]


class Mkal(BaseMethod):
    """
    MKAL: 目標 RBF 核 + 每個 source 分數的 Linear 核

    λ 由 (C, N) 換算: λ = 1 / (C·N)
    """
    name = 'mkal'

    def __init__(self, hp: HyperParams, context: Optional[MethodContext] = None):
        super().__init__(hp, context)
        if hp.kernel.gamma is None:
            raise ValueError("MKAL 需要 RBF 核 (gamma)")
        self.X_train = None

    @staticmethod
    def lam_for(C: float, n: int) -> float:
        return 1.0 / (float(C) * max(int(n), 1))

    def fit(self, fm: FeatureMatrix) -> "Mkal":
        gamma = self.hp.kernel.gamma
        bank = build_kernel_bank(fm.features, self.context.sources, gamma, self.context.classes)
        base = self.context.mkal
        cfg = MkalConfig(base.p, base.epochs, self.lam_for(self.hp.C, fm.n_rows), base.seed)
        self.model = train_mkal(bank, fm.labels, cfg, self.context.classes)
        self.X_train = fm.features
        return self

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        cross = build_cross_bank(self.X_train, X, self.context.sources, self.hp.kernel.gamma,
                                 self.context.classes)
        return predict_mkal(self.model, cross)


METHODS: Dict[str, type] = {
    NoTransfer.name: NoTransfer,
    Prior.name: Prior,
    MultiKt.name: MultiKt,
    Mkal.name: Mkal,
}

DISPLAY_NAMES = {'notransfer': 'No-Transfer', 'prior': 'Prior', 'multikt': 'MultiKT', 'mkal': 'MKAL'}


def parse_methods(value) -> List[str]:
    """'notransfer,prior' 或 list → 依註冊順序排列、去重的方法名稱"""
    if isinstance(value, str):
        names = [v.strip().lower() for v in value.split(',') if v.strip()]
    else:
        names = [str(v).strip().lower() for v in value]
    unknown = [n for n in names if n not in METHODS]
    if unknown:
        raise ValueError(f"未知的方法: {unknown}，可用: {list(METHODS)}")
    if not names:
        raise ValueError("至少需要指定一個方法")
    return [n for n in METHODS if n in names]


def make_method(name: str, hp: HyperParams, context: Optional[MethodContext] = None) -> BaseMethod:
    name = str(name).lower()
    if name not in METHODS:
        raise ValueError(f"未知的方法: {name!r}，可用: {list(METHODS)}")
    return METHODS[name](hp, context)


def method_factory(name: str, context: Optional[MethodContext] = None):
    """回傳 hp → 未訓練方法 的建構函式 (grid search 使用)"""
    def build(hp: HyperParams) -> BaseMethod:
        return make_method(name, hp, context)

    return build


def requires_sources(names: Sequence[str]) -> bool:
    return any(METHODS[n].needs_sources for n in names)
