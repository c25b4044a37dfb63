"""
評估工具: 資料切分、交叉驗證、評估指標、超參數搜尋

所有隨機性都由呼叫端傳入的 seed 決定；grid search 的各格點可平行評估，
結果依格點順序合併，與平行度無關
"""

import itertools
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import accuracy_score, balanced_accuracy_score
from sklearn.model_selection import KFold, LeaveOneGroupOut
from threadpoolctl import threadpool_limits

from app.errors import GridSearchError, HtlError
from app.lssvm import HyperParams, predict_labels, train_ova
from app.methods import method_factory
from app.signal_features import FeatureMatrix, subsample_regular

logger = logging.getLogger(__name__)

SINGLE_REP_FOLDS = 5
MAX_REPETITIONS = 8

Fold = Tuple[np.ndarray, np.ndarray]


# ============================================================
# 切分計畫
# ============================================================

@dataclass(frozen=True)
class SplitPlan:
    """訓練/測試 repetition 集合 (預設 {1,3,4,6} / {2,5})"""
    train_reps: Tuple[int, ...] = (1, 3, 4, 6)
    test_reps: Tuple[int, ...] = (2, 5)

    def __post_init__(self):
        train = tuple(sorted({int(r) for r in self.train_reps}))
        test = tuple(sorted({int(r) for r in self.test_reps}))
        if not train or not test:
            raise ValueError("train_reps 與 test_reps 都不可為空")
        overlap = set(train) & set(test)
        if overlap:
            raise ValueError(f"train/test repetition 重疊: {sorted(overlap)}")
        object.__setattr__(self, 'train_reps', train)
        object.__setattr__(self, 'test_reps', test)

    @classmethod
    def from_config(cls, config: dict) -> "SplitPlan":
        split = config.get('split', {})
        return cls(tuple(split.get('train_reps', (1, 3, 4, 6))), tuple(split.get('test_reps', (2, 5))))


def split_by_repetition(fm: FeatureMatrix, plan: SplitPlan = SplitPlan()) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """依 repetition 分流；不屬於任何一組的列直接捨棄"""
    train = fm.take(np.isin(fm.repetitions, plan.train_reps))
    test = fm.take(np.isin(fm.repetitions, plan.test_reps))
    if train.n_rows == 0:
        raise ValueError(f"{fm.subject_id}: repetition {list(plan.train_reps)} 沒有任何訓練列")
    if test.n_rows == 0:
        raise ValueError(f"{fm.subject_id}: repetition {list(plan.test_reps)} 沒有任何測試列")
    return train, test


def enumerate_rep_subsets(train_reps: Sequence[int]) -> List[Tuple[int, ...]]:
    """所有非空子集，依 (大小, 字典序) 排列"""
    reps = sorted({int(r) for r in train_reps})
    if not reps:
        raise ValueError("enumerate_rep_subsets 需要至少一個 repetition")
    if len(reps) > MAX_REPETITIONS:
        raise ValueError(f"repetition 數量上限為 {MAX_REPETITIONS}，實際: {len(reps)}")
    return [combo for size in range(1, len(reps) + 1) for combo in itertools.combinations(reps, size)]


def subset_descriptor(subset: Sequence[int]) -> str:
    """(1, 3) → '1+3'"""
    return '+'.join(str(int(r)) for r in subset)


def select_reps(fm: FeatureMatrix, subset: Sequence[int]) -> FeatureMatrix:
    return fm.take(np.isin(fm.repetitions, list(subset)))


# ============================================================
# 交叉驗證
# ============================================================

def kfold_by_repetition(fm: FeatureMatrix, seed: int = 0) -> List[Fold]:
    """
    每個 repetition 一個 fold；只有一個 repetition 時改為 5-fold (打亂後切分)

    Returns:
        [(train_idx, test_idx), ...]
    """
    reps = np.unique(fm.repetitions)
    if reps.size == 0:
        raise ValueError("kfold_by_repetition 需要至少一個 repetition")
    if reps.size == 1:
        return kfold_shuffled(fm, SINGLE_REP_FOLDS, seed)
    splitter = LeaveOneGroupOut()
    return [(tr, te) for tr, te in splitter.split(fm.features, fm.labels, groups=fm.repetitions)]


def kfold_shuffled(fm: FeatureMatrix, n_splits: int = SINGLE_REP_FOLDS, seed: int = 0) -> List[Fold]:
    """打亂後的 k-fold"""
    if fm.n_rows < n_splits:
        raise ValueError(f"{n_splits}-fold 需要至少 {n_splits} 筆資料，實際: {fm.n_rows}")
    splitter = KFold(n_splits=n_splits, shuffle=True, random_state=int(seed) % (2 ** 32))
    return [(tr, te) for tr, te in splitter.split(fm.features)]


@dataclass(frozen=True)
class CvPlan:
    """
    kind:
        shuffled   → n_splits-fold 打亂切分
        repetition → 每個 repetition 一個 fold (單一 repetition 時退回 5-fold)
    """
    kind: str = 'shuffled'
    n_splits: int = 5

    def __post_init__(self):
        if self.kind not in ('shuffled', 'repetition'):
            raise ValueError(f"未知的 CV 方式: {self.kind!r}")
        if int(self.n_splits) < 2:
            raise ValueError(f"n_splits 必須 >= 2，實際: {self.n_splits}")

    def folds(self, fm: FeatureMatrix, seed: int = 0) -> List[Fold]:
        if self.kind == 'repetition':
            return kfold_by_repetition(fm, seed)
        return kfold_shuffled(fm, int(self.n_splits), seed)


# ============================================================
# 評估指標
# ============================================================

def _check_pair(truth, predicted):
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape:
        raise ValueError(f"truth 與 predicted 長度不一致: {truth.shape} vs {predicted.shape}")
    if truth.size == 0:
        raise ValueError("評估指標需要非空輸入")
    return truth, predicted


def balanced_accuracy(truth, predicted) -> float:
    """truth 中出現之類別的 recall 平均 (不加權)"""
    truth, predicted = _check_pair(truth, predicted)
    with warnings.catch_warnings():
        # predicted 含 truth 沒有的類別時 sklearn 會警告，這些類別不計入平均
        warnings.simplefilter('ignore', UserWarning)
        return float(balanced_accuracy_score(truth, predicted))


def standard_accuracy(truth, predicted) -> float:
    truth, predicted = _check_pair(truth, predicted)
    return float(accuracy_score(truth, predicted))


METRICS: Dict[str, Callable] = {
    'balanced': balanced_accuracy,
    'standard': standard_accuracy,
}


def get_metric(name: str) -> Callable:
    if name not in METRICS:
        raise ValueError(f"未知的評估指標: {name!r}，可用: {list(METRICS)}")
    return METRICS[name]


# ============================================================
# Grid search
# ============================================================

@dataclass(frozen=True)
class GridSpec:
    """(C, γ) 格點"""
    C: Tuple[float, ...]
    gamma: Tuple[float, ...]

    def __post_init__(self):
        C = tuple(float(c) for c in self.C)
        gamma = tuple(float(g) for g in self.gamma)
        if not C or not gamma:
            raise ValueError("grid 的 C 與 gamma 都不可為空")
        if min(C) <= 0 or min(gamma) <= 0:
            raise ValueError("grid 的所有 C 與 gamma 都必須 > 0")
        object.__setattr__(self, 'C', C)
        object.__setattr__(self, 'gamma', gamma)

    @classmethod
    def from_config(cls, grid: Mapping) -> "GridSpec":
        return cls(tuple(grid['C']), tuple(grid['gamma']))

    def without_gamma(self) -> "GridSpec":
        """只調 C 的方法用: γ 軸縮成第一個值"""
        return GridSpec(self.C, self.gamma[:1])

    def points(self) -> List[Tuple[float, float]]:
        return [(c, g) for c in self.C for g in self.gamma]

    def __len__(self) -> int:
        return len(self.C) * len(self.gamma)


def choose_best(scores: Mapping[Tuple[float, float], float]) -> Tuple[float, float]:
    """最高分者；同分時取較小 C，再取較小 γ"""
    if not scores:
        raise ValueError("choose_best 需要至少一個格點分數")
    return min(scores, key=lambda point: (-scores[point], point[0], point[1]))


def cv_score(fm: FeatureMatrix, folds: Sequence[Fold], build: Callable, metric: Callable) -> float:
    """各 fold 訓練後在驗證 fold 上的平均指標"""
    values = []
    for train_idx, test_idx in folds:
        method = build().fit(fm.take(train_idx))
        valid = fm.take(test_idx)
        values.append(metric(valid.labels, method.predict(valid.features)))
    return float(np.mean(values))


_RECOVERABLE = (HtlError, ValueError, np.linalg.LinAlgError)


def _score_point(fm, folds, factory, point, metric):
    with threadpool_limits(limits=1):
        try:
            return cv_score(fm, folds, lambda: factory(HyperParams.rbf(*point)), metric), None
        except _RECOVERABLE as e:
            return None, f"{type(e).__name__}: {e}"


def grid_scores(fm: FeatureMatrix, grid: GridSpec, cv_plan: CvPlan, factory: Callable,
                seed: int = 0, metric: str = 'balanced', n_jobs: int = 1):
    """
    評估所有格點

    Returns:
        (scores, causes): 成功格點的 CV 分數，以及失敗格點的錯誤訊息
    """
    metric_fn = get_metric(metric)
    folds = cv_plan.folds(fm, seed)
    points = grid.points()
    if n_jobs == 1:
        results = [_score_point(fm, folds, factory, p, metric_fn) for p in points]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_score_point)(fm, folds, factory, p, metric_fn) for p in points)
    scores, causes = {}, {}
    for point, (score, cause) in zip(points, results):
        if cause is None:
            scores[point] = score
        else:
            causes[point] = cause
    return scores, causes


def grid_search(fm: FeatureMatrix, grid: GridSpec, cv_plan: CvPlan, factory: Callable,
                seed: int = 0, metric: str = 'balanced', n_jobs: int = 1) -> HyperParams:
    """
    窮舉 (C, γ) 格點，回傳 CV 分數最高者

    Args:
        fm: 調參用訓練資料
        factory: hp → 未訓練方法 (見 app.methods.method_factory)
        seed: CV 切分種子

    Raises:
        GridSearchError: 所有格點都訓練失敗
    """
    scores, causes = grid_scores(fm, grid, cv_plan, factory, seed, metric, n_jobs)
    if causes:
        logger.debug(f"grid search: {len(causes)}/{len(grid)} 個格點失敗")
    if not scores:
        raise GridSearchError(causes)
    C, gamma = choose_best(scores)
    return HyperParams.rbf(C, gamma)


# ============================================================
# Source 超參數
# ============================================================

@dataclass
class CrossSubjectTable:
    """
    accuracy[p, i, j] = 格點 p 下，以受試者 i 的訓練資料訓練、在受試者 j 上的 balanced accuracy

    對角線 (i == j) 為 NaN
    """
    subject_ids: List[str]
    points: List[Tuple[float, float]]
    accuracy: np.ndarray


def _cross_row(trainer: FeatureMatrix, testers: Sequence[FeatureMatrix], point, metric_fn, classes):
    with threadpool_limits(limits=1):
        try:
            model = train_ova(trainer.features, trainer.labels, HyperParams.rbf(*point), classes)
        except _RECOVERABLE as e:
            logger.debug(f"cross-subject C={point[0]:g}, gamma={point[1]:g} 訓練失敗: {e}")
            return np.full(len(testers), np.nan)
        return np.array([metric_fn(t.labels, predict_labels(model, t.features)) for t in testers])


def cross_subject_accuracy_table(subjects: Mapping[str, FeatureMatrix], grid: GridSpec,
                                 classes: Optional[Sequence[int]] = None, metric: str = 'balanced',
                                 n_jobs: int = 1) -> CrossSubjectTable:
    """每個格點、每位受試者訓練一次，在其餘受試者上評估"""
    ids = sorted(subjects)
    points = grid.points()
    metric_fn = get_metric(metric)
    tasks = [(p, i) for p in range(len(points)) for i in range(len(ids))]

    def job(p, i):
        testers = [subjects[ids[j]] for j in range(len(ids))]
        return _cross_row(subjects[ids[i]], testers, points[p], metric_fn, classes)

    if n_jobs == 1:
        rows = [job(p, i) for p, i in tasks]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(job)(p, i) for p, i in tasks)

    accuracy = np.full((len(points), len(ids), len(ids)), np.nan)
    for (p, i), row in zip(tasks, rows):
        accuracy[p, i] = row
        accuracy[p, i, i] = np.nan
    return CrossSubjectTable(ids, points, accuracy)


def select_source_hp_original(subjects: Mapping[str, FeatureMatrix], grid: GridSpec,
                              excluded: Optional[str] = None,
                              table: Optional[CrossSubjectTable] = None,
                              classes: Optional[Sequence[int]] = None, n_jobs: int = 1) -> HyperParams:
    """
    選出「非目標受試者之間交叉準確率平均」最高的格點

    Args:
        subjects: 受試者 → 標準化後的訓練資料
        excluded: 目標受試者 (其資料完全不參與)
        table: 事先算好的 cross-subject 表 (可重複用於不同目標)
    """
    keep = [s for s in sorted(subjects) if s != excluded]
    if len(keep) < 2:
        raise ValueError(f"source 超參數選擇需要至少 2 位非目標受試者，實際: {len(keep)}")
    if table is None:
        table = cross_subject_accuracy_table({s: subjects[s] for s in keep}, grid, classes, n_jobs=n_jobs)
    index = [table.subject_ids.index(s) for s in keep]
    sub = table.accuracy[:, index][:, :, index]

    scores = {}
    for p, point in enumerate(table.points):
        values = sub[p][~np.eye(len(index), dtype=bool)]
        if np.all(np.isnan(values)):
            continue
        scores[point] = float(np.nanmean(values))
    if not scores:
        raise GridSearchError({point: "所有受試者組合皆訓練失敗" for point in table.points})
    C, gamma = choose_best(scores)
    return HyperParams.rbf(C, gamma)


def tune_source_realistic(fm_all: FeatureMatrix, grid: GridSpec, seed: int = 0, tuning_subsample: int = 4,
                          metric: str = 'standard', n_jobs: int = 1) -> HyperParams:
    """
    source 受試者個別調參: 所有 repetition 上的 by-repetition CV (調參資料額外 4 倍抽樣)
    """
    tuning = subsample_regular(fm_all, tuning_subsample) if tuning_subsample > 1 else fm_all
    return grid_search(tuning, grid, CvPlan('repetition'), method_factory('notransfer'),
                       seed, metric, n_jobs)


# ============================================================
# 資料外洩檢查
# ============================================================

def assert_disjoint_provenance(train: FeatureMatrix, test: FeatureMatrix):
    """同一受試者的訓練列與測試列不可共用 row_id"""
    if train.subject_id and test.subject_id and train.subject_id != test.subject_id:
        return
    leaked = np.intersect1d(train.row_ids, test.row_ids)
    if leaked.size:
        raise AssertionError(f"{test.subject_id}: {leaked.size} 筆測試資料進入訓練流程 (例: row_id={leaked[0]})")
