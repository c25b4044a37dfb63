"""
實驗流程
三種設定 (original / optimized / realistic) × 三種配對 (ii / aa / ai)

流程:
    [階段 1/4] 特徵擷取與切分 (每位受試者)
    [階段 2/4] source 超參數與 source 模型
    [階段 3/4] 目標任務 (target × 訓練量 × repeat)，可平行
    [階段 4/4] 依固定順序合併 EvalRecord
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from app.data_io import Cohort, EvalRecord
from app.errors import PairingError
from app.evaluation import (
    CrossSubjectTable, CvPlan, GridSpec, SplitPlan, assert_disjoint_provenance,
    cross_subject_accuracy_table, enumerate_rep_subsets, get_metric, grid_search,
    select_reps, select_source_hp_original, split_by_repetition, subset_descriptor,
    tune_source_realistic,
)
from app.lssvm import HyperParams, train_ova
from app.methods import METHODS, MethodContext, make_method, method_factory, parse_methods
from app.mkal import MkalConfig
from app.signal_features import (
    EmgRecording, FeatureExtractor, FeatureKind, FeatureMatrix, WindowSpec, apply_standardizer,
    balance_rest, drop_rest, fit_standardizer, subsample_regular,
)
from app.transfer import BETA_ITERATIONS, SourceHypothesis

logger = logging.getLogger(__name__)

SETTINGS = ('original', 'optimized', 'realistic')
PAIRINGS = {
    'intact-intact': ('intact', 'intact'),
    'amputee-amputee': ('amputee', 'amputee'),
    'amputee-intact': ('amputee', 'intact'),
}
PAIRING_ALIASES = {'ii': 'intact-intact', 'aa': 'amputee-amputee', 'ai': 'amputee-intact'}
REST_POLICIES = ('balance', 'drop', 'keep')


def parse_pairing(value: str) -> str:
    text = str(value).strip().lower()
    text = PAIRING_ALIASES.get(text, text)
    if text not in PAIRINGS:
        raise ValueError(f"未知的配對: {value!r}，可用: {list(PAIRING_ALIASES)} 或 {list(PAIRINGS)}")
    return text


def task_seed(master: int, *parts) -> int:
    """由 master seed 與任務鍵穩定混合出的種子 (與排程順序無關)"""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode('utf-8')).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    state = np.random.SeedSequence([int(master) % (2 ** 32), *[int(w) for w in words]])
    return int(state.generate_state(1)[0])


@dataclass
class ExperimentPlan:
    """單次實驗的完整設定 (由設定檔 settings.<name> 建立)"""
    setting: str
    pairing: str
    methods: List[str]
    grid: GridSpec
    seed: int = 0
    sizes: Tuple[int, ...] = ()
    n_repeats: int = 1
    split: SplitPlan = SplitPlan()
    window: WindowSpec = WindowSpec()
    feature_kind: FeatureKind = FeatureKind.AVG_MVW
    wavelet: str = 'db7'
    level: int = 3
    rest_policy: str = 'balance'
    metric: str = 'balanced'
    train_subsample: int = 10
    tuning_subsample: int = 1
    cv_folds: int = 5
    fixed_hp: Optional[HyperParams] = None
    mkal: MkalConfig = MkalConfig()
    beta_iterations: int = BETA_ITERATIONS
    targets: Optional[List[str]] = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"未知的實驗設定: {self.setting!r}，可用: {SETTINGS}")
        self.pairing = parse_pairing(self.pairing)
        self.methods = parse_methods(self.methods)
        self.feature_kind = FeatureKind.parse(self.feature_kind)
        get_metric(self.metric)
        if self.rest_policy not in REST_POLICIES:
            raise ValueError(f"未知的 rest_policy: {self.rest_policy!r}，可用: {REST_POLICIES}")
        if self.setting != 'realistic' and not self.sizes:
            raise ValueError(f"{self.setting} 設定需要訓練量清單 (sizes)")
        if int(self.n_repeats) < 1:
            raise ValueError(f"n_repeats 必須 >= 1，實際: {self.n_repeats}")

    @classmethod
    def from_config(cls, config: dict, setting: str, pairing: str, methods=None, seed: int = 0,
                    **overrides) -> "ExperimentPlan":
        """
        Args:
            config: load_config() 的結果
            methods: None 表示使用該設定的預設方法
            overrides: 直接覆寫同名欄位 (例: sizes、n_repeats、grid)
        """
        if setting not in SETTINGS:
            raise ValueError(f"未知的實驗設定: {setting!r}，可用: {SETTINGS}")
        section = config['settings'][setting]
        include_mkal = setting != 'realistic' or bool(section.get('include_mkal', False))
        if methods is None:
            names = [m for m in METHODS if include_mkal or m != 'mkal']
        else:
            names = parse_methods(methods)
            if 'mkal' in names and not include_mkal:
                logger.warning("⚠️ realistic 設定未啟用 include_mkal，略過 MKAL")
                names = [m for m in names if m != 'mkal']

        sizes = ()
        if setting != 'realistic':
            s = section['sizes']
            sizes = tuple(range(int(s['start']), int(s['stop']) + 1, int(s['step'])))
        fixed = section.get('fixed_hp')
        mkal_cfg = config.get('mkal', {})
        kwargs = dict(
            setting=setting, pairing=pairing, methods=names, grid=GridSpec.from_config(section['grid']),
            seed=int(seed), sizes=sizes, n_repeats=int(section.get('n_repeats', 1)),
            split=SplitPlan.from_config(config),
            window=WindowSpec(config['window']['length_ms'], config['window']['increment_ms']),
            feature_kind=section.get('feature_kind', 'avg'),
            wavelet=config['mdwt']['wavelet'], level=int(config['mdwt']['level']),
            rest_policy=section.get('rest_policy', 'balance'), metric=section.get('metric', 'balanced'),
            train_subsample=int(section.get('train_subsample', 1)),
            tuning_subsample=int(section.get('tuning_subsample', 1)),
            cv_folds=int(section.get('cv_folds', 5)),
            fixed_hp=HyperParams.rbf(fixed['C'], fixed['gamma']) if fixed else None,
            mkal=MkalConfig(mkal_cfg.get('p', 1.04), mkal_cfg.get('epochs', 300), mkal_cfg.get('lambda', 1e-3)),
            beta_iterations=int(config.get('multikt', {}).get('iterations', BETA_ITERATIONS)),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def size_axis(self) -> List[Tuple[str, object]]:
        """[(size 描述, 內容)]: 樣本數 (original/optimized) 或 repetition 子集 (realistic)"""
        if self.setting == 'realistic':
            return [(subset_descriptor(s), s) for s in enumerate_rep_subsets(self.split.train_reps)]
        return [(str(n), n) for n in self.sizes]


@dataclass
class PreparedSubject:
    """
    已標準化的受試者資料

    train / test: 依 SplitPlan 切分，標準化參數只由 train 擬合
    pool: 全部 repetition (自身標準化)，realistic 設定中作為 source 時使用
    """
    subject_id: str
    kind: str
    train: FeatureMatrix
    test: FeatureMatrix
    pool: Optional[FeatureMatrix] = field(default=None, repr=False)


def _apply_rest_policy(fm: FeatureMatrix, policy: str, seed: int) -> FeatureMatrix:
    if policy == 'balance':
        return balance_rest(fm, seed)
    if policy == 'drop':
        return drop_rest(fm)
    return fm


def prepare_subject(rec: EmgRecording, plan: ExperimentPlan, with_pool: bool = False) -> PreparedSubject:
    """
    特徵擷取 → repetition 切分 → rest 處理 → 訓練資料抽樣 → 以訓練資料縮放與標準化

    AVG 的逐型 z-score 與最後的標準化都只由訓練列擬合；測試 repetition 不影響訓練特徵
    """
    with threadpool_limits(limits=1):
        extractor = FeatureExtractor(plan.window, plan.feature_kind, plan.wavelet, plan.level)
        fm = extractor.run_raw(rec)
        if fm.n_rows == 0:
            raise ValueError(f"{rec.subject_id}: 沒有任何特徵列")
        train, test = split_by_repetition(fm, plan.split)
        train = _apply_rest_policy(train, plan.rest_policy, task_seed(plan.seed, 'rest', rec.subject_id, 'train'))
        test = _apply_rest_policy(test, plan.rest_policy, task_seed(plan.seed, 'rest', rec.subject_id, 'test'))
        train = subsample_regular(train, plan.train_subsample)
        train, test = extractor.finalize(train, train, test)

        std = fit_standardizer(train)
        prepared = PreparedSubject(rec.subject_id, rec.subject_kind, apply_standardizer(std, train),
                                   apply_standardizer(std, test))
        if with_pool:
            pool = _apply_rest_policy(fm, plan.rest_policy, task_seed(plan.seed, 'rest', rec.subject_id, 'pool'))
            pool = subsample_regular(pool, plan.train_subsample)
            pool, = extractor.finalize(pool, pool)
            prepared.pool = apply_standardizer(fit_standardizer(pool), pool)
    return prepared


# ============================================================
# 角色配對
# ============================================================

def assign_roles(cohort: Cohort, plan: ExperimentPlan) -> Dict[str, List[str]]:
    """
    target → source 清單

    Raises:
        PairingError: 資料集沒有所需種類的受試者，或 source 數量不足
    """
    target_kind, source_kind = PAIRINGS[plan.pairing]
    targets = cohort.manifest.ids(target_kind)
    if plan.targets:
        unknown = [t for t in plan.targets if t not in targets]
        if unknown:
            raise PairingError(f"指定的目標 {unknown} 不是 {target_kind} 受試者")
        targets = [t for t in targets if t in plan.targets]
    if not targets:
        raise PairingError(f"{plan.pairing}: 資料集中沒有 {target_kind} 受試者")

    min_sources = 1 if plan.setting == 'realistic' else 2
    roles = {}
    for target in sorted(targets):
        sources = [s for s in sorted(cohort.manifest.ids(source_kind)) if s != target]
        if len(sources) < min_sources:
            raise PairingError(
                f"{plan.pairing}: 目標 {target} 只有 {len(sources)} 位 {source_kind} source "
                f"({plan.setting} 設定至少需要 {min_sources} 位)"
            )
        roles[target] = sources
    return roles


def task_classes(subjects: Dict[str, PreparedSubject]) -> np.ndarray:
    """整個實驗共用的類別清單 (所有受試者訓練標籤的聯集)"""
    return np.unique(np.concatenate([p.train.labels for p in subjects.values()]))


# ============================================================
# 單一任務
# ============================================================

@dataclass
class TargetTask:
    target: PreparedSubject
    sources: List[SourceHypothesis]
    size: str
    payload: object
    repeat: int
    fixed_hp: Optional[HyperParams] = None


def training_subset(task: TargetTask, plan: ExperimentPlan) -> FeatureMatrix:
    """original/optimized: 巢狀隨機前綴；realistic: repetition 子集"""
    train = task.target.train
    if plan.setting == 'realistic':
        return select_reps(train, task.payload)
    rng = np.random.default_rng(task_seed(plan.seed, plan.setting, task.target.subject_id, 'subset', task.repeat))
    order = rng.permutation(train.n_rows)
    return train.take(np.sort(order[:min(int(task.payload), train.n_rows)]))


def _tune(plan: ExperimentPlan, fm: FeatureMatrix, name: str, context: MethodContext, seed: int,
          fixed: Optional[HyperParams]) -> HyperParams:
    if plan.setting == 'original':
        return fixed
    grid = plan.grid if METHODS[name].uses_gamma else plan.grid.without_gamma()
    if plan.setting == 'optimized':
        return grid_search(fm, grid, CvPlan('shuffled', plan.cv_folds), method_factory(name, context),
                           seed, plan.metric)
    tuning = subsample_regular(fm, plan.tuning_subsample) if plan.tuning_subsample > 1 else fm
    return grid_search(tuning, grid, CvPlan('repetition'), method_factory(name, context), seed, plan.metric)
    tuning = subsample_regular(fm, plan.tuning_subsample) if plan.tuning_subsample > 1 else fm
    return grid_search(tuning, plan.grid, CvPlan('repetition'), method_factory(name, context), seed, plan.metric)


def run_task(task: TargetTask, plan: ExperimentPlan, classes: np.ndarray) -> List[EvalRecord]:
    """單一 (target, 訓練量, repeat) 下所有方法的評估"""
    metric = get_metric(plan.metric)
    target_id = task.target.subject_id
    records = []
    with threadpool_limits(limits=1):
        train = training_subset(task, plan)
        test = task.target.test
        assert_disjoint_provenance(train, test)
        assert all(s.subject_id != target_id for s in task.sources), "目標受試者不可作為 source"

        for name in plan.methods:
            seed = task_seed(plan.seed, plan.setting, target_id, name, task.size, task.repeat)
            context = MethodContext(task.sources, classes, MkalConfig(plan.mkal.p, plan.mkal.epochs,
                                                                      plan.mkal.lam, seed),
                                    plan.beta_iterations)
            hp = _tune(plan, train, name, context, seed, task.fixed_hp)
            method = make_method(name, hp, context).fit(train)
            value = metric(test.labels, method.predict(test.features))
            gamma = hp.kernel.gamma if METHODS[name].uses_gamma else None
            records.append(EvalRecord(plan.setting, plan.pairing, target_id, name, task.size, plan.metric,
                                      float(value), seed, {'C': hp.C, 'gamma': gamma}))
    return records


# ============================================================
# 主流程
# ============================================================

class ExperimentRunner:
    """依 ExperimentPlan 執行完整實驗"""

    def __init__(self, plan: ExperimentPlan, n_jobs: int = 1, progress: bool = False):
        self.plan = plan
        self.n_jobs = max(1, int(n_jobs))
        self.progress = progress
        self._source_cache: Dict[Tuple[str, float, float], SourceHypothesis] = {}

    def _parallel(self, func, items):
        if self.n_jobs == 1:
            return [func(item) for item in items]
        return Parallel(n_jobs=self.n_jobs)(delayed(func)(item) for item in items)

    def prepare(self, cohort: Cohort, subject_ids: Sequence[str], pool_ids: Sequence[str]):
        plan = self.plan
        ids = sorted(subject_ids)
        pool = set(pool_ids)
        prepared = self._parallel(lambda sid: prepare_subject(cohort.recordings[sid], plan, sid in pool), ids)
        return dict(zip(ids, prepared))

    def _source(self, subject: PreparedSubject, hp: HyperParams, classes, use_pool: bool) -> SourceHypothesis:
        key = (subject.subject_id, hp.C, hp.kernel.gamma)
        if key not in self._source_cache:
            data = subject.pool if use_pool else subject.train
            with threadpool_limits(limits=1):
                model = train_ova(data.features, data.labels, hp, classes)
            self._source_cache[key] = SourceHypothesis(model, subject.subject_id)
        return self._source_cache[key]

    def source_models(self, roles: Dict[str, List[str]], subjects: Dict[str, PreparedSubject],
                      classes: np.ndarray):
        """
        Returns:
            (target → source 模型清單, target → 目標方法使用的固定超參數)
        """
        plan = self.plan
        source_ids = sorted({s for sources in roles.values() for s in sources})
        sources_by_target, fixed_by_target = {}, {}

        if plan.setting == 'realistic':
            hps = self._parallel(
                lambda sid: tune_source_realistic(subjects[sid].pool, plan.grid,
                                                  task_seed(plan.seed, 'source-tuning', sid),
                                                  plan.tuning_subsample, plan.metric),
                source_ids,
            )
            source_hp = dict(zip(source_ids, hps))
            for sid in source_ids:
                logger.info(f"  ✓ source {sid}: C={source_hp[sid].C:g}, gamma={source_hp[sid].kernel.gamma:g}")
            for target, sources in roles.items():
                sources_by_target[target] = [self._source(subjects[s], source_hp[s], classes, True) for s in sources]
                fixed_by_target[target] = None
            return sources_by_target, fixed_by_target

        table: CrossSubjectTable = cross_subject_accuracy_table(
            {sid: subjects[sid].train for sid in source_ids}, plan.grid, classes, n_jobs=self.n_jobs,
        )
        for target, sources in roles.items():
            pool = {sid: subjects[sid].train for sid in sources}
            hp = select_source_hp_original(pool, plan.grid, excluded=target, table=table)
            logger.info(f"  ✓ target {target}: source 超參數 C={hp.C:g}, gamma={hp.kernel.gamma:g}")
            sources_by_target[target] = [self._source(subjects[s], hp, classes, False) for s in sources]
            fixed_by_target[target] = plan.fixed_hp or hp
        return sources_by_target, fixed_by_target

    def run(self, cohort: Cohort) -> List[EvalRecord]:
        plan = self.plan
        logger.info("=" * 60)
        logger.info(f"實驗: setting={plan.setting}, pairing={plan.pairing}, methods={plan.methods}, seed={plan.seed}")
        logger.info("=" * 60)

        roles = assign_roles(cohort, plan)
        source_ids = sorted({s for sources in roles.values() for s in sources})
        for target in sorted(roles):
            logger.debug(f"  target {target} ({cohort.kind_of(target)}) ← {len(roles[target])} 個 source")

        logger.info("[階段 1/4] 特徵擷取與切分")
        subjects = self.prepare(cohort, sorted(set(roles) | set(source_ids)),
                                source_ids if plan.setting == 'realistic' else [])
        classes = task_classes(subjects)
        logger.info(f"  ✓ {len(subjects)} 位受試者，類別 {classes.tolist()}")

        logger.info("[階段 2/4] source 模型")
        sources_by_target, fixed_by_target = self.source_models(roles, subjects, classes)

        logger.info("[階段 3/4] 目標任務")
        tasks = [
            TargetTask(subjects[target], sources_by_target[target], size, payload, repeat, fixed_by_target[target])
            for target in sorted(roles)
            for size, payload in plan.size_axis()
            for repeat in range(plan.n_repeats if plan.setting != 'realistic' else 1)
        ]
        iterator = tqdm(tasks, desc="tasks", disable=not self.progress)
        if self.n_jobs == 1:
            batches = [run_task(t, plan, classes) for t in iterator]
        else:
            batches = Parallel(n_jobs=self.n_jobs)(delayed(run_task)(t, plan, classes) for t in iterator)

        logger.info("[階段 4/4] 合併結果")
        records = [r for batch in batches for r in batch]
        logger.info(f"✓ 共 {len(records)} 筆評估結果")
        return records


def run_experiment(plan: ExperimentPlan, dataset: Cohort, n_jobs: int = 1, progress: bool = False) -> List[EvalRecord]:
    return ExperimentRunner(plan, n_jobs, progress).run(dataset)
