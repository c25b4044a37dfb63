"""
命令列介面
子命令: synth / features / train / eval / grid / experiment / summary

設定優先順序: 內建預設值 < --config YAML < 命令列旗標
stdout 只輸出可機器解析的結果；日誌與進度條輸出至 stderr
錯誤時輸出單行 `error=<ClassName> message=<text>` 並以 1 結束；用法錯誤以 2 結束
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from app.config import default_n_jobs, deep_merge, load_config, setup_logging
from app.data_io import (
    features_pending_mvw, load_cohort, load_features, load_records, save_cohort, save_features, save_records,
)
from app.errors import GridSearchError, HtlError, ModelFormatError
from app.evaluation import (
    CvPlan, GridSpec, SplitPlan, choose_best, get_metric, grid_scores,
)
from app.experiment import SETTINGS, ExperimentPlan, PAIRING_ALIASES, run_experiment
from app.lssvm import HyperParams
from app.methods import METHODS, MethodContext, make_method, method_factory, requires_sources
from app.mkal import MkalConfig
from app.model_store import StoredModel, load_model, load_source_dir, model_summary, save_model
from app.report_generator import format_table, summarize_records, write_summary
from app.signal_features import (
    FeatureExtractor, FeatureKind, FeatureMatrix, WindowSpec, apply_standardizer, balance_rest,
    combine_mvw, drop_rest, fit_standardizer, subsample_regular,
)
from app.synthetic import SynthConfig, generate_synthetic_cohort
from app.version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in str(text).split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要以逗號分隔的整數，實際: {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要以逗號分隔的數值，實際: {text!r}")


# 必要參數: 可由命令列或設定檔 cli.<subcommand> 提供，兩者皆無時為用法錯誤
REQUIRED = {
    'synth': ('out', 'seed'),
    'features': ('data', 'out'),
    'train': ('features', 'C', 'gamma', 'out', 'seed'),
    'eval': ('model', 'features', 'seed'),
    'grid': ('features', 'seed'),
    'experiment': ('data', 'setting', 'pairing', 'seed'),
    'summary': (),
}

# 共用旗標各有專屬設定區段 (logging.level / runtime.n_jobs)，不可放在 cli.<subcommand>
SHARED_DESTS = {'help', 'config', 'log_level', 'n_jobs'}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML 設定檔 (預設 config/experiment.yaml)")
    common.add_argument("--log-level", help="DEBUG / INFO / WARNING / ERROR")
    common.add_argument("--n-jobs", type=int, help="平行 worker 數 (預設: HTL_N_JOBS 或設定檔)")

    parser = argparse.ArgumentParser(prog="htl-emg", description="sEMG 假設遷移學習實驗工具")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="產生合成受試者資料集")
    p.add_argument("--out", help="輸出資料集目錄")
    p.add_argument("--n-intact", type=int)
    p.add_argument("--n-amputee", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--movements", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, help="預設: 設定檔 synth.seed")

    p = sub.add_parser("features", parents=[common], help="擷取特徵 (每位受試者一個 parquet)")
    p.add_argument("--data", help="資料集目錄 (含 manifest.yaml)")
    p.add_argument("--out", help="特徵輸出目錄")
    p.add_argument("--kind", choices=[k.value for k in FeatureKind], default=FeatureKind.AVG_MVW.value)
    p.add_argument("--window-ms", type=float)
    p.add_argument("--step-ms", type=float)

    def data_flags(p, reps_flag, default_policy):
        p.add_argument("--features", help="特徵 parquet 檔")
        p.add_argument(reps_flag, type=_int_list, help="使用的 repetition (逗號分隔)")
        p.add_argument("--rest-policy", choices=['balance', 'drop', 'keep'], default=default_policy)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", parents=[common], help="訓練單一模型")
    data_flags(p, "--train-reps", 'balance')
    p.add_argument("--method", choices=list(METHODS), default='notransfer')
    p.add_argument("--C", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--sources", help="source 模型目錄 (<id>.json)")
    p.add_argument("--subsample", type=int, default=1)
    p.add_argument("--out", help="模型輸出檔 (.json)")

    p = sub.add_parser("eval", parents=[common], help="評估模型")
    data_flags(p, "--test-reps", 'balance')
    p.add_argument("--model")
    p.add_argument("--sources", help="source 模型目錄")
    p.add_argument("--metric", choices=['balanced', 'standard'], default='balanced')

    p = sub.add_parser("grid", parents=[common], help="grid search 選擇 (C, gamma)")
    data_flags(p, "--train-reps", 'balance')
    p.add_argument("--method", choices=list(METHODS), default='notransfer')
    p.add_argument("--C-values", type=_float_list)
    p.add_argument("--gamma-values", type=_float_list)
    p.add_argument("--setting", choices=SETTINGS, default='optimized', help="未指定格點時使用的設定")
    p.add_argument("--cv", choices=['shuffled', 'repetition'], default='shuffled')
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--subsample", type=int, default=1)
    p.add_argument("--sources", help="source 模型目錄")
    p.add_argument("--metric", choices=['balanced', 'standard'], default='balanced')

    p = sub.add_parser("experiment", parents=[common], help="執行完整實驗")
    p.add_argument("--data", help="資料集目錄")
    p.add_argument("--setting", choices=SETTINGS)
    p.add_argument("--pairing", choices=sorted(PAIRING_ALIASES))
    p.add_argument("--methods", help="逗號分隔: notransfer,prior,multikt,mkal")
    p.add_argument("--seed", type=int)
    p.add_argument("--targets", help="只評估這些目標受試者 (逗號分隔)")
    p.add_argument("--n-repeats", type=int)
    p.add_argument("--out", help="輸出目錄 (預設 artifacts/<setting>-<pairing>-seed<seed>)")
    p.add_argument("--no-progress", action="store_true")

    p = sub.add_parser("summary", parents=[common], help="彙總 records.jsonl")
    p.add_argument("records", nargs="+", help="一或多個 records.jsonl")
    p.add_argument("--out", help="summary.csv / summary.md 輸出目錄")
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> Dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def apply_config_defaults(parser: argparse.ArgumentParser, config: Dict[str, Any]) -> None:
    """
    將設定檔 cli 區段設為各子命令的預設值

    cli.seed 套用到所有具 --seed 的子命令；cli.<subcommand> 以 argparse dest 為鍵 (例: C_values)。
    synth 另以 synth.seed 作為最低優先的 seed 來源

    Raises:
        ValueError: cli 區段含有未知的子命令或參數
    """
    section = config.get('cli') or {}
    if not isinstance(section, dict):
        raise ValueError("設定檔 cli 區段必須是 mapping")
    subparsers = _subparsers(parser)
    shared = {k: v for k, v in section.items() if k not in subparsers}
    unknown = set(shared) - {'seed'}
    if unknown:
        raise ValueError(f"設定檔 cli 區段含未知鍵: {sorted(unknown)}，可用子命令: {sorted(subparsers)}")

    for name, sp in subparsers.items():
        dests = {a.dest for a in sp._actions} - SHARED_DESTS
        defaults = {}
        if name == 'synth' and config.get('synth', {}).get('seed') is not None:
            defaults['seed'] = config['synth']['seed']
        if 'seed' in shared and 'seed' in dests:
            defaults['seed'] = shared['seed']
        own = section.get(name) or {}
        if not isinstance(own, dict):
            raise ValueError(f"設定檔 cli.{name} 必須是 mapping")
        bad = set(own) - dests
        if bad:
            raise ValueError(f"設定檔 cli.{name} 含未知參數: {sorted(bad)}，可用: {sorted(dests)}")
        defaults.update(own)
        if defaults:
            sp.set_defaults(**defaults)


def _check_required(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """必要參數與選項範圍 (設定檔提供的值不經 argparse 的 choices 檢查)"""
    sp = _subparsers(parser)[args.command]
    missing = ["--" + dest.replace('_', '-') for dest in REQUIRED[args.command]
               if getattr(args, dest, None) is None]
    if missing:
        sp.error(f"缺少必要參數 (命令列或設定檔 cli.{args.command}): {', '.join(missing)}")
    for action in sp._actions:
        value = getattr(args, action.dest, None)
        if action.choices is not None and value is not None and value not in action.choices:
            sp.error(f"--{action.dest.replace('_', '-')} 的值 {value!r} 不在 {list(action.choices)} 中")


# ============================================================
# 子命令
# ============================================================

def cmd_synth(args, config) -> int:
    overrides = {k: v for k, v in {
        'n_intact': args.n_intact, 'n_amputee': args.n_amputee, 'channels': args.channels,
        'movements': args.movements, 'repetitions': args.repetitions, 'epsilon': args.epsilon,
        'seed': args.seed,
    }.items() if v is not None}
    cfg = SynthConfig.from_config(deep_merge(config['synth'], overrides))
    manifest = save_cohort(generate_synthetic_cohort(cfg), args.out)
    print(f"dataset={args.out} subjects={len(manifest.subjects)} seed={cfg.seed}")
    return EXIT_OK


def cmd_features(args, config) -> int:
    window = WindowSpec(args.window_ms if args.window_ms is not None else config['window']['length_ms'],
                        args.step_ms if args.step_ms is not None else config['window']['increment_ms'])
    extractor = FeatureExtractor(window, args.kind, config['mdwt']['wavelet'], int(config['mdwt']['level']))
    cohort = load_cohort(args.data)
    out = Path(args.out)
    for sid in sorted(cohort.recordings):
        fm = extractor.run_raw(cohort.recordings[sid])
        path = save_features(fm, out / f"{sid}.parquet", pending_mvw=extractor.needs_fit)
        print(f"subject={sid} rows={fm.n_rows} dim={fm.dim} path={path}")
    return EXIT_OK


def _select(fm: FeatureMatrix, reps: Optional[List[int]], policy: str, seed: int) -> FeatureMatrix:
    if reps:
        fm = fm.take(np.isin(fm.repetitions, reps))
        if fm.n_rows == 0:
            raise ValueError(f"repetition {reps} 沒有任何資料列")
    if policy == 'balance':
        return balance_rest(fm, seed)
    if policy == 'drop':
        return drop_rest(fm)
    return fm


def _train_reps(args, config) -> List[int]:
    return args.train_reps or list(SplitPlan.from_config(config).train_reps)


def _training_rows(args, config):
    """
    訓練列: repetition 選取 → rest 處理 → 抽樣 → (MVW 區塊的逐型縮放) → 標準化

    Returns:
        (標準化後的訓練資料, 標準化參數, MVW 縮放參數或 None)
    """
    fm = load_features(args.features)
    train = subsample_regular(_select(fm, _train_reps(args, config), args.rest_policy, args.seed), args.subsample)
    mvw = None
    if features_pending_mvw(args.features):
        mvw = fit_standardizer(train)
        train = combine_mvw(mvw, train)
    std = fit_standardizer(train)
    return apply_standardizer(std, train), std, mvw


def _context(args, config, seed: int) -> MethodContext:
    if requires_sources([args.method]) and not getattr(args, 'sources', None):
        raise ValueError(f"{args.method} 需要 --sources (source 模型目錄)")
    sources = load_source_dir(args.sources) if getattr(args, 'sources', None) else []
    m = config['mkal']
    return MethodContext(sources, None, MkalConfig(m['p'], m['epochs'], m['lambda'], seed),
                         int(config['multikt']['iterations']))


def cmd_train(args, config) -> int:
    train, std, mvw = _training_rows(args, config)
    hp = HyperParams.rbf(float(args.C), float(args.gamma))
    method = make_method(args.method, hp, _context(args, config, args.seed))
    method.fit(train)
    stored = StoredModel(method, train.subject_id, std, mvw)
    save_model(stored, args.out)
    print(f"model={args.out} kind={args.method} subject={train.subject_id} n_train={train.n_rows}")
    return EXIT_OK


def cmd_eval(args, config) -> int:
    stored = load_model(args.model, args.sources)
    logger.info(f"✓ 模型: {model_summary(stored)}")
    fm = load_features(args.features)
    reps = args.test_reps or list(SplitPlan.from_config(config).test_reps)
    test = _select(fm, reps, args.rest_policy, args.seed)
    pending = features_pending_mvw(args.features)
    if pending != (stored.mvw_scaler is not None):
        raise ModelFormatError(
            f"特徵檔{'是' if pending else '不是'}待縮放的 MVW 區塊，但模型"
            f"{'沒有' if pending else '含有'} MVW 縮放參數；請以同一 --kind 擷取的特徵訓練與評估"
        )
    if pending:
        test = combine_mvw(stored.mvw_scaler, test)
    if stored.standardizer is not None:
        test = apply_standardizer(stored.standardizer, test)
    value = get_metric(args.metric)(test.labels, stored.method.predict(test.features))
    print(f"kind={stored.method.name} subject={fm.subject_id} metric={args.metric} value={value!r} n={test.n_rows}")
    return EXIT_OK


def cmd_grid(args, config) -> int:
    section = config['settings'][args.setting]['grid']
    grid = GridSpec(args.C_values or section['C'], args.gamma_values or section['gamma'])
    if not METHODS[args.method].uses_gamma:
        grid = grid.without_gamma()
    train, _, _ = _training_rows(args, config)
    factory = method_factory(args.method, _context(args, config, args.seed))
    scores, causes = grid_scores(train, grid, CvPlan(args.cv, args.folds), factory, args.seed, args.metric,
                                 int(config["runtime"]["n_jobs"]))
    if not scores:
        raise GridSearchError(causes)
    C, gamma = choose_best(scores)
    shown = gamma if METHODS[args.method].uses_gamma else None
    print(f"C={C!r} gamma={shown!r} score={scores[(C, gamma)]!r}")
    return EXIT_OK


def cmd_experiment(args, config) -> int:
    overrides = {}
    if args.n_repeats is not None:
        overrides['n_repeats'] = args.n_repeats
    if args.targets:
        targets = args.targets.split(',') if isinstance(args.targets, str) else args.targets
        overrides['targets'] = [str(t).strip() for t in targets if str(t).strip()]
    plan = ExperimentPlan.from_config(config, args.setting, args.pairing, args.methods, args.seed, **overrides)
    cohort = load_cohort(args.data)
    progress = bool(config['runtime'].get('progress', True)) and not args.no_progress
    records = run_experiment(plan, cohort, int(config["runtime"]["n_jobs"]), progress)

    out = Path(args.out or Path("artifacts") / f"{plan.setting}-{args.pairing}-seed{plan.seed}")
    records_path = save_records(records, out / "records.jsonl")
    logger.info(f"✅ 結果: {records_path}")
    summary = write_summary(records, out)
    print(format_table(summary))
    return EXIT_OK


def cmd_summary(args, config) -> int:
    records = [r for path in args.records for r in load_records(path)]
    summary = write_summary(records, args.out) if args.out else summarize_records(records)
    print(format_table(summary))
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth, 'features': cmd_features, 'train': cmd_train, 'eval': cmd_eval,
    'grid': cmd_grid, 'experiment': cmd_experiment, 'summary': cmd_summary,
}


def _report_error(e: BaseException) -> int:
    message = " ".join(str(e).split())
    print(f"error={type(e).__name__} message={message}", file=sys.stderr)
    return EXIT_FAILURE


def _preparse_config(argv: List[str]) -> Optional[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


def run(argv: Optional[List[str]] = None) -> int:
    """
    CLI 進入點，回傳結束狀態碼

    先讀取 --config，將其 cli 區段設為 argparse 預設值，再解析命令列 (命令列優先)
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config = load_config(_preparse_config(argv))
        apply_config_defaults(parser, config)
    except (HtlError, ValueError, FileNotFoundError) as e:
        return _report_error(e)

    try:
        args = parser.parse_args(argv)
        _check_required(parser, args)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    try:
        config["runtime"]["n_jobs"] = args.n_jobs if args.n_jobs is not None else default_n_jobs(config)
        setup_logging(args.log_level or config['logging']['level'])
        return COMMANDS[args.command](args, config)
    except (HtlError, ValueError, FileNotFoundError, np.linalg.LinAlgError) as e:
        return _report_error(e)


def main() -> int:
    return run(sys.argv[1:])
