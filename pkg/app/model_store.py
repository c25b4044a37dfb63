"""
模型存取 (版本化 JSON)

    {"format": "htl-model", "version": 1, "kind": "notransfer" | "prior" | "multikt" | "mkal", ...}

浮點數以 JSON (repr) 輸出，讀回完全相同；source 模型只記錄受試者編號，
載入時從 sources 目錄中的 <id>.json (notransfer 模型) 解析
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from app.errors import ModelFormatError
from app.lssvm import HyperParams, OvaModel
from app.methods import MethodContext, make_method
from app.mkal import MkalConfig, MkalModel
from app.signal_features import Standardizer
from app.transfer import MultiKtModel, PriorModel, SourceHypothesis, TransferWeights

logger = logging.getLogger(__name__)

MODEL_FORMAT = "htl-model"
MODEL_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class StoredModel:
    """
    已訓練的方法 + 其訓練資料的標準化參數

    mvw_scaler: 特徵檔為待縮放的 MVW 區塊時，由訓練列擬合的逐型 z-score
    """
    method: object
    subject_id: str = ''
    standardizer: Optional[Standardizer] = None
    mvw_scaler: Optional[Standardizer] = None


def _std_to_dict(std: Optional[Standardizer]) -> Optional[dict]:
    return None if std is None else {'mean': std.mean.tolist(), 'std': std.std.tolist()}


def _std_from_dict(data: Optional[dict]) -> Optional[Standardizer]:
    if data is None:
        return None
    return Standardizer(np.asarray(data['mean'], dtype=float), np.asarray(data['std'], dtype=float))


def _ova_to_dict(model: OvaModel) -> dict:
    return {
        'classes': model.classes.tolist(), 'X': model.X.tolist(), 'alpha': model.alpha.tolist(),
        'bias': np.atleast_1d(model.bias).tolist(), 'hp': model.hp.to_dict(),
        'targets': None if model.targets is None else model.targets.tolist(),
    }


def _ova_from_dict(data: dict) -> OvaModel:
    targets = data.get('targets')
    return OvaModel(np.asarray(data['classes'], dtype=np.int64), np.asarray(data['X'], dtype=float),
                    np.asarray(data['alpha'], dtype=float), np.asarray(data['bias'], dtype=float),
                    HyperParams.from_dict(data['hp']),
                    None if targets is None else np.asarray(targets, dtype=float))


def _payload(method) -> dict:
    model = method.model
    if method.name == 'notransfer':
        return {'ova': _ova_to_dict(model)}
    if method.name == 'prior':
        return {'ova': _ova_to_dict(model.ova)}
    if method.name == 'multikt':
        return {'residual': _ova_to_dict(model.residual), 'beta': model.weights.beta.tolist()}
    if method.name == 'mkal':
        return {'coef': model.coef.tolist(), 'classes': model.classes.tolist(),
                'config': model.config.to_dict(), 'descriptors': model.descriptors,
                'X_train': method.X_train.tolist()}
    raise ModelFormatError(f"不支援的模型種類: {method.name!r}")


def save_model(stored: StoredModel, path: PathLike) -> Path:
    method = stored.method
    if method.model is None:
        raise ValueError("只能儲存已訓練的模型")
    context = method.context
    doc = {
        'format': MODEL_FORMAT, 'version': MODEL_VERSION, 'kind': method.name,
        'subject_id': stored.subject_id, 'hp': method.hp.to_dict(),
        'classes': None if context.classes is None else np.asarray(context.classes).tolist(),
        'sources': context.source_ids,
        'standardizer': _std_to_dict(stored.standardizer),
        'mvw_scaler': _std_to_dict(stored.mvw_scaler),
        'model': _payload(method),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, ensure_ascii=False)
    logger.info(f"✓ 模型已儲存: {path} ({method.name})")
    return path


def _read_doc(path: PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到模型檔: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path.name}: 無法解析 JSON ({e.msg})") from e
    if not isinstance(doc, dict) or doc.get('format') != MODEL_FORMAT:
        raise ModelFormatError(f"{path.name}: 不是 {MODEL_FORMAT} 模型檔")
    if doc.get('version') != MODEL_VERSION:
        raise ModelFormatError(f"{path.name}: 不支援的模型版本 {doc.get('version')!r}")
    return doc


def load_sources(source_ids: List[str], sources_dir: Optional[PathLike]) -> List[SourceHypothesis]:
    """從 sources 目錄載入 notransfer 模型作為 source hypothesis"""
    if not source_ids:
        return []
    if sources_dir is None:
        raise ModelFormatError(f"模型需要 source {source_ids}，但未指定 sources 目錄")
    sources = []
    for sid in source_ids:
        doc = _read_doc(Path(sources_dir) / f"{sid}.json")
        if doc['kind'] != 'notransfer':
            raise ModelFormatError(f"source {sid} 必須是 notransfer 模型，實際: {doc['kind']!r}")
        sources.append(SourceHypothesis(_ova_from_dict(doc['model']['ova']), sid))
    return sources


def load_source_dir(sources_dir: PathLike) -> List[SourceHypothesis]:
    """載入目錄中所有 notransfer 模型 (依檔名排序)"""
    paths = sorted(Path(sources_dir).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"{sources_dir} 中沒有任何模型檔")
    return load_sources([p.stem for p in paths], sources_dir)


def load_model(path: PathLike, sources_dir: Optional[PathLike] = None) -> StoredModel:
    doc = _read_doc(path)
    kind = doc.get('kind')
    try:
        hp = HyperParams.from_dict(doc['hp'])
        classes = None if doc.get('classes') is None else np.asarray(doc['classes'], dtype=np.int64)
        sources = load_sources(list(doc.get('sources') or []), sources_dir)
        payload = doc['model']
    except KeyError as e:
        raise ModelFormatError(f"模型檔缺少欄位 {e.args[0]!r}") from e

    mkal_cfg = MkalConfig.from_dict(payload['config']) if kind == 'mkal' else MkalConfig()
    method = make_method(kind, hp, MethodContext(sources, classes, mkal_cfg))
    if kind == 'notransfer':
        method.model = _ova_from_dict(payload['ova'])
    elif kind == 'prior':
        method.model = PriorModel(_ova_from_dict(payload['ova']), sources)
    elif kind == 'multikt':
        method.model = MultiKtModel(_ova_from_dict(payload['residual']), TransferWeights(payload['beta']),
                                    sources, hp)
    elif kind == 'mkal':
        method.model = MkalModel(np.asarray(payload['coef'], dtype=float),
                                 np.asarray(payload['classes'], dtype=np.int64), mkal_cfg,
                                 list(payload.get('descriptors') or []))
        method.X_train = np.asarray(payload['X_train'], dtype=float)
    else:
        raise ModelFormatError(f"不支援的模型種類: {kind!r}")

    return StoredModel(method, str(doc.get('subject_id') or ''), _std_from_dict(doc.get('standardizer')),
                       _std_from_dict(doc.get('mvw_scaler')))


def model_summary(stored: StoredModel) -> Dict[str, object]:
    """單行日誌用的模型摘要"""
    method = stored.method
    return {'kind': method.name, 'subject_id': stored.subject_id, 'C': method.hp.C,
            'gamma': method.hp.kernel.gamma if method.uses_gamma else None, 'sources': method.context.source_ids}
