"""
資料存取: 受試者容器 (CSV + YAML sidecar)、manifest、實驗結果 (JSONL)、特徵檔 (parquet)

所有格式都以版本標記開頭:
    受試者 CSV 第一行   # emg-container v1
    manifest.yaml      format: htl-manifest, version: 1
    records.jsonl      {"format": "htl-records", "version": 1}
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
import yaml

from app.errors import RecordFormatError, SchemaError
from app.signal_features import SUBJECT_KINDS, EmgRecording, FeatureMatrix

logger = logging.getLogger(__name__)

CONTAINER_TOKEN = "# emg-container v1"
MANIFEST_FORMAT = "htl-manifest"
RECORDS_FORMAT = "htl-records"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.yaml"

PathLike = Union[str, Path]


# ============================================================
# Manifest
# ============================================================

@dataclass
class SubjectEntry:
    subject_id: str
    kind: str
    path: str
    channels: int
    sampling_rate: float
    n_movements: int
    n_repetitions: int

    def __post_init__(self):
        if self.kind not in SUBJECT_KINDS:
            raise SchemaError(f"{self.subject_id}: 未知的受試者種類 {self.kind!r}", column='kind')
        if int(self.channels) < 1 or int(self.n_movements) < 1 or int(self.n_repetitions) < 1:
            raise SchemaError(f"{self.subject_id}: channels / n_movements / n_repetitions 必須 >= 1")
        if not float(self.sampling_rate) > 0:
            raise SchemaError(f"{self.subject_id}: sampling_rate 必須 > 0", column='sampling_rate')

    def to_dict(self) -> dict:
        return {
            'id': self.subject_id, 'kind': self.kind, 'path': self.path, 'channels': int(self.channels),
            'sampling_rate': float(self.sampling_rate), 'n_movements': int(self.n_movements),
            'n_repetitions': int(self.n_repetitions),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubjectEntry":
        try:
            return cls(str(data['id']), str(data['kind']), str(data['path']), int(data['channels']),
                       float(data['sampling_rate']), int(data['n_movements']), int(data['n_repetitions']))
        except KeyError as e:
            raise SchemaError(f"manifest 受試者項目缺少欄位 {e.args[0]!r}", column=e.args[0]) from e


@dataclass
class DatasetManifest:
    """受試者清單；同一 manifest 內所有受試者共用動作數與通道數"""
    subjects: List[SubjectEntry] = field(default_factory=list)
    root: Optional[Path] = None

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        duplicated = sorted({i for i in ids if ids.count(i) > 1})
        if duplicated:
            raise SchemaError(f"manifest 受試者編號重複: {duplicated}", column='id')
        if len({s.n_movements for s in self.subjects}) > 1:
            raise SchemaError("manifest 內受試者的動作數 G 不一致", column='n_movements')
        if len({s.channels for s in self.subjects}) > 1:
            raise SchemaError("manifest 內受試者的通道數不一致", column='channels')

    def ids(self, kind: Optional[str] = None) -> List[str]:
        return [s.subject_id for s in self.subjects if kind is None or s.kind == kind]

    def entry(self, subject_id: str) -> SubjectEntry:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(f"manifest 中沒有受試者 {subject_id!r}")

    @property
    def n_movements(self) -> int:
        return self.subjects[0].n_movements if self.subjects else 0


@dataclass
class Cohort:
    """manifest + 已載入的紀錄"""
    manifest: DatasetManifest
    recordings: Dict[str, EmgRecording]

    def kind_of(self, subject_id: str) -> str:
        return self.manifest.entry(subject_id).kind


def save_manifest(manifest: DatasetManifest, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    doc = {'format': MANIFEST_FORMAT, 'version': FORMAT_VERSION,
           'subjects': [s.to_dict() for s in manifest.subjects]}
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(doc, f, allow_unicode=True, sort_keys=False)
    return path


def load_manifest(path: PathLike) -> DatasetManifest:
    """讀取 manifest.yaml (可傳入檔案或其所在目錄)"""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"找不到 manifest: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        doc = yaml.safe_load(f) or {}
    if doc.get('format') != MANIFEST_FORMAT or doc.get('version') != FORMAT_VERSION:
        raise SchemaError(f"不支援的 manifest 格式: format={doc.get('format')!r}, version={doc.get('version')!r}")
    entries = [SubjectEntry.from_dict(item) for item in doc.get('subjects') or []]
    return DatasetManifest(entries, path.parent)


# ============================================================
# 受試者容器
# ============================================================

def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + ".meta.yaml")


def save_subject(rec: EmgRecording, directory: PathLike) -> SubjectEntry:
    """
    寫出 <id>.csv (樣本表) 與 <id>.meta.yaml (metadata)

    浮點數以 17 位有效數字輸出，讀回完全相同
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{rec.subject_id}.csv"

    table = pd.DataFrame(rec.samples, columns=[f"ch{c + 1}" for c in range(rec.n_channels)])
    table.insert(0, 'time_index', np.arange(len(rec), dtype=np.int64))
    table['stimulus'] = rec.stimulus
    table['repetition'] = rec.repetition
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        f.write(CONTAINER_TOKEN + "\n")
        table.to_csv(f, index=False, float_format='%.17g')

    entry = SubjectEntry(rec.subject_id, rec.subject_kind, csv_path.name, rec.n_channels,
                         float(rec.sampling_rate), int(rec.n_movements), int(rec.n_repetitions))
    meta = {k: v for k, v in entry.to_dict().items() if k != 'path'}
    with open(_meta_path(csv_path), 'w', encoding='utf-8') as f:
        yaml.safe_dump(meta, f, allow_unicode=True, sort_keys=False)
    return entry


def _integer_column(table: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(table[column], errors='coerce')
    bad = values.isna() | (values != np.round(values))
    if bad.any():
        raise SchemaError(f"{column} 必須是整數", row=int(np.flatnonzero(bad.to_numpy())[0]), column=column)
    return values.to_numpy().astype(np.int64)


def load_subject(entry: SubjectEntry, root: Optional[PathLike] = None) -> EmgRecording:
    """
    讀取單一受試者容器並驗證

    Raises:
        SchemaError: 版本標記、欄位、數值或標籤範圍不符 (附列號/欄位)
    """
    csv_path = Path(entry.path)
    if root is not None and not csv_path.is_absolute():
        csv_path = Path(root) / csv_path
    if not csv_path.exists():
        raise FileNotFoundError(f"找不到受試者檔案: {csv_path}")

    with open(csv_path, 'r', encoding='utf-8') as f:
        token = f.readline().strip()
    if token != CONTAINER_TOKEN:
        raise SchemaError(f"{csv_path.name}: 版本標記應為 {CONTAINER_TOKEN!r}，實際: {token!r}", row=0)

    meta_path = _meta_path(csv_path)
    if meta_path.exists():
        with open(meta_path, 'r', encoding='utf-8') as f:
            meta = yaml.safe_load(f) or {}
        for key in ('channels', 'n_movements', 'n_repetitions'):
            if key in meta and int(meta[key]) != int(getattr(entry, key)):
                raise SchemaError(f"{csv_path.name}: metadata {key}={meta[key]} 與 manifest 不符", column=key)

    table = pd.read_csv(csv_path, skiprows=1)
    expected = ['time_index'] + [f"ch{c + 1}" for c in range(entry.channels)] + ['stimulus', 'repetition']
    for column in expected:
        if column not in table.columns:
            raise SchemaError(f"{csv_path.name}: 缺少欄位", column=column)
    extra = [c for c in table.columns if c not in expected]
    if extra:
        raise SchemaError(f"{csv_path.name}: 多餘的欄位 {extra}", column=extra[0])

    time_index = _integer_column(table, 'time_index')
    if time_index.size and np.any(np.diff(time_index) <= 0):
        row = int(np.flatnonzero(np.diff(time_index) <= 0)[0] + 1)
        raise SchemaError(f"{csv_path.name}: time_index 必須嚴格遞增", row=row, column='time_index')

    channel_cols = expected[1:-2]
    samples = table[channel_cols].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
    if not np.all(np.isfinite(samples)):
        row, col = np.argwhere(~np.isfinite(samples))[0]
        raise SchemaError(f"{csv_path.name}: 訊號值非有限數", row=int(row), column=channel_cols[col])

    stimulus = _integer_column(table, 'stimulus')
    repetition = _integer_column(table, 'repetition')
    for column, values, upper in (('stimulus', stimulus, entry.n_movements),
                                  ('repetition', repetition, entry.n_repetitions)):
        bad = (values < 0) | (values > upper)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise SchemaError(f"{csv_path.name}: {column}={values[row]} 超出範圍 0..{upper}",
                              row=row, column=column)

    return EmgRecording(samples, entry.sampling_rate, stimulus, repetition, entry.subject_id, entry.kind,
                        entry.n_movements, entry.n_repetitions)


def save_cohort(cohort: Cohort, directory: PathLike) -> DatasetManifest:
    """寫出所有受試者與 manifest (依受試者編號排序)"""
    entries = [save_subject(cohort.recordings[sid], directory) for sid in sorted(cohort.recordings)]
    manifest = DatasetManifest(entries, Path(directory))
    save_manifest(manifest, directory)
    logger.info(f"✓ 已寫出 {len(entries)} 位受試者至 {directory}")
    return manifest


def load_cohort(dataset_dir: PathLike) -> Cohort:
    manifest = load_manifest(dataset_dir)
    recordings = {e.subject_id: load_subject(e, manifest.root) for e in manifest.subjects}
    logger.info(f"✓ 已載入 {len(recordings)} 位受試者 ({dataset_dir})")
    return Cohort(manifest, recordings)


# ============================================================
# 特徵檔
# ============================================================

# parquet schema metadata: 特徵檔為未縮放的 [MAV | VAR | WL] 區塊 (AVG 尚待以訓練列縮放)
PENDING_MVW_KEY = b"htl.pending_mvw"


def save_features(fm: FeatureMatrix, path: PathLike, pending_mvw: bool = False) -> Path:
    """
    寫入特徵 parquet

    Args:
        pending_mvw: fm 為 FeatureExtractor.run_raw 的 MVW 區塊，讀取端需以訓練列擬合縮放
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pa.Table.from_pandas(fm.to_frame(), preserve_index=False)
    metadata = dict(table.schema.metadata or {})
    metadata[PENDING_MVW_KEY] = b"1" if pending_mvw else b"0"
    pq.write_table(table.replace_schema_metadata(metadata), path)
    return path


def features_pending_mvw(path: PathLike) -> bool:
    """特徵檔是否為待縮放的 MVW 區塊"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到特徵檔: {path}")
    metadata = pq.read_schema(path).metadata or {}
    return metadata.get(PENDING_MVW_KEY) == b"1"


def load_features(path: PathLike, subject_id: Optional[str] = None) -> FeatureMatrix:
    """讀取特徵 parquet；subject_id 預設取檔名"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到特徵檔: {path}")
    return FeatureMatrix.from_frame(pd.read_parquet(path), subject_id or path.stem)


# ============================================================
# 實驗結果
# ============================================================

@dataclass
class EvalRecord:
    """單一 (目標, 方法, 訓練量, seed) 的評估結果；欄位順序即輸出順序"""
    setting: str
    pairing: str
    target: str
    method: str
    size: str
    metric: str
    value: float
    seed: int
    hp: Dict[str, Optional[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= float(self.value) <= 1.0:
            raise ValueError(f"評估值必須在 [0, 1] 內，實際: {self.value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalRecord":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ValueError(f"缺少欄位 {missing}")
        return cls(**{n: data[n] for n in names})


def _header_line() -> str:
    return json.dumps({'format': RECORDS_FORMAT, 'version': FORMAT_VERSION})


def save_records(records: Iterable[EvalRecord], path: PathLike, append: bool = False) -> Path:
    """
    寫出 JSONL；新檔案 (或非 append 模式) 先寫版本標頭

    append=True 時接在既有檔案之後，不重複寫標頭
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = not append or not path.exists() or path.stat().st_size == 0
    with open(path, 'a' if append else 'w', encoding='utf-8') as f:
        if write_header:
            f.write(_header_line() + "\n")
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
    return path


def load_records(path: PathLike) -> List[EvalRecord]:
    """讀取 JSONL；檔案中任何位置的標頭行都會被略過 (串接檔案)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"找不到結果檔: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise RecordFormatError(f"無法解析 JSON ({e.msg})", line_number) from e
            if not isinstance(data, dict):
                raise RecordFormatError("每一行必須是 JSON 物件", line_number)
            if 'format' in data:
                if data.get('format') != RECORDS_FORMAT or data.get('version') != FORMAT_VERSION:
                    raise RecordFormatError(f"不支援的結果格式 {data.get('format')!r} v{data.get('version')}",
                                            line_number)
                continue
            try:
                records.append(EvalRecord.from_dict(data))
            except (TypeError, ValueError) as e:
                raise RecordFormatError(str(e), line_number) from e
    return records
