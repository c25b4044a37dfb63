"""
合成多受試者 sEMG 資料

每位受試者的訊號 = 個人混合矩陣 A_s = I + ε·R_s 作用在共用的動作原型 μ_g 上，
休息與動作段交替出現 (rest → burst，每個 repetition 一次)

    burst(t) = envelope(t) · attenuation ⊙ (A_s μ_g) + σ·(1 + gain·envelope(t)·|A_s μ_g|) ⊙ n(t)
    rest(t)  = σ·n(t)

噪聲振幅隨肌肉活動放大，讓 VAR / WL 特徵也帶有類別資訊
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from app.data_io import Cohort, DatasetManifest, SubjectEntry
from app.signal_features import EmgRecording

logger = logging.getLogger(__name__)

RAMP_FRACTION = 0.05


@dataclass(frozen=True)
class SynthConfig:
    n_intact: int = 4
    n_amputee: int = 0
    channels: int = 8
    movements: int = 6
    repetitions: int = 6
    sampling_rate: float = 100.0
    burst_samples: int = 150
    rest_samples: int = 100
    epsilon: float = 0.2
    sigma_intact: float = 0.05
    sigma_amputee: float = 0.15
    activation_gain: float = 4.0
    amputee_attenuation: float = 0.5
    amputee_attenuated_channels: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_intact < 0 or self.n_amputee < 0 or self.n_intact + self.n_amputee < 1:
            raise ValueError("至少需要一位受試者")
        for name in ('channels', 'movements', 'repetitions', 'burst_samples', 'rest_samples'):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} 必須 >= 1，實際: {getattr(self, name)}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon 必須 >= 0，實際: {self.epsilon}")
        if self.sigma_intact < 0 or self.sigma_amputee < 0 or self.activation_gain < 0:
            raise ValueError("sigma 與 activation_gain 必須 >= 0")
        if not self.sampling_rate > 0:
            raise ValueError(f"sampling_rate 必須 > 0，實際: {self.sampling_rate}")
        if not 0 <= self.amputee_attenuated_channels <= self.channels:
            raise ValueError("amputee_attenuated_channels 必須在 0..channels 內")

    @classmethod
    def from_config(cls, config: dict) -> "SynthConfig":
        """由設定檔 synth 區段建立 (忽略未知鍵)"""
        section = dict(config.get('synth', config))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in section.items() if k in known})

    def subject_ids(self) -> Tuple[list, list]:
        intact = [f"intact-{i + 1:02d}" for i in range(self.n_intact)]
        amputee = [f"amputee-{i + 1:02d}" for i in range(self.n_amputee)]
        return intact, amputee


def class_prototypes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """(G, channels) 的動作原型: 振幅 U(0.2, 1)、隨機正負號"""
    magnitude = rng.uniform(0.2, 1.0, size=(cfg.movements, cfg.channels))
    sign = rng.choice([-1.0, 1.0], size=(cfg.movements, cfg.channels))
    return magnitude * sign


def envelope(n: int) -> np.ndarray:
    """梯形包絡: 前後各 5% 線性爬升/下降"""
    ramp = max(1, int(round(RAMP_FRACTION * n)))
    env = np.ones(n)
    if 2 * ramp < n:
        up = np.arange(1, ramp + 1) / (ramp + 1)
        env[:ramp] = up
        env[-ramp:] = up[::-1]
    return env


def mixing_matrix(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """A_s = I + ε·R_s，R_s ~ N(0, 1/channels)"""
    R = rng.normal(0.0, 1.0 / np.sqrt(cfg.channels), size=(cfg.channels, cfg.channels))
    return np.eye(cfg.channels) + cfg.epsilon * R


def _subject_recording(cfg: SynthConfig, prototypes: np.ndarray, subject_id: str, kind: str,
                       rng: np.random.Generator) -> EmgRecording:
    A = mixing_matrix(cfg, rng)
    sigma = cfg.sigma_amputee if kind == 'amputee' else cfg.sigma_intact
    gain = np.ones(cfg.channels)
    if kind == 'amputee':
        gain[:cfg.amputee_attenuated_channels] = cfg.amputee_attenuation

    env = envelope(cfg.burst_samples)
    segments, stimulus, repetition = [], [], []
    for g in range(cfg.movements):
        pattern = gain * (A @ prototypes[g])
        for r in range(1, cfg.repetitions + 1):
            rest = sigma * rng.standard_normal((cfg.rest_samples, cfg.channels))
            noise = rng.standard_normal((cfg.burst_samples, cfg.channels))
            scale = sigma * (1.0 + cfg.activation_gain * env[:, None] * np.abs(pattern)[None, :])
            burst = env[:, None] * pattern[None, :] + scale * noise
            segments += [rest, burst]
            stimulus += [np.zeros(cfg.rest_samples, dtype=np.int64), np.full(cfg.burst_samples, g + 1)]
            repetition += [np.full(cfg.rest_samples, r), np.full(cfg.burst_samples, r)]

    return EmgRecording(np.vstack(segments), cfg.sampling_rate, np.concatenate(stimulus),
                        np.concatenate(repetition), subject_id, kind, cfg.movements, cfg.repetitions)


def generate_synthetic_cohort(cfg: SynthConfig = SynthConfig()) -> Cohort:
    """
    產生合成受試者群

    相同 cfg (含 seed) 產生完全相同的紀錄；原型由第一個子序列產生，
    每位受試者各自使用一個衍生子序列
    """
    intact, amputee = cfg.subject_ids()
    subjects = [(sid, 'intact') for sid in intact] + [(sid, 'amputee') for sid in amputee]
    streams = np.random.SeedSequence(cfg.seed).spawn(1 + len(subjects))

    prototypes = class_prototypes(cfg, np.random.default_rng(streams[0]))
    recordings: Dict[str, EmgRecording] = {}
    entries = []
    for (sid, kind), stream in zip(subjects, streams[1:]):
        rec = _subject_recording(cfg, prototypes, sid, kind, np.random.default_rng(stream))
        recordings[sid] = rec
        entries.append(SubjectEntry(sid, kind, f"{sid}.csv", cfg.channels, float(cfg.sampling_rate),
                                    cfg.movements, cfg.repetitions))

    logger.info(f"✓ 合成資料: {len(intact)} 位 intact、{len(amputee)} 位 amputee, "
                f"{cfg.channels} 通道, {cfg.movements} 個動作 × {cfg.repetitions} 次")
    return Cohort(DatasetManifest(entries), recordings)
