#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
htl-emg - 主程式
合成資料、特徵擷取、模型訓練/評估與完整實驗的統一入口

範例:
    python run_experiment.py synth --out data/synth --seed 0
    python run_experiment.py experiment --data data/synth --setting realistic --pairing ii --seed 7
"""

import sys
from pathlib import Path

# 加入專案根目錄至路徑
sys.path.insert(0, str(Path(__file__).parent))

from app.cli import main


if __name__ == "__main__":
    sys.exit(main())
