# htl-emg-bench 版本資訊
__version__ = "1.0.0"
__last_update__ = "2026-10-17"
__features__ = [
    "LS-SVM 分塊求解與閉式留一法",
    "MultiKT / Prior / MKAL 假設遷移學習",
    "original / optimized / realistic 三種實驗設定",
    "合成多受試者 sEMG 資料產生器",
]
