"""Index-modulated MIMO-OFDM simulation with model-based and learned detectors."""

from .channel import ChannelConfig, apply_channel, draw_channel
from .config import SCENARIOS, SweepSpec, parse_config
from .detectors import DETECTORS, SearchSpaceTooLarge, mf_llr_detect, mld_detect
from .estimators import DLBMPDetector, IMNetDetector, MFLLRDetector, MLDetector
from .mapping import IMConfig, demap_frame_to_bits, derive_bit_budget, map_bits_to_frame
from .sim import ResultRow, run_bench, run_ber_sweep
from .training import Dataset, TrainConfig, generate_dataset, train_ad, train_sd

__all__ = [
    "ChannelConfig", "apply_channel", "draw_channel",
    "SCENARIOS", "SweepSpec", "parse_config",
    "DETECTORS", "SearchSpaceTooLarge", "mf_llr_detect", "mld_detect",
    "DLBMPDetector", "IMNetDetector", "MFLLRDetector", "MLDetector",
    "IMConfig", "demap_frame_to_bits", "derive_bit_budget", "map_bits_to_frame",
    "ResultRow", "run_bench", "run_ber_sweep",
    "Dataset", "TrainConfig", "generate_dataset", "train_ad", "train_sd",
]
