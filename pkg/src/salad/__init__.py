"""FOA sound source localization with self-attention encoders, in plain numpy."""

from .errors import BadMagicError, FormatError, TruncatedError, VersionError
from .features import FoaSignal, StftSpec, extract_features, intensity_features, stft
from .grid import DoaGrid, build_grid, encode_target, extract_peaks
from .model import SaladConfig, SaladModel, build_model, infer_sequence, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "FormatError",
    "TruncatedError",
    "VersionError",
    "FoaSignal",
    "StftSpec",
    "extract_features",
    "intensity_features",
    "stft",
    "DoaGrid",
    "build_grid",
    "encode_target",
    "extract_peaks",
    "SaladConfig",
    "SaladModel",
    "build_model",
    "infer_sequence",
    "load_checkpoint",
    "save_checkpoint",
]
