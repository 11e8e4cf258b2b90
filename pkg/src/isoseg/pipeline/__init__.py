"""Volume I/O, configuration, training, inference, evaluation and the comparison experiment."""
from .config import ConfigFileError, TrainingConfig, load_config, parse_config, preset
from .evaluation import EvaluationError, compare, evaluate
from .inference import Prediction, PredictError, fuse_volume, predict
from .preprocess import FoldSplit, PreprocessError, StepDecay, kfold_split, lr_schedule, normalize_intensity
from .training import TrainingError, TrainResult, train
from .volume_io import VolumeFormatError, load_cohort, load_subject, load_volume, save_subject, save_volume

__all__ = [
    "ConfigFileError", "EvaluationError", "FoldSplit", "PredictError", "Prediction", "PreprocessError",
    "StepDecay", "TrainResult", "TrainingConfig", "TrainingError", "VolumeFormatError", "compare", "evaluate",
    "fuse_volume", "kfold_split", "load_cohort", "load_config", "load_subject", "load_volume", "lr_schedule",
    "normalize_intensity", "parse_config", "predict", "preset", "save_subject", "save_volume", "train",
]
