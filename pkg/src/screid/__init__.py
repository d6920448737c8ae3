"""Self-contained person re-identification trainer built on selective
contrastive learning over three memory banks, with its own reverse-mode
autodiff, synthetic multi-camera dataset generator, and retrieval
metrics."""

from .config import RunConfig, config_from_dict, load_config
from .evaluation import EvalReport, evaluate_retrieval
from .memory import MemoryBanks, init_banks
from .model import ModelDims, ModelParams, init_model
from .sampling import SampleSelection, SimilarityConfig, partition_and_select
from .synthdata import DatasetSpec, DatasetSplits, ImageSample, generate_dataset
from .trainer import EpochRecord, TrainConfig, TrainResult, train

__all__ = [
    "DatasetSpec",
    "DatasetSplits",
    "EpochRecord",
    "EvalReport",
    "ImageSample",
    "MemoryBanks",
    "ModelDims",
    "ModelParams",
    "RunConfig",
    "SampleSelection",
    "SimilarityConfig",
    "TrainConfig",
    "TrainResult",
    "config_from_dict",
    "evaluate_retrieval",
    "generate_dataset",
    "init_banks",
    "init_model",
    "load_config",
    "partition_and_select",
    "train",
]

__version__ = "0.1.0"
