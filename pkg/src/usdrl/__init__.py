"""Self-supervised skeleton representation learning with feature decorrelation."""

from .config import DataConfig, PretrainConfig, TrainConfig
from .dste import DSTE, EncoderConfig
from .estimators import USDRL, FrameClassifier, KNNRetriever, LinearProbe
from .mgfd import LossWeights, loss_total
from .pretrain import Pretrainer, USDRLNet
from .skelio import DatasetManifest, SkeletonSequence, load_split, synth_dataset

__version__ = "0.1.0"

__all__ = [
    "DSTE", "DataConfig", "DatasetManifest", "EncoderConfig", "FrameClassifier", "KNNRetriever",
    "LinearProbe", "LossWeights", "PretrainConfig", "Pretrainer", "SkeletonSequence", "TrainConfig",
    "USDRL", "USDRLNet", "load_split", "loss_total", "synth_dataset",
]
