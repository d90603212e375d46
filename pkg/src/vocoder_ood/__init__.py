"""Vocoder recognition with reconstruction-based out-of-distribution rejection."""

from .datastore import OOD, FeatureDataset, SyntheticConfig, generate_synthetic, load_dataset, synthesize
from .detector import Decision, decide, detect, score_matrix
from .layercomb import CombinerSpec, LayerCombiner
from .losses import LossWeights
from .metrics import confusion, report
from .model import ModelConfig, VocoderAutoencoder
from .probe import ProbeConfig, probe_layers
from .trainer import ThresholdSet, TrainConfig, calibrate_thresholds, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
