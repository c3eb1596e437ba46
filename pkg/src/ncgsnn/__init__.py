"""Spiking classification layers with Neuronal Competition Groups trained by supervised STDP."""
from .data import (NO_SPIKE, T_MAX, FoldPlan, LatencyEncoder, SpikeDataset, SpikeVector,
                   encode_dataset, encode_latency, kfold_partition, load_features, load_idx,
                   load_mnist, make_prototype_mixture, split_validation, write_features)
from .engine import (ClassificationLayer, Inhibition, LayerResponse, integrate_sample, predict,
                     select_thresholds)
from .plasticity import Rule, RuleConfig
from .config import ExperimentConfig
from .estimator import NCGClassifier
from .regulation import Regulation, ThresholdState
from .training import TrainConfig, UpdateLedger, evaluate, fit, gridsearch, kfold_evaluate

__version__ = "0.1.0"
