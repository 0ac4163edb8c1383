"""Desk-scale end-to-end active speaker detection on spatio-temporal graphs."""

from .autodiff import Tensor, grad_check, no_grad
from .evaluation import EvalResult, average_precision, baselines, evaluate
from .graph import GraphLayout, ModelConfig, SpeakerGraphNet, build_layout, edge_conv
from .losses import (
    LossReport,
    assignment_loss,
    contrastive_loss,
    supervised_loss,
    weak_loss,
)
from .mfcc import MfccConfig, mfcc
from .scene import (
    EndpointPlan,
    GraphSample,
    Scene,
    SynthParams,
    Tracklet,
    group_speakers,
    load_scene,
    make_endpoints,
    sample_training,
    save_scene,
    synth_scene,
)
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "EndpointPlan", "EvalResult", "GraphLayout", "GraphSample", "LossReport",
    "MfccConfig", "ModelConfig", "Scene", "SpeakerGraphNet", "SynthParams",
    "Tensor", "Tracklet", "TrainConfig", "TrainResult", "assignment_loss",
    "average_precision", "baselines", "build_layout", "contrastive_loss",
    "edge_conv", "evaluate", "grad_check", "group_speakers", "load_scene",
    "make_endpoints", "mfcc", "no_grad", "sample_training", "save_scene",
    "supervised_loss", "synth_scene", "train", "weak_loss",
]
