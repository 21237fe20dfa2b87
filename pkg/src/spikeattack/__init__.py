"""Spiking neural network simulation, surrogate-gradient backprop and adversarial attacks."""

from .coding import EventStream, aggregate_events, binarize_frames, encode_direct, encode_poisson
from .linf import AttackConfig, fgsm, pgd
from .losses import ce_loss, cw_loss
from .results import AttackResult
from .sda import PreconditionError, SdaConfig, sda_attack
from .snn import LifParams, NetworkModel, build_preset, forward, forward_soft, load_model, predict, save_model
from .stbp import input_gradient, stbp_backward
from .surrogate import SurrogateSpec, compute_sigma, surrogate_eval
from .tensor import FormatError

__version__ = "0.1.0"
