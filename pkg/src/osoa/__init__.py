"""Lossless compression with one-shot online adaptation of a pretrained model."""

from .adapt import AdaptationSchedule, OptimizerConfig, OptimizerKind
from .container import Coder, OsoaContainer, read_container, write_container
from .models import ContextModelParams, ToyVaeParams, load_checkpoint, save_checkpoint
from .pipeline import OsoaConfig, osoa_decode, osoa_encode

__version__ = "0.1.0"
