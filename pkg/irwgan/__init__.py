"""
IrwGAN Package
Importance-reweighted unpaired image-to-image translation.
"""

__version__ = "0.1.0"

from .config import settings, ExperimentConfig, NetworkConfig, desk_network, full_network
from .errors import (
    IrwError,
    ConfigError,
    DivergenceError,
    MissingArtifactError,
    ArtifactIOError,
    DatasetError,
    ShapeError,
)
from .core import DomainDataset, Batch, EpochSampler, load_dataset, compose_unaligned, sample_batch
from .diffnet import NetworkKind, NetworkSpec, Network, build_network, lr_schedule, grad_check
from .importance import WeightVector, WeightReport, batch_weights, dataset_weights
from .losses import LossReport, disc_loss, gen_adv_loss, ess_loss, cycle_loss, identity_loss, assemble
from .metrics import fid, kid, beta_report, ess_statistic, weight_histogram
from .synthdata import GenSpec, SynthSpec, render, make_unaligned_pair, make_pair
from .trainer import TrainState, train_step, run_training, hypothesis_probe, save_checkpoint, load_checkpoint

__all__ = [
    "__version__",
    "settings",
    "ExperimentConfig",
    "NetworkConfig",
    "desk_network",
    "full_network",
    # Errors
    "IrwError",
    "ConfigError",
    "DivergenceError",
    "MissingArtifactError",
    "ArtifactIOError",
    "DatasetError",
    "ShapeError",
    # Data
    "DomainDataset",
    "Batch",
    "EpochSampler",
    "load_dataset",
    "compose_unaligned",
    "sample_batch",
    # Networks
    "NetworkKind",
    "NetworkSpec",
    "Network",
    "build_network",
    "lr_schedule",
    "grad_check",
    # Weights + losses
    "WeightVector",
    "WeightReport",
    "batch_weights",
    "dataset_weights",
    "LossReport",
    "disc_loss",
    "gen_adv_loss",
    "ess_loss",
    "cycle_loss",
    "identity_loss",
    "assemble",
    # Metrics
    "fid",
    "kid",
    "beta_report",
    "ess_statistic",
    "weight_histogram",
    # Synthetic domains
    "GenSpec",
    "SynthSpec",
    "render",
    "make_unaligned_pair",
    "make_pair",
    # Training
    "TrainState",
    "train_step",
    "run_training",
    "hypothesis_probe",
    "save_checkpoint",
    "load_checkpoint",
]
