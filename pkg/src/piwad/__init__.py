"""Interpretable wide-and-deep regression with GAN-based total effects."""

from .data import DataError, FeatureTable, Normalizer, load_dataset
from .model import ModelConfig, PiWadModel, init_model
from .training import GanConfig, TrainConfig, cross_validate, metrics, train
from .wgan import fidelity_audit, sample_synthetic, train_wgan
from .effects import dynamic_total_effect, effect_report, main_effect
from .checkpoint import load_gan, load_model, save_gan, save_model

__all__ = [
    "DataError",
    "FeatureTable",
    "GanConfig",
    "ModelConfig",
    "Normalizer",
    "PiWadModel",
    "TrainConfig",
    "cross_validate",
    "dynamic_total_effect",
    "effect_report",
    "fidelity_audit",
    "init_model",
    "load_dataset",
    "load_gan",
    "load_model",
    "main_effect",
    "metrics",
    "sample_synthetic",
    "save_gan",
    "save_model",
    "train",
    "train_wgan",
]
