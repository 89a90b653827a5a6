"""GAN-CIRCLE: cycle-consistent GAN super-resolution for CT slices."""
from .losses import LossWeights
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)
from .training import TrainConfig, init_state, train, train_step

__version__ = "0.1.0"

__all__ = [
    "DiscriminatorConfig",
    "GeneratorConfig",
    "LossWeights",
    "TrainConfig",
    "build_discriminator",
    "build_generator",
    "init_state",
    "train",
    "train_step",
]
