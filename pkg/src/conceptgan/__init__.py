"""Concept-bottleneck image classifier trained jointly with a concept-conditioned GAN."""

from .data import Dataset, generate_toy, load_cifar10, load_cifar100, batches
from .model import ConceptGAN, ModelConfig, build_model
from .loss import LossWeights
from .train import TrainConfig, fit, train_step
from .evaluation import MetricReport, evaluate, build_activation_index, render_concept_grid

__version__ = "0.1.0"
