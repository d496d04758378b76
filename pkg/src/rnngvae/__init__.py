"""Recurrent neural network grammars trained as a tree-structured autoencoder.

A discriminative transition parser q(a|x) (the encoder) and a generative
transition model p(x, a) (the decoder) are trained jointly on any mix of
labeled trees and raw sentences.
"""
__version__ = "0.1.0"

from .config import TrainConfig
from .model import RNNGVAE

__all__ = ["TrainConfig", "RNNGVAE", "__version__"]
