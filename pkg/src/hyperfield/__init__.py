"""Generative modeling of continuous signals as implicit neural representations.

A convolutional encoder maps gridded signals to a latent tensor; a
transformer hypernetwork decodes latents into the weights of a sinusoidal
coordinate network; a latent denoising-diffusion prior supplies samples.
"""

__version__ = "0.1.0"

from .diffusion import NoiseSchedule, ddim_sample, make_schedule
from .hyperdecoder import HDConfig, HyperDecoder, reconstruct_weights
from .inr import CoordinateGrid, INRConfig, INRParams, inr_forward, make_coordinate_grid
from .pipeline import Checkpoint, load_checkpoint, save_checkpoint
from .tensorio import Dataset, load_ppm, make_synthetic_dataset, read_tensor, save_ppm, write_tensor

__all__ = [
    "CoordinateGrid",
    "Checkpoint",
    "Dataset",
    "HDConfig",
    "HyperDecoder",
    "INRConfig",
    "INRParams",
    "NoiseSchedule",
    "ddim_sample",
    "inr_forward",
    "load_checkpoint",
    "load_ppm",
    "make_coordinate_grid",
    "make_schedule",
    "make_synthetic_dataset",
    "read_tensor",
    "reconstruct_weights",
    "save_checkpoint",
    "save_ppm",
    "write_tensor",
    "__version__",
]
