"""Diffusion-based data augmentation for 1-D spectral signatures.

A guided denoising diffusion model (modified cosine schedule, SNR-weighted
hybrid loss, small AdaLN-Zero transformer) for generating labeled spectra,
together with classic augmentation baselines and a classifier-based
evaluation protocol.  Everything runs on a built-in float64 autodiff layer;
no deep-learning framework required.
"""

__version__ = "0.1.0"

from . import augmenters, dataio, denoiser, diffusion, evaluate, gradcore, sampler, schedule
from .errors import ConfigError, ContractError, DimensionError, ParseError, SpectraDiffError

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "ParseError",
    "SpectraDiffError",
    "augmenters",
    "dataio",
    "denoiser",
    "diffusion",
    "evaluate",
    "gradcore",
    "sampler",
    "schedule",
]
