"""Seeding helpers shared by every stochastic component.

All randomness in the package flows through ``numpy.random.Generator``
instances built here, so that equal seeds give bit-identical runs and
parallel work can derive independent, reproducible streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int = 0) -> int:
    """Derive the ``index``-th 64-bit stream seed from ``seed``.

    One step of the splitmix64 mixer per index increment; cheap, stateless,
    and well distributed even for consecutive indices.
    """
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def rng_from_seed(seed: int, index: int = 0) -> np.random.Generator:
    """PCG64 generator for stream ``index`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(splitmix64(int(seed), index)))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used for byte-stable CSV output."""
    return repr(float(x))


def random_smooth_curve(bands: int, sigma: float, anchors: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative curve around 1 over ``bands`` positions.

    Anchor values ~ N(1, sigma^2) sit at ``anchors`` equally spaced band
    indices (endpoints included); a natural cubic spline through them is
    evaluated at every band.
    """
    from scipy.interpolate import CubicSpline

    if anchors < 2:
        raise ValueError(f"need at least 2 anchors, got {anchors}")
    positions = np.linspace(0.0, bands - 1.0, anchors)
    values = rng.normal(1.0, sigma, size=anchors)
    spline = CubicSpline(positions, values, bc_type="natural")
    return spline(np.arange(bands, dtype=np.float64))
