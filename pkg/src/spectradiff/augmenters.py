"""Comparison augmenters operating on normalized spectra.

jitter adds per-band Gaussian noise; scale multiplies a signature by one
Gaussian factor; magnitude warping multiplies by a smooth random curve
(natural cubic spline through Gaussian anchors at equally spaced bands);
SMOTE interpolates toward a nearest same-class neighbor.  All methods are
pure functions of (input, config, seed) and never touch real rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .dataio import SYNTHETIC, Dataset, make_dataset
from .errors import ConfigError, ContractError
from .util import random_smooth_curve, rng_from_seed

log = logging.getLogger(__name__)

METHODS = ("jitter", "scale", "magnitude_warp", "smote", "diffusion")


@dataclass(frozen=True)
class AugmentConfig:
    method: str
    per_class_count: int
    noise_power: float = 0.03
    anchors: int = 4
    k_neighbors: int = 5
    seed: int = 0

    def validate(self, bands: Optional[int] = None):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.per_class_count < 0:
            raise ConfigError("per_class_count must be nonnegative")
        if self.method in ("jitter", "scale", "magnitude_warp") and self.noise_power < 0:
            raise ConfigError("noise_power must be nonnegative")
        if self.method == "magnitude_warp":
            if self.anchors < 2:
                raise ConfigError("magnitude warping needs at least 2 anchors")
            if bands is not None and self.anchors > bands:
                raise ConfigError(f"anchors ({self.anchors}) exceed band count ({bands})")
        if self.method == "smote" and self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")


def jitter(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """x + N(0, sigma^2 I)."""
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def scale(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """s * x with a single factor s ~ N(1, sigma^2) per signature."""
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x * rng.normal(1.0, sigma)


def magnitude_warp(x: np.ndarray, sigma: float, anchors: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Multiply by a smooth curve through N(1, sigma^2) anchor values."""
    x = np.asarray(x, dtype=np.float64)
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    if anchors < 2:
        raise ConfigError("magnitude warping needs at least 2 anchors")
    if anchors > x.shape[-1]:
        raise ConfigError(f"anchors ({anchors}) exceed band count ({x.shape[-1]})")
    if sigma == 0:
        return x.copy()
    return x * random_smooth_curve(x.shape[-1], sigma, anchors, rng)


def nearest_neighbors(x: np.ndarray, pool: np.ndarray, k: int,
                      exclude: Optional[int] = None) -> np.ndarray:
    """Indices of the k nearest pool rows by Euclidean distance."""
    d = np.linalg.norm(pool - x, axis=1)
    if exclude is not None:
        d[exclude] = np.inf
    order = np.argsort(d, kind="stable")
    return order[:k]


def smote(x: np.ndarray, pool: np.ndarray, k_neighbors: int, rng: np.random.Generator,
          exclude: Optional[int] = None) -> np.ndarray:
    """x + lambda * (n - x) toward one of the k nearest same-class rows.

    When the pool cannot supply k distinct neighbors, k falls back to the
    largest feasible value and a warning is logged.
    """
    x = np.asarray(x, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.float64)
    available = pool.shape[0] - (1 if exclude is not None else 0)
    if available < 1:
        raise ContractError("SMOTE needs at least one candidate neighbor")
    k = k_neighbors
    if available < k:
        k = available
        log.warning("SMOTE pool of %d rows cannot supply %d neighbors; using k=%d",
                    pool.shape[0], k_neighbors, k)
    nn = nearest_neighbors(x, pool, k, exclude=exclude)
    neighbor = pool[nn[rng.integers(0, k)]]
    lam = rng.uniform(0.0, 1.0)
    return x + lam * (neighbor - x)


def synthesize_class(ds: Dataset, class_id: int, cfg: AugmentConfig,
                     checkpoint: Optional[Tuple] = None) -> np.ndarray:
    """``per_class_count`` synthetic rows for one class, in normalized space."""
    idx = ds.class_indices(class_id)
    if idx.size == 0:
        raise ContractError(f"class {class_id} has no samples to augment from")
    pool = ds.samples[idx]
    rng = rng_from_seed(cfg.seed, index=1000 + class_id)
    count = cfg.per_class_count

    if cfg.method == "diffusion":
        from .sampler import SampleRequest, sample

        model, sched = checkpoint
        req = SampleRequest(class_id=class_id, count=count,
                            seed=int(rng.integers(0, 2**63 - 1)))
        return sample(req, model, sched)

    out = np.empty((count, ds.bands))
    for i in range(count):
        base_idx = int(rng.integers(0, pool.shape[0]))
        base = pool[base_idx]
        if cfg.method == "jitter":
            out[i] = jitter(base, cfg.noise_power, rng)
        elif cfg.method == "scale":
            out[i] = scale(base, cfg.noise_power, rng)
        elif cfg.method == "magnitude_warp":
            out[i] = magnitude_warp(base, cfg.noise_power, cfg.anchors, rng)
        elif cfg.method == "smote":
            out[i] = smote(base, pool, cfg.k_neighbors, rng, exclude=base_idx)
        else:
            raise ConfigError(f"unknown method {cfg.method!r}")
    return out


def augment_dataset(ds: Dataset, cfg: AugmentConfig,
                    checkpoint: Union[str, Tuple, None] = None) -> Dataset:
    """Append ``per_class_count`` synthetic rows per class, tagged as such.

    ``checkpoint`` (a path or a loaded (model, schedule) pair) is required
    for the diffusion method and ignored otherwise.
    """
    cfg.validate(bands=ds.bands)
    if cfg.per_class_count == 0:
        return ds

    loaded = None
    if cfg.method == "diffusion":
        if checkpoint is None:
            raise ConfigError("diffusion augmentation requires a checkpoint")
        if isinstance(checkpoint, str):
            from .denoiser import load_checkpoint
            from .schedule import build_schedule

            model, sched_cfg = load_checkpoint(checkpoint)
            loaded = (model, build_schedule(sched_cfg))
        else:
            loaded = checkpoint
        if loaded[0].config.bands != ds.bands:
            raise ConfigError(f"checkpoint expects {loaded[0].config.bands} bands, dataset has {ds.bands}")

    new_rows = []
    new_labels = []
    for c in range(ds.num_classes):
        rows = synthesize_class(ds, c, cfg, checkpoint=loaded)
        new_rows.append(rows)
        new_labels.append(np.full(rows.shape[0], c, dtype=np.int64))

    synth = np.concatenate(new_rows, axis=0)
    samples = np.concatenate([ds.samples, synth], axis=0)
    labels = np.concatenate([ds.labels, np.concatenate(new_labels)])
    prov = np.concatenate([ds.provenance, np.full(synth.shape[0], SYNTHETIC, dtype="<U9")])
    return make_dataset(samples, labels, ds.class_names, provenance=prov, norm=ds.norm)
