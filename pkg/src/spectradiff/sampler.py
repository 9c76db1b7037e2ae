"""Ancestral sampling of class-conditioned synthetic spectra.

Chains start from standard Gaussian noise and walk t = T..1 through the
learned per-step Gaussians.  Every chain owns an independent RNG stream
derived from the request seed, so parallel, serial, and split runs agree
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as g
from .diffusion import model_log_var, predict_x0_from_eps, q_posterior
from .errors import ConfigError, ContractError
from .schedule import NoiseSchedule
from .util import rng_from_seed


@dataclass(frozen=True)
class SampleRequest:
    class_id: int
    count: int
    seed: int
    clamp: bool = True
    chain_offset: int = 0  # chain i uses stream seed splitmix64(seed, offset+i)

    def validate(self, num_classes: int):
        if not (0 <= self.class_id < num_classes):
            raise ConfigError(f"class_id {self.class_id} out of range 0..{num_classes - 1}")
        if self.count < 1:
            raise ConfigError(f"count must be positive, got {self.count}")


def p_sample_step(xt: np.ndarray, t: int, y: np.ndarray, model, sched: NoiseSchedule,
                  rng: np.random.Generator = None, z: np.ndarray = None) -> np.ndarray:
    """One reverse step x_t -> x_{t-1}.

    The mean goes through the clamped path: predict x0_hat from the noise
    estimate, clamp to [-1, 1], and take the true-posterior mean at that
    x0_hat.  Noise is injected for t > 1; the final step is deterministic.
    Callers may inject ``z`` directly (per-chain streams); otherwise it is
    drawn from ``rng``.
    """
    if not (1 <= t <= sched.T):
        raise ContractError(f"t must lie in 1..{sched.T}, got {t}")
    xt = np.asarray(xt, dtype=np.float64)
    n = xt.shape[0]
    tv = np.full(n, t, dtype=np.int64)
    with g.no_grad():
        eps_hat, v = model.apply(xt, tv, y)
        log_var = model_log_var(v, tv, sched).data
    x0_hat = predict_x0_from_eps(xt, eps_hat.data, tv, sched, clamp=True)
    mean = q_posterior(x0_hat, xt, tv, sched).mean
    if t == 1:
        return mean
    if z is None:
        if rng is None:
            raise ContractError("p_sample_step needs rng or z for t > 1")
        z = rng.standard_normal(xt.shape)
    return mean + np.exp(0.5 * log_var) * z


def sample(req: SampleRequest, model, sched: NoiseSchedule) -> np.ndarray:
    """Generate ``count`` spectra of ``class_id``; pure in (request, params, schedule).

    Chain i draws its start and every step's noise from its own stream, so
    a count=2k run equals the concatenation of count=k runs at chain
    offsets 0 and k.
    """
    req.validate(model.config.num_classes)
    bands = model.config.bands
    rngs = [rng_from_seed(req.seed, req.chain_offset + i) for i in range(req.count)]
    x = np.stack([r.standard_normal(bands) for r in rngs])
    y = np.full(req.count, req.class_id, dtype=np.int64)
    for t in range(sched.T, 0, -1):
        z = np.stack([r.standard_normal(bands) for r in rngs]) if t > 1 else None
        x = p_sample_step(x, t, y, model, sched, z=z)
    if req.clamp:
        x = np.clip(x, -1.0, 1.0)
    return x


def denormalize(samples: np.ndarray, norm) -> np.ndarray:
    """Map model-range samples back to reflectance scale via the ingestion record."""
    if norm is None:
        raise ContractError("no normalization record present")
    return norm.denormalize(samples)
