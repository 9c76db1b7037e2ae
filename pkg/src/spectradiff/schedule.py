"""The modified cosine variance schedule and its derived per-step constants.

The noise level curve is f(t) = cos(((t/T + s)/(1 + s)) * pi/2) ** delta,
with the cumulative signal fraction abar_t = f(t)/f(0) and step variances
beta_t = clip(1 - abar_t/abar_{t-1}, clip_max).  delta = 1.2 flattens the
curve at small t, giving smaller early-step variances than the plain
squared cosine; delta = 2 recovers the squared-cosine baseline.

Index convention: arrays hold t = 1..T at positions 0..T-1.  abar_{t-1}
with the virtual abar_0 = 1 is exposed through :meth:`NoiseSchedule.alpha_bar_prev`,
so the posterior formulas can be written exactly as stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

NORM_MODES = ("mean", "max", "none")

# Floor applied wherever a log of the posterior variance is needed; the raw
# posterior variance at t=1 is exactly zero.
VAR_FLOOR = 1e-20


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 1000
    s: float = 0.008
    delta: float = 1.2
    gamma: float = 2.0
    clip_max: float = 0.999
    weight_norm: str = "mean"

    def validate(self):
        if self.T < 1:
            raise ConfigError(f"timestep count must be >= 1, got {self.T}")
        if self.s <= 0:
            raise ConfigError(f"offset s must be positive, got {self.s}")
        if self.delta <= 0:
            raise ConfigError(f"exponent delta must be positive, got {self.delta}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not (0.0 < self.clip_max < 1.0):
            raise ConfigError(f"clip_max must lie in (0, 1), got {self.clip_max}")
        if self.weight_norm not in NORM_MODES:
            raise ConfigError(f"weight_norm must be one of {NORM_MODES}, got {self.weight_norm!r}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep constants for t = 1..T (stored at index t-1)."""

    config: ScheduleConfig
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray
    snr: np.ndarray
    loss_weight: np.ndarray
    _abar_ext: np.ndarray = field(repr=False, default=None)  # [1, abar_1..abar_T]

    @property
    def T(self) -> int:
        return self.config.T

    def alpha_bar_prev(self, t) -> np.ndarray:
        """abar_{t-1} for 1-based t (scalar or array); abar_0 == 1 exactly."""
        return self._abar_ext[np.asarray(t, dtype=np.int64) - 1]

    def posterior_log_var_floored(self, t) -> np.ndarray:
        """log of the posterior variance, floored so t=1 stays finite."""
        pv = self.posterior_var[np.asarray(t, dtype=np.int64) - 1]
        return np.log(np.maximum(pv, VAR_FLOOR))

    def at(self, name: str, t) -> np.ndarray:
        """Gather a schedule array at 1-based timesteps ``t``."""
        return getattr(self, name)[np.asarray(t, dtype=np.int64) - 1]


def cosine_signal(t: float, T: int, s: float, delta: float) -> float:
    """Scalar f(t) = cos(((t/T + s)/(1 + s)) * pi/2) ** delta."""
    return math.cos(((t / T + s) / (1.0 + s)) * (math.pi / 2.0)) ** delta


def build_schedule(cfg: ScheduleConfig) -> NoiseSchedule:
    """Construct all derived arrays from the modified cosine curve.

    Step variances come from ratios of the raw curve, clipped at
    ``clip_max`` (the ratio collapses to 0 at t=T, so the clip is always
    active there).  The stored alpha_bar is then recomputed as the running
    product of (1 - beta), which keeps every invariant intact after
    clipping; it deviates from f(t)/f(0) only where the clip fired.
    """
    cfg.validate()
    T = cfg.T
    ts = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((ts / T + cfg.s) / (1.0 + cfg.s)) * (np.pi / 2.0)) ** cfg.delta
    abar_raw = f / f[0]
    beta = np.minimum(1.0 - abar_raw[1:] / abar_raw[:-1], cfg.clip_max)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    abar_ext = np.concatenate(([1.0], alpha_bar))
    posterior_var = (1.0 - alpha) * (1.0 - abar_ext[:-1]) / (1.0 - alpha_bar)
    snr = alpha_bar / (1.0 - alpha_bar)
    weight = loss_weights_from_snr(snr, cfg.gamma, cfg.weight_norm)
    return NoiseSchedule(
        config=cfg,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_var=posterior_var,
        snr=snr,
        loss_weight=weight,
        _abar_ext=abar_ext,
    )


def loss_weights_from_snr(snr: np.ndarray, gamma: float, norm: str = "mean") -> np.ndarray:
    """w_t = norm(SNR(t) / (SNR(t)*gamma + 1)).

    The raw weight emphasizes early (low-t, high-SNR) steps; gamma tempers
    how strong that emphasis is.  Normalization modes: "mean" rescales so
    the weights average to 1 (keeps the loss on the unweighted-MSE scale),
    "max" rescales the largest weight to 1, "none" leaves them raw.
    """
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if norm not in NORM_MODES:
        raise ConfigError(f"norm must be one of {NORM_MODES}, got {norm!r}")
    raw = snr / (snr * gamma + 1.0)
    if norm == "mean":
        return raw / raw.mean()
    if norm == "max":
        return raw / raw.max()
    return raw.copy()


def loss_weights(sched: NoiseSchedule, gamma: float, norm: str = "mean") -> np.ndarray:
    """Recompute the weight vector of ``sched`` for a different gamma."""
    return loss_weights_from_snr(sched.snr, gamma, norm)


def schedule_rows(sched: NoiseSchedule):
    """(t, beta, alpha_bar, snr, posterior_var, loss_weight) per timestep."""
    for i in range(sched.T):
        yield (i + 1, sched.beta[i], sched.alpha_bar[i], sched.snr[i],
               sched.posterior_var[i], sched.loss_weight[i])
