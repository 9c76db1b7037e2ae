"""Forward noising, true posterior, Gaussian KL, and the training objective.

The loss has two parts: an SNR-weighted squared error on the predicted
noise, and a KL term between the true denoising posterior and the model's
per-step Gaussian.  The KL is evaluated only at the sampled timestep (an
unbiased single-term estimate of the per-step sum) and, by default, sees a
gradient-detached mean, so it trains only the learned variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import gradcore as g
from .errors import ContractError
from .schedule import NoiseSchedule, VAR_FLOOR
from .util import rng_from_seed


@dataclass(frozen=True)
class NoisedBatch:
    """A batch noised to per-item timesteps: xt = sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""

    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    xt: np.ndarray


@dataclass(frozen=True)
class GaussianMoments:
    """Diagonal Gaussian per batch item: mean and variance arrays (batch, bands)."""

    mean: np.ndarray
    var: np.ndarray


def _check_t(t: np.ndarray, T: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 1 or t.max() > T):
        raise ContractError(f"timesteps must lie in 1..{T}, got range [{t.min()}, {t.max()}]")
    return t


def _col(arr: np.ndarray) -> np.ndarray:
    """(batch,) -> (batch, 1) for broadcasting against (batch, bands)."""
    return arr[:, None]


def q_sample(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> NoisedBatch:
    """Closed-form forward noising at per-item timesteps.

    The caller supplies standard-normal ``eps`` so the draw is injectable
    for tests; the result is deterministic given the inputs.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    t = _check_t(t, sched.T)
    ab = _col(sched.at("alpha_bar", t))
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return NoisedBatch(x0=x0, t=t, eps=eps, xt=xt)


def q_posterior(x0: np.ndarray, xt: np.ndarray, t: np.ndarray, sched: NoiseSchedule) -> GaussianMoments:
    """Moments of the true denoising posterior q(x_{t-1} | x_t, x_0).

    mean = (sqrt(alpha_t)(1-abar_{t-1}) xt + sqrt(abar_{t-1})(1-alpha_t) x0) / (1-abar_t)
    var  = (1-alpha_t)(1-abar_{t-1}) / (1-abar_t)

    The raw variance vanishes at t=1 (abar_0 = 1); it is floored at
    ``VAR_FLOOR`` so downstream log-variances stay finite.
    """
    t = _check_t(t, sched.T)
    alpha = _col(sched.at("alpha", t))
    abar = _col(sched.at("alpha_bar", t))
    abar_prev = _col(sched.alpha_bar_prev(t))
    denom = 1.0 - abar
    mean = (np.sqrt(alpha) * (1.0 - abar_prev) * xt + np.sqrt(abar_prev) * (1.0 - alpha) * x0) / denom
    var = np.maximum((1.0 - alpha) * (1.0 - abar_prev) / denom, VAR_FLOOR)
    return GaussianMoments(mean=mean, var=np.broadcast_to(var, mean.shape).copy())


def predict_x0_from_eps(xt: np.ndarray, eps_hat: np.ndarray, t: np.ndarray,
                        sched: NoiseSchedule, clamp: bool = True) -> np.ndarray:
    """Invert the closed-form noising: x0_hat = (xt - sqrt(1-abar_t) eps_hat) / sqrt(abar_t).

    With ``clamp`` the estimate is clipped to the model range [-1, 1].
    """
    t = _check_t(t, sched.T)
    ab = _col(sched.at("alpha_bar", t))
    x0_hat = (xt - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    if clamp:
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
    return x0_hat


def gaussian_kl(p: GaussianMoments, q: GaussianMoments) -> np.ndarray:
    """D_KL(p || q) per batch item, summed over bands, for diagonal Gaussians.

    0.5 * sum_b [ log(var_q/var_p) + (var_p + (mu_p - mu_q)^2)/var_q - 1 ]
    """
    for m in (p, q):
        if np.any(np.asarray(m.var) <= 0):
            raise ContractError("gaussian_kl needs strictly positive variances")
    dmu2 = (p.mean - q.mean) ** 2
    terms = np.log(q.var / p.var) + (p.var + dmu2) / q.var - 1.0
    return 0.5 * terms.sum(axis=-1)


def model_log_var(v: g.Tensor, t: np.ndarray, sched: NoiseSchedule) -> g.Tensor:
    """Interpolate the learned log-variance between log beta_t and log var_tilde(t).

    v in [0, 1] per band; the result stays inside the provably valid
    [var_tilde, beta] range (with var_tilde floored at t=1).
    """
    log_beta = _col(np.log(sched.at("beta", t)))
    log_post = _col(sched.posterior_log_var_floored(t))
    return g.add(g.mul(v, log_beta), g.mul(g.sub(1.0, v), log_post))


class LossParts(NamedTuple):
    total: g.Tensor
    mse: float
    vlb: float


def hybrid_loss_parts(eps_hat: g.Tensor, v: g.Tensor, batch: NoisedBatch,
                      sched: NoiseSchedule, lambda_vlb: float,
                      detach_kl_mean: bool = True) -> LossParts:
    """Assemble the loss from denoiser outputs (testable with oracle outputs).

    total = mean_batch[ w(t) * ||eps_hat - eps||^2 ]
          + lambda_vlb * mean_batch[ D_KL(q(x_{t-1}|x_t,x_0) || p_theta(x_{t-1}|x_t,y)) ]

    With ``detach_kl_mean`` the KL sees the model mean as a constant, so
    that term trains only the variance head.
    """
    t = batch.t
    w = _col(sched.at("loss_weight", t))
    err = g.sub(eps_hat, batch.eps)
    per_item = g.sum_(g.mul(g.mul(err, err), w), axis=1)
    mse_term = g.mean(per_item)

    post = q_posterior(batch.x0, batch.xt, t, sched)
    log_var_tilde = np.log(post.var)

    alpha = _col(sched.at("alpha", t))
    abar = _col(sched.at("alpha_bar", t))
    coef = _col(sched.at("beta", t)) / np.sqrt(1.0 - abar)
    mu_theta = g.div(g.sub(batch.xt, g.mul(coef, eps_hat)), np.sqrt(alpha))
    if detach_kl_mean:
        mu_theta = mu_theta.detach()
    log_var_theta = model_log_var(v, t, sched)

    # D_KL(posterior || model) expanded in log-variance form.
    dmu2 = g.power(g.sub(post.mean, mu_theta), 2.0)
    inv_var_theta = g.exp(g.mul(log_var_theta, -1.0))
    kl_band = g.mul(
        g.add(
            g.sub(log_var_theta, log_var_tilde),
            g.sub(g.mul(g.add(post.var, dmu2), inv_var_theta), 1.0),
        ),
        0.5,
    )
    vlb_term = g.mean(g.sum_(kl_band, axis=1))

    total = g.add(mse_term, g.mul(vlb_term, lambda_vlb))
    return LossParts(total=total, mse=mse_term.item(), vlb=vlb_term.item())


def hybrid_loss(batch: NoisedBatch, y: np.ndarray, params, sched: NoiseSchedule,
                lambda_vlb: float = 0.001, detach_kl_mean: bool = True) -> g.Tensor:
    """Full objective through the denoiser; differentiable w.r.t. its params."""
    eps_hat, v = params.apply(batch.xt, batch.t, y)
    return hybrid_loss_parts(eps_hat, v, batch, sched, lambda_vlb, detach_kl_mean).total


class TrainStepResult(NamedTuple):
    loss: float
    mse: float
    vlb: float


def clip_grad_norm(params, max_norm: float):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    The variance term of the loss starts out steep (the floored t=1
    posterior variance makes its early gradients enormous); clipping keeps
    those transients from swamping the optimizer's moment estimates.
    """
    total = 0.0
    grads = [t.grad for t in params.tensors() if t.grad is not None]
    for arr in grads:
        total += float((arr * arr).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for arr in grads:
            arr *= scale
    return norm


def train_step(x0: np.ndarray, y: np.ndarray, params, sched: NoiseSchedule,
               opt, rng: np.random.Generator, lambda_vlb: float = 0.001,
               grad_clip: Optional[float] = 1.0) -> TrainStepResult:
    """One optimization step: sample t and eps, build the loss, update.

    ``opt`` may be None (e.g. a zero learning rate), in which case the loss
    is computed and returned but no update is applied.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ContractError("train_step needs a nonempty batch")
    n = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    batch = q_sample(x0, t, eps, sched)
    eps_hat, v = params.apply(batch.xt, batch.t, np.asarray(y, dtype=np.int64))
    parts = hybrid_loss_parts(eps_hat, v, batch, sched, lambda_vlb)
    if opt is not None:
        opt.zero_grad()
        g.backward(parts.total)
        if grad_clip is not None:
            clip_grad_norm(params.params, grad_clip)
        opt.step()
    return TrainStepResult(loss=parts.total.item(), mse=parts.mse, vlb=parts.vlb)


def train_denoiser(samples: np.ndarray, labels: np.ndarray, params, sched: NoiseSchedule,
                   steps: int, batch_size: int, lr: float, weight_decay: float,
                   seed: int, lambda_vlb: float = 0.001, grad_clip: Optional[float] = 1.0,
                   log_fn=None) -> list[TrainStepResult]:
    """Random-timestep training loop over a labeled sample matrix.

    Batches are drawn with replacement from the training set; equal seeds
    give bit-identical trajectories.  Returns the per-step loss history.
    """
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if samples.shape[0] == 0:
        raise ContractError("training set is empty")
    opt = g.AdamW(params.params, lr=lr, weight_decay=weight_decay) if lr != 0 else None
    rng = rng_from_seed(seed)
    history: list[TrainStepResult] = []
    for step in range(1, steps + 1):
        idx = rng.integers(0, samples.shape[0], size=batch_size)
        res = train_step(samples[idx], labels[idx], params, sched, opt, rng, lambda_vlb, grad_clip)
        history.append(res)
        if log_fn is not None:
            log_fn(step, res)
    return history
