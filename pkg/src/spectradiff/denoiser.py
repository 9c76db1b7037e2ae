"""Class-conditioned transformer that predicts per-band noise and variance.

The spectrum is split into non-overlapping length-p patches, linearly
projected, and given a learned positional embedding.  A sinusoidal timestep
embedding (passed through a two-layer MLP) is summed with a learned class
embedding into one conditioning vector, which drives every block through
adaptive layer normalization: zero-initialized projections emit
shift/scale/gate triples for the attention and MLP sub-layers, so each
block starts as an exact identity and the output head starts at zero
(eps_hat = 0 and v = 0.5 everywhere before training).

The head emits two values per band: the noise estimate and v in [0, 1],
which interpolates the model log-variance between log beta_t and the log
posterior variance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from . import gradcore as g
from .diffusion import GaussianMoments, model_log_var
from .errors import ConfigError, ContractError, ParseError
from .schedule import NoiseSchedule, ScheduleConfig
from .util import rng_from_seed

CHECKPOINT_MAGIC = b"SPDIFCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    bands: int
    num_classes: int
    patch_size: int = 8
    hidden: int = 64
    depth: int = 2
    heads: int = 2
    mlp_ratio: int = 4

    def validate(self):
        for name in ("bands", "num_classes", "patch_size", "hidden", "depth", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")

    @property
    def num_patches(self) -> int:
        return -(-self.bands // self.patch_size)  # ceil

    @property
    def padded_bands(self) -> int:
        return self.num_patches * self.patch_size


def sinusoidal_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Frequency encoding of integer timesteps.

    half = dim // 2; freqs_j = max_period ** (-j / half) for j = 0..half-1;
    output = [cos(t * freqs), sin(t * freqs)], zero-padded by one column
    when dim is odd.
    """
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)
    return emb


class Denoiser:
    """The network plus its parameter store (flat, name-addressable)."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.params = g.Params()
        self._init_params(rng_from_seed(seed, index=7))
        h = config.hidden
        self._ln_gain = g.Tensor(np.ones(h))
        self._ln_bias = g.Tensor(np.zeros(h))

    # -- construction ---------------------------------------------------

    def _init_params(self, rng: np.random.Generator):
        c = self.config
        h, p, P = c.hidden, c.patch_size, c.num_patches
        std = 0.02

        def normal(shape):
            return rng.normal(0.0, std, size=shape)

        add = self.params.add
        add("patch_proj.w", normal((p, h)))
        add("patch_proj.b", np.zeros(h))
        add("pos_emb", normal((P, h)))
        add("class_emb", normal((c.num_classes, h)))
        add("time_mlp.w1", normal((h, h)))
        add("time_mlp.b1", np.zeros(h))
        add("time_mlp.w2", normal((h, h)))
        add("time_mlp.b2", np.zeros(h))
        for i in range(c.depth):
            pre = f"block{i}."
            add(pre + "qkv.w", normal((h, 3 * h)))
            add(pre + "qkv.b", np.zeros(3 * h))
            add(pre + "attn_out.w", normal((h, h)))
            add(pre + "attn_out.b", np.zeros(h))
            add(pre + "mlp.w1", normal((h, c.mlp_ratio * h)))
            add(pre + "mlp.b1", np.zeros(c.mlp_ratio * h))
            add(pre + "mlp.w2", normal((c.mlp_ratio * h, h)))
            add(pre + "mlp.b2", np.zeros(h))
            # Zero-init: every block starts as an identity on its tokens.
            add(pre + "adaln.w", np.zeros((h, 6 * h)))
            add(pre + "adaln.b", np.zeros(6 * h))
        add("final.adaln.w", np.zeros((h, 2 * h)))
        add("final.adaln.b", np.zeros(2 * h))
        add("final.head.w", np.zeros((h, 2 * p)))
        add("final.head.b", np.zeros(2 * p))

    # -- conditioning ---------------------------------------------------

    def embed_timestep(self, t: np.ndarray) -> g.Tensor:
        """Sinusoidal encoding of t followed by a two-layer GELU MLP."""
        t = np.asarray(t, dtype=np.int64)
        if t.size and t.min() < 1:
            raise ContractError("timesteps must be >= 1")
        sin = g.Tensor(sinusoidal_embedding(t, self.config.hidden))
        p = self.params
        hidden = g.gelu(g.add(g.matmul(sin, p["time_mlp.w1"]), p["time_mlp.b1"]))
        return g.add(g.matmul(hidden, p["time_mlp.w2"]), p["time_mlp.b2"])

    def condition_vector(self, t: np.ndarray, y: np.ndarray) -> g.Tensor:
        """Timestep embedding summed with the class embedding row."""
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.config.num_classes):
            raise ContractError(f"class id out of range 0..{self.config.num_classes - 1}")
        return g.add(self.embed_timestep(t), g.embedding(self.params["class_emb"], y))

    # -- transformer ----------------------------------------------------

    def _modulate(self, x: g.Tensor, shift: g.Tensor, scale: g.Tensor, n: int) -> g.Tensor:
        h = self.config.hidden
        scale = g.reshape(scale, (n, 1, h))
        shift = g.reshape(shift, (n, 1, h))
        return g.add(g.mul(x, g.add(scale, 1.0)), shift)

    def _attention(self, x: g.Tensor, i: int, n: int, P: int) -> g.Tensor:
        c = self.config
        h, heads = c.hidden, c.heads
        hd = h // heads
        p = self.params
        qkv = g.add(g.matmul(x, p[f"block{i}.qkv.w"]), p[f"block{i}.qkv.b"])
        q, k, v = (g.slice_(qkv, (slice(None), slice(None), slice(j * h, (j + 1) * h))) for j in range(3))

        def heads_first(z):
            z = g.reshape(z, (n, P, heads, hd))
            z = g.transpose(z, (0, 2, 1, 3))
            return g.reshape(z, (n * heads, P, hd))

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        att = g.matmul(g.mul(q, 1.0 / np.sqrt(hd)), g.transpose(k, (0, 2, 1)))
        att = g.softmax(att, axis=-1)
        out = g.matmul(att, v)
        out = g.reshape(out, (n, heads, P, hd))
        out = g.transpose(out, (0, 2, 1, 3))
        out = g.reshape(out, (n, P, h))
        return g.add(g.matmul(out, p[f"block{i}.attn_out.w"]), p[f"block{i}.attn_out.b"])

    def apply_block(self, i: int, tokens: g.Tensor, cond: g.Tensor) -> g.Tensor:
        """One AdaLN-Zero block: cond -> (shift, scale, gate) per sub-layer."""
        c = self.config
        h = c.hidden
        n, P = tokens.shape[0], tokens.shape[1]
        p = self.params
        mod = g.add(g.matmul(g.gelu(cond), p[f"block{i}.adaln.w"]), p[f"block{i}.adaln.b"])
        chunks = [g.slice_(mod, (slice(None), slice(j * h, (j + 1) * h))) for j in range(6)]
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = chunks

        normed = g.layernorm(tokens, self._ln_gain, self._ln_bias)
        attn = self._attention(self._modulate(normed, shift_a, scale_a, n), i, n, P)
        tokens = g.add(tokens, g.mul(g.reshape(gate_a, (n, 1, h)), attn))

        normed = g.layernorm(tokens, self._ln_gain, self._ln_bias)
        hmid = g.gelu(g.add(g.matmul(self._modulate(normed, shift_m, scale_m, n),
                                     p[f"block{i}.mlp.w1"]), p[f"block{i}.mlp.b1"]))
        mlp = g.add(g.matmul(hmid, p[f"block{i}.mlp.w2"]), p[f"block{i}.mlp.b2"])
        return g.add(tokens, g.mul(g.reshape(gate_m, (n, 1, h)), mlp))

    def apply(self, xt: np.ndarray, t: np.ndarray, y: np.ndarray) -> Tuple[g.Tensor, g.Tensor]:
        """Tape-recorded forward: (eps_hat, v) as (n, bands) tensors."""
        c = self.config
        xt = np.asarray(xt, dtype=np.float64)
        if xt.ndim != 2 or xt.shape[1] != c.bands:
            raise ConfigError(f"expected (n, {c.bands}) input, got {xt.shape}")
        n = xt.shape[0]
        P, p_sz = c.num_patches, c.patch_size
        if c.padded_bands != c.bands:
            xt = np.pad(xt, ((0, 0), (0, c.padded_bands - c.bands)))

        patches = g.reshape(g.Tensor(xt), (n, P, p_sz))
        tokens = g.add(g.matmul(patches, self.params["patch_proj.w"]), self.params["patch_proj.b"])
        tokens = g.add(tokens, self.params["pos_emb"])

        cond = self.condition_vector(t, y)
        for i in range(c.depth):
            tokens = self.apply_block(i, tokens, cond)

        mod = g.add(g.matmul(g.gelu(cond), self.params["final.adaln.w"]), self.params["final.adaln.b"])
        h = c.hidden
        shift = g.slice_(mod, (slice(None), slice(0, h)))
        scale = g.slice_(mod, (slice(None), slice(h, 2 * h)))
        normed = g.layernorm(tokens, self._ln_gain, self._ln_bias)
        out = g.add(g.matmul(self._modulate(normed, shift, scale, n), self.params["final.head.w"]),
                    self.params["final.head.b"])  # (n, P, 2p)

        eps_hat = g.reshape(g.slice_(out, (slice(None), slice(None), slice(0, p_sz))), (n, c.padded_bands))
        v_raw = g.reshape(g.slice_(out, (slice(None), slice(None), slice(p_sz, 2 * p_sz))), (n, c.padded_bands))
        if c.padded_bands != c.bands:
            eps_hat = g.slice_(eps_hat, (slice(None), slice(0, c.bands)))
            v_raw = g.slice_(v_raw, (slice(None), slice(0, c.bands)))
        return eps_hat, g.sigmoid(v_raw)

    def predict(self, xt: np.ndarray, t: np.ndarray, y: np.ndarray,
                sched: NoiseSchedule) -> Tuple[np.ndarray, GaussianMoments]:
        """Inference forward: noise estimate plus reverse-step moments.

        mean = (xt - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t);
        variance interpolated in log space by the v head.
        """
        with g.no_grad():
            eps_hat, v = self.apply(xt, t, y)
        t = np.asarray(t, dtype=np.int64)
        beta = sched.at("beta", t)[:, None]
        abar = sched.at("alpha_bar", t)[:, None]
        alpha = sched.at("alpha", t)[:, None]
        mean = (xt - beta / np.sqrt(1.0 - abar) * eps_hat.data) / np.sqrt(alpha)
        with g.no_grad():
            log_var = model_log_var(v, t, sched).data
        return eps_hat.data, GaussianMoments(mean=mean, var=np.exp(log_var))


def forward(xt, t, y, model: Denoiser, sched: NoiseSchedule):
    """Functional alias for :meth:`Denoiser.predict`."""
    return model.predict(xt, t, y, sched)


# -- checkpoint io -----------------------------------------------------


def save_checkpoint(path: str, model: Denoiser, sched_cfg: ScheduleConfig):
    """Single self-describing flat file; named float64 arrays, little-endian."""
    arrays = model.params.state_arrays()
    header = {
        "version": CHECKPOINT_VERSION,
        "denoiser": asdict(model.config),
        "schedule": asdict(sched_cfg),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in arrays:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Tuple[Denoiser, ScheduleConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {header.get('version')}")
        cfg = DenoiserConfig(**header["denoiser"])
        sched_cfg = ScheduleConfig(**header["schedule"])
        model = Denoiser(cfg, seed=0)
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ParseError(f"truncated checkpoint while reading {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        model.params.load_arrays(arrays)
    return model, sched_cfg
