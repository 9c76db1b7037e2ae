"""Dataset ingestion, normalization, CSV round-tripping, and the synthetic benchmark.

The on-disk sample format is a plain CSV with header ``label,b1,...,bB``;
labels are arbitrary strings, indexed by first appearance.  In memory,
samples live in the model range [-1, 1] (per-band min-max by default) with
the normalization recorded so generated spectra can be written back on the
reflectance scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ParseError
from .util import format_float, random_smooth_curve, rng_from_seed

REAL = "real"
SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class NormRecord:
    """Per-band normalization: min-max to [-1, 1] (default) or mean/std."""

    mode: str
    lo: np.ndarray   # per-band min (minmax) or mean (standard)
    hi: np.ndarray   # per-band max (minmax) or std (standard)
    constant: np.ndarray  # bands with no spread; mapped to 0 in model range

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "minmax":
            span = np.where(self.constant, 1.0, self.hi - self.lo)
            out = 2.0 * (x - self.lo) / span - 1.0
            return np.where(self.constant, 0.0, out)
        span = np.where(self.constant, 1.0, self.hi)
        out = (x - self.lo) / span
        return np.where(self.constant, 0.0, out)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.mode == "minmax":
            out = (z + 1.0) / 2.0 * (self.hi - self.lo) + self.lo
            return np.where(self.constant, self.lo, out)
        out = z * np.where(self.constant, 1.0, self.hi) + self.lo
        return np.where(self.constant, self.lo, out)


def fit_norm(samples: np.ndarray, mode: str = "minmax") -> NormRecord:
    samples = np.asarray(samples, dtype=np.float64)
    if mode == "minmax":
        lo = samples.min(axis=0)
        hi = samples.max(axis=0)
        return NormRecord(mode=mode, lo=lo, hi=hi, constant=(hi == lo))
    if mode == "standard":
        mu = samples.mean(axis=0)
        sd = samples.std(axis=0)
        return NormRecord(mode=mode, lo=mu, hi=sd, constant=(sd == 0.0))
    raise ConfigError(f"unknown normalization mode {mode!r}")


@dataclass(frozen=True)
class Dataset:
    """Band-normalized sample matrix with labels and provenance tags."""

    samples: np.ndarray          # (n, bands) in model range
    labels: np.ndarray           # (n,) int64 indices into class_names
    class_names: List[str]
    provenance: np.ndarray       # (n,) "real" | "synthetic"
    norm: Optional[NormRecord] = None

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ContractError(f"samples must be 2-D, got shape {self.samples.shape}")
        n = self.samples.shape[0]
        if self.labels.shape != (n,) or self.provenance.shape != (n,):
            raise ContractError("labels/provenance length must match samples")
        if n and not np.all(np.isfinite(self.samples)):
            raise ContractError("samples contain non-finite values")
        if n and self.labels.size and self.labels.max() >= len(self.class_names):
            raise ContractError("label index beyond class_names")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def bands(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(self, samples=self.samples[idx].copy(),
                       labels=self.labels[idx].copy(),
                       provenance=self.provenance[idx].copy())

    def real_only(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.provenance == REAL))


def make_dataset(samples: np.ndarray, labels: np.ndarray, class_names: Sequence[str],
                 provenance: Optional[np.ndarray] = None,
                 norm: Optional[NormRecord] = None) -> Dataset:
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if provenance is None:
        provenance = np.full(samples.shape[0], REAL, dtype="<U9")
    return Dataset(samples=samples, labels=labels, class_names=list(class_names),
                   provenance=np.asarray(provenance, dtype="<U9"), norm=norm)


# -- csv ingestion / emission -------------------------------------------


def ingest_csv(path: str, norm_mode: str = "minmax") -> Dataset:
    """Parse ``label,b1,...,bB`` rows, index labels, normalize per band."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split(",")
    if len(header) < 2 or header[0].strip().lower() != "label":
        raise ParseError("header must be 'label,b1,...,bB'", line=1)
    bands = len(header) - 1

    labels: List[int] = []
    class_names: List[str] = []
    index = {}
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != bands + 1:
            raise ParseError(f"expected {bands + 1} fields, found {len(parts)}", line=ln)
        name = parts[0].strip()
        if name not in index:
            index[name] = len(class_names)
            class_names.append(name)
        labels.append(index[name])
        try:
            rows.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric band value ({exc})", line=ln) from None
    if not rows:
        raise ParseError("no data rows", line=2)

    raw = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        bad = int(np.flatnonzero(~np.isfinite(raw).all(axis=1))[0])
        raise ParseError("non-finite band value", line=bad + 2)
    norm = fit_norm(raw, norm_mode)
    return make_dataset(norm.normalize(raw), np.asarray(labels), class_names, norm=norm)


def write_csv(path: str, reflectance: np.ndarray, label_names: Sequence[str]):
    """Emit rows on the reflectance scale in the ingestion layout."""
    reflectance = np.asarray(reflectance, dtype=np.float64)
    n, bands = reflectance.shape
    if len(label_names) != n:
        raise ContractError("one label per row required")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label," + ",".join(f"b{i + 1}" for i in range(bands)) + "\n")
        for i in range(n):
            vals = ",".join(format_float(v) for v in reflectance[i])
            fh.write(f"{label_names[i]},{vals}\n")


def dataset_to_csv(path: str, ds: Dataset):
    """Denormalize and write a dataset in the ingestion layout."""
    if ds.norm is None:
        raise ContractError("dataset has no normalization record")
    names = [ds.class_names[c] for c in ds.labels]
    write_csv(path, ds.norm.denormalize(ds.samples), names)


# -- synthetic benchmark -------------------------------------------------


def make_benchmark(classes: int, per_class: int, bands: int, seed: int = 0) -> Dataset:
    """Desk-scale labeled spectra with controlled class structure.

    Each class mean is a baseline plus two Gaussian bumps whose centers and
    widths are class-specific; each sample multiplies the mean by a random
    scalar ~ N(1, 0.1^2) and a smooth random curve (spline through
    N(1, 0.03^2) anchors), the two dominant variability components of real
    signatures at this scale.
    """
    if classes < 1 or per_class < 1 or bands < 1:
        raise ConfigError("classes, per_class and bands must all be positive")
    rng = rng_from_seed(seed, index=3)
    u = np.linspace(0.0, 1.0, bands)
    means = []
    for c in range(classes):
        m1 = 0.08 + 0.84 * (c + 0.5 + 0.2 * rng.uniform(-1, 1)) / classes
        m2 = (m1 + 0.37 + 0.1 * rng.uniform(-1, 1)) % 1.0
        w1 = 0.05 + 0.05 * rng.uniform()
        w2 = 0.05 + 0.05 * rng.uniform()
        a1 = 0.5 + 0.4 * rng.uniform()
        a2 = 0.3 + 0.4 * rng.uniform()
        means.append(0.25 + a1 * np.exp(-0.5 * ((u - m1) / w1) ** 2)
                     + a2 * np.exp(-0.5 * ((u - m2) / w2) ** 2))

    rows = np.empty((classes * per_class, bands))
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        for i in range(per_class):
            scale = rng.normal(1.0, 0.1)
            warp = random_smooth_curve(bands, 0.03, 6, rng)
            rows[c * per_class + i] = means[c] * scale * warp
            labels[c * per_class + i] = c
    norm = fit_norm(rows)
    names = [f"class{c:02d}" for c in range(classes)]
    return make_dataset(norm.normalize(rows), labels, names, norm=norm)
