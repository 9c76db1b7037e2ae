"""Classifier-based evaluation protocol for augmentation methods.

Pipeline per method and seed: stratified 60/20/20 split of the real data,
training subset cut to 10%, synthetic samples merged into the training set
only, learning rate and weight decay tuned by seeded log-uniform random
search on validation macro-F1, final training, and per-class/macro/weighted
F1 on the held-out test set.  Synthetic rows are barred from validation and
test by an explicit provenance check on every evaluation split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gradcore as g
from .augmenters import AugmentConfig, augment_dataset
from .dataio import REAL, Dataset
from .errors import ConfigError, ContractError
from .util import rng_from_seed

EVAL_METHODS = ("none", "jitter", "scale", "magnitude_warp", "smote", "diffusion")


# -- splitting -----------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    train_subsample_frac: float = 0.1
    seed: int = 0

    def validate(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {total}")
        if not (0.0 < self.train_subsample_frac <= 1.0):
            raise ConfigError("train_subsample_frac must lie in (0, 1]")


def _largest_remainder(n: int, fracs: Sequence[float]) -> List[int]:
    """Integer quotas for ``n`` items at the given fractions."""
    quotas = [n * f for f in fracs]
    counts = [int(np.floor(q)) for q in quotas]
    short = n - sum(counts)
    order = np.argsort([-(q - c) for q, c in zip(quotas, counts)], kind="stable")
    for i in range(short):
        counts[order[i]] += 1
    return counts


def stratified_split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Per-class shuffled partition, then random subsampling of the train part."""
    spec.validate()
    rng = rng_from_seed(spec.seed, index=11)
    train_idx, val_idx, test_idx = [], [], []
    for c in range(ds.num_classes):
        idx = ds.class_indices(c)
        if idx.size < 5:
            raise ConfigError(f"class {ds.class_names[c]!r} has only {idx.size} samples (need >= 5)")
        idx = idx[rng.permutation(idx.size)]
        n_tr, n_va, n_te = _largest_remainder(idx.size, (spec.train_frac, spec.val_frac, spec.test_frac))
        tr = idx[:n_tr]
        if spec.train_subsample_frac < 1.0:
            keep = max(1, int(round(n_tr * spec.train_subsample_frac))) if n_tr else 0
            tr = tr[rng.permutation(n_tr)[:keep]]
        train_idx.append(tr)
        val_idx.append(idx[n_tr:n_tr + n_va])
        test_idx.append(idx[n_tr + n_va:])
    return (ds.subset(np.concatenate(train_idx)),
            ds.subset(np.concatenate(val_idx)),
            ds.subset(np.concatenate(test_idx)))


# -- metrics -------------------------------------------------------------


@dataclass(frozen=True)
class F1Scores:
    """One evaluation: per-class F1 plus the two aggregates."""

    per_class: np.ndarray
    macro: float
    weighted: float


@dataclass(frozen=True)
class EvaluationReport:
    """Multi-seed summary: seed-mean scores plus the per-seed breakdown."""

    per_class_f1: np.ndarray
    macro_f1: float
    weighted_f1: float
    per_seed: List[F1Scores]
    seeds: List[int]


def f1_scores(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> F1Scores:
    """Per-class F1 = 2PR/(P+R) with the 0/0 -> 0 convention."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ContractError("pred and truth must have equal length")
    for arr, nm in ((pred, "pred"), (truth, "truth")):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ContractError(f"{nm} labels out of range 0..{num_classes - 1}")
    f1 = np.zeros(num_classes)
    support = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        support[c] = tp + fn
        denom = 2 * tp + fp + fn
        f1[c] = (2 * tp / denom) if denom else 0.0
    macro = float(f1.mean()) if num_classes else 0.0
    weighted = float((f1 * support).sum() / support.sum()) if support.sum() else 0.0
    return F1Scores(per_class=f1, macro=macro, weighted=weighted)


def mean_report(per_seed: List[F1Scores], seeds: List[int]) -> EvaluationReport:
    per_class = np.mean([s.per_class for s in per_seed], axis=0)
    return EvaluationReport(
        per_class_f1=per_class,
        macro_f1=float(np.mean([s.macro for s in per_seed])),
        weighted_f1=float(np.mean([s.weighted for s in per_seed])),
        per_seed=per_seed,
        seeds=list(seeds),
    )


# -- classifier ----------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    """Five conv layers with two additive skip connections.

    channels/kernels index the conv stack; ``skips`` are (src, dst) layer
    indices whose src output is projected 1x1 and added to the dst conv
    output before the activation.  Global average pooling feeds the linear
    head.
    """

    num_classes: int
    channels: Tuple[int, ...] = (32, 32, 64, 64, 128)
    kernels: Tuple[int, ...] = (7, 5, 3, 3, 3)
    skips: Tuple[Tuple[int, int], ...] = ((0, 2), (2, 4))

    def validate(self):
        if len(self.channels) != 5 or len(self.kernels) != 5:
            raise ConfigError("classifier has exactly five conv layers")
        if not self.skips:
            raise ConfigError("classifier needs at least one skip connection")
        for src, dst in self.skips:
            if not (0 <= src < dst < 5):
                raise ConfigError(f"bad skip ({src}, {dst})")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")


class Classifier:
    """1-D CNN over (n, bands) spectra, built on the autodiff layer."""

    def __init__(self, config: ClassifierConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.params = g.Params()
        rng = rng_from_seed(seed, index=23)
        c_in = 1
        for i, (c_out, k) in enumerate(zip(config.channels, config.kernels)):
            std = np.sqrt(2.0 / (c_in * k))
            self.params.add(f"conv{i}.w", rng.normal(0.0, std, size=(c_out, c_in, k)))
            self.params.add(f"conv{i}.b", np.zeros(c_out))
            c_in = c_out
        for src, dst in config.skips:
            cs = config.channels[src]
            cd = config.channels[dst]
            std = np.sqrt(2.0 / cs)
            self.params.add(f"skip{src}_{dst}.w", rng.normal(0.0, std, size=(cd, cs, 1)))
        std = np.sqrt(1.0 / config.channels[-1])
        self.params.add("head.w", rng.normal(0.0, std, size=(config.channels[-1], config.num_classes)))
        self.params.add("head.b", np.zeros(config.num_classes))

    def logits(self, x: np.ndarray) -> g.Tensor:
        cfg = self.config
        n = x.shape[0]
        h = g.reshape(g.Tensor(np.asarray(x, dtype=np.float64)), (n, 1, x.shape[1]))
        outputs = []
        skip_into: Dict[int, List[int]] = {}
        for src, dst in cfg.skips:
            skip_into.setdefault(dst, []).append(src)
        for i, k in enumerate(cfg.kernels):
            z = g.conv1d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], padding=k // 2)
            for src in skip_into.get(i, ()):
                z = g.add(z, g.conv1d(outputs[src], self.params[f"skip{src}_{i}.w"]))
            h = g.gelu(z)
            outputs.append(h)
        pooled = g.mean(h, axis=2)  # global average pool -> (n, channels)
        return g.add(g.matmul(pooled, self.params["head.w"]), self.params["head.b"])

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        preds = []
        with g.no_grad():
            for lo in range(0, x.shape[0], batch_size):
                preds.append(np.argmax(self.logits(x[lo:lo + batch_size]).data, axis=1))
        return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


@dataclass
class TrainRecord:
    best_epoch: int
    best_val_macro_f1: float
    epochs_run: int
    val_history: List[float] = field(default_factory=list)


def train_classifier(train: Dataset, val: Dataset, cfg: ClassifierConfig,
                     lr: float, weight_decay: float, epochs: int, seed: int,
                     batch_size: int = 64, patience: int = 20) -> Tuple[Classifier, TrainRecord]:
    """Cross-entropy training; keeps the epoch with the best validation macro-F1.

    A zero learning rate computes metrics without updating parameters.
    Deterministic for equal seeds.
    """
    if train.n == 0 or val.n == 0:
        raise ContractError("train and validation splits must be nonempty")
    cfg.validate()
    model = Classifier(cfg, seed=seed)
    opt = g.AdamW(model.params, lr=lr, weight_decay=weight_decay) if lr != 0 else None
    rng = rng_from_seed(seed, index=29)
    best = {"f1": -1.0, "epoch": 0, "arrays": model.params.state_arrays()}
    history: List[float] = []
    epochs_run = 0
    for epoch in range(1, epochs + 1):
        epochs_run = epoch
        order = rng.permutation(train.n)
        for lo in range(0, train.n, batch_size):
            idx = order[lo:lo + batch_size]
            loss = g.cross_entropy(model.logits(train.samples[idx]), train.labels[idx])
            if opt is not None:
                opt.zero_grad()
                g.backward(loss)
                opt.step()
        val_f1 = f1_scores(model.predict(val.samples), val.labels, cfg.num_classes).macro
        history.append(val_f1)
        if val_f1 > best["f1"]:
            best = {"f1": val_f1, "epoch": epoch, "arrays": model.params.state_arrays()}
        if epoch - best["epoch"] >= patience:
            break
        if opt is None:  # nothing will change; one pass is enough
            break
    model.params.load_arrays(best["arrays"])
    record = TrainRecord(best_epoch=best["epoch"], best_val_macro_f1=best["f1"],
                         epochs_run=epochs_run, val_history=history)
    return model, record


# -- hyperparameter search -------------------------------------------------


def random_search(train: Dataset, val: Dataset, trials: int,
                  lr_range: Tuple[float, float], wd_range: Tuple[float, float],
                  seed: int, cfg: ClassifierConfig, epochs: int = 40,
                  patience: int = 10, batch_size: int = 64) -> Tuple[float, float, List[dict]]:
    """Seeded log-uniform search over (lr, wd); argmax of validation macro-F1.

    Returns (best_lr, best_wd, trial_log); the log carries every trial's
    draw and score for persistence.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    for name, (lo, hi) in (("lr", lr_range), ("wd", wd_range)):
        if not (0 < lo <= hi):
            raise ConfigError(f"{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
    rng = rng_from_seed(seed, index=31)
    log: List[dict] = []
    best = (None, None, -1.0)
    for trial in range(trials):
        lr = float(np.exp(rng.uniform(np.log(lr_range[0]), np.log(lr_range[1]))))
        wd = float(np.exp(rng.uniform(np.log(wd_range[0]), np.log(wd_range[1]))))
        _, rec = train_classifier(train, val, cfg, lr, wd, epochs, seed=seed,
                                  batch_size=batch_size, patience=patience)
        log.append({"trial": trial, "lr": lr, "weight_decay": wd,
                    "val_macro_f1": rec.best_val_macro_f1, "best_epoch": rec.best_epoch})
        if rec.best_val_macro_f1 > best[2]:
            best = (lr, wd, rec.best_val_macro_f1)
    return best[0], best[1], log


# -- protocol ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalProtocol:
    """Knobs of one full comparison run (desk-scale defaults)."""

    split: SplitSpec = SplitSpec()
    per_class_count: int = 100
    noise_power: float = 0.03
    anchors: int = 4
    k_neighbors: int = 5
    trials: int = 4
    search_epochs: int = 40
    final_epochs: int = 120
    patience: int = 20
    batch_size: int = 64
    lr_range: Tuple[float, float] = (1e-4, 3e-2)
    wd_range: Tuple[float, float] = (1e-6, 1e-2)
    classifier: Optional[ClassifierConfig] = None


def _assert_all_real(ds: Dataset, where: str):
    if np.any(ds.provenance != REAL):
        raise ContractError(f"synthetic samples leaked into the {where} set")


def _augment_train(train: Dataset, method: str, proto: EvalProtocol, seed: int,
                   checkpoint) -> Dataset:
    if method == "none" or proto.per_class_count == 0:
        return train
    cfg = AugmentConfig(method=method, per_class_count=proto.per_class_count,
                        noise_power=proto.noise_power, anchors=proto.anchors,
                        k_neighbors=proto.k_neighbors, seed=seed)
    return augment_dataset(train, cfg, checkpoint=checkpoint)


def compare_augmenters(ds: Dataset, methods: Sequence[str], seeds: Sequence[int],
                       proto: EvalProtocol = EvalProtocol(),
                       checkpoint=None, trial_sink=None) -> Dict[str, EvaluationReport]:
    """Tune, train, and test the classifier per method; average over seeds.

    Hyperparameters are tuned once per method on the first seed's split;
    training and testing repeat for every seed.  Synthetic data only ever
    enters the training split.  ``trial_sink(method, trial_log)`` receives
    every method's search log when given.
    """
    if not seeds:
        raise ConfigError("need at least one seed")
    for m in methods:
        if m not in EVAL_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {EVAL_METHODS}")
        if m == "diffusion" and proto.per_class_count > 0 and checkpoint is None:
            raise ConfigError("diffusion method requires a checkpoint")
    real = ds.real_only()
    cls_cfg = proto.classifier or ClassifierConfig(num_classes=real.num_classes)

    results: Dict[str, EvaluationReport] = {}
    for method in methods:
        tune_split = replace(proto.split, seed=int(seeds[0]))
        tr0, va0, _ = stratified_split(real, tune_split)
        _assert_all_real(va0, "validation")
        tr0_aug = _augment_train(tr0, method, proto, seed=int(seeds[0]), checkpoint=checkpoint)
        lr, wd, trial_log = random_search(tr0_aug, va0, proto.trials, proto.lr_range, proto.wd_range,
                                          seed=int(seeds[0]), cfg=cls_cfg, epochs=proto.search_epochs,
                                          patience=max(5, proto.patience // 2), batch_size=proto.batch_size)
        if trial_sink is not None:
            trial_sink(method, trial_log)
        per_seed: List[F1Scores] = []
        for seed in seeds:
            split = replace(proto.split, seed=int(seed))
            train, val, test = stratified_split(real, split)
            _assert_all_real(val, "validation")
            _assert_all_real(test, "test")
            train_aug = _augment_train(train, method, proto, seed=int(seed), checkpoint=checkpoint)
            model, _ = train_classifier(train_aug, val, cls_cfg, lr, wd, proto.final_epochs,
                                        seed=int(seed), batch_size=proto.batch_size,
                                        patience=proto.patience)
            per_seed.append(f1_scores(model.predict(test.samples), test.labels, cls_cfg.num_classes))
        results[method] = mean_report(per_seed, list(seeds))
    return results


# -- table rendering ---------------------------------------------------------


def report_table(results: Dict[str, EvaluationReport], class_names: Sequence[str]):
    """Rows = classes + Average + Weighted Average; columns = methods; F1 in %."""
    methods = list(results)
    rows = []
    for c, name in enumerate(class_names):
        rows.append([name] + [100.0 * results[m].per_class_f1[c] for m in methods])
    rows.append(["Average"] + [100.0 * results[m].macro_f1 for m in methods])
    rows.append(["Weighted Average"] + [100.0 * results[m].weighted_f1 for m in methods])
    return methods, rows


def render_table_csv(results: Dict[str, EvaluationReport], class_names: Sequence[str]) -> str:
    methods, rows = report_table(results, class_names)
    out = ["Classes," + ",".join(methods)]
    for row in rows:
        out.append(row[0] + "," + ",".join(f"{v:.4f}" for v in row[1:]))
    return "\n".join(out) + "\n"


def render_table_text(results: Dict[str, EvaluationReport], class_names: Sequence[str]) -> str:
    methods, rows = report_table(results, class_names)
    header = ["Classes"] + methods
    widths = [max(len(header[0]), max(len(r[0]) for r in rows))]
    widths += [max(len(m), 7) for m in methods]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [f"{v:7.2f}".rjust(w) for v, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
