"""Batch command-line interface.

Subcommands: ingest, make-benchmark, schedule-dump, train-dm, generate,
augment, train-classifier, evaluate, gradcheck.  A ``--config`` file
(flat key = value) sits under the explicit flags; equal seeds and inputs
give byte-identical output files.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import augmenters, dataio, evaluate, sampler
from .config import load_config, merged
from .denoiser import Denoiser, DenoiserConfig, load_checkpoint, save_checkpoint
from .diffusion import train_denoiser
from .errors import SpectraDiffError
from .schedule import ScheduleConfig, build_schedule, schedule_rows
from .util import format_float


def _schedule_cfg(cfg) -> ScheduleConfig:
    return ScheduleConfig(T=cfg["schedule.T"], s=cfg["schedule.s"], delta=cfg["schedule.delta"],
                          gamma=cfg["schedule.gamma"], clip_max=cfg["schedule.clip_max"],
                          weight_norm=cfg["schedule.weight_norm"])


def _denoiser_cfg(cfg, bands: int, num_classes: int) -> DenoiserConfig:
    return DenoiserConfig(bands=bands, num_classes=num_classes,
                          patch_size=cfg["denoiser.patch_size"], hidden=cfg["denoiser.hidden"],
                          depth=cfg["denoiser.depth"], heads=cfg["denoiser.heads"],
                          mlp_ratio=cfg["denoiser.mlp_ratio"])


def _merged(args, flag_map) -> dict:
    file_values = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {key: getattr(args, attr, None) for key, attr in flag_map.items()}
    return merged(file_values, overrides)


def _add_config_flag(p):
    p.add_argument("--config", help="flat key=value config file merged under flags")
    p.add_argument("--threads", type=int, help="BLAS thread cap (default 1, deterministic)")
    p.add_argument("--norm-mode", dest="norm_mode", choices=("minmax", "standard"),
                   help="per-band normalization applied at ingestion")


# -- subcommands ---------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _merged(args, {"data.norm_mode": "norm_mode"})
    ds = dataio.ingest_csv(args.infile, cfg["data.norm_mode"])
    print(f"samples: {ds.n}")
    print(f"bands: {ds.bands}")
    print(f"classes: {ds.num_classes}")
    for c, name in enumerate(ds.class_names):
        print(f"  {name}: {int((ds.labels == c).sum())}")
    if args.out:
        dataio.dataset_to_csv(args.out, ds)
        print(f"round-tripped to {args.out}")
    return 0


def cmd_make_benchmark(args) -> int:
    cfg = _merged(args, {"benchmark.classes": "classes", "benchmark.per_class": "per_class",
                         "benchmark.bands": "bands", "seed": "seed"})
    ds = dataio.make_benchmark(cfg["benchmark.classes"], cfg["benchmark.per_class"],
                               cfg["benchmark.bands"], seed=cfg["seed"])
    dataio.dataset_to_csv(args.out, ds)
    print(f"wrote {ds.n} samples x {ds.bands} bands ({ds.num_classes} classes) to {args.out}")
    return 0


def cmd_schedule_dump(args) -> int:
    cfg = _merged(args, {"schedule.T": "T", "schedule.s": "s", "schedule.delta": "delta",
                         "schedule.gamma": "gamma", "schedule.clip_max": "clip_max",
                         "schedule.weight_norm": "weight_norm"})
    sched = build_schedule(_schedule_cfg(cfg))
    lines = ["t,beta,alpha_bar,snr,posterior_var,loss_weight"]
    for row in schedule_rows(sched):
        lines.append(str(row[0]) + "," + ",".join(format_float(v) for v in row[1:]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train_dm(args) -> int:
    cfg = _merged(args, {
        "schedule.T": "T", "schedule.s": "s", "schedule.delta": "delta", "schedule.gamma": "gamma",
        "denoiser.patch_size": "patch_size", "denoiser.hidden": "hidden",
        "denoiser.depth": "depth", "denoiser.heads": "heads",
        "train.steps": "steps", "train.batch_size": "batch_size", "train.lr": "lr",
        "train.weight_decay": "weight_decay", "train.lambda_vlb": "lambda_vlb",
        "train.grad_clip": "grad_clip",
        "train.log_every": "log_every", "eval.train_subsample_frac": "subsample",
        "seed": "seed", "threads": "threads", "data.norm_mode": "norm_mode",
    })
    ds = dataio.ingest_csv(args.infile, cfg["data.norm_mode"])
    if args.protocol_split:
        spec = evaluate.SplitSpec(train_subsample_frac=cfg["eval.train_subsample_frac"],
                                  seed=cfg["seed"])
        train, _, _ = evaluate.stratified_split(ds, spec)
    else:
        train = ds
    sched_cfg = _schedule_cfg(cfg)
    sched = build_schedule(sched_cfg)
    model = Denoiser(_denoiser_cfg(cfg, ds.bands, ds.num_classes), seed=cfg["seed"])

    log_rows = ["step,loss,mse_term,vlb_term"]

    def log_fn(step, res):
        log_rows.append(f"{step},{format_float(res.loss)},{format_float(res.mse)},{format_float(res.vlb)}")
        if step == 1 or step % cfg["train.log_every"] == 0:
            print(f"step {step}  loss {res.loss:.6f}  mse {res.mse:.6f}  vlb {res.vlb:.6f}")

    clip = cfg["train.grad_clip"] if cfg["train.grad_clip"] > 0 else None
    with threadpool_limits(limits=cfg["threads"]):
        train_denoiser(train.samples, train.labels, model, sched,
                       steps=cfg["train.steps"], batch_size=cfg["train.batch_size"],
                       lr=cfg["train.lr"], weight_decay=cfg["train.weight_decay"],
                       seed=cfg["seed"], lambda_vlb=cfg["train.lambda_vlb"],
                       grad_clip=clip, log_fn=log_fn)
    save_checkpoint(args.out, model, sched_cfg)
    print(f"checkpoint written to {args.out}")
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(log_rows) + "\n")
    return 0


def cmd_generate(args) -> int:
    cfg = _merged(args, {"seed": "seed", "threads": "threads", "data.norm_mode": "norm_mode"})
    model, sched_cfg = load_checkpoint(args.checkpoint)
    sched = build_schedule(sched_cfg)
    req = sampler.SampleRequest(class_id=args.class_id, count=args.count, seed=cfg["seed"])
    with threadpool_limits(limits=cfg["threads"]):
        out = sampler.sample(req, model, sched)
    norm = dataio.ingest_csv(args.norm_from, cfg["data.norm_mode"]).norm if args.norm_from else None
    if norm is not None:
        out = sampler.denormalize(out, norm)
    name = args.class_name or f"class{args.class_id:02d}"
    dataio.write_csv(args.out, out, [name] * args.count)
    print(f"wrote {args.count} samples of class {args.class_id} to {args.out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _merged(args, {"augment.method": "method", "augment.per_class": "per_class",
                         "augment.noise_power": "noise_power", "augment.anchors": "anchors",
                         "augment.k_neighbors": "k", "seed": "seed",
                         "threads": "threads", "data.norm_mode": "norm_mode"})
    ds = dataio.ingest_csv(args.infile, cfg["data.norm_mode"])
    acfg = augmenters.AugmentConfig(method=cfg["augment.method"],
                                    per_class_count=cfg["augment.per_class"],
                                    noise_power=cfg["augment.noise_power"],
                                    anchors=cfg["augment.anchors"],
                                    k_neighbors=cfg["augment.k_neighbors"], seed=cfg["seed"])
    with threadpool_limits(limits=cfg["threads"]):
        merged_ds = augmenters.augment_dataset(ds, acfg, checkpoint=args.checkpoint)
    dataio.dataset_to_csv(args.out, merged_ds)
    n_syn = int((merged_ds.provenance == dataio.SYNTHETIC).sum())
    print(f"wrote {merged_ds.n} rows ({n_syn} synthetic) to {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _merged(args, {"eval.final_epochs": "epochs", "eval.patience": "patience",
                         "eval.batch_size": "batch_size",
                         "eval.train_subsample_frac": "subsample", "seed": "seed",
                         "threads": "threads", "data.norm_mode": "norm_mode"})
    ds = dataio.ingest_csv(args.infile, cfg["data.norm_mode"])
    spec = evaluate.SplitSpec(train_subsample_frac=cfg["eval.train_subsample_frac"], seed=cfg["seed"])
    train, val, test = evaluate.stratified_split(ds, spec)
    ccfg = evaluate.ClassifierConfig(num_classes=ds.num_classes)
    with threadpool_limits(limits=cfg["threads"]):
        model, rec = evaluate.train_classifier(train, val, ccfg, lr=args.lr,
                                               weight_decay=args.weight_decay,
                                               epochs=cfg["eval.final_epochs"], seed=cfg["seed"],
                                               batch_size=cfg["eval.batch_size"],
                                               patience=cfg["eval.patience"])
        scores = evaluate.f1_scores(model.predict(test.samples), test.labels, ds.num_classes)
    print(f"best epoch {rec.best_epoch} (val macro-F1 {rec.best_val_macro_f1:.4f})")
    for c, name in enumerate(ds.class_names):
        print(f"  {name}: F1 {scores.per_class[c]:.4f}")
    print(f"macro F1 {scores.macro:.4f}  weighted F1 {scores.weighted:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _merged(args, {"augment.per_class": "per_class", "augment.noise_power": "noise_power",
                         "augment.anchors": "anchors", "augment.k_neighbors": "k",
                         "eval.trials": "trials", "eval.search_epochs": "search_epochs",
                         "eval.final_epochs": "final_epochs", "eval.patience": "patience",
                         "eval.batch_size": "batch_size",
                         "eval.train_subsample_frac": "subsample", "seed": "seed",
                         "threads": "threads", "data.norm_mode": "norm_mode"})
    ds = dataio.ingest_csv(args.infile, cfg["data.norm_mode"])
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    proto = evaluate.EvalProtocol(
        split=evaluate.SplitSpec(train_subsample_frac=cfg["eval.train_subsample_frac"]),
        per_class_count=cfg["augment.per_class"], noise_power=cfg["augment.noise_power"],
        anchors=cfg["augment.anchors"], k_neighbors=cfg["augment.k_neighbors"],
        trials=cfg["eval.trials"], search_epochs=cfg["eval.search_epochs"],
        final_epochs=cfg["eval.final_epochs"], patience=cfg["eval.patience"],
        batch_size=cfg["eval.batch_size"],
        lr_range=(cfg["eval.lr_min"], cfg["eval.lr_max"]),
        wd_range=(cfg["eval.wd_min"], cfg["eval.wd_max"]))
    trial_rows = ["method,trial,lr,weight_decay,val_macro_f1,best_epoch"]

    def trial_sink(method, log):
        for rec in log:
            trial_rows.append(f"{method},{rec['trial']},{format_float(rec['lr'])},"
                              f"{format_float(rec['weight_decay'])},"
                              f"{format_float(rec['val_macro_f1'])},{rec['best_epoch']}")

    with threadpool_limits(limits=cfg["threads"]):
        results = evaluate.compare_augmenters(ds, methods, seeds, proto,
                                              checkpoint=args.checkpoint, trial_sink=trial_sink)
    text = evaluate.render_table_text(results, ds.class_names)
    sys.stdout.write(text)
    if args.out_csv:
        with open(args.out_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(evaluate.render_table_csv(results, ds.class_names))
    if args.out_txt:
        with open(args.out_txt, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    if args.trial_log:
        with open(args.trial_log, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(trial_rows) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcore as g
    from .diffusion import hybrid_loss, q_sample

    rng = np.random.default_rng(args.seed)
    failures = 0

    def check(name, build, wrt):
        nonlocal failures
        worst = max(g.gradcheck(build, wrt).values())
        ok = worst < 1e-4
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name:<22} rel err {worst:.3e}")

    a = g.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = g.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = rng.normal(size=(3, 2))
    check("matmul", lambda: g.mean(g.mul(g.matmul(a, b), w)), [a, b])
    x = g.Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    gain = g.Tensor(rng.normal(1, 0.2, size=8), requires_grad=True)
    bias = g.Tensor(rng.normal(0, 0.2, size=8), requires_grad=True)
    w2 = rng.normal(size=(2, 8))
    check("layernorm", lambda: g.mean(g.mul(g.layernorm(x, gain, bias), w2)), [x, gain, bias])
    s = g.Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    w3 = rng.normal(size=(1, 4))
    check("softmax", lambda: g.mean(g.mul(g.softmax(s), w3)), [s])
    u = g.Tensor(rng.normal(size=(5,)), requires_grad=True)
    check("gelu", lambda: g.mean(g.gelu(u)), [u])
    cx = g.Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True)
    ck = g.Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    cb = g.Tensor(rng.normal(size=(4,)), requires_grad=True)
    w4 = rng.normal(size=(2, 4, 9))
    check("conv1d", lambda: g.mean(g.mul(g.conv1d(cx, ck, cb, padding=1), w4)), [cx, ck, cb])

    model = Denoiser(DenoiserConfig(bands=4, num_classes=2, patch_size=2, hidden=8,
                                    depth=2, heads=2), seed=1)
    for _, tns in model.params.items():
        tns.data = rng.normal(0, 0.3, size=tns.data.shape)
    sched = build_schedule(ScheduleConfig(T=10))
    x0 = rng.uniform(-1, 1, size=(3, 4))
    batch = q_sample(x0, np.array([1, 4, 9]), rng.standard_normal((3, 4)), sched)
    y = np.array([0, 1, 0])
    check("hybrid loss (full)",
          lambda: hybrid_loss(batch, y, model, sched, lambda_vlb=0.05, detach_kl_mean=False),
          list(model.params.tensors()))
    print("gradcheck:", "all passed" if failures == 0 else f"{failures} FAILED")
    return 0 if failures == 0 else 1


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectradiff",
                                     description="Diffusion-based augmentation for 1-D spectra")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and summarize a sample CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", help="optional denormalized round-trip output")
    _add_config_flag(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("make-benchmark", help="generate the synthetic labeled benchmark")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.set_defaults(fn=cmd_make_benchmark)

    p = sub.add_parser("schedule-dump", help="emit the noise schedule as CSV")
    p.add_argument("--T", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--clip-max", dest="clip_max", type=float)
    p.add_argument("--weight-norm", dest="weight_norm", choices=("mean", "max", "none"))
    p.add_argument("--out")
    _add_config_flag(p)
    p.set_defaults(fn=cmd_schedule_dump)

    p = sub.add_parser("train-dm", help="train the diffusion denoiser")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step CSV log path")
    p.add_argument("--protocol-split", action="store_true",
                   help="train on the 60/20/20 + subsample train split instead of every row")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--lambda-vlb", dest="lambda_vlb", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float,
                   help="global gradient-norm cap; <= 0 disables")
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--subsample", type=float)
    p.add_argument("--seed", type=int)
    _add_config_flag(p)
    p.set_defaults(fn=cmd_train_dm)

    p = sub.add_parser("generate", help="sample synthetic spectra from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="class_id", type=int, required=True)
    p.add_argument("--class-name", dest="class_name")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--norm-from", dest="norm_from",
                   help="CSV whose normalization maps samples back to reflectance")
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("augment", help="merge synthetic samples into a dataset")
    p.add_argument("--method", choices=augmenters.METHODS)
    p.add_argument("--noise-power", dest="noise_power", type=float)
    p.add_argument("--anchors", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    _add_config_flag(p)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("train-classifier", help="protocol split + classifier training")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=1e-4)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--subsample", type=float)
    p.add_argument("--seed", type=int)
    _add_config_flag(p)
    p.set_defaults(fn=cmd_train_classifier)

    p = sub.add_parser("evaluate", help="compare augmentation methods by classifier F1")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--methods", default="none,diffusion")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--checkpoint")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--noise-power", dest="noise_power", type=float)
    p.add_argument("--anchors", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--search-epochs", dest="search_epochs", type=int)
    p.add_argument("--final-epochs", dest="final_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--subsample", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-csv", dest="out_csv")
    p.add_argument("--out-txt", dest="out_txt")
    p.add_argument("--trial-log", dest="trial_log", help="hyperparameter search log CSV")
    _add_config_flag(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the compute layer")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.fn(args)
    except SpectraDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
