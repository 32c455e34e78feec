"""Command-line surface: dataset generation, training, evaluation, benchmarks.

Exit codes: 0 success, 2 validation error, 3 numeric divergence, 4 I/O error.
Configs, manifests, and reports are JSON with the field names documented in
the README. The VOXMAMBA_OUT environment variable supplies a default output
directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _default_out() -> str:
    return os.environ.get("VOXMAMBA_OUT", ".")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxmamba",
                                description="Mamba-augmented 3D segmentation toolkit")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (1 = fully deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--task", required=True,
                   choices=["blobs", "directional-pair", "gallbladder-like"])
    g.add_argument("--dims", type=int, nargs="+", default=[32],
                   help="volume dims; one value is used for all three axes")
    g.add_argument("--n", type=int, default=16, help="total sample count")
    g.add_argument("--classes", type=int, default=None)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, help="dataset directory")

    t = sub.add_parser("train", help="train a variant from a JSON config")
    t.add_argument("config", help="path to run config JSON")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("checkpoint")
    e.add_argument("dataset", help="dataset directory containing manifest.json")
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--out", default=None, help="report path (JSON)")

    b = sub.add_parser("bench", help="time the scan kernels over sequence lengths")
    b.add_argument("--min-pow", type=int, default=10)
    b.add_argument("--max-pow", type=int, default=20)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--d", type=int, default=1)
    b.add_argument("--n", type=int, default=4)
    b.add_argument("--chunk", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="report path (JSON)")
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _split_counts(n: int):
    n_train = max(1, round(n * 0.5))
    n_val = max(1, round(n * 0.25))
    n_test = max(1, n - n_train - n_val)
    return {"train": n_train, "val": n_val, "test": n_test}


def cmd_gen(args) -> int:
    from .errors import VoxmambaError
    from .volio import SynthTaskSpec, generate_sample, write_volume

    dims = args.dims if len(args.dims) == 3 else [args.dims[0]] * 3
    classes = args.classes
    if classes is None:
        classes = 3 if args.task in ("directional-pair", "gallbladder-like") else 2
    try:
        spec = SynthTaskSpec(kind=args.task, dims=tuple(dims), classes=classes,
                             noise=args.noise, seed=args.seed)
        spec.validate()
    except VoxmambaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(args.out or Path(_default_out()) / f"{args.task}-{args.seed}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        counts = _split_counts(args.n)
        manifest = {"task": {"kind": spec.kind, "dims": list(spec.dims),
                             "classes": spec.classes, "noise": spec.noise,
                             "seed": spec.seed},
                    "splits": {}}
        index = 0
        for split, count in counts.items():
            (out / split).mkdir(exist_ok=True)
            entries = []
            for _ in range(count):
                img, lbl = generate_sample(spec, index)
                img_path = out / split / f"case_{index:04d}_img.vxm"
                lbl_path = out / split / f"case_{index:04d}_lbl.vxm"
                write_volume(img_path, img.squeeze(-1))
                write_volume(lbl_path, lbl)
                entries.append({"image": str(img_path.relative_to(out)),
                                "labels": str(lbl_path.relative_to(out))})
                index += 1
            manifest["splits"][split] = entries
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {index} pairs to {out}")
    return EXIT_OK


def load_dataset(dataset_dir, split: str):
    """(image, labels) pairs for one split of a generated dataset."""
    from .errors import FormatError
    from .volio import read_volume

    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json in {dataset_dir}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest["splits"][split]:
        img, _ = read_volume(dataset_dir / entry["image"])
        lbl, _ = read_volume(dataset_dir / entry["labels"])
        samples.append((img.astype("f4")[..., None], lbl))
    return manifest, samples


def _validate_run_config(raw: dict):
    from .errors import ConfigError
    from .unet import VariantConfig

    required = ("variant", "data", "out")
    for key in required:
        if key not in raw:
            raise ConfigError(f"run config missing required field '{key}'")
    lr = float(raw.get("lr", 3e-4))
    epochs = int(raw.get("epochs", 30))
    if lr <= 0 and lr != 0.0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if not Path(raw["data"]).exists():
        raise ConfigError(f"data path does not exist: {raw['data']}")
    cfg = VariantConfig(
        variant=raw["variant"],
        stages=int(raw.get("stages", 4)),
        widths=tuple(raw.get("widths", (16, 32, 64, 128))),
        crop=tuple(raw.get("crop", (32, 32, 32))),
        classes=int(raw.get("classes", 2)),
        in_channels=int(raw.get("in_channels", 1)),
    )
    cfg.validate()
    run = {"lr": lr, "epochs": epochs, "batch": int(raw.get("batch", 2)),
           "seed": int(raw.get("seed", 0)),
           "optimizer": raw.get("optimizer", "radam"),
           "data": raw["data"], "out": raw["out"],
           "resume": raw.get("resume")}
    return cfg, run


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .errors import DivergenceError, VoxmambaError
    from .train import fit
    from .unet import build_variant

    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as e:
        print(f"error: invalid config JSON: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        cfg, run = _validate_run_config(raw)
        _, train_set = load_dataset(run["data"], "train")
        _, val_set = load_dataset(run["data"], "val")
    except VoxmambaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(run["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO

    model = build_variant(cfg, seed=run["seed"])
    start_epoch = 0
    opt_state = None
    if run["resume"]:
        _, arrays, meta = load_checkpoint(run["resume"])
        params = {k[6:]: v for k, v in arrays.items() if k.startswith("param:")}
        opt_state = {k[4:]: v for k, v in arrays.items() if k.startswith("opt:")}
        model.load_state(params)
        start_epoch = int(meta.get("epoch", -1)) + 1

    log_path = out / "train_log.jsonl"
    log_file = open(log_path, "a" if start_epoch else "w")

    def log(rec):
        log_file.write(json.dumps(rec) + "\n")
        log_file.flush()
        print(f"epoch {rec['epoch']:3d}  lr {rec['lr']:.6f}  "
              f"loss {rec['train_loss']:.4f}  val_dsc {rec['val_dsc']:.4f}")

    try:
        history, best, opt = fit(
            model, train_set, val_set, epochs=run["epochs"], base_lr=run["lr"],
            batch_size=run["batch"], optimizer=run["optimizer"], seed=run["seed"],
            log=log, start_epoch=start_epoch, opt_state=opt_state)
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    finally:
        log_file.close()

    best_epoch, best_dsc, best_params = best
    arrays = {f"param:{k}": v for k, v in best_params.items()}
    last = {k: v.data.copy() for k, v in model.named_parameters().items()}
    save_checkpoint(out / "best.ckpt", cfg.to_dict(), arrays,
                    meta={"epoch": best_epoch, "val_dsc": best_dsc,
                          "run": {k: v for k, v in run.items() if k != "resume"}})
    last_arrays = {f"param:{k}": v for k, v in last.items()}
    last_arrays.update({f"opt:{k}": v for k, v in opt.state_arrays().items()})
    save_checkpoint(out / "last.ckpt", cfg.to_dict(), last_arrays,
                    meta={"epoch": history[-1]["epoch"] if history else start_epoch - 1,
                          "val_dsc": history[-1]["val_dsc"] if history else None})
    print(f"best epoch {best_epoch} val_dsc {best_dsc:.4f}; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .errors import VoxmambaError
    from .metrics import LabelVolume, evaluate
    from .train import predict_labels
    from .unet import VariantConfig, build_variant

    try:
        config, arrays, _ = load_checkpoint(args.checkpoint)
        cfg = VariantConfig.from_dict(config)
        model = build_variant(cfg, seed=0)
        model.load_state({k[6:]: v for k, v in arrays.items()
                          if k.startswith("param:")})
        _, samples = load_dataset(args.dataset, args.split)
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except VoxmambaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    reports = []
    for img, lbl in samples:
        pred = predict_labels(model, img)
        rep = evaluate(LabelVolume(pred, n_classes=cfg.classes),
                       LabelVolume(lbl, n_classes=cfg.classes))
        reports.append(rep.to_dict())
    classes = range(cfg.classes)
    mean_per_class = {}
    for c in classes:
        ds = [r["per_class"][str(c)]["dsc"] for r in reports
              if r["per_class"].get(str(c), {}).get("dsc") is not None]
        hs = [r["per_class"][str(c)]["hd95"] for r in reports
              if r["per_class"].get(str(c), {}).get("hd95") is not None]
        mean_per_class[str(c)] = {
            "dsc": float(sum(ds) / len(ds)) if ds else None,
            "hd95": float(sum(hs) / len(hs)) if hs else None,
        }
    report = {"split": args.split, "n_samples": len(samples),
              "per_sample": reports, "mean_per_class": mean_per_class,
              "mean_dsc": float(np.mean([r["mean_dsc"] for r in reports]))
              if reports else None}
    out = Path(args.out or Path(args.dataset) / f"report_{args.split}.json")
    out.write_text(json.dumps(report, indent=2))
    print(json.dumps({"mean_per_class": mean_per_class}, indent=2))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_scan_bench

    lengths = [2 ** p for p in range(args.min_pow, args.max_pow + 1)]
    report = run_scan_bench(lengths=lengths, reps=args.reps, d=args.d, n=args.n,
                            chunk=args.chunk, seed=args.seed)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    return {"gen": cmd_gen, "train": cmd_train,
            "eval": cmd_eval, "bench": cmd_bench}[args.command](args)


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
