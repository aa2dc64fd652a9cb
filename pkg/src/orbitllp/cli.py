"""Command-line entry point: ``orbitllp <subcommand> ...``.

Each run echoes its resolved configuration as JSON on stderr; results go to
stdout (JSON) and files under ``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import budget, chippack, data, metrics, models, synth, training

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


def _emit(obj):
    print(json.dumps(obj, indent=2, default=_jsonable))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serializable: {type(v)}")


def _out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _pattern(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# --- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    config = synth.SynthConfig(
        seed=args.seed,
        world_chips_x=args.chips_x,
        world_chips_y=args.chips_y,
        n_classes=args.classes,
        noise_octaves=args.octaves,
        commune_count=args.communes,
        pixel_noise_amp=args.noise_amp,
        base_period_px=args.period_px,
    )
    dataset = synth.generate_world(config)
    if args.band_width > 0:
        data.assign_splits(dataset, args.band_width, _pattern(args.pattern))
    out = _out_dir(args)
    chippack.write_dataset(dataset, out)
    _emit({"dataset": out, "chips": len(dataset), "communes": len(dataset.communes), "splits": dataset.split_counts()})


def cmd_split(args):
    dataset = chippack.read_dataset(args.dataset)
    data.assign_splits(dataset, args.band_width, _pattern(args.pattern))
    out = _out_dir(args) if args.out_dir else Path(args.dataset)
    chippack.write_dataset(dataset, out)
    _emit({"dataset": out, "splits": dataset.split_counts()})


def cmd_stats(args):
    dataset = chippack.read_dataset(args.dataset)
    n = dataset.n_classes
    labelled = [c for c in dataset.chips if c.labels is not None]
    chip_mean = np.mean([data.chip_proportions(c.labels, n) for c in labelled], axis=0) if labelled else None
    commune_mean = None
    if dataset.communes is not None:
        commune_mean = np.mean([dataset.communes[c] for c in dataset.communes.ids], axis=0)
    communes_per_split = {}
    for s in data.SPLITS:
        communes_per_split[s] = len({c.dominant_commune for c in dataset.select(s)})
    _emit(
        {
            "chips": len(dataset),
            "n_classes": n,
            "communes": 0 if dataset.communes is None else len(dataset.communes),
            "splits": dataset.split_counts(),
            "communes_per_split": communes_per_split,
            "mean_chip_proportions": chip_mean,
            "mean_commune_proportions": commune_mean,
        }
    )


def cmd_train(args):
    dataset = chippack.read_dataset(args.dataset)
    hyper = args.filters if args.model == "downconv" else args.components
    config = training.TrainConfig(
        kind=args.model,
        hyper=hyper,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        adam_beta1=args.beta1,
        adam_beta2=args.beta2,
        adam_eps=args.adam_eps,
        seed=args.seed,
    )
    out = _out_dir(args)

    def log(rec):
        if not args.quiet:
            print(f"epoch {rec.epoch}: train_loss {rec.train_loss:.6f} val_mae {rec.val_mae:.4f} ({rec.seconds:.1f}s)", file=sys.stderr)

    run = training.train(dataset, None, config, log=log)
    model_path = out / args.model_name
    size = models.save_model(run.best_params, model_path)
    (out / args.log_name).write_text(run.to_csv())
    best = run.history[run.selected_epoch]
    _emit(
        {
            "model": model_path,
            "model_bytes": size,
            "parameters": models.param_count(config.kind, config.hyper, dataset.n_classes),
            "selected_epoch": run.selected_epoch,
            "val_mae": best.val_mae,
            "train_log": out / args.log_name,
            "mean_chips_per_sec": float(np.mean([r.chips_per_sec for r in run.history])),
        }
    )


def _predict_split(dataset, params, chips):
    images = np.stack([c.image for c in chips]) if chips else np.zeros((0, 100, 100, 3), np.float32)
    t0 = time.perf_counter()
    props, cells = training.predict_batches(params, images, cells=True)
    return props, cells, time.perf_counter() - t0


def cmd_eval(args):
    dataset = chippack.read_dataset(args.dataset)
    params = models.load_model(args.model_path)
    if params.n_classes != dataset.n_classes:
        raise ValueError(f"model has {params.n_classes} classes, dataset has {dataset.n_classes}")
    chips = dataset.select(args.split)
    if not chips:
        raise ValueError(f"split {args.split!r} is empty")
    if any(c.labels is None for c in chips):
        raise ValueError("evaluation needs ground-truth labels on every chip")
    baseline = None
    train_chips = dataset.select("train")
    if train_chips and dataset.communes is not None:
        baseline = metrics.regression_to_mean([data.blended_target(c, dataset.communes) for c in train_chips])
    props, cells, seconds = _predict_split(dataset, params, chips)
    report = metrics.evaluate([c.id for c in chips], props, cells, [c.labels for c in chips], dataset.n_classes, baseline)
    out = _out_dir(args)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["chip_id", "mae"] + [f"pred_{k}" for k in range(dataset.n_classes)])
    for cid, mae, p in zip(report.chip_ids, report.chip_mae, props):
        writer.writerow([cid, repr(float(mae))] + [repr(float(v)) for v in p])
    (out / "eval.csv").write_text(buf.getvalue())
    summary = report.summary()
    summary.update({"split": args.split, "model": args.model_path, "inference_seconds": seconds})
    if baseline is not None:
        summary["improvement_vs_baseline"] = 1 - report.mean_mae / report.baseline_mae
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n")
    _emit(summary)


def write_ppm(path, gray: np.ndarray):
    """Binary P6 image from a 2-D array of values in [0, 1]."""
    g = np.clip(np.nan_to_num(gray), 0, 1)
    rgb = np.repeat(np.round(g * 255).astype(np.uint8)[..., None], 3, axis=2)
    h, w = g.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def cmd_predict(args):
    dataset = chippack.read_dataset(args.dataset)
    params = models.load_model(args.model_path)
    chips = dataset.chips if args.split == "all" else dataset.select(args.split)
    props, _, _ = _predict_split(dataset, params, chips)
    out = _out_dir(args)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["chip_id", "grid_x", "grid_y", "split"] + [f"p_{k}" for k in range(params.n_classes)])
    for c, p in zip(chips, props):
        writer.writerow([c.id, c.grid_x, c.grid_y, c.split] + [repr(float(v)) for v in p])
    (out / "predictions.csv").write_text(buf.getvalue())
    images = []
    if chips:
        xs = np.array([c.grid_x for c in chips])
        ys = np.array([c.grid_y for c in chips])
        x0, y0 = xs.min(), ys.min()
        for k in range(params.n_classes):
            grid = np.zeros((ys.max() - y0 + 1, xs.max() - x0 + 1))
            grid[ys - y0, xs - x0] = props[:, k]
            path = out / f"proportions_class{k}.ppm"
            write_ppm(path, np.kron(grid, np.ones((args.cell_px, args.cell_px))))
            images.append(path)
    _emit({"chips": len(chips), "predictions": out / "predictions.csv", "heatmaps": images})


def cmd_model_info(args):
    if args.model_path:
        raw = Path(args.model_path).read_bytes()
        params = models.model_from_bytes(raw)
        kind, hyper, n, size = params.kind, params.hyper, params.n_classes, len(raw)
        extra = {"gamma": params.gamma} if kind == "qkm" else {}
    else:
        if not (args.kind and args.hyper and args.classes):
            raise ValueError("give --model-path, or all of --kind, --hyper and --classes")
        kind, hyper, n = args.kind, args.hyper, args.classes
        size = 9 + 4 * models.param_count(kind, hyper, n)
        extra = {}
    count = models.param_count(kind, hyper, n)
    _emit({"kind": kind, "hyper": hyper, "n_classes": n, "parameters": count, "file_bytes": size, "payload_bytes": 4 * count, **extra})


def cmd_footprint(args):
    report = budget.footprint(args.classes, args.communes, args.chips)
    _emit(report.to_dict())


def cmd_volumetry(args):
    report = budget.volumetry(args.swath, args.circumference, args.land_fraction, args.orbit_minutes)
    out = {"volumetry": report.__dict__, "quoted_discrepancy": budget.volumetry_discrepancy(report)}
    if args.chips_per_sec is not None:
        out["throughput"] = budget.throughput_report(args.chips_per_sec, report)
    _emit(out)


def cmd_uplink(args):
    if args.action == "encode":
        if args.dataset:
            dataset = chippack.read_dataset(args.dataset)
            if dataset.communes is None:
                raise ValueError("dataset manifest has no commune table")
            table = {cid: dataset.communes[cid] for cid in dataset.communes.ids}
            n = dataset.n_classes
        else:
            raw = json.loads(Path(args.input).read_text())
            table = {int(k): np.asarray(v, dtype=np.float64) for k, v in raw.items()}
            n = None
        packet = budget.uplink_encode(table, n)
        out = _out_dir(args) / args.output
        out.write_bytes(packet)
        _emit({"packet": out, **budget.uplink_sizes(packet), "footprint_display": budget.format_kb(budget.uplink_sizes(packet)["payload_bytes"])})
    else:
        decoded = budget.uplink_decode(Path(args.input).read_bytes())
        _emit({str(k): v for k, v in decoded.items()})


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbitllp", description="Learning from label proportions on satellite chips.")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads (default 1, deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic chip dataset")
    s.add_argument("--seed", type=int, default=1234)
    s.add_argument("--chips-x", type=int, default=40)
    s.add_argument("--chips-y", type=int, default=50)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--communes", type=int, default=40)
    s.add_argument("--octaves", type=int, default=3)
    s.add_argument("--noise-amp", type=float, default=0.05)
    s.add_argument("--period-px", type=int, default=1600)
    s.add_argument("--band-width", type=int, default=12, help="km; 0 leaves chips unassigned")
    s.add_argument("--pattern", default=",".join(data.DEFAULT_PATTERN))
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="re-assign band/commune splits")
    s.add_argument("--dataset", required=True)
    s.add_argument("--band-width", type=int, default=data.DEFAULT_BAND_WIDTH)
    s.add_argument("--pattern", default=",".join(data.DEFAULT_PATTERN))
    s.add_argument("--out-dir", help="defaults to rewriting the dataset in place")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("stats", help="dataset summary")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", help="train a model on commune-level targets")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", choices=sorted(models.PARAM_TYPES), default="downconv")
    s.add_argument("--filters", type=int, default=96)
    s.add_argument("--components", type=int, default=64)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--beta1", type=float, default=0.9)
    s.add_argument("--beta2", type=float, default=0.999)
    s.add_argument("--adam-eps", type=float, default=1e-8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model-name", default="model.llpm")
    s.add_argument("--log-name", default="train_log.csv")
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="chip MAE and pixel F1 on a split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model-path", required=True)
    s.add_argument("--split", choices=data.SPLITS, default="test")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="proportion CSV and per-class PPM heatmaps")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model-path", required=True)
    s.add_argument("--split", choices=data.SPLITS + ("all",), default="all")
    s.add_argument("--cell-px", type=int, default=4)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("model-info", help="parameter count and file size")
    s.add_argument("--model-path")
    s.add_argument("--kind", choices=sorted(models.PARAM_TYPES))
    s.add_argument("--hyper", type=int)
    s.add_argument("--classes", type=int)
    s.set_defaults(func=cmd_model_info)

    s = sub.add_parser("footprint", help="label-set storage sizes")
    s.add_argument("--classes", type=int)
    s.add_argument("--communes", type=int)
    s.add_argument("--chips", type=int)
    s.set_defaults(func=cmd_footprint)

    s = sub.add_parser("volumetry", help="area imaged per orbit and per minute")
    s.add_argument("--swath", type=float, default=290)
    s.add_argument("--circumference", type=float, default=40_000)
    s.add_argument("--land-fraction", type=float, default=0.299)
    s.add_argument("--orbit-minutes", type=float, default=100)
    s.add_argument("--chips-per-sec", type=float)
    s.set_defaults(func=cmd_volumetry)

    s = sub.add_parser("uplink", help="float16 commune-proportion packets")
    s.add_argument("action", choices=("encode", "decode"))
    s.add_argument("--dataset", help="encode the commune table of this dataset")
    s.add_argument("--input", help="JSON table {id: [p...]} to encode, or packet to decode")
    s.add_argument("--output", default="uplink.llpu")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_uplink)
    return p


def _int_if_whole(v):
    return int(v) if isinstance(v, float) and v.is_integer() else v


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    for name in ("swath", "circumference", "orbit_minutes"):
        if hasattr(args, name):
            setattr(args, name, _int_if_whole(getattr(args, name)))
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print(json.dumps({"config": resolved}, default=_jsonable), file=sys.stderr)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (ValueError, KeyError, OSError, chippack.ChipPackError, models.ModelFormatError) as exc:
        print(f"orbitllp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
