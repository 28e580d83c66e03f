"""Command-line entry point.

Subcommands:

* ``generate-data``: write synthetic train/validation/test feature files
* ``train``: optimize one grid point on a data directory
* ``analyze``: parameter/MAC accounting for the grid, no training
* ``grid-search``: repeated training over a manifest-defined grid

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every run writes a ``manifest.txt`` echo (resolved options, seeds,
package version) into its output directory.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, models, training
from .errors import (
    ConfigError,
    DataFormatError,
    NoReferenceError,
    NumericsError,
    SedconvError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SPLIT_FILES = {"train": "train.sedfeat", "validation": "val.sedfeat", "test": "test.sedfeat"}


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _write_manifest(out_dir, command, options):
    lines = [f"command={command}", f"version={__version__}"]
    lines += [f"{k}={v}" for k, v in sorted(options.items())]
    (Path(out_dir) / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# generate-data
# ---------------------------------------------------------------------------


def _cmd_generate_data(args):
    options = {
        "mixtures": args.mixtures,
        "frames": args.frames,
        "seed": args.seed,
        "classes": args.classes,
        "features": args.features,
        "polyphony": args.polyphony,
        "chunk": args.chunk,
        "overlap": args.overlap,
        "gap": 260.0,
        "dur_min": 40,
        "dur_max": 180,
        "noise": 0.08,
    }
    if args.config:
        overrides = data.load_generator_config(args.config)
        casts = {
            "mixtures": int, "frames": int, "seed": int, "classes": int,
            "features": int, "polyphony": int, "chunk": int, "overlap": float,
            "gap": float, "dur_min": int, "dur_max": int, "noise": float,
        }
        for key, raw in overrides.items():
            if key not in casts:
                raise ConfigError(f"unknown generator option {key!r} in {args.config}")
            options[key] = casts[key](raw)

    splits = data.synthesize_dataset(
        num_mixtures=options["mixtures"],
        classes=options["classes"],
        max_polyphony=options["polyphony"],
        seed=options["seed"],
        frames_per_mixture=options["frames"],
        num_features=options["features"],
        chunk_frames=options["chunk"],
        overlap=options["overlap"],
        mean_gap=options["gap"],
        duration_range=(options["dur_min"], options["dur_max"]),
        noise_level=options["noise"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in splits:
        data.save_features(out / SPLIT_FILES[split.partition], split.samples)
        print(f"{split.partition}: {len(split.samples)} sequences")
    _write_manifest(out, "generate-data", options)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_splits(data_dir):
    root = Path(data_dir)
    splits = []
    for partition, filename in SPLIT_FILES.items():
        path = root / filename
        if not path.exists():
            raise DataFormatError(f"missing {filename} in {data_dir}")
        splits.append(data.DatasetSplit(partition, data.load_features(path)))
    return tuple(splits)


def _model_config_from_args(args, sample):
    t_len, n = sample.features.shape
    classes = sample.targets.shape[1]
    if args.variant in ("base", "dws"):
        if args.dilation is not None:
            print(f"warning: --dilation ignored for variant {args.variant}", file=sys.stderr)
        if args.kernel is not None:
            print(f"warning: --kernel ignored for variant {args.variant}", file=sys.stderr)
    return models.ModelConfig(
        variant=args.variant,
        channels=args.channels,
        dil_kernel=args.kernel if args.kernel is not None else 3,
        dilation_time=args.dilation if args.dilation is not None else 1,
        classes=classes,
        input_frames=t_len,
        input_features=n,
        dtype=args.dtype,
    ).validate()


def _cmd_train(args):
    splits = _load_splits(args.data)
    train_split, val_split, test_split = splits
    if not train_split.samples:
        raise DataFormatError("training split is empty")
    config = _model_config_from_args(args, train_split.samples[0])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = models.build_model(config, seed=args.seed)
    train_config = training.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        patience=args.patience,
        max_epochs=args.max_epochs,
        seed=args.seed,
    )
    record = training.fit(
        model,
        train_split,
        val_split,
        train_config,
        test_split=test_split,
        checkpoint_path=out / "checkpoint.ckpt",
    )
    training.save_run_record(out / "run_record.txt", record)

    n_params = models.count_parameters(model).total_parameters()
    print(f"test_f1 {_fmt(record.test_f1)}")
    print(f"test_er {_fmt(record.test_er)}")
    print(f"parameters {n_params}")
    print(f"epoch_seconds {_fmt(record.mean_epoch_seconds)}")
    options = {
        "variant": args.variant,
        "kernel": config.dil_kernel,
        "dilation": config.dilation_time,
        "channels": args.channels,
        "data": args.data,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "patience": args.patience,
        "max_epochs": args.max_epochs,
        "learning_rate": args.learning_rate,
        "dtype": args.dtype,
    }
    _write_manifest(out, "train", options)
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def full_grid(channels=256, classes=16, frames=1024, features=40, dtype="float64"):
    """The 26-point grid: base, dws, and every (kernel, dilation) pair for
    the two temporal-convolution variants."""
    common = dict(
        channels=channels, classes=classes, input_frames=frames,
        input_features=features, dtype=dtype,
    )
    grid = [models.ModelConfig(variant="base", **common),
            models.ModelConfig(variant="dws", **common)]
    for variant in ("dil", "dnd"):
        for kernel in models.DIL_KERNEL_SIZES:
            for dilation in models.DILATION_RATES:
                grid.append(
                    models.ModelConfig(
                        variant=variant, dil_kernel=kernel, dilation_time=dilation, **common
                    )
                )
    return grid


def _select_grid(selection, channels):
    if selection == "full":
        return full_grid(channels=channels)
    variants = [v.strip() for v in selection.split(",") if v.strip()]
    for v in variants:
        if v not in models.VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {models.VARIANTS}")
    if not variants:
        raise ConfigError("no grid points")
    return [cfg for cfg in full_grid(channels=channels) if cfg.variant in variants]


ANALYZE_COLUMNS = ("variant", "kernel", "dilation", "parameters", "reference", "delta", "drift", "macs")


def analyze_grid(grid):
    """Accounting rows (dict per grid point) plus any report notes."""
    rows = []
    notes = []
    for config in grid:
        model = models.build_model(config, seed=0)
        report = models.count_macs(model)
        total = report.total_parameters()
        ref = models.REFERENCE_PARAM_TOTALS.get(
            (config.variant, config.dil_kernel if config.uses_dilation else None)
        )
        delta = (total - ref) / ref if ref else float("nan")
        rows.append(
            {
                "variant": config.variant,
                "kernel": config.dil_kernel if config.uses_dilation else 0,
                "dilation": config.dilation_time if config.uses_dilation else 0,
                "parameters": total,
                "reference": int(ref) if ref else 0,
                "delta": delta,
                "drift": "!" if ref and abs(delta) > 0.15 else "",
                "macs": report.total_macs,
            }
        )
        for note in report.notes:
            if note not in notes:
                notes.append(note)
    return rows, notes


def _format_table(columns, rows):
    cells = [[_fmt(row[c]) for c in columns] for row in rows]
    widths = [max(len(col), *(len(r[i]) for r in cells)) for i, col in enumerate(columns)]
    lines = ["  ".join(col.ljust(w) for col, w in zip(columns, widths))]
    for r in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _cmd_analyze(args):
    grid = _select_grid(args.grid, args.channels)
    rows, notes = analyze_grid(grid)
    table = _format_table(ANALYZE_COLUMNS, rows)
    for note in notes:
        table += f"note: {note}\n"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "complexity.txt").write_text(table, encoding="utf-8")
    _write_csv(out / "complexity.csv", ANALYZE_COLUMNS, rows)
    print(table, end="")
    _write_manifest(out, "analyze", {"grid": args.grid, "channels": args.channels})
    return EXIT_OK


# ---------------------------------------------------------------------------
# grid-search
# ---------------------------------------------------------------------------

GRID_COLUMNS = (
    "variant", "dws", "dilation", "kernel", "f1_mean", "f1_std",
    "er_mean", "er_std", "parameters", "sec_mean", "sec_std", "status",
)


def _manifest_grid(pairs, classes, frames, features):
    variants = [v.strip() for v in pairs.get("variants", "base,dws,dil,dnd").split(",") if v.strip()]
    kernels = [int(v) for v in pairs.get("kernels", "3,5,7").split(",")]
    dilations = [int(v) for v in pairs.get("dilations", "1,10,50,100").split(",")]
    channels = int(pairs.get("channels", 256))
    dtype = pairs.get("dtype", "float64")
    common = dict(
        channels=channels, classes=classes, input_frames=frames,
        input_features=features, dtype=dtype,
    )
    grid = []
    for variant in variants:
        if variant not in models.VARIANTS:
            raise ConfigError(f"unknown variant {variant!r} in manifest")
        if variant in ("base", "dws"):
            grid.append(models.ModelConfig(variant=variant, **common))
        else:
            for kernel in kernels:
                for dilation in dilations:
                    grid.append(
                        models.ModelConfig(
                            variant=variant, dil_kernel=kernel, dilation_time=dilation, **common
                        )
                    )
    if not grid:
        raise ConfigError("no grid points")
    return grid


def _row_dict(row):
    return {
        "variant": row.variant,
        "dws": "y" if row.separable else "n",
        "dilation": row.dilation,
        "kernel": row.kernel,
        "f1_mean": row.f1_mean,
        "f1_std": row.f1_std,
        "er_mean": row.er_mean,
        "er_std": row.er_std,
        "parameters": row.parameters,
        "sec_mean": row.seconds_mean,
        "sec_std": row.seconds_std,
        "status": row.status if row.status == "ok" else f"FAILED:{row.error}",
    }


def _cmd_grid_search(args):
    pairs = data.load_generator_config(args.manifest)
    if "data" not in pairs or "out" not in pairs:
        raise ConfigError("grid-search manifest needs data=<dir> and out=<dir>")
    splits = _load_splits(pairs["data"])
    sample = splits[0].samples[0]
    t_len, n = sample.features.shape
    classes = sample.targets.shape[1]

    grid = _manifest_grid(pairs, classes, t_len, n)
    train_config = training.TrainConfig(
        batch_size=int(pairs.get("batch_size", 16)),
        learning_rate=float(pairs.get("learning_rate", 1e-3)),
        patience=int(pairs.get("patience", 30)),
        max_epochs=int(pairs.get("max_epochs", 200)),
        seed=int(pairs.get("seed", 0)),
    )
    repetitions = int(pairs.get("repetitions", 10))

    rows = training.repeat_experiment(grid, splits, train_config, repetitions)
    dict_rows = [_row_dict(r) for r in rows]
    table = _format_table(GRID_COLUMNS, dict_rows)

    out = Path(pairs["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(table, encoding="utf-8")
    _write_csv(out / "table.csv", GRID_COLUMNS, dict_rows)
    print(table, end="")
    _write_manifest(out, "grid-search", dict(pairs, manifest=str(args.manifest)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sedconv", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"sedconv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-data", help="write synthetic feature files")
    gen.add_argument("--mixtures", type=int, default=20)
    gen.add_argument("--frames", type=int, default=data.DEFAULT_FRAMES_PER_MIXTURE)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--classes", type=int, default=data.DEFAULT_CLASSES)
    gen.add_argument("--features", type=int, default=data.DEFAULT_FEATURES)
    gen.add_argument("--polyphony", type=int, default=5)
    gen.add_argument("--chunk", type=int, default=data.DEFAULT_CHUNK)
    gen.add_argument("--overlap", type=float, default=data.DEFAULT_OVERLAP)
    gen.add_argument("--config", help="plain-text key=value overrides")
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=_cmd_generate_data)

    train = sub.add_parser("train", help="train one grid point")
    train.add_argument("--variant", required=True, choices=models.VARIANTS)
    train.add_argument("--kernel", type=int, choices=models.DIL_KERNEL_SIZES)
    train.add_argument("--dilation", type=int, choices=models.DILATION_RATES)
    train.add_argument("--channels", type=int, default=256)
    train.add_argument("--data", required=True)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--batch-size", type=int, default=16)
    train.add_argument("--patience", type=int, default=30)
    train.add_argument("--max-epochs", type=int, default=200)
    train.add_argument("--learning-rate", type=float, default=1e-3)
    train.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    train.add_argument("--out", required=True)
    train.set_defaults(handler=_cmd_train)

    ana = sub.add_parser("analyze", help="parameter/MAC accounting, no training")
    ana.add_argument("--grid", default="full", help="'full' or comma-separated variants")
    ana.add_argument("--channels", type=int, default=256)
    ana.add_argument("--out", required=True)
    ana.set_defaults(handler=_cmd_analyze)

    gs = sub.add_parser("grid-search", help="repeated training over a manifest grid")
    gs.add_argument("--manifest", required=True)
    gs.set_defaults(handler=_cmd_grid_search)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, NoReferenceError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SedconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
