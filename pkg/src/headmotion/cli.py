"""Command-line interface: score, simulate, train, predict, evaluate, aes.

Every run is reproducible: all randomness is seeded through flags, a
resolved-config echo (flags after config-file merging, plus the tool
version) accompanies every output, and outputs are plain CSV.  Exit
codes: 0 success, 1 runtime failure, 2 usage or parse problem, 3 domain
error (valid input outside the method's domain, e.g. an edge-free
volume).

A flat ``key = value`` config file can stand in for flags
(``--config run.cfg``); explicitly passed flags win, unknown keys are
rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import __version__
from .bands import BandSpec, band_targets
from .errors import ConfigError, DomainError, FormatError
from .io import read_manifest, read_nifti, read_tracking_log
from .metrics import aes, correlate_covariate, r2, spearman
from .network import (
    LOSS_KINDS,
    NORM_KINDS,
    PREPROCESS_KINDS,
    NetConfig,
    TrainConfig,
    fit,
    load_checkpoint,
    predict,
    save_checkpoint,
    write_loss_log,
)
from .preprocess import AugmentConfig
from .rigid import SequenceWindow, framewise_differences, motion_score, select_window
from .simulate import build_dataset
from .softbin import BinGrid

__all__ = ["main"]

_REQUIRED = {
    "score": ("log", "window"),
    "simulate": ("n", "out"),
    "train": ("manifest", "out"),
    "predict": ("checkpoint",),
    "evaluate": ("predictions", "manifest"),
    "aes": ("volume",),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headmotion",
        description="Estimate and analyze head-motion scores for MR volumes.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"headmotion {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="flat key = value file supplying flag defaults")

    p = sub.add_parser("score", parents=[common], allow_abbrev=False,
                       help="score a tracking log over an acquisition window")
    p.add_argument("--log", help="tracking-log CSV path")
    p.add_argument("--window", nargs=2, type=float, metavar=("START", "END"),
                   help="acquisition window in scanner seconds")
    p.add_argument("--offset", type=float, default=0.0,
                   help="tracker-to-scanner clock offset in seconds")
    p.add_argument("--bands", action="store_true", help="append drift/breathing/noisy to the output")
    p.add_argument("--order", type=int, default=4, help="Butterworth order for band targets")
    p.add_argument("--low", type=float, default=0.1, help="drift/breathing split frequency (Hz)")
    p.add_argument("--high", type=float, default=0.5, help="breathing/noisy split frequency (Hz)")

    p = sub.add_parser("simulate", parents=[common], allow_abbrev=False,
                       help="build a synthetic labeled dataset")
    p.add_argument("--n", type=int, help="number of volumes")
    p.add_argument("--dims", type=int, default=32, help="cubic volume size in voxels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", parents=[common], allow_abbrev=False,
                       help="train the estimator on a dataset manifest")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--out", help="output directory for checkpoint and loss log")
    p.add_argument("--preprocess", choices=PREPROCESS_KINDS, default="lsb8")
    p.add_argument("--loss", choices=LOSS_KINDS, default="softbin_kl")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", default="8,16,32,64",
                   help="comma-separated block channels")
    p.add_argument("--norm", choices=NORM_KINDS, default="none")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--augment", action="store_true", help="enable training augmentation")
    p.add_argument("--sigma", type=float, default=None, help="soft-label width (mm/s)")
    p.add_argument("--bin-min", type=float, default=0.0, dest="bin_min")
    p.add_argument("--bin-max", type=float, default=3.12, dest="bin_max")
    p.add_argument("--bins", type=int, default=40)

    p = sub.add_parser("predict", parents=[common], allow_abbrev=False,
                       help="score volumes with a trained checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path from train")
    p.add_argument("--volume", help="single NIfTI volume to score")
    p.add_argument("--manifest", help="score every volume of a manifest")
    p.add_argument("--out", help="write predictions CSV here instead of stdout")

    p = sub.add_parser("evaluate", parents=[common], allow_abbrev=False,
                       help="compare predictions against labels")
    p.add_argument("--predictions", help="CSV with volume,prediction rows")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--covariate", help="also correlate predictions with this covariate")
    p.add_argument("--labels", help="CSV with volume,label rows overriding manifest scores")
    p.add_argument("--split", choices=("train", "validation", "test", "all"), default="all")

    p = sub.add_parser("aes", parents=[common], allow_abbrev=False,
                       help="average edge strength of a volume")
    p.add_argument("--volume", help="NIfTI volume path")
    return parser


def _read_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                if "=" not in body:
                    raise ConfigError(
                        "bad_config_line", f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}"
                    )
                key, _, value = body.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError("bad_config_file", f"cannot read config file {path}: {exc}") from exc
    return values


def _convert_config_value(action: argparse.Action, raw: str, key: str):
    if action.nargs == 0:  # store_true flag
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError("bad_value", f"config key {key!r}: expected a boolean, got {raw!r}")
    try:
        if action.nargs == 2:
            parts = raw.split()
            if len(parts) != 2:
                raise ValueError(f"expected two values, got {raw!r}")
            return [action.type(p) if action.type else p for p in parts]
        value = action.type(raw) if action.type else raw
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad_value", f"config key {key!r}: {exc}") from exc
    if action.choices is not None and value not in action.choices:
        raise ConfigError(
            "bad_value", f"config key {key!r}: {value!r} not one of {tuple(action.choices)}"
        )
    return value


def _apply_config(args: argparse.Namespace, argv: list, parser: argparse.ArgumentParser) -> None:
    sub_actions = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub_actions = action.choices[args.command]._actions
    assert sub_actions is not None
    by_dest = {a.dest: a for a in sub_actions if a.dest not in ("help",)}

    explicit = set()
    for action in sub_actions:
        for opt in action.option_strings:
            if opt in argv or any(word.startswith(opt + "=") for word in argv):
                explicit.add(action.dest)

    for key, raw in _read_config_file(args.config).items():
        if key not in by_dest or key == "config":
            raise ConfigError("unknown_key", f"config file sets unknown key {key!r} for {args.command}")
        if key in explicit:
            continue  # explicit flags take precedence
        setattr(args, key, _convert_config_value(by_dest[key], raw, key))


def _config_echo(args: argparse.Namespace) -> str:
    lines = [f"tool = headmotion {__version__}", f"command = {args.command}"]
    for key in sorted(vars(args)):
        if key == "command":
            continue
        lines.append(f"{key} = {getattr(args, key)}")
    return "\n".join(lines) + "\n"


def _echo_to_stderr(args) -> None:
    sys.stderr.write("".join(f"# {line}\n" for line in _config_echo(args).splitlines()))


def _echo_to_dir(args, out_dir) -> None:
    with open(os.path.join(out_dir, "run_config.txt"), "w") as fh:
        fh.write(_config_echo(args))


def _echo_next_to(args, out_file) -> None:
    with open(str(out_file) + ".run_config.txt", "w") as fh:
        fh.write(_config_echo(args))


# ---------------------------------------------------------------- commands


def _cmd_score(args) -> int:
    _echo_to_stderr(args)
    trajectory = read_tracking_log(args.log)
    window = SequenceWindow(args.window[0], args.window[1], args.offset)
    rates = framewise_differences(trajectory)
    score = motion_score(select_window(rates, window))
    fields = [repr(score)]
    if args.bands:
        spec = BandSpec(low_cut=args.low, high_cut=args.high, order=args.order)
        bands = band_targets(rates, spec, window)
        fields += [repr(bands.drift), repr(bands.breathing), repr(bands.noisy)]
    print(",".join(fields))
    return 0


def _cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    _echo_to_dir(args, args.out)
    build_dataset(args.n, args.out, dims=(args.dims,) * 3, seed=args.seed)
    manifest_path = os.path.join(args.out, "manifest.csv")
    print(manifest_path)
    return 0


def _parse_channels(text: str) -> tuple:
    try:
        channels = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError("bad_channels", f"cannot parse channel list {text!r}") from exc
    if not channels:
        raise ConfigError("bad_channels", f"cannot parse channel list {text!r}")
    return channels


def _cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    _echo_to_dir(args, args.out)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    manifest = read_manifest(args.manifest)
    net_config = NetConfig(
        block_channels=_parse_channels(args.channels),
        dropout_rate=args.dropout,
        norm=args.norm,
        seed=args.seed,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        loss=args.loss,
        seed=args.seed,
    )
    grid = None
    if args.loss == "softbin_kl":
        grid = BinGrid(vmin=args.bin_min, vmax=args.bin_max, count=args.bins)
    augment_config = AugmentConfig(seed=args.seed) if args.augment else None

    params, log = fit(
        manifest,
        manifest_dir,
        net_config,
        train_config,
        preprocess=args.preprocess,
        augment_config=augment_config,
        grid=grid,
        sigma=args.sigma,
    )
    if args.loss == "mse":
        net_config = dataclasses.replace(net_config, output_bins=1)
    meta = {
        "preprocess": args.preprocess,
        "loss": args.loss,
        "sigma": args.sigma,
        "grid": [grid.vmin, grid.vmax, grid.count] if grid else None,
        "augment": bool(args.augment),
        "pipeline": "augment-then-preprocess",
    }
    checkpoint_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(params, net_config, checkpoint_path, meta=meta)
    write_loss_log(log, os.path.join(args.out, "loss_log.csv"))
    print(checkpoint_path)
    return 0


def _predict_one(params, config, meta, volume_path):
    volume = read_nifti(volume_path)
    head_mask = None
    if meta.get("preprocess") == "background":
        base = str(volume_path)
        for ext in (".nii.gz", ".nii"):
            if base.endswith(ext):
                base = base[: -len(ext)] + ".mask" + ext
                break
        head_mask = read_nifti(base)
    grid_spec = meta.get("grid")
    grid = BinGrid(*grid_spec[:2], int(grid_spec[2])) if grid_spec else None
    return predict(params, config, volume, preprocess=meta.get("preprocess", "none"),
                   grid=grid, head_mask=head_mask)


def _cmd_predict(args) -> int:
    if bool(args.volume) == bool(args.manifest):
        sys.stderr.write("error: predict needs exactly one of --volume or --manifest\n")
        return 2
    params, config, meta = load_checkpoint(args.checkpoint)
    if args.volume:
        _echo_to_stderr(args)
        print(repr(_predict_one(params, config, meta, args.volume)))
        return 0

    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    manifest = read_manifest(args.manifest)
    rows = [
        (entry.volume_path,
         _predict_one(params, config, meta, os.path.join(manifest_dir, entry.volume_path)))
        for entry in manifest
    ]
    if args.out:
        _echo_next_to(args, args.out)
        with open(args.out, "w") as fh:
            fh.write("volume,prediction\n")
            for path, value in rows:
                fh.write(f"{path},{value!r}\n")
        print(args.out)
    else:
        _echo_to_stderr(args)
        print("volume,prediction")
        for path, value in rows:
            print(f"{path},{value!r}")
    return 0


def _read_two_column_csv(path, value_name) -> dict:
    table = {}
    with open(path, newline="") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != f"volume,{value_name}":
        raise FormatError("bad_header", f"{path}: expected header 'volume,{value_name}'")
    for line in lines[1:]:
        volume, _, raw = line.partition(",")
        try:
            table[volume] = float(raw)
        except ValueError as exc:
            raise FormatError("bad_number", f"{path}: bad value in row {line!r}") from exc
    return table


def _cmd_evaluate(args) -> int:
    _echo_to_stderr(args)
    manifest = read_manifest(args.manifest)
    if args.split != "all":
        manifest = manifest.subset(args.split)
    predictions = _read_two_column_csv(args.predictions, "prediction")

    missing = [e.volume_path for e in manifest if e.volume_path not in predictions]
    if missing:
        raise FormatError(
            "missing_predictions",
            f"{args.predictions}: no prediction for {len(missing)} volume(s): " + ", ".join(missing),
        )
    predicted = [predictions[e.volume_path] for e in manifest]

    if args.labels:
        labels = _read_two_column_csv(args.labels, "label")
        unlabeled = [e.volume_path for e in manifest if e.volume_path not in labels]
        if unlabeled:
            raise FormatError(
                "missing_labels",
                f"{args.labels}: no label for {len(unlabeled)} volume(s): " + ", ".join(unlabeled),
            )
        truth = [labels[e.volume_path] for e in manifest]
    else:
        unlabeled = [e.volume_path for e in manifest if e.motion_score is None]
        if unlabeled:
            raise FormatError(
                "missing_labels",
                f"{args.manifest}: no motion score for: " + ", ".join(unlabeled),
            )
        truth = [e.motion_score for e in manifest]

    report_r2 = r2(truth, predicted)
    rho, p_value = spearman(truth, predicted)
    header = ["r2", "spearman_rho", "spearman_p", "n"]
    row = [repr(report_r2), repr(rho), repr(p_value), str(len(truth))]
    if args.covariate:
        link = correlate_covariate(predicted, args.covariate, manifest)
        header += ["covariate", "covariate_rho", "covariate_p"]
        row += [args.covariate, repr(link.rho), repr(link.p)]
    print(",".join(header))
    print(",".join(row))
    return 0


def _cmd_aes(args) -> int:
    _echo_to_stderr(args)
    print(repr(aes(read_nifti(args.volume))))
    return 0


_DISPATCH = {
    "score": _cmd_score,
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "aes": _cmd_aes,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        if getattr(args, "config", None):
            _apply_config(args, argv, parser)
        missing = [
            name for name in _REQUIRED[args.command] if getattr(args, name) in (None,)
        ]
        if missing:
            flags = ", ".join("--" + name.replace("_", "-") for name in missing)
            sys.stderr.write(f"error: {args.command} requires {flags}\n")
            return 2
        return _DISPATCH[args.command](args)
    except (FormatError, ConfigError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except DomainError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
