"""Command line: compress, decompress, train, train-abu, evaluate, rd-sweep."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("itdlpcc")

HELP_WIDTH = 100
PROG = "itdlpcc"


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, width=HELP_WIDTH)


class _HelpFull(argparse.Action):
    """Print the help of the program and of every subcommand, then exit."""

    def __init__(self, option_strings, dest=argparse.SUPPRESS, default=argparse.SUPPRESS, help=None):
        super().__init__(option_strings, dest, nargs=0, default=default, help=help)

    def __call__(self, parser, namespace, values, option_string=None):
        print(full_help(), end="")
        parser.exit()


def _add_helpfull(p: argparse.ArgumentParser):
    p.add_argument("--helpfull", action=_HelpFull, help="show full help message and exit")


def _scales(text: str) -> list[float | None]:
    if text is None or text.strip().lower() in ("", "none"):
        return [None]
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid scale list {text!r}") from None
    if any(not v >= 1 for v in values):
        raise argparse.ArgumentTypeError("scales must be >= 1")
    return values


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _dirs(text: str) -> list[str]:
    return [d for d in (text or "").split(",") if d.strip()]


def _add_topk_options(p: argparse.ArgumentParser):
    p.add_argument("--topk_metrics", default="d1yuv",
                   help="Quality metric scored by the per-block top-k search: d1, d2, d1yuv, d2yuv, d1rgb "
                        "or d2rgb. The colour part is ignored for geometry-only coding.")
    p.add_argument("--color_weight", type=float, default=0.5,
                   help="Share of the colour score in the joint top-k score, in [0, 1].")
    p.add_argument("--use_fast_topk", action="store_true", default=False,
                   help="Coarse-then-fine top-k search for the coding model.")
    p.add_argument("--max_topk", type=float, default=10,
                   help="Largest k multiplier tried by the top-k search.")
    p.add_argument("--topk_patience", type=int, default=5,
                   help="Non-improving steps after which the top-k search stops.")


def _add_abu_options(p: argparse.ArgumentParser):
    p.add_argument("--use_abu", action="store_true", default=False,
                   help="Densify up-sampled blocks with the learned up-sampling model.")
    p.add_argument("--abu_model_dir", default="",
                   help="Comma separated ABU checkpoint directories, one per sampling factor.")
    p.add_argument("--abu_topk", default="full", choices=("none", "full", "fast"), metavar="ABU_TOPK",
                   help="Top-k search for ABU blocks: none (reuse the codec multiplier), full or fast.")
    p.add_argument("--abu_max_topk", type=float, default=10,
                   help="Largest k multiplier tried by the top-k search.")


def _add_train_options(p: argparse.ArgumentParser, blk_default: int):
    p.add_argument("train_files", nargs="+", help="Training point clouds (.ply files or directories).")
    p.add_argument("model_dir", help="Directory where the trained checkpoint is written.")
    p.add_argument("--config", default=None, help="INI file with a [train] section; flags override it.")
    p.add_argument("--blk_size", type=int, default=blk_default, help="Training block size.")
    p.add_argument("--lr", type=float, default=None, help="Adam learning rate (config default 1e-4).")
    p.add_argument("--batch", type=int, default=None, help="Blocks per minibatch.")
    p.add_argument("--epochs", type=int, default=None, help="Maximum number of epochs.")
    p.add_argument("--patience", type=int, default=None, help="Early-stopping patience in epochs.")
    p.add_argument("--width_factor", type=int, default=None, help="Divide every layer width by this.")
    p.add_argument("--min_points", type=int, default=500, help="Drop training blocks with fewer points.")
    p.add_argument("--val_fraction", type=float, default=0.1, help="Share of blocks held out for validation.")
    p.add_argument("--seed", type=int, default=None, help="Random seed.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, formatter_class=_formatter,
                                     description="Learned block-based point cloud codec.")
    parser.add_argument("--with_color", action="store_true", default=False,
                        help="Code colour together with geometry.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_helpfull(parser)
    parser.add_argument("-v", "--verbose", action="store_true", default=False, help="Log progress.")
    sub = parser.add_subparsers(dest="command", metavar="{compress,decompress,train,train-abu,evaluate,rd-sweep}")
    sub.required = True

    p = sub.add_parser("compress", formatter_class=_formatter,
                       help="Encode a PLY point cloud into a bitstream.",
                       description="Encode a PLY point cloud into a bitstream.")
    _add_helpfull(p)
    p.add_argument("input_file", help="Point cloud to encode (.ply).")
    p.add_argument("model_dir", help="Codec checkpoint directory.")
    p.add_argument("output_dir", help="Directory receiving the bitstream.")
    p.add_argument("--blk_size", type=int, default=128,
                   help="Edge of the cubic coding blocks; multiples of 64 match the reference models.")
    p.add_argument("--q_step", "-q_step", type=float, default=1,
                   help="Latent quantization step, any positive value.")
    p.add_argument("--scale", type=_scales, default=None,
                   help="Down-sampling factor, or None to pick one from the cloud's sparsity. A comma separated "
                        "list writes one bitstream per factor. With ABU only powers of 2 are allowed.")
    _add_topk_options(p)
    _add_abu_options(p)

    p = sub.add_parser("decompress", formatter_class=_formatter,
                       help="Decode a bitstream into a PLY point cloud.",
                       description="Decode a bitstream into a PLY point cloud.")
    _add_helpfull(p)
    p.add_argument("input_file", help="Bitstream to decode.")
    p.add_argument("model_dir", help="Codec checkpoint directory.")
    p.add_argument("--abu_model_dir", default="",
                   help="Comma separated ABU checkpoint directories, one per sampling factor.")

    p = sub.add_parser("train", formatter_class=_formatter, help="Train a coding model for one lambda.",
                       description="Train a coding model for one lambda.")
    _add_helpfull(p)
    _add_train_options(p, 64)
    p.add_argument("--lmbda", type=float, default=None, help="Rate-distortion trade-off (config default 0.001).")
    p.add_argument("--scale", type=float, default=1, help="Down-sampling scale applied to training clouds.")

    p = sub.add_parser("train-abu", formatter_class=_formatter,
                       help="Train an ABU model for one sampling factor.",
                       description="Train an ABU model for one sampling factor.")
    _add_helpfull(p)
    _add_train_options(p, 64)
    p.add_argument("--scale", type=int, required=True, help="Sampling factor (a power of 2, at least 2).")

    p = sub.add_parser("evaluate", formatter_class=_formatter,
                       help="Compare a decoded cloud with its reference; writes CSV.",
                       description="Compare a decoded cloud with its reference; writes CSV.")
    _add_helpfull(p)
    p.add_argument("reference", help="Reference point cloud (.ply).")
    p.add_argument("decoded", help="Decoded point cloud (.ply).")
    p.add_argument("--bitstream", default=None, help="Bitstream file used to report bits per input point.")
    p.add_argument("--precision", type=int, default=None,
                   help="Coordinate bit depth for the PSNR peak (default: from the reference).")
    p.add_argument("--csv", default=None, help="Write the CSV here instead of standard output.")

    p = sub.add_parser("rd-sweep", formatter_class=_formatter,
                       help="Encode over a configuration grid and select target-rate points; writes CSV.",
                       description="Encode over a configuration grid and select target-rate points; writes CSV.")
    _add_helpfull(p)
    p.add_argument("input_file", help="Point cloud to encode (.ply).")
    p.add_argument("model_dirs", help="Comma separated codec checkpoint directories (one per lambda).")
    p.add_argument("--q_steps", type=_floats, default=[1.0], help="Comma separated quantization steps.")
    p.add_argument("--scales", type=_floats, default=[1.0], help="Comma separated down-sampling scales.")
    p.add_argument("--blk_sizes", type=_floats, default=[128.0], help="Comma separated block sizes.")
    p.add_argument("--targets", type=_floats, default=None,
                   help="Comma separated target rates in bpp (default: the geometry or joint set).")
    p.add_argument("--metric", default="d1", choices=("d1", "d2", "y", "yuv"), help="Quality metric.")
    p.add_argument("--csv", default=None, help="Write the CSV here instead of standard output.")
    _add_topk_options(p)
    _add_abu_options(p)
    return parser


def full_help() -> str:
    parser = build_parser()
    parts = [parser.format_help()]
    for action in parser._subparsers._group_actions:
        for name, sub in action.choices.items():
            parts.append(f"\n{name}:\n" + sub.format_help())
    return "".join(parts)


# commands

def _ply_files(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.ply")) if p.is_dir() else [p])
    if not out:
        raise ValueError("no training point clouds found")
    return out


def _codec_config(args, scale) -> "CodecConfig":
    from .pipeline import CodecConfig

    return CodecConfig(with_color=args.with_color, blk_size=args.blk_size, q_step=args.q_step, scale=scale,
                       use_abu=args.use_abu, topk_metrics=args.topk_metrics, color_weight=args.color_weight,
                       use_fast_topk=args.use_fast_topk, max_topk=args.max_topk,
                       topk_patience=args.topk_patience, abu_topk=args.abu_topk, abu_max_topk=args.abu_max_topk)


def cmd_compress(args) -> int:
    from .pipeline import Models, encode_detailed, write_bitstream
    from .ply import load_ply

    pc = load_ply(args.input_file)
    models = Models.load(args.model_dir, _dirs(args.abu_model_dir))
    scales = args.scale or [None]
    stem = Path(args.input_file).stem
    for scale in scales:
        res = encode_detailed(pc, _codec_config(args, scale), models)
        name = f"{stem}.bin" if len(scales) == 1 else f"{stem}_sf{scale:g}.bin"
        path = write_bitstream(Path(args.output_dir) / name, res.bitstream)
        print(f"{path}: {len(pc)} points, {len(res.records)} blocks, scale {res.header.sf:g}, "
              f"{len(res.bitstream)} bytes, {res.bpp:.6f} bpp")
    return 0


def cmd_decompress(args) -> int:
    from .bitstream import Header
    from .pipeline import Models, decode
    from .ply import save_ply

    data = Path(args.input_file).read_bytes()
    header = Header.unpack(data)
    if header.with_color != args.with_color:
        log.warning("bitstream %s colour; following the bitstream",
                    "carries" if header.with_color else "carries no")
    models = Models.load(args.model_dir, _dirs(args.abu_model_dir) if header.abu else ())
    pc = decode(data, models)
    out = Path(args.input_file).with_suffix(".dec.ply")
    save_ply(pc, out)
    print(f"{out}: {len(pc)} points")
    return 0


def _train_config(args, **extra):
    from .training import TrainConfig

    base = TrainConfig.load(args.config) if args.config else TrainConfig(**extra)
    overrides = {k: v for k, v in (("lr", args.lr), ("batch", args.batch), ("max_epochs", args.epochs),
                                   ("patience", args.patience), ("width_factor", args.width_factor),
                                   ("seed", args.seed), ("lmbda", getattr(args, "lmbda", None)))
                 if v is not None}
    return replace(base, **overrides)


def _split(items, fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = int(round(len(items) * fraction)) if len(items) > 1 else 0
    val = [items[i] for i in order[:n_val]]
    train = [items[i] for i in order[n_val:]]
    return train, val


def cmd_train(args) -> int:
    from .codec import save_codec
    from .ply import load_ply
    from .training import make_training_blocks, train_codec

    cfg = _train_config(args)
    clouds = [load_ply(p) for p in _ply_files(args.train_files)]
    blocks = make_training_blocks(clouds, args.blk_size, args.scale, args.min_points, args.with_color)
    if not blocks:
        raise ValueError("no training blocks with enough points")
    train, val = _split(blocks, args.val_fraction, cfg.seed)
    model, result = train_codec(train, val, cfg)
    path = save_codec(model, args.model_dir, cfg.lmbda)
    print(f"{path}: best epoch {result.best_epoch}, validation loss {result.best_val:.6f}")
    return 0


def cmd_train_abu(args) -> int:
    from .abu import abu_batch_size, make_abu_blocks, save_abu, train_abu
    from .pointcloud import PointCloud
    from .ply import load_ply

    cfg = _train_config(args, batch=abu_batch_size(args.scale))
    clouds = [load_ply(p) for p in _ply_files(args.train_files)]
    if not args.with_color:
        clouds = [PointCloud(pc.points, None, pc.precision) for pc in clouds]
    pairs = make_abu_blocks(clouds, args.blk_size, args.scale, args.min_points)
    if not pairs:
        raise ValueError("no training blocks with enough points")
    train, val = _split(pairs, args.val_fraction, cfg.seed)
    model, result = train_abu(train, args.scale, cfg, val)
    path = save_abu(model, args.model_dir, args.scale)
    print(f"{path}: best epoch {result.best_epoch}, validation loss {result.best_val:.6f}")
    return 0


def _write_csv(rows, path):
    if path:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)


def cmd_evaluate(args) -> int:
    from .ply import load_ply
    from .quality import psnr_color, psnr_d1, psnr_d2

    ref, test = load_ply(args.reference), load_ply(args.decoded)
    p = args.precision or ref.precision
    rate = ""
    if args.bitstream:
        rate = f"{8.0 * Path(args.bitstream).stat().st_size / len(ref):.6f}"
    y = yuv = rgb = ""
    if args.with_color:
        if not (ref.has_colors and test.has_colors):
            raise ValueError("colour evaluation needs colours in both clouds")
        col = psnr_color(ref, test, "yuv")
        y, yuv = f"{col['y']:.6f}", f"{col['yuv']:.6f}"
        rgb = f"{psnr_color(ref, test, 'rgb')['rgb']:.6f}"
    rows = [["pc_name", "rate_bpp", "d1", "d2", "y", "yuv", "rgb"],
            [Path(args.decoded).stem, rate, f"{psnr_d1(ref.points, test.points, p):.6f}",
             f"{psnr_d2(ref.points, test.points, p):.6f}", y, yuv, rgb]]
    _write_csv(rows, args.csv)
    return 0


def cmd_rd_sweep(args) -> int:
    from .pipeline import CodecConfig, Models, rd_sweep
    from .ply import load_ply

    pc = load_ply(args.input_file)
    abu_dirs = _dirs(args.abu_model_dir)
    grid = []
    for mdir in _dirs(args.model_dirs):
        models = Models.load(mdir, abu_dirs)
        for qs, sf, blk in itertools.product(args.q_steps, args.scales, args.blk_sizes):
            cfg = CodecConfig(with_color=args.with_color, blk_size=int(blk), q_step=qs, scale=sf,
                              use_abu=args.use_abu, topk_metrics=args.topk_metrics,
                              color_weight=args.color_weight, use_fast_topk=args.use_fast_topk,
                              max_topk=args.max_topk, topk_patience=args.topk_patience,
                              abu_topk=args.abu_topk, abu_max_topk=args.abu_max_topk)
            grid.append((f"{Path(mdir).name}/qs{qs:g}/sf{sf:g}/bs{int(blk)}", cfg, models))
    result = rd_sweep(pc, grid, args.targets, args.metric)
    text = result.to_csv()
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"compress": cmd_compress, "decompress": cmd_decompress, "train": cmd_train,
            "train-abu": cmd_train_abu, "evaluate": cmd_evaluate, "rd-sweep": cmd_rd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"{PROG} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
