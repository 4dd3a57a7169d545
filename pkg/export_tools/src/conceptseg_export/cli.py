"""Command-line interface.

Subcommands: weights (checkpoint + manifest -> bundle), features
(images + .npz grids -> precomputed-feature bundle), inspect (list a
bundle's tensors). Exit 0 on success, 1 on bad input, 2 on internal
errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoints import load_checkpoint
from .errors import ExportError
from .export import export_bundle
from .features import export_features
from .manifest import ExportManifest
from .pstb import read_tensors


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ExportError(message)


def _cmd_weights(args) -> int:
    manifest = ExportManifest.from_json(_require(args.manifest, "manifest"))
    checkpoint = load_checkpoint(args.checkpoint)
    path = export_bundle(checkpoint, manifest, args.out)
    print(f"exported {len(manifest.mapping)} tensors from {manifest.source} -> {path}")
    return 0


def _cmd_features(args) -> int:
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise ExportError(f"image directory not found: {images_dir}")
    paths = sorted(p for p in images_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise ExportError(f"no .png images in {images_dir}")
    with np.load(_require(args.features, "feature archive")) as data:
        grids = {name: np.asarray(data[name]) for name in data.files}
    out = export_features(paths, grids, args.out, jobs=args.jobs)
    print(f"exported features for {len(paths)} images -> {out}")
    return 0


def _cmd_inspect(args) -> int:
    tensors = read_tensors(_require(args.bundle, "bundle"))
    for name, arr in tensors.items():
        dims = "x".join(str(d) for d in arr.shape) or "scalar"
        print(f"{name}  {dims}  f32")
    print(f"{len(tensors)} tensors")
    return 0


def _require(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise ExportError(f"{what} not found: {path}")
    return path


def build_parser() -> _Parser:
    parser = _Parser(prog="conceptseg-export", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("weights", help="convert a checkpoint through a manifest")
    p.add_argument("--checkpoint", required=True, help=".npz, .pt or .pth file")
    p.add_argument("--manifest", required=True, help="JSON manifest")
    p.add_argument("--out", required=True, help="output bundle path")
    p.set_defaults(fn=_cmd_weights)

    p = sub.add_parser("features", help="bundle precomputed feature grids")
    p.add_argument("--images", required=True, help="directory of .png images")
    p.add_argument("--features", required=True, help=".npz keyed by image stem")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("inspect", help="list a bundle's tensors")
    p.add_argument("--bundle", required=True)
    p.set_defaults(fn=_cmd_inspect)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.fn(args)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
