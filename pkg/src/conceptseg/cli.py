"""Command-line interface.

Subcommands: register, segment, segment-batch, finetune, eval, video,
selftest. Exit status 0 on success, 1 on validation errors (bad flags,
missing files, malformed inputs), 2 on internal errors.

Options can come from a JSON config file (--config) with flat keys naming
the long options (weights, alpha, mode, refine, iters, lr, jobs, out,
seed, plus the model-shape keys encoder_mode, patch_size, depth, heads,
embed_dim, resolution, decoder_depth). Command-line flags override the
file. Without --weights, a seeded synthetic bundle is generated - handy
for demos and fixtures, useless for real images.

No subcommand rewrites its inputs; everything lands under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import selftest
from .bundle import TensorBundle
from .concept import SCALE_WEIGHTS_TENSOR, ReferenceConcept, register_concept
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import BundleFormatError, DatasetError, DegenerateMaskError, WeightShapeError
from .evalkit import DatasetSpec, EvalConfig, evaluate_dataset, miou
from .imgio import load_image, load_mask, save_mask
from .pipeline import (
    MODE_MULTISCALE,
    MODES,
    ModelState,
    ScaleWeights,
    fit_scale_weights,
    segment,
    segment_video,
)
from .synthetic import DEFAULT_DECODER_SEED, DEFAULT_ENCODER_SEED, make_model_weights


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit 1 with usage on stderr instead of argparse's default status 2
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    weights: str = ""
    alpha: float = 1.0
    mode: str = "training-free"
    refine: bool = True
    iters: int = 1000
    lr: float = 1e-3
    jobs: int = 1
    out: str = "out"
    seed: int = -1  # -1: use the documented default fixture seeds
    encoder_mode: str = "tiny-vit"
    patch_size: int = 4
    depth: int = 2
    heads: int = 4
    embed_dim: int = 32
    resolution: int = 64
    decoder_depth: int = 2


def _config_from(args) -> RunConfig:
    cfg = RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from e
        for key, value in data.items():
            if key not in known:
                raise UsageError(f"config file {path}: unknown key {key!r}")
            setattr(cfg, key, value)
    for name in known:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "no_refine", False):
        cfg.refine = False
    if cfg.alpha < 0:
        raise UsageError(f"--alpha must be >= 0, got {cfg.alpha}")
    if cfg.mode not in MODES:
        raise UsageError(f"--mode must be one of {', '.join(MODES)}")
    return cfg


def _load_state(cfg: RunConfig) -> ModelState:
    enc_cfg = EncoderConfig(
        mode=cfg.encoder_mode,
        patch_size=cfg.patch_size,
        depth=cfg.depth,
        heads=cfg.heads,
        embed_dim=cfg.embed_dim,
        resolution=cfg.resolution,
    )
    dec_cfg = DecoderConfig(
        depth=cfg.decoder_depth, heads=cfg.heads, embed_dim=cfg.embed_dim
    )
    if cfg.weights:
        path = Path(cfg.weights)
        if not path.is_file():
            raise UsageError(f"weights bundle not found: {path}")
        bundle = TensorBundle.read(path)
    else:
        enc_seed = DEFAULT_ENCODER_SEED if cfg.seed < 0 else cfg.seed
        dec_seed = DEFAULT_DECODER_SEED if cfg.seed < 0 else cfg.seed + 1
        bundle = make_model_weights(enc_cfg, dec_cfg, enc_seed, dec_seed)
    return ModelState(enc_cfg, dec_cfg, bundle)


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_concept(path_str: str) -> tuple[ReferenceConcept, ScaleWeights | None]:
    path = _require_file(path_str, "concept bundle")
    bundle = TensorBundle.read(path)
    sidecar = path.with_name(path.name + ".json")
    image_id = ""
    if sidecar.is_file():
        image_id = json.loads(sidecar.read_text()).get("image_id", "")
    concept = ReferenceConcept.from_bundle(bundle, image_id=image_id)
    weights = None
    if SCALE_WEIGHTS_TENSOR in bundle:
        w = bundle[SCALE_WEIGHTS_TENSOR]
        weights = ScaleWeights(float(w[0]), float(w[1]))
    return concept, weights


def _write_concept(
    out_dir: Path, name: str, concept: ReferenceConcept, weights: ScaleWeights | None
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = TensorBundle()
    concept.to_bundle(bundle)
    if weights is not None:
        bundle.replace(SCALE_WEIGHTS_TENSOR, weights.as_array())
    path = out_dir / name
    bundle.write(path)
    path.with_name(path.name + ".json").write_text(
        json.dumps({"image_id": concept.image_id}, sort_keys=True) + "\n"
    )
    return path


def _segment_one(concept, weights, image_path: Path, out_dir: Path, state, cfg, gt=None):
    image = load_image(image_path)
    res = segment(
        concept,
        image,
        state,
        alpha=cfg.alpha,
        mode=cfg.mode,
        scale_weights=weights,
        refine=cfg.refine,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_mask(out_dir / f"{image_path.stem}.png", res.mask)
    sidecar = {
        "alpha": cfg.alpha,
        "mode": cfg.mode,
        "prior": {
            "positive": list(res.prior.positive),
            "negative": list(res.prior.negative),
            "positive_confidence": res.prior.positive_confidence,
            "negative_confidence": res.prior.negative_confidence,
        },
        "scale_weights": None
        if res.scale_weights is None
        else [res.scale_weights.w1, res.scale_weights.w2],
        "warnings": list(res.warnings),
    }
    if gt is not None:
        sidecar["stage_ious"] = [float(miou(m, gt)) for m in res.trace]
    (out_dir / f"{image_path.stem}.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )
    return res


def _cmd_register(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    image = load_image(_require_file(args.image, "image"))
    mask = load_mask(_require_file(args.mask, "mask"))
    concept = register_concept(
        image, mask.astype(np.float32), state.encoder_cfg, state.weights
    )
    path = _write_concept(Path(cfg.out), args.name + ".pstb", concept, None)
    print(f"registered {concept.n} local features -> {path}")
    return 0


def _cmd_segment(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    concept, weights = _load_concept(args.concept)
    gt = load_mask(_require_file(args.gt, "ground-truth mask")) if args.gt else None
    image_path = _require_file(args.image, "image")
    res = _segment_one(concept, weights, image_path, Path(cfg.out), state, cfg, gt)
    print(
        f"{image_path.name}: {int(res.mask.sum())} foreground pixels, "
        f"positive point {res.prior.positive}"
    )
    return 0


def _cmd_segment_batch(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    concept, weights = _load_concept(args.concept)
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise UsageError(f"image directory not found: {images_dir}")
    paths = sorted(p for p in images_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise UsageError(f"no .png images in {images_dir}")
    out_dir = Path(cfg.out)
    if cfg.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            list(
                pool.map(
                    lambda p: _segment_one(concept, weights, p, out_dir, state, cfg),
                    paths,
                )
            )
    else:
        for p in paths:
            _segment_one(concept, weights, p, out_dir, state, cfg)
    print(f"segmented {len(paths)} images -> {out_dir}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    concept, _ = _load_concept(args.concept)
    image = load_image(_require_file(args.image, "image"))
    mask = load_mask(_require_file(args.mask, "mask"))
    report = fit_scale_weights(
        concept, image, mask, state, alpha=cfg.alpha, iters=cfg.iters, lr=cfg.lr
    )
    path = _write_concept(
        Path(cfg.out), Path(args.concept).name, concept, report.weights
    )
    print(
        f"fitted (w1, w2) = ({report.weights.w1:.4f}, {report.weights.w2:.4f}) "
        f"loss {report.best_loss:.6f} in {report.seconds:.2f}s -> {path}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    spec = DatasetSpec(root=Path(args.dataset), reference_index=args.reference_index)
    eval_cfg = EvalConfig(
        alpha=cfg.alpha,
        mode=cfg.mode,
        refine=cfg.refine,
        fit_iters=cfg.iters,
        fit_lr=cfg.lr,
        jobs=cfg.jobs,
        video=args.video,
        band_frac=args.band_frac,
        propagate=args.propagate,
    )
    report = evaluate_dataset(spec, state, eval_cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    return 0


def _cmd_video(args) -> int:
    cfg = _config_from(args)
    state = _load_state(cfg)
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise UsageError(f"frame directory not found: {frames_dir}")
    paths = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise UsageError(f"no .png frames in {frames_dir}")
    mask = load_mask(_require_file(args.mask, "first-frame mask"))
    first = load_image(paths[0])
    concept = register_concept(
        first, mask.astype(np.float32), state.encoder_cfg, state.weights
    )
    weights = None
    if cfg.mode == MODE_MULTISCALE:
        weights = fit_scale_weights(
            concept, first, mask, state, alpha=cfg.alpha, iters=cfg.iters, lr=cfg.lr
        ).weights
    frames = [load_image(p) for p in paths]
    results = segment_video(
        concept,
        frames,
        state,
        alpha=cfg.alpha,
        mode=cfg.mode,
        scale_weights=weights,
        refine=cfg.refine,
        propagate=args.propagate,
    )
    out_dir = Path(cfg.out)
    for path, res in zip(paths, results):
        save_mask(out_dir / f"{path.stem}.png", res.mask)
    print(f"segmented {len(paths)} frames -> {out_dir}")
    return 0


def _cmd_selftest(args) -> int:
    return 1 if selftest.run() else 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--weights", help="weights bundle path")
    parser.add_argument("--alpha", type=float, help="attention bias factor (default 1.0)")
    parser.add_argument("--mode", choices=MODES, help="segmentation mode")
    parser.add_argument("--no-refine", action="store_true", help="skip post-refinement")
    parser.add_argument("--iters", type=int, help="fit iterations (default 1000)")
    parser.add_argument("--lr", type=float, help="fit step size (default 1e-3)")
    parser.add_argument("--jobs", type=int, help="worker threads (default 1)")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--seed", type=int, help="seed for generated synthetic weights")


def build_parser() -> _Parser:
    parser = _Parser(prog="conceptseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("register", help="register a concept from one image + mask")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--name", default="concept", help="output bundle name")
    _add_common(p)
    p.set_defaults(fn=_cmd_register)

    p = sub.add_parser("segment", help="segment one image")
    p.add_argument("--image", required=True)
    p.add_argument("--concept", required=True)
    p.add_argument("--gt", help="optional ground-truth mask, records per-stage IoU")
    _add_common(p)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("segment-batch", help="segment a directory of images")
    p.add_argument("--images", required=True)
    p.add_argument("--concept", required=True)
    _add_common(p)
    p.set_defaults(fn=_cmd_segment_batch)

    p = sub.add_parser("finetune", help="fit the two scale weights on the reference pair")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--concept", required=True)
    _add_common(p)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--reference-index", type=int, default=0)
    p.add_argument("--video", action="store_true", help="score as ordered video frames")
    p.add_argument("--band-frac", type=float, default=0.02)
    p.add_argument("--propagate", action="store_true")
    _add_common(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("video", help="segment ordered frames from a first-frame mask")
    p.add_argument("--frames", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--propagate", action="store_true")
    _add_common(p)
    p.set_defaults(fn=_cmd_video)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.set_defaults(fn=_cmd_selftest)

    return parser


def dispatch(argv) -> int:
    """Parse argv (no program name) and run the subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.fn(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except (
        BundleFormatError,
        WeightShapeError,
        DatasetError,
        DegenerateMaskError,
        ValueError,
        FileNotFoundError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
