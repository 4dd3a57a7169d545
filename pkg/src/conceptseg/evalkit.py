"""Metrics (mIoU, boundary IoU, J&F) and dataset evaluation harnesses.

Dataset layout: a root directory with one subdirectory per object, each
holding images/ and masks/ with same-named PNG files. One pair per object
(index 0 by default) is the reference; all remaining pairs are tests. A
video dataset uses the same layout with filenames ordering the frames.

Boundary bands are extracted by iterated 4-connected erosion: the band is
every mask pixel within L1 distance d of background (pixels outside the
image count as background), with d = max(1, round(band_frac * diagonal)).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion

from .concept import register_concept
from .errors import DatasetError
from .imgio import load_image, load_mask
from .pipeline import (
    MODE_MULTISCALE,
    MODE_TRAINING_FREE,
    ModelState,
    ScaleWeights,
    fit_scale_weights,
    segment,
    segment_video,
)

CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _checked_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _checked_pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def band_depth(shape: tuple[int, int], band_frac: float = 0.02) -> int:
    """Band width in pixels: band_frac of the image diagonal, at least 1."""
    h, w = shape
    return max(1, int(round(band_frac * float(np.hypot(h, w)))))


def boundary_band(mask: np.ndarray, depth: int) -> np.ndarray:
    """Mask pixels within L1 distance `depth` of background or the image
    edge, via `depth` rounds of 4-connected erosion."""
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        return np.zeros_like(mask)
    core = binary_erosion(mask, structure=CROSS, iterations=depth, border_value=0)
    return mask & ~core


def boundary_iou(pred: np.ndarray, gt: np.ndarray, band_frac: float = 0.02) -> float:
    """IoU of the two boundary bands; 1.0 when both masks are empty."""
    pred, gt = _checked_pair(pred, gt)
    d = band_depth(pred.shape, band_frac)
    return miou(boundary_band(pred, d), boundary_band(gt, d))


def boundary_f(pred: np.ndarray, gt: np.ndarray, band_frac: float = 0.02) -> float:
    """F-measure between the two boundary bands (precision/recall of band
    pixels); 1.0 when both masks are empty, 0.0 when exactly one is."""
    pred, gt = _checked_pair(pred, gt)
    d = band_depth(pred.shape, band_frac)
    bp = boundary_band(pred, d)
    bg = boundary_band(gt, d)
    np_, ng = np.count_nonzero(bp), np.count_nonzero(bg)
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    hit = np.count_nonzero(bp & bg)
    precision = hit / np_
    recall = hit / ng
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class DatasetSpec:
    """Root directory of per-object image/mask pairs."""

    root: Path
    reference_index: int = 0

    def object_names(self) -> list[str]:
        root = Path(self.root)
        if not root.is_dir():
            raise DatasetError(f"dataset root {root} is not a directory")
        names = sorted(p.name for p in root.iterdir() if p.is_dir())
        if not names:
            raise DatasetError(f"dataset root {root} has no object directories")
        return names

    def pairs(self, name: str) -> list[tuple[Path, Path]]:
        """Sorted (image, mask) path pairs for one object; validates layout."""
        obj = Path(self.root) / name
        images_dir = obj / "images"
        masks_dir = obj / "masks"
        for d in (images_dir, masks_dir):
            if not d.is_dir():
                raise DatasetError(f"object {name}: missing directory {d}")
        out = []
        for img in sorted(images_dir.iterdir()):
            if not img.is_file():
                continue
            mask = masks_dir / img.name
            if not mask.is_file():
                raise DatasetError(f"object {name}: no mask for image {img.name}")
            out.append((img, mask))
        if len(out) < 2:
            raise DatasetError(
                f"object {name}: needs at least 2 image/mask pairs, found {len(out)}"
            )
        if not (0 <= self.reference_index < len(out)):
            raise DatasetError(
                f"object {name}: reference index {self.reference_index} out of "
                f"range for {len(out)} pairs"
            )
        return out


@dataclass(frozen=True)
class EvalConfig:
    alpha: float = 1.0
    mode: str = MODE_TRAINING_FREE
    refine: bool = True
    fit_iters: int = 1000
    fit_lr: float = 1e-3
    jobs: int = 1
    video: bool = False
    band_frac: float = 0.02
    propagate: bool = False


@dataclass(frozen=True)
class EvalReport:
    config: dict
    objects: dict
    overall: dict

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "objects": self.objects,
            "overall": self.overall,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        if self.config.get("video"):
            cols = [("J", "j"), ("F", "f"), ("J&F", "jf")]
        else:
            cols = [("mIoU", "miou"), ("bIoU", "biou")]
        names = list(self.objects) + ["overall"]
        width = max(len("object"), *(len(n) for n in names))
        header = "object".ljust(width) + "".join(f"  {t:>8}" for t, _ in cols)
        lines = [header, "-" * len(header)]
        for name in self.objects:
            row = self.objects[name]
            lines.append(
                name.ljust(width)
                + "".join(f"  {row[key]:8.4f}" for _, key in cols)
            )
        lines.append(
            "overall".ljust(width)
            + "".join(f"  {self.overall[key]:8.4f}" for _, key in cols)
        )
        return "\n".join(lines) + "\n"


def weights_fingerprint(state: ModelState) -> str:
    return hashlib.sha256(state.weights.write_bytes()).hexdigest()


def _prepare_object(spec, name, state, cfg):
    pairs = spec.pairs(name)
    ref_img_path, ref_mask_path = pairs[spec.reference_index]
    ref_img = load_image(ref_img_path)
    ref_mask = load_mask(ref_mask_path)
    try:
        concept = register_concept(
            ref_img, ref_mask.astype(np.float32), state.encoder_cfg, state.weights
        )
    except ValueError as e:
        raise DatasetError(f"object {name}: cannot register {ref_img_path}: {e}") from e
    weights = None
    if cfg.mode == MODE_MULTISCALE:
        weights = fit_scale_weights(
            concept, ref_img, ref_mask, state,
            alpha=cfg.alpha, iters=cfg.fit_iters, lr=cfg.fit_lr,
        ).weights
    tests = [p for i, p in enumerate(pairs) if i != spec.reference_index]
    return concept, weights, tests


def _eval_object(spec: DatasetSpec, name: str, state: ModelState, cfg: EvalConfig):
    concept, weights, tests = _prepare_object(spec, name, state, cfg)
    ious, bious = [], []
    for img_path, mask_path in tests:
        res = segment(
            concept,
            load_image(img_path),
            state,
            alpha=cfg.alpha,
            mode=cfg.mode,
            scale_weights=weights,
            refine=cfg.refine,
        )
        gt = load_mask(mask_path)
        ious.append(miou(res.mask, gt))
        bious.append(boundary_iou(res.mask, gt, cfg.band_frac))
    return {"miou": float(np.mean(ious)), "biou": float(np.mean(bious))}


def _eval_video_object(spec: DatasetSpec, name: str, state: ModelState, cfg: EvalConfig):
    concept, weights, tests = _prepare_object(spec, name, state, cfg)
    frames = [load_image(p) for p, _ in tests]
    gts = [load_mask(p) for _, p in tests]
    results = segment_video(
        concept,
        frames,
        state,
        alpha=cfg.alpha,
        mode=cfg.mode,
        scale_weights=weights,
        refine=cfg.refine,
        propagate=cfg.propagate,
    )
    js = [float(miou(r.mask, gt)) for r, gt in zip(results, gts)]
    fs = [float(boundary_f(r.mask, gt, cfg.band_frac)) for r, gt in zip(results, gts)]
    j, f = float(np.mean(js)), float(np.mean(fs))
    return {"j_frames": js, "f_frames": fs, "j": j, "f": f, "jf": 0.5 * (j + f)}


def evaluate_dataset(
    spec: DatasetSpec, state: ModelState, cfg: EvalConfig | None = None
) -> EvalReport:
    """Register each object's reference pair, segment the rest, aggregate.

    Overall scores are unweighted means over objects. Per-object work can
    fan out over cfg.jobs threads; the report is assembled in sorted
    object order either way.
    """
    cfg = cfg or EvalConfig()
    names = spec.object_names()
    run = _eval_video_object if cfg.video else _eval_object
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(lambda n: run(spec, n, state, cfg), names))
    else:
        rows = [run(spec, n, state, cfg) for n in names]
    objects = dict(zip(names, rows))
    if cfg.video:
        overall = {
            "j": float(np.mean([r["j"] for r in rows])),
            "f": float(np.mean([r["f"] for r in rows])),
            "jf": float(np.mean([r["jf"] for r in rows])),
        }
    else:
        overall = {
            "miou": float(np.mean([r["miou"] for r in rows])),
            "biou": float(np.mean([r["biou"] for r in rows])),
        }
    config_echo = {
        "alpha": cfg.alpha,
        "mode": cfg.mode,
        "refine": cfg.refine,
        "video": cfg.video,
        "band_frac": cfg.band_frac,
        "weights_hash": weights_fingerprint(state),
    }
    return EvalReport(config=config_echo, objects=objects, overall=overall)
