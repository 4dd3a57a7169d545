"""End-to-end inference: segment, refine, fuse scales, fit scale weights.

The flow for one test image:

    encode image -> confidence map -> location prior -> prompt tokens
    -> guided decode (3 scales) -> fuse per mode -> two refinement passes

Two modes:

* ``training-free`` keeps scale 0 ("whole") as the output and fuses nothing.
* ``multiscale`` blends the three scales with two learned scalars,
  fused = w1*M1 + w2*M2 + (1 - w1 - w2)*M3, fitted once per concept on the
  reference pair with the model frozen.

The fit objective is binary cross-entropy (mean over pixels) plus a soft
Dice loss with additive smoothing DICE_SMOOTH, both on the sigmoid of the
fused logits. The fused map is linear in (w1, w2), so the gradient is
analytic and the whole fit is a 2-parameter Adam loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .concept import (
    ConfidenceMap,
    LocationPrior,
    ReferenceConcept,
    confidence_map,
    register_concept,
    select_location_prior,
)
from .decoder import (
    AttentionBias,
    DecoderConfig,
    DecoderWeights,
    decode_masks,
    encode_prompts,
    semantic_prompt_tokens,
)
from .encoder import EncoderConfig, FeatureMap, encode_image
from .errors import DegenerateMaskError, NonFiniteLossError
from .kernels import bilinear_resize

MODE_TRAINING_FREE = "training-free"
MODE_MULTISCALE = "multiscale"
MODES = (MODE_TRAINING_FREE, MODE_MULTISCALE)

DICE_SMOOTH = 1.0


class ModelState:
    """Configs plus the loaded weight bundle; everything inference needs.

    Weights are immutable after load, so one state can serve any number of
    segment calls concurrently.
    """

    def __init__(self, encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig, weights):
        self.encoder_cfg = encoder_cfg
        self.decoder_cfg = decoder_cfg
        self.weights = weights
        self.decoder = DecoderWeights(decoder_cfg, weights)


@dataclass(frozen=True)
class ScaleWeights:
    """The two learnable scalars; the third weight is 1 - w1 - w2."""

    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0

    def __post_init__(self):
        if not (np.isfinite(self.w1) and np.isfinite(self.w2)):
            raise ValueError("scale weights must be finite")

    @property
    def w3(self) -> float:
        return 1.0 - self.w1 - self.w2

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2], dtype=np.float32)


@dataclass(frozen=True)
class SegmentationResult:
    fused: np.ndarray  # (H, W) f32 logits
    mask: np.ndarray  # (H, W) bool, fused > 0
    scales: np.ndarray  # (3, H, W) f32 logits from the last decode pass
    prior: LocationPrior
    trace: tuple[np.ndarray, ...]  # stage-by-stage binary masks
    warnings: tuple[str, ...] = ()
    scale_weights: ScaleWeights | None = None


@dataclass(frozen=True)
class FitReport:
    weights: ScaleWeights
    loss_curve: tuple[float, ...]
    best_loss: float
    iterations: int
    seconds: float


def fuse_scales(
    m1: np.ndarray, m2: np.ndarray, m3: np.ndarray, w: ScaleWeights
) -> np.ndarray:
    """Per-pixel weighted sum of the three logit maps."""
    if not (m1.shape == m2.shape == m3.shape):
        raise ValueError(
            f"scale shapes differ: {m1.shape} vs {m2.shape} vs {m3.shape}"
        )
    fused = (
        w.w1 * m1.astype(np.float64)
        + w.w2 * m2.astype(np.float64)
        + w.w3 * m3.astype(np.float64)
    )
    return fused.astype(np.float32)


def _fuse_for_mode(
    scales: np.ndarray, mode: str, w: ScaleWeights | None
) -> tuple[np.ndarray, ScaleWeights | None]:
    if mode == MODE_TRAINING_FREE:
        return scales[0].copy(), None
    if mode == MODE_MULTISCALE:
        w = w if w is not None else ScaleWeights()
        return fuse_scales(scales[0], scales[1], scales[2], w), w
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def _decode_pass(
    features: FeatureMap,
    concept: ReferenceConcept,
    prior: LocationPrior,
    state: ModelState,
    bias: AttentionBias | None,
    box: tuple[float, float, float, float] | None = None,
    mask_prompt: np.ndarray | None = None,
) -> np.ndarray:
    prompts = encode_prompts(prior, features.image_size, state.decoder, box=box)
    tokens = semantic_prompt_tokens(
        concept.global_embedding, state.decoder.mask_tokens, prompts
    )
    return decode_masks(features, tokens, state.decoder, bias, mask_prompt)


def mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float]:
    """Tight axis-aligned bounding box of a non-empty binary mask, as
    inclusive pixel corners (x0, y0, x1, y1); a single pixel gives a
    degenerate 1x1 box."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("cannot take the bounding box of an empty mask")
    return (float(cols[0]), float(rows[0]), float(cols[-1]), float(rows[-1]))


def segment(
    concept: ReferenceConcept,
    image: np.ndarray,
    state: ModelState,
    alpha: float = 1.0,
    mode: str = MODE_TRAINING_FREE,
    scale_weights: ScaleWeights | None = None,
    refine: bool = True,
) -> SegmentationResult:
    """Segment the registered concept in a new image."""
    features = encode_image(image, state.encoder_cfg, state.weights)
    conf = confidence_map(concept, features)
    prior = select_location_prior(conf, features.stride)
    warnings = ("constant-confidence",) if conf.is_constant else ()
    bias = AttentionBias.from_confidence(conf, alpha, features.grid.shape[:2])
    scales = _decode_pass(features, concept, prior, state, bias)
    fused, used = _fuse_for_mode(scales, mode, scale_weights)
    result = SegmentationResult(
        fused=fused,
        mask=fused > 0,
        scales=scales,
        prior=prior,
        trace=(fused > 0,),
        warnings=warnings,
        scale_weights=used,
    )
    if refine:
        result = post_refine(
            result, concept, features, state, bias=bias, mode=mode, scale_weights=used
        )
    return result


def post_refine(
    initial: SegmentationResult,
    concept: ReferenceConcept,
    features: FeatureMap,
    state: ModelState,
    bias: AttentionBias | None = None,
    mode: str = MODE_TRAINING_FREE,
    scale_weights: ScaleWeights | None = None,
) -> SegmentationResult:
    """Cascaded two-step refinement.

    Step 1 re-decodes with the points plus the current fused logits fed
    back as a mask prompt. Step 2 re-decodes with points, the step-1
    logits, and the tight bounding box of step-1's binary mask (falling
    back to the initial mask's box when step 1 came up empty). Exactly two
    steps, no convergence loop.
    """
    if not initial.mask.any():
        return replace(initial, warnings=initial.warnings + ("refine-skipped-empty-mask",))

    h, w = features.grid.shape[:2]

    def feed(fused: np.ndarray) -> np.ndarray:
        return bilinear_resize(fused, h, w)[:, :, None]

    scales1 = _decode_pass(
        features, concept, initial.prior, state, bias, mask_prompt=feed(initial.fused)
    )
    fused1, used = _fuse_for_mode(scales1, mode, scale_weights)
    mask1 = fused1 > 0

    box = mask_bbox(mask1) if mask1.any() else mask_bbox(initial.mask)
    scales2 = _decode_pass(
        features, concept, initial.prior, state, bias, box=box, mask_prompt=feed(fused1)
    )
    fused2, used = _fuse_for_mode(scales2, mode, used)
    return SegmentationResult(
        fused=fused2,
        mask=fused2 > 0,
        scales=scales2,
        prior=initial.prior,
        trace=initial.trace + (mask1, fused2 > 0),
        warnings=initial.warnings,
        scale_weights=used,
    )


def fusion_loss_and_grad(
    w: np.ndarray, scales: np.ndarray, gt: np.ndarray
) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient of the scale-fusion objective at w = (w1, w2).

    Loss = mean BCE(sigmoid(fused), gt) + soft Dice loss with smoothing
    DICE_SMOOTH. fused is linear in w with d fused/d w1 = M1 - M3 and
    d fused/d w2 = M2 - M3, so the chain rule gives the exact gradient.
    All arithmetic in float64.
    """
    m1, m2, m3 = (scales[j].astype(np.float64) for j in range(3))
    g = gt.astype(np.float64)
    if g.shape != m1.shape:
        raise ValueError(f"ground truth shape {g.shape} != logits shape {m1.shape}")
    w1, w2 = float(w[0]), float(w[1])
    fused = w1 * m1 + w2 * m2 + (1.0 - w1 - w2) * m3
    p = expit(fused)
    n = fused.size

    bce = float(np.mean(np.logaddexp(0.0, fused) - g * fused))
    inter = float((p * g).sum())
    d_num = 2.0 * inter + DICE_SMOOTH
    d_den = float(p.sum() + g.sum()) + DICE_SMOOTH
    dice = 1.0 - d_num / d_den
    loss = bce + dice

    dl_df = (p - g) / n  # BCE term
    dl_df += ((d_num - 2.0 * g * d_den) / (d_den * d_den)) * p * (1.0 - p)
    grad = np.array(
        [float((dl_df * (m1 - m3)).sum()), float((dl_df * (m2 - m3)).sum())]
    )
    return loss, grad


# coarse pre-scan box for the fit init; Adam's reach at 1000 steps of 1e-3
# is about 1.0 per coordinate, so the scan has to hand it a starting point
# already in the right basin
FIT_SCAN_LO = -2.0
FIT_SCAN_HI = 3.0
FIT_SCAN_STEP = 0.25


def _scan_init(scales: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Best (w1, w2) over a coarse grid; (1/3, 1/3) wins ties."""
    w0 = np.array([1.0 / 3.0, 1.0 / 3.0])
    best, _ = fusion_loss_and_grad(w0, scales, gt)
    ticks = np.arange(FIT_SCAN_LO, FIT_SCAN_HI + FIT_SCAN_STEP / 2, FIT_SCAN_STEP)
    for w1 in ticks:
        for w2 in ticks:
            loss, _ = fusion_loss_and_grad(np.array([w1, w2]), scales, gt)
            if np.isfinite(loss) and loss < best:
                best = loss
                w0 = np.array([w1, w2])
    return w0


def fit_scale_weights_from_logits(
    scales: np.ndarray,
    gt: np.ndarray,
    iters: int = 1000,
    lr: float = 1e-3,
) -> FitReport:
    """Adam over (w1, w2); returns the best weights seen.

    The start point comes from a coarse scan (two parameters are cheap to
    sweep): plain descent from the uniform weights stalls whenever the
    usable basin sits further away than iters * lr. The three logit maps
    are constants (frozen model), so each iteration is one analytic
    gradient evaluation. Aborts on a non-finite loss.
    """
    t0 = time.perf_counter()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    w = _scan_init(scales, gt)
    m = np.zeros(2)
    v = np.zeros(2)
    curve = []
    best_loss = np.inf
    best_w = w.copy()
    for t in range(1, iters + 1):
        loss, grad = fusion_loss_and_grad(w, scales, gt)
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"fit loss non-finite at iteration {t} (w1={w[0]:.6g}, w2={w[1]:.6g})"
            )
        curve.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_w = w.copy()
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
    loss, _ = fusion_loss_and_grad(w, scales, gt)
    curve.append(loss)
    if loss < best_loss:
        best_loss = loss
        best_w = w.copy()
    return FitReport(
        weights=ScaleWeights(float(best_w[0]), float(best_w[1])),
        loss_curve=tuple(curve),
        best_loss=float(best_loss),
        iterations=iters,
        seconds=time.perf_counter() - t0,
    )


def fit_scale_weights(
    concept: ReferenceConcept,
    image: np.ndarray,
    gt_mask: np.ndarray,
    state: ModelState,
    alpha: float = 1.0,
    iters: int = 1000,
    lr: float = 1e-3,
) -> FitReport:
    """Fit the two fusion scalars on the reference pair, model frozen.

    Decodes the reference image once (guided, unrefined) to get the three
    scale logits, then runs the Adam loop against the given mask.
    """
    res = segment(concept, image, state, alpha=alpha, refine=False)
    gt = np.asarray(gt_mask)
    if gt.ndim == 3 and gt.shape[2] == 1:
        gt = gt[:, :, 0]
    return fit_scale_weights_from_logits(
        res.scales, (gt > 0).astype(np.float64), iters=iters, lr=lr
    )


def segment_video(
    concept: ReferenceConcept,
    frames,
    state: ModelState,
    alpha: float = 1.0,
    mode: str = MODE_TRAINING_FREE,
    scale_weights: ScaleWeights | None = None,
    refine: bool = True,
    propagate: bool = False,
) -> list[SegmentationResult]:
    """Segment an ordered frame sequence.

    Default: every frame is matched against the fixed first-frame concept.
    With propagate, frame t's predicted mask re-registers the concept for
    frame t+1; a degenerate prediction keeps the previous concept.
    """
    current = concept
    results = []
    for frame in frames:
        res = segment(
            current,
            frame,
            state,
            alpha=alpha,
            mode=mode,
            scale_weights=scale_weights,
            refine=refine,
        )
        results.append(res)
        if propagate:
            try:
                current = register_concept(
                    frame, res.mask.astype(np.float32), state.encoder_cfg, state.weights
                )
            except DegenerateMaskError:
                pass  # empty or vanishing prediction: keep tracking the old concept
    return results
