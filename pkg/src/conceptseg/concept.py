"""One-shot target representation.

Register a concept from a single reference image + mask: crop the feature
cells under the mask into a set of unit-norm local features, and average
them into one global embedding. New images are scored against the locals
with a cosine-similarity confidence map, whose extremes become the
positive/negative point prompts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import TensorBundle
from .encoder import (
    EncoderConfig,
    FeatureMap,
    downsample_mask,
    encode_image,
    image_content_hash,
)
from .errors import DegenerateMaskError
from .kernels import l2_normalize

LOCALS_TENSOR = "concept:locals"
GLOBAL_TENSOR = "concept:global"
SCALE_WEIGHTS_TENSOR = "concept:scale_weights"


@dataclass(frozen=True)
class ReferenceConcept:
    """Registered one-shot target."""

    locals: np.ndarray  # (n, c), rows unit-norm
    global_embedding: np.ndarray  # (c,), plain mean of the locals
    image_id: str = ""

    @property
    def n(self) -> int:
        return self.locals.shape[0]

    @property
    def channels(self) -> int:
        return self.locals.shape[1]

    def to_bundle(self, bundle: TensorBundle) -> None:
        bundle.replace(LOCALS_TENSOR, self.locals)
        bundle.replace(GLOBAL_TENSOR, self.global_embedding[None, :])

    @classmethod
    def from_bundle(cls, bundle: TensorBundle, image_id: str = "") -> "ReferenceConcept":
        locals_ = bundle[LOCALS_TENSOR]
        global_ = bundle[GLOBAL_TENSOR]
        return cls(locals=locals_, global_embedding=global_[0], image_id=image_id)


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-cell target location scores in [-1, 1] for one test image."""

    scores: np.ndarray  # (h, w)
    image_id: str = ""
    concept_id: str = ""

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.scores) == 0)


@dataclass(frozen=True)
class LocationPrior:
    """Positive/negative point prompts in image-pixel (x, y) coordinates."""

    positive: tuple[float, float]
    negative: tuple[float, float]
    positive_confidence: float
    negative_confidence: float


def extract_local_features(
    features: FeatureMap, mask_feat: np.ndarray
) -> np.ndarray:
    """Collect unit-norm feature vectors of foreground cells, row-major.

    `mask_feat` is the h*w*1 (or h*w) binary map from downsample_mask.
    Returns an (n, c) array, n = foreground cell count >= 1.
    """
    mask_feat = np.asarray(mask_feat)
    if mask_feat.ndim == 3 and mask_feat.shape[2] == 1:
        mask_feat = mask_feat[:, :, 0]
    if mask_feat.shape != features.grid.shape[:2]:
        raise ValueError(
            f"mask {mask_feat.shape} does not match feature grid "
            f"{features.grid.shape[:2]}"
        )
    selected = features.grid[mask_feat > 0]
    if selected.shape[0] == 0:
        raise DegenerateMaskError("mask has no foreground cells")
    return l2_normalize(selected, axis=1)


def target_embedding(locals_: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the local features. Deliberately not renormalized:
    it is added linearly to the decoder input tokens."""
    locals_ = np.asarray(locals_, dtype=np.float32)
    if locals_.ndim != 2 or locals_.shape[0] == 0:
        raise ValueError("need a non-empty (n, c) array of local features")
    return locals_.mean(axis=0).astype(np.float32)


def confidence_map(concept: ReferenceConcept, features: FeatureMap) -> ConfidenceMap:
    """Average cosine similarity between every local feature and each cell.

    Test features are L2-normalized internally; scores land in [-1, 1].
    """
    h, w, c = features.grid.shape
    if c != concept.channels:
        raise ValueError(
            f"feature channels {c} do not match concept channels {concept.channels}"
        )
    cells = l2_normalize(features.grid.reshape(h * w, c), axis=1)
    sims = cells @ concept.locals.T  # (h*w, n)
    scores = sims.mean(axis=1).reshape(h, w)
    # float guard only: rounding can poke a cosine a few ulp past +/-1
    scores = np.clip(scores, -1.0, 1.0).astype(np.float32)
    return ConfidenceMap(scores=scores, concept_id=concept.image_id)


def select_location_prior(conf: ConfidenceMap, stride: int) -> LocationPrior:
    """Argmax cell -> positive point, argmin cell -> negative point.

    Ties break to the smallest row-major index. Cell (r, c) maps to the
    pixel at its center, ((c + 0.5) * stride, (r + 0.5) * stride).
    """
    s = conf.scores
    if s.size == 0:
        raise ValueError("confidence map is empty")
    h, w = s.shape
    hi = int(np.argmax(s))
    lo = int(np.argmin(s))

    def cell_to_pixel(idx: int) -> tuple[float, float]:
        r, c = divmod(idx, w)
        return ((c + 0.5) * stride, (r + 0.5) * stride)

    return LocationPrior(
        positive=cell_to_pixel(hi),
        negative=cell_to_pixel(lo),
        positive_confidence=float(s.flat[hi]),
        negative_confidence=float(s.flat[lo]),
    )


def register_concept(
    image: np.ndarray,
    mask: np.ndarray,
    cfg: EncoderConfig,
    weights: TensorBundle,
) -> ReferenceConcept:
    """Full registration: encode, downsample the mask, crop locals, average."""
    features = encode_image(image, cfg, weights)
    mask_feat = downsample_mask(mask, features.grid.shape[:2])
    locals_ = extract_local_features(features, mask_feat)
    return ReferenceConcept(
        locals=locals_,
        global_embedding=target_embedding(locals_),
        image_id=image_content_hash(image),
    )
