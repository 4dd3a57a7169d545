"""One-shot personalized segmentation.

Register a visual concept from a single image + mask, then segment it in
new images and videos. Feature matching places point prompts, a
confidence bias steers the mask decoder's cross-attention, and an
optional 2-parameter fit blends the decoder's three output scales.
"""

from .bundle import TensorBundle
from .concept import (
    ConfidenceMap,
    LocationPrior,
    ReferenceConcept,
    confidence_map,
    extract_local_features,
    register_concept,
    select_location_prior,
    target_embedding,
)
from .decoder import (
    AttentionBias,
    DecoderConfig,
    DecoderWeights,
    PromptTokens,
    decode_masks,
    decoder_tensor_names,
    encode_prompts,
    guided_cross_attention,
    semantic_prompt_tokens,
)
from .encoder import (
    EncoderConfig,
    FeatureMap,
    downsample_mask,
    encode_image,
    encoder_tensor_names,
    feature_tensor_name,
    image_content_hash,
)
from .errors import (
    BundleFormatError,
    DatasetError,
    DegenerateMaskError,
    NonFiniteLossError,
    WeightShapeError,
)
from .evalkit import (
    DatasetSpec,
    EvalConfig,
    EvalReport,
    boundary_f,
    boundary_iou,
    evaluate_dataset,
    miou,
)
from .kernels import bilinear_resize, l2_normalize, softmax
from .pipeline import (
    MODE_MULTISCALE,
    MODE_TRAINING_FREE,
    FitReport,
    ModelState,
    ScaleWeights,
    SegmentationResult,
    fit_scale_weights,
    fuse_scales,
    fusion_loss_and_grad,
    post_refine,
    segment,
    segment_video,
)

__version__ = "0.1.0"

__all__ = [
    "TensorBundle",
    "ConfidenceMap",
    "LocationPrior",
    "ReferenceConcept",
    "confidence_map",
    "extract_local_features",
    "register_concept",
    "select_location_prior",
    "target_embedding",
    "AttentionBias",
    "DecoderConfig",
    "DecoderWeights",
    "PromptTokens",
    "decode_masks",
    "decoder_tensor_names",
    "encode_prompts",
    "guided_cross_attention",
    "semantic_prompt_tokens",
    "EncoderConfig",
    "FeatureMap",
    "downsample_mask",
    "encode_image",
    "encoder_tensor_names",
    "feature_tensor_name",
    "image_content_hash",
    "BundleFormatError",
    "DatasetError",
    "DegenerateMaskError",
    "NonFiniteLossError",
    "WeightShapeError",
    "DatasetSpec",
    "EvalConfig",
    "EvalReport",
    "boundary_f",
    "boundary_iou",
    "evaluate_dataset",
    "miou",
    "bilinear_resize",
    "l2_normalize",
    "softmax",
    "MODE_MULTISCALE",
    "MODE_TRAINING_FREE",
    "FitReport",
    "ModelState",
    "ScaleWeights",
    "SegmentationResult",
    "fit_scale_weights",
    "fuse_scales",
    "fusion_loss_and_grad",
    "post_refine",
    "segment",
    "segment_video",
]
