"""Per-image test-time optimization for open-vocabulary semantic segmentation.

Given a frozen vision-language segmentation backend, each image gets its own
adaptation pass: low-entropy augmented views tune the textual prompt bank
under joint entropy and pseudo-label objectives with gradient-conflict
surgery, language-model-derived category attributes enrich the text features,
and the views' visual features are averaged back onto the original frame
before decoding. No labels, no weight updates, fully deterministic per seed.
"""

from .attributes import (
    AttributeCache,
    AttributeProvider,
    AttributeSet,
    HTTPChatClient,
    LLMClient,
    LLMPrompt,
    OfflineClient,
    aggregate_attributes,
    build_llm_prompt,
    concat_variant,
    fetch_attributes,
    mix_text_embedding,
    parse_attribute_lines,
    prompt_fingerprint,
    reweight,
)
from .backends import Backend, cosine_argmax_decode
from .config import SegTTOConfig, format_config, load_config, parse_config_text, validate_config
from .errors import (
    AttributeParseError,
    AttributeRetrievalError,
    ConfigError,
    DecoderContractError,
    DegenerateAggregationError,
    EncoderError,
    MetricError,
    NonFiniteLossError,
    SegTTOError,
    SelectionError,
    StageError,
    ViewGenerationError,
)
from .metrics import ConfusionAccumulator, Report, accumulate, compute_miou
from .objective import (
    LossMap,
    ProbabilityMap,
    PseudoLabelMap,
    cross_entropy_map,
    dump_loss_maps,
    entropy_map,
    probability_map,
    pseudo_labels,
    selection_loss_map,
    spatial_aggregate,
)
from .oracle import OracleBackend
from .resample import bilinear_resize, hflip
from .selfcheck import run_selftest
from .templates import DEFAULT_PROMPT_TEMPLATES, IMAGENET_TEMPLATES, learnable_templates
from .pipeline import (
    SegmentationJob,
    SegmentationResult,
    baseline_segment,
    run_dataset,
    segment_image,
)
from .tuning import (
    GradientPair,
    PromptBank,
    TuningTrace,
    build_prompt_bank,
    compose_text_features,
    pcgrad_combine,
    reset_bank,
    run_textual_tuning,
)
from .types import (
    IGNORE_LABEL,
    CategoryVocabulary,
    FeatureMap,
    ImageTensor,
    SegmentationMask,
    TextEmbedding,
    ViewGeometry,
    format_vocabulary,
    full_cover,
    load_vocabulary,
    parse_vocabulary,
)
from .version import __version__
from .vfa import FeatureCanvas, accumulate_view, aggregate_visual, finalize_canvas, init_canvas
from .views import SelectionResult, View, ViewBatch, generate_views, retention_count, score_views, select_views

__all__ = [
    "AttributeCache",
    "AttributeParseError",
    "AttributeProvider",
    "AttributeRetrievalError",
    "AttributeSet",
    "Backend",
    "CategoryVocabulary",
    "ConfigError",
    "ConfusionAccumulator",
    "DEFAULT_PROMPT_TEMPLATES",
    "DecoderContractError",
    "DegenerateAggregationError",
    "EncoderError",
    "FeatureCanvas",
    "FeatureMap",
    "GradientPair",
    "HTTPChatClient",
    "IGNORE_LABEL",
    "IMAGENET_TEMPLATES",
    "ImageTensor",
    "LLMClient",
    "LLMPrompt",
    "LossMap",
    "MetricError",
    "NonFiniteLossError",
    "OfflineClient",
    "OracleBackend",
    "ProbabilityMap",
    "PromptBank",
    "PseudoLabelMap",
    "Report",
    "SegTTOConfig",
    "SegTTOError",
    "SegmentationJob",
    "SegmentationMask",
    "SegmentationResult",
    "SelectionError",
    "SelectionResult",
    "StageError",
    "TextEmbedding",
    "TuningTrace",
    "View",
    "ViewBatch",
    "ViewGenerationError",
    "ViewGeometry",
    "__version__",
    "accumulate",
    "accumulate_view",
    "aggregate_attributes",
    "aggregate_visual",
    "baseline_segment",
    "bilinear_resize",
    "build_llm_prompt",
    "build_prompt_bank",
    "compose_text_features",
    "compute_miou",
    "concat_variant",
    "cosine_argmax_decode",
    "cross_entropy_map",
    "dump_loss_maps",
    "entropy_map",
    "fetch_attributes",
    "finalize_canvas",
    "format_config",
    "format_vocabulary",
    "full_cover",
    "generate_views",
    "hflip",
    "init_canvas",
    "learnable_templates",
    "load_config",
    "load_vocabulary",
    "mix_text_embedding",
    "parse_attribute_lines",
    "parse_config_text",
    "parse_vocabulary",
    "pcgrad_combine",
    "probability_map",
    "prompt_fingerprint",
    "pseudo_labels",
    "reset_bank",
    "retention_count",
    "reweight",
    "run_dataset",
    "run_selftest",
    "run_textual_tuning",
    "score_views",
    "segment_image",
    "select_views",
    "selection_loss_map",
    "spatial_aggregate",
    "validate_config",
]
