"""Expert-in-the-loop classifier training driven by contrastive
natural-language explanations over precomputed feature grids."""

from . import errors
from .feature_store import (
    BoundingBox,
    DatasetManifest,
    Grid,
    SampleRecord,
    Segment,
    SynthParams,
    generate_synthetic,
    load_activation,
    load_manifest,
)
from .grounding import GroundingReport, PatchSample, crop_resize, ground_explanation
from .heads import ModelParams, attention_forward, init_model, lr_at_epoch, saliency
from .morph import ArchState, coarse_label_of, initial_state, merge_pair, route
from .parsing import Lexicon, ParsedExplanation, default_lexicon, load_lexicon, parse, tokenize
from .profiles import ClassProfile, fit_profile, jsd, kl_divergence, pool_features, select_pairs
from .session import (
    QueryTicket,
    RoundMetrics,
    Session,
    SessionConfig,
    evaluate,
    load_session,
    predict,
    propose_queries,
    save_session,
    start_session,
    submit_explanations,
    train_round,
)

__version__ = "0.1.0"
