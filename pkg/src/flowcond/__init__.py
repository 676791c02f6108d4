"""Conditional flow-matching engine for frame-sequence infilling.

The library transports standard-normal noise to frame-feature sequences
along an affine probability path, conditioned on visible context and
frame-aligned phoneme / nonverbal / arousal-valence streams.  It ships
the training task, a from-scratch attention regressor with verified
gradients, guided ODE sampling, the data-curation gates, and trajectory
similarity metrics.
"""

from . import _thread_env  # noqa: F401  (must precede numpy-importing modules)

from .fm_core import (
    PathConfig,
    FlowSample,
    sample_time,
    path_mean_std,
    sample_conditional_path,
    conditional_vector_field,
    on_path_field,
    make_flow_sample,
    cfm_loss,
)
from .infill import (
    TemporalMask,
    ConditionBundle,
    TrainingExample,
    sample_mask,
    build_example,
    apply_condition_dropout,
    zero_conditions,
    BLANK_TOKEN,
    NV_DIM,
    EMO_DIM,
)
from .sampler import (
    GuidanceConfig,
    PromptAssembly,
    interpolate_stream,
    assemble_prompt,
    guided_field,
    integrate,
    integrate_batch,
)
from .seqmodel import (
    ModelConfig,
    PRESETS,
    VectorFieldModel,
    BatchInputs,
    init_params,
    embed_phonemes,
    LrSchedule,
    OptimizerState,
    train_step,
    TrainingDivergedError,
    make_field_fn,
    save_checkpoint,
    load_checkpoint,
)
from .features import (
    WindowSpec,
    ChunkSeries,
    FeatureMatrix,
    DatasetRecord,
    FormatError,
    window_count,
    center_arousal_valence,
    align_to_frames,
    load_feature_matrix,
    store_feature_matrix,
    synth_condition_oracle,
    generate_corpus,
)
from .curate import (
    CurationPolicy,
    CurationReport,
    emotion_gate,
    quality_gate,
    speaker_gate,
    run_pipeline,
)
from .metrics import (
    SimilarityReport,
    frame_cosine_sim,
    frame_cosine_profile,
    aro_val_sim,
    aggregate_seeds,
)

__version__ = "0.1.0"
