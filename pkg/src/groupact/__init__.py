"""Human-in-the-loop group-activity video retrieval.

Pre-train a group-activity feature (GAF) embedding from per-person feature
tracks, select a handful of informative clips for a user to label, fine-tune
the embedding contrastively, and re-rank a clip pool.
"""

__version__ = "0.1.0"

from .dataset import (
    Dataset,
    SyntheticConfig,
    export_features,
    generate_synthetic,
    import_features,
    load_dataset,
    oracle_annotate,
    save_dataset,
)
from .encoder import (
    EncoderParams,
    MaskPattern,
    PretrainConfig,
    VideoFeatures,
    compose_person_feature,
    encode_gaf,
    init_params,
    load_params,
    predict_appearance,
    pretrain,
    pretrain_loss,
    save_params,
    spatial_positional_encoding,
)
from .evaluation import (
    EvalConfig,
    ProtocolReport,
    TrialResult,
    embed_videos,
    hit_at_k,
    precision_at_k,
    retrieve_topk,
    retrieve_topk_scored,
    run_protocol,
    run_sweep,
    run_trial,
)
from .finetune import (
    Annotation,
    FinetuneConfig,
    LossReport,
    finetune,
    merge_annotations,
    reg_loss,
    triplet_loss,
)
from .optim import AdamState, adam_step
from .selection import (
    SelectionConfig,
    SelectionScores,
    coreset_select,
    cosine_similarity,
    informative_score,
    local_dissimilarity,
    query_aware_select,
    query_similarity,
)

__all__ = [
    "__version__",
    "Annotation",
    "AdamState",
    "Dataset",
    "EncoderParams",
    "EvalConfig",
    "FinetuneConfig",
    "LossReport",
    "MaskPattern",
    "PretrainConfig",
    "ProtocolReport",
    "SelectionConfig",
    "SelectionScores",
    "SyntheticConfig",
    "TrialResult",
    "VideoFeatures",
    "adam_step",
    "compose_person_feature",
    "coreset_select",
    "cosine_similarity",
    "embed_videos",
    "encode_gaf",
    "export_features",
    "finetune",
    "generate_synthetic",
    "hit_at_k",
    "import_features",
    "informative_score",
    "init_params",
    "load_dataset",
    "load_params",
    "local_dissimilarity",
    "merge_annotations",
    "oracle_annotate",
    "precision_at_k",
    "predict_appearance",
    "pretrain",
    "pretrain_loss",
    "query_aware_select",
    "query_similarity",
    "reg_loss",
    "retrieve_topk",
    "retrieve_topk_scored",
    "run_protocol",
    "run_sweep",
    "run_trial",
    "save_dataset",
    "save_params",
    "spatial_positional_encoding",
    "triplet_loss",
]
