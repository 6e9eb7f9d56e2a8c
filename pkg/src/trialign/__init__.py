"""Trimodal contrastive alignment toolkit.

Trains projection heads over frozen-encoder embeddings with symmetric
bidirectional InfoNCE objectives and evaluates cross-modal alignment with
cosine statistics, retrieval, Procrustes disparity, RBF-CKA, mutual kNN,
MAD, and information-density scoring. A synthetic trimodal generator serves
as the verification oracle for the whole pipeline.
"""

from .aligner import TrimodalAligner
from .exceptions import (ConfigError, DataError, DegenerateError, FormatError,
                         JoinError, NumericsError, ShapeError, StateError,
                         TrainError, TrialignError)
from .heads import ProjectionHead, backward, forward, hidden_dim, init_head
from .infodensity import (IDRecord, SurprisalRecord, compute_id, dataset_id,
                          rank_variants, read_surprisals)
from .losses import (LossBreakdown, LossVariant, infonce_directional,
                     infonce_symmetric, l2_normalize_backward,
                     l2_normalize_rows, total_loss, vl_ts_loss)
from .metrics import (AlignmentReport, PairMetrics, cka_rbf, correlations,
                      cosine_stats, evaluate_pair, mad, mutual_knn,
                      procrustes_disparity, retrieval)
from .optim import (OptimState, Schedule, accumulate, adamw_step,
                    clip_global_norm, init_optim_state, lr_at)
from .store import (EmbeddingSet, SubsampleSpec, TripletManifest,
                    join_triplets, load_embeddings, load_manifest, normalize,
                    save_embeddings, save_manifest, subsample_indices)
from .synthetic import ModalityView, SynthSpec, chance_floor, generate
from .training import (EarlyStopper, RunConfig, TrainLog, evaluate_checkpoint,
                       load_checkpoint, run_early_stopping, save_checkpoint,
                       train)

__version__ = "0.1.0"

__all__ = [
    "TrimodalAligner",
    "TrialignError", "ConfigError", "DataError", "DegenerateError",
    "FormatError", "JoinError", "NumericsError", "ShapeError", "StateError",
    "TrainError",
    "ProjectionHead", "init_head", "forward", "backward", "hidden_dim",
    "SurprisalRecord", "IDRecord", "compute_id", "dataset_id",
    "rank_variants", "read_surprisals",
    "LossVariant", "LossBreakdown", "infonce_directional", "infonce_symmetric",
    "total_loss", "vl_ts_loss", "l2_normalize_rows", "l2_normalize_backward",
    "PairMetrics", "AlignmentReport", "cosine_stats", "mad", "retrieval",
    "procrustes_disparity", "cka_rbf", "mutual_knn", "correlations",
    "evaluate_pair",
    "Schedule", "OptimState", "lr_at", "clip_global_norm", "adamw_step",
    "init_optim_state", "accumulate",
    "EmbeddingSet", "SubsampleSpec", "TripletManifest", "load_embeddings",
    "save_embeddings", "normalize", "subsample_indices", "load_manifest",
    "save_manifest", "join_triplets",
    "SynthSpec", "ModalityView", "generate", "chance_floor",
    "RunConfig", "TrainLog", "EarlyStopper", "run_early_stopping", "train",
    "evaluate_checkpoint", "save_checkpoint", "load_checkpoint",
]
