"""Multi-center convolutional face alignment.

Train a compact convolutional landmark regressor, fine-tune it with
error-proportional landmark weights, specialize one prediction head per
semantic landmark cluster, and assemble the heads column-wise into a
single prediction layer. Ships with a synthetic schematic-face generator
for desk-scale experiments and an evaluation harness (normalized mean
error, failure rate, CED curves, single-image FPS).
"""

from .augment import AugmentParams, augment, occlude_cluster
from .data import Dataset, Sample, load_dataset, normalize_pixels, \
    save_dataset
from .evaluation import (CEDCurve, EvalReport, ced_curve, evaluate,
                         fps_bench, occlusion_report)
from .geometry import (ClusterPartition, Shape, clusters_for_pattern,
                       flip_index_map, interocular_distance,
                       per_landmark_errors)
from .loss import (ErrorProfile, WeightVector, loss_gradient,
                   multicenter_weights, perturb_weights, weighted_loss,
                   weights_from_errors)
from .modelio import load_model, save_model
from .network import (NetworkParams, NetworkSpec, build_network,
                      count_params, extract_features, freeze_first_six_conv,
                      freeze_shared, predict_shape)
from .optim import ParamBlock, finite_diff_check, sgd_step
from .synth import synth_generate
from .training import (StageConfig, TrainedModels, assemble,
                       desk_stage_configs, multicenter_finetune,
                       reference_stage_configs, perturbation_study, pretrain_bm,
                       run_full_pipeline, validation_errors,
                       weighting_finetune)

__version__ = "0.1.0"

__all__ = [
    "AugmentParams", "augment", "occlude_cluster",
    "Dataset", "Sample", "load_dataset", "normalize_pixels", "save_dataset",
    "CEDCurve", "EvalReport", "ced_curve", "evaluate", "fps_bench",
    "occlusion_report",
    "ClusterPartition", "Shape", "clusters_for_pattern", "flip_index_map",
    "interocular_distance", "per_landmark_errors",
    "ErrorProfile", "WeightVector", "loss_gradient", "multicenter_weights",
    "perturb_weights", "weighted_loss", "weights_from_errors",
    "load_model", "save_model",
    "NetworkParams", "NetworkSpec", "build_network", "count_params",
    "extract_features", "freeze_first_six_conv", "freeze_shared",
    "predict_shape",
    "ParamBlock", "finite_diff_check", "sgd_step",
    "synth_generate",
    "StageConfig", "TrainedModels", "assemble", "desk_stage_configs",
    "multicenter_finetune", "reference_stage_configs", "perturbation_study",
    "pretrain_bm", "run_full_pipeline", "validation_errors",
    "weighting_finetune",
]
