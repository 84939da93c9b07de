"""skelact: skeleton action recognition with dependency-refined graph
convolutions, an HSIC training objective and multi-stream ensembling."""

from .skeleton import SkeletonGraph, build_adjacency, chain_graph, make_graph, normalize_adjacency
from .datasets import (
    Dataset,
    MotionSequence,
    SkeletonParseError,
    SynthSpec,
    apply_modality,
    center_on_root,
    generate_synthetic,
    generate_synthetic_split,
    load_dataset,
    parse_skeleton_file,
    save_dataset,
    to_bone_stream,
)
from .kernels import (
    MaternParams,
    center,
    hsic,
    hsic_permutation_test,
    kernel_matrix,
    label_kernel,
    matern_kernel,
)
from .refinement import (
    DependencyParams,
    DependencyTensor,
    RefinedAdjacency,
    dependency_tensor,
    gaussian_correlation,
    graph_conv,
    joint_features,
    refine_adjacency,
    refined_graph_conv,
)
from .model import (
    EncoderSpec,
    FeatureBundle,
    FrameworkParams,
    LossBreakdown,
    LossSettings,
    ModelParams,
    augment,
    aux_predict,
    base_encode,
    classification_loss,
    distillation_loss,
    feature_bundle,
    framework_forward,
    hsic_objective,
    total_loss,
)
from .training import (
    EvalReport,
    GradientReport,
    MetricsRecord,
    TrainConfig,
    TrainingDiverged,
    compute_gradients,
    evaluate,
    fit,
    gradient_check,
    load_checkpoint,
    lr_at,
    predict_scores,
    save_checkpoint,
    sgd_nesterov_step,
)
from .ensemble import StreamPrediction, StreamSpec, default_streams, ensemble_average, run_stream
from .estimator import SkeletonActionClassifier

__version__ = "0.1.0"

__all__ = [
    "SkeletonGraph", "build_adjacency", "chain_graph", "make_graph", "normalize_adjacency",
    "Dataset", "MotionSequence", "SkeletonParseError", "SynthSpec", "apply_modality",
    "center_on_root", "generate_synthetic", "generate_synthetic_split", "load_dataset",
    "parse_skeleton_file", "save_dataset", "to_bone_stream",
    "MaternParams", "center", "hsic", "hsic_permutation_test", "kernel_matrix",
    "label_kernel", "matern_kernel",
    "DependencyParams", "DependencyTensor", "RefinedAdjacency", "dependency_tensor",
    "gaussian_correlation", "graph_conv", "joint_features", "refine_adjacency",
    "refined_graph_conv",
    "EncoderSpec", "FeatureBundle", "FrameworkParams", "LossBreakdown", "LossSettings",
    "ModelParams", "augment", "aux_predict", "base_encode", "classification_loss",
    "distillation_loss", "feature_bundle", "framework_forward", "hsic_objective",
    "total_loss",
    "EvalReport", "GradientReport", "MetricsRecord", "TrainConfig", "TrainingDiverged",
    "compute_gradients", "evaluate", "fit", "gradient_check", "load_checkpoint", "lr_at",
    "predict_scores", "save_checkpoint", "sgd_nesterov_step",
    "StreamPrediction", "StreamSpec", "default_streams", "ensemble_average", "run_stream",
    "SkeletonActionClassifier",
]
