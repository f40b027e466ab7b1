"""Self-supervised contrastive learning on sparse 3D cortical-fold skeletons.

Pipeline: synthesize or load a skeleton-crop corpus, train a 3D-conv encoder
with a contrastive objective over paired topology-preserving augmentations,
then score the frozen embeddings with a linear probe (ROC AUC).
"""

from .augment import AugmentSpec, Strategy, ViewPair, binarize, make_view_pair
from .errors import (
    ContractError,
    FormatError,
    GenerationError,
    StructuralError,
    SulcalError,
    TrainingDivergedError,
)
from .network import (
    ConvNetConfig,
    HeadKind,
    ModelParams,
    forward_backbone,
    forward_head,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .probe import (
    AucReport,
    ProbeModel,
    Split,
    auc,
    evaluate_report,
    fit_linear_probe,
    make_report,
    pca_baseline,
    predict_scores,
    read_report_json,
    read_split,
    stratified_split,
    write_report_json,
    write_split,
)
from .skeleton import (
    Branch,
    BranchKind,
    DenseVolume,
    Manifest,
    ManifestRow,
    PointCloud,
    SkeletonCrop,
    bottom_mask,
    load_corpus,
    load_crop,
    rasterize,
    read_manifest,
    save_crop,
    sparsity,
    to_point_cloud,
    write_manifest,
)
from .synth import SynthConfig, generate_corpus, generate_crop
from .training import (
    EmbeddingSet,
    TrainConfig,
    collapse_metric,
    embed,
    nt_xent_loss,
    read_embeddings,
    read_loss_curve,
    train,
    write_embeddings,
    write_loss_curve,
)

__version__ = "0.1.0"

__all__ = [
    "AucReport",
    "AugmentSpec",
    "Branch",
    "BranchKind",
    "ContractError",
    "ConvNetConfig",
    "DenseVolume",
    "EmbeddingSet",
    "FormatError",
    "GenerationError",
    "HeadKind",
    "Manifest",
    "ManifestRow",
    "ModelParams",
    "PointCloud",
    "ProbeModel",
    "SkeletonCrop",
    "Split",
    "Strategy",
    "StructuralError",
    "SulcalError",
    "SynthConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "ViewPair",
    "auc",
    "binarize",
    "bottom_mask",
    "collapse_metric",
    "embed",
    "evaluate_report",
    "fit_linear_probe",
    "forward_backbone",
    "forward_head",
    "generate_corpus",
    "generate_crop",
    "init_params",
    "load_checkpoint",
    "load_corpus",
    "load_crop",
    "make_report",
    "make_view_pair",
    "nt_xent_loss",
    "pca_baseline",
    "predict_scores",
    "rasterize",
    "read_embeddings",
    "read_loss_curve",
    "read_manifest",
    "read_report_json",
    "read_split",
    "save_checkpoint",
    "save_crop",
    "sparsity",
    "stratified_split",
    "to_point_cloud",
    "train",
    "write_embeddings",
    "write_loss_curve",
    "write_manifest",
    "write_report_json",
    "write_split",
]
