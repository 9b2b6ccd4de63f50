"""Entropy-guided graph-convolutional refinement of 3D segmentation maps."""

from .gcn import (
    GcnModel,
    TrainConfig,
    TrainingDivergedError,
    TrainReport,
    bce_loss,
    gcn_forward,
    gcn_gradients,
    init_model,
    refine_segmentation,
    train_gcn,
)
from .graph import (
    EdgeBuildResult,
    EdgeConfig,
    SparseGraph,
    UncerMode,
    assemble_features,
    build_edges,
    normalize_adjacency,
    partition_parts,
)
from .metrics import MetricsReport, UndefinedMetricError, assd, compute_report, dice, hd95, surface_distances
from .phantom import BackgroundStats, Ellipsoid, FalsePositiveBlob, PhantomSpec, generate_phantom
from .pipeline import PipelineConfig, PipelineError, RunReport, run_refinement
from .uncertainty import (
    NodeRole,
    NodeSet,
    SelectionConfig,
    SelectionError,
    entropy_map,
    role_masks,
    select_nodes,
    threshold_mask,
    uncertain_band,
)
from .volume import (
    Connectivity,
    Mask3,
    NiftiFormatError,
    StructuringElement,
    Volume3,
    connected_components,
    dilate,
    load_volume,
    save_volume,
    surface_voxels,
)

__version__ = "0.1.0"
