"""kplabel: sparse-keypoint object models and pose labels from RGB-D scenes.

Pipeline: human clicks across scenes -> lifted 3D observations -> joint
solve for the keypoint model and scene transforms -> seeded dense model ->
per-frame keypoint / mask / bounding-box labels. A synthetic oracle
generates fully ground-truthed datasets for testing, and a small HTTP
service backs the browser annotation tool.
"""

__version__ = "0.1.0"

from .geometry import (CameraIntrinsics, RigidTransform, backproject,
                       lift_annotation, project)
from .labeling import LabelParams, LabelRecord, bbox_label, keypoint_labels, \
    label_dataset, mask_label
from .metrics import MetricReport, iou, keypoint_error_2d, rotation_geodesic, \
    sparse_model_error
from .registration import horn_align, register_new_scene
from .segmentation import DenseModel, GrowthParams, ScenePointCloud, crop, \
    estimate_normals, fuse, grow_region
from .solver import (ObservationSet, SolverOptions, SparseSolution, assemble,
                     check_connectivity, initialize, solve)
from .synthetic import SyntheticWorld, WorldSpec, generate
