"""shapekit: part-based body-shape descriptors, reconstruction, and conversion."""

from .augment import (
    AffineAugment,
    OrthoCamera,
    Projected2D,
    derive_widths_2d,
    derive_widths_3d,
    project,
    sample_augmentation,
    stretch_bones_to_projection,
    transform_2d,
)
from .convert import (
    ConversionResult,
    PointRegressor,
    cross_model_fit,
    load_triplets,
    save_triplets,
)
from .decompose import (
    PartDecomposition,
    ShapeDescriptor,
    bone_lengths,
    build_decomposition,
    extract_descriptor,
    vertex_width,
    vertex_widths,
)
from .errors import (
    DegenerateBone2DError,
    EmptySliceError,
    ModelFormatError,
    RankDeficientError,
    ShapekitError,
    TrainingDivergedError,
    UnsolvableStretchError,
)
from .eval_harness import EvalCell, EvalReport, NoiseSpec, model_fingerprint, run_grid, v2v
from .meshio import load_obj, save_obj
from .model_core import (
    BodyModel,
    Pose,
    ToyReference,
    load_model,
    make_toy_model,
    pose_mesh,
    posed_joints,
    regress_joints,
    save_model,
    shape_to_mesh,
    toy_reference,
)
from .reconstruct import (
    AnalyticalResult,
    LossWeights,
    RefinerNet,
    TrainConfig,
    analytical_reconstruct,
    decompose_loss,
    load_refiner,
    make_refiner,
    refine,
    save_refiner,
    shape_loss,
    stretch_skeleton,
    train_refiner,
)

__version__ = "0.1.0"

__all__ = [
    "AffineAugment",
    "AnalyticalResult",
    "BodyModel",
    "ConversionResult",
    "DegenerateBone2DError",
    "EmptySliceError",
    "EvalCell",
    "EvalReport",
    "LossWeights",
    "ModelFormatError",
    "NoiseSpec",
    "OrthoCamera",
    "PartDecomposition",
    "PointRegressor",
    "Pose",
    "Projected2D",
    "RankDeficientError",
    "RefinerNet",
    "ShapeDescriptor",
    "ShapekitError",
    "ToyReference",
    "TrainConfig",
    "TrainingDivergedError",
    "UnsolvableStretchError",
    "analytical_reconstruct",
    "bone_lengths",
    "build_decomposition",
    "cross_model_fit",
    "decompose_loss",
    "derive_widths_2d",
    "derive_widths_3d",
    "extract_descriptor",
    "load_model",
    "load_obj",
    "load_refiner",
    "load_triplets",
    "make_refiner",
    "make_toy_model",
    "model_fingerprint",
    "pose_mesh",
    "posed_joints",
    "project",
    "refine",
    "regress_joints",
    "run_grid",
    "sample_augmentation",
    "save_model",
    "save_obj",
    "save_refiner",
    "save_triplets",
    "shape_loss",
    "shape_to_mesh",
    "stretch_bones_to_projection",
    "stretch_skeleton",
    "toy_reference",
    "train_refiner",
    "transform_2d",
    "v2v",
    "vertex_width",
    "vertex_widths",
]
