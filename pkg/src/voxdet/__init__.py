"""Volumetric lesion detection pipeline and detection-performance evaluation."""
from .candidates import CandidateLesion, MatchResult, dice, extract_candidates, lesion_size_axial, match_candidates
from .config import PipelineConfig, RunConfig
from .estimators import LesionDetector, RoiExtractor
from .metrics import (
    CaseResult,
    ComparisonReport,
    FrocCurve,
    RocCurve,
    froc,
    mean_curve_ci,
    pauc_froc,
    permutation_test,
    roc,
    subgroup_filter,
)
from .morphology import bounding_box, connected_components, crop, dilate_sphere, expand_box
from .pipeline import RoiResult, ensemble_mean, extract_roi, mask_likelihood, patient_score
from .evaluate import evaluate_manifest
from .voxgrid import BinaryMask, Geometry, LabelVolume, ScalarVolume, VoxelBox, read_nrrd, resample_inplane, write_nrrd

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "CandidateLesion",
    "CaseResult",
    "ComparisonReport",
    "FrocCurve",
    "Geometry",
    "LabelVolume",
    "LesionDetector",
    "MatchResult",
    "PipelineConfig",
    "RocCurve",
    "RoiExtractor",
    "RoiResult",
    "RunConfig",
    "ScalarVolume",
    "VoxelBox",
    "bounding_box",
    "connected_components",
    "crop",
    "dice",
    "dilate_sphere",
    "ensemble_mean",
    "evaluate_manifest",
    "expand_box",
    "extract_candidates",
    "extract_roi",
    "froc",
    "lesion_size_axial",
    "mask_likelihood",
    "match_candidates",
    "mean_curve_ci",
    "patient_score",
    "pauc_froc",
    "permutation_test",
    "read_nrrd",
    "resample_inplane",
    "roc",
    "subgroup_filter",
    "write_nrrd",
]
