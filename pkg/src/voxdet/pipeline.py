"""Inference-side processing: ROI extraction, likelihood masking, ensembling, scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .morphology import bounding_box, crop, dilate_sphere, expand_box
from .validation import check_same_geometry
from .voxgrid import BinaryMask, LabelVolume, ScalarVolume, VoxelBox, resample_inplane

__all__ = [
    "RoiResult",
    "upsample_mask",
    "extract_roi",
    "mask_likelihood",
    "ensemble_mean",
    "patient_score",
]


@dataclass(frozen=True)
class RoiResult:
    roi_image: ScalarVolume
    box: VoxelBox
    dilated_mask: BinaryMask


def _check_extent(image: ScalarVolume, coarse: LabelVolume) -> None:
    gi, gc = image.geometry, coarse.geometry
    if gi.dims[2] != gc.dims[2]:
        raise ValueError(f"slice count mismatch: image {gi.dims[2]}, coarse mask {gc.dims[2]}")
    tol = 0.5 * np.asarray(gc.spacing) + 1e-6
    for a, b in zip(gi.extent_bounds(), gc.extent_bounds()):
        if np.any(np.abs(a - b) > tol):
            raise ValueError("coarse mask does not cover the image extent")


def upsample_mask(coarse: LabelVolume, image_geometry) -> LabelVolume:
    """Nearest-neighbour in-plane upsampling of a coarse mask onto the image grid."""
    nx, ny, _ = image_geometry.dims
    up = resample_inplane(coarse, nx, ny, mode="nearest")
    return LabelVolume(image_geometry, up.data)


def extract_roi(image: ScalarVolume, coarse_mask: LabelVolume, cfg: PipelineConfig | None = None) -> RoiResult:
    """Crop the image around the organ found in a low-resolution mask.

    Every nonzero code of ``coarse_mask`` counts as organ. The mask is brought
    to the image grid, dilated by ``cfg.dilate_radius_mm`` and its bounding box
    grown by ``cfg.margin_mm`` before cropping.
    """
    cfg = cfg or PipelineConfig()
    _check_extent(image, coarse_mask)
    up = upsample_mask(coarse_mask, image.geometry)
    organ = BinaryMask(image.geometry, up.data != 0)
    if not organ.data.any():
        raise ValueError("coarse mask is empty: no pancreas found")
    dilated = dilate_sphere(organ, cfg.dilate_radius_mm)
    box = expand_box(bounding_box(dilated), cfg.margin_mm, image.geometry)
    return RoiResult(crop(image, box), box, dilated)


def mask_likelihood(likelihood: ScalarVolume, segmentation: LabelVolume, mask_codes=(1, 2)) -> ScalarVolume:
    """Zero likelihood outside voxels whose segmentation code is in ``mask_codes``."""
    check_same_geometry(likelihood, segmentation, names=("likelihood", "segmentation"))
    keep = np.isin(segmentation.data, list(mask_codes))
    return ScalarVolume(likelihood.geometry, np.where(keep, likelihood.data, np.float32(0)))


def ensemble_mean(maps: Sequence[ScalarVolume]) -> ScalarVolume:
    """Voxelwise mean of likelihood maps (accumulated in float64)."""
    maps = list(maps)
    if not maps:
        raise ValueError("ensemble_mean needs at least one map")
    check_same_geometry(*maps)
    # sorting per voxel fixes the summation order: bit-identical under input permutation
    stack = np.sort(np.stack([m.data for m in maps]).astype(np.float64), axis=0)
    acc = stack.sum(axis=0) / len(maps)
    return ScalarVolume(maps[0].geometry, np.clip(acc, 0.0, 1.0))


def patient_score(likelihood: ScalarVolume) -> float:
    return float(likelihood.data.max(initial=0.0))
