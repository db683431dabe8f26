"""Binary 3D morphology and connected components in physical units."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxgrid import BinaryMask, Geometry, VoxelBox

__all__ = [
    "ComponentLabeling",
    "ball_offsets",
    "dilate_sphere",
    "connected_components",
    "bounding_box",
    "expand_box",
    "crop",
]


def _as_mask(mask) -> BinaryMask:
    if isinstance(mask, BinaryMask):
        return mask
    return BinaryMask(mask.geometry, mask.data != 0)


def ball_offsets(radius_mm: float, spacing) -> np.ndarray:
    """Integer offsets whose physical length is at most ``radius_mm``."""
    spacing = np.asarray(spacing, dtype=float)
    reach = [int(math.floor(radius_mm / s)) for s in spacing]
    grids = np.meshgrid(*(np.arange(-r, r + 1) for r in reach), indexing="ij")
    off = np.stack([g.ravel() for g in grids], axis=-1)
    dist2 = ((off * spacing) ** 2).sum(axis=1)
    return off[dist2 <= radius_mm * radius_mm]


def _ball_structure(radius_mm: float, spacing) -> np.ndarray:
    off = ball_offsets(radius_mm, spacing)
    reach = np.abs(off).max(axis=0)
    struct = np.zeros(tuple(2 * reach + 1), dtype=bool)
    struct[tuple((off + reach).T)] = True
    return struct


def dilate_sphere(mask, radius_mm: float) -> BinaryMask:
    """Set every voxel whose center is within ``radius_mm`` of a set voxel's center."""
    radius_mm = float(radius_mm)
    if not (radius_mm > 0 and math.isfinite(radius_mm)):
        raise ValueError(f"radius_mm must be positive, got {radius_mm}")
    mask = _as_mask(mask)
    struct = _ball_structure(radius_mm, mask.geometry.spacing)
    if struct.size == 1 or not mask.data.any():
        return BinaryMask(mask.geometry, mask.data)
    return BinaryMask(mask.geometry, ndimage.binary_dilation(mask.data, structure=struct))


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    geometry: Geometry
    labels: np.ndarray
    count: int
    sizes: np.ndarray

    def component(self, k: int) -> np.ndarray:
        """Sorted linear (x-fastest) indices of component ``k``."""
        return np.flatnonzero(self.labels.ravel(order="F") == k)

    def components(self):
        flat = self.labels.ravel(order="F")
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, self.count + 2))
        return [order[bounds[k] : bounds[k + 1]] for k in range(self.count)]


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask, connectivity: int = 26) -> ComponentLabeling:
    """Label connected components.

    Ids are assigned in ascending order of each component's smallest
    x-fastest linear index, so results do not depend on scan order.
    """
    mask = _as_mask(mask)
    raw, count = ndimage.label(mask.data, structure=_structure(connectivity))
    flat = raw.ravel(order="F")
    if count:
        ids, first = np.unique(flat, return_index=True)
        keep = ids > 0
        ids, first = ids[keep], first[keep]
        remap = np.zeros(count + 1, dtype=np.int32)
        remap[ids[np.argsort(first)]] = np.arange(1, count + 1, dtype=np.int32)
        raw = remap[raw]
    labels = raw.astype(np.int32)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    labels.setflags(write=False)
    return ComponentLabeling(mask.geometry, labels, int(count), sizes)


def bounding_box(mask) -> VoxelBox:
    mask = _as_mask(mask)
    if not mask.data.any():
        raise ValueError("empty mask has no bounding box")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(mask.data.any(axis=other))
        lo.append(hit[0])
        hi.append(hit[-1])
    return VoxelBox(tuple(lo), tuple(hi))


def expand_box(box: VoxelBox, margin_mm: float, geometry: Geometry) -> VoxelBox:
    if margin_mm < 0:
        raise ValueError(f"margin_mm must be >= 0, got {margin_mm}")
    grow = [math.ceil(margin_mm / s) for s in geometry.spacing]
    lo = [max(0, l - g) for l, g in zip(box.lo, grow)]
    hi = [min(d - 1, h + g) for h, g, d in zip(box.hi, grow, geometry.dims)]
    return VoxelBox(tuple(lo), tuple(hi))


def crop(volume, box: VoxelBox):
    """Sub-volume copy; the origin moves so world coordinates are unchanged."""
    g = volume.geometry
    if not box.within(g.dims):
        raise ValueError(f"box {box} outside volume dims {g.dims}")
    origin = tuple(float(v) for v in g.world(box.lo))
    geometry = Geometry(box.shape, g.spacing, origin)
    return volume.with_data(volume.data[box.slices], geometry)
