"""Candidate lesion extraction, Dice matching and lesion size."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from .config import PipelineConfig
from .morphology import _structure, connected_components
from .voxgrid import Geometry, ScalarVolume, linear_index, unravel_linear

__all__ = [
    "TP",
    "FP",
    "DUPLICATE",
    "CandidateLesion",
    "MatchResult",
    "extract_candidates",
    "dice",
    "match_candidates",
    "lesion_size_axial",
    "rle_encode",
    "rle_decode",
    "candidates_to_json",
    "candidates_from_json",
    "lesions_from_labels",
    "to_parent_indices",
]

TP = "true-positive"
FP = "false-positive"
DUPLICATE = "ignored-duplicate"


@dataclass(frozen=True, eq=False)
class CandidateLesion:
    confidence: float
    voxels: np.ndarray  # sorted x-fastest linear indices
    rank: int
    centroid_mm: tuple

    @property
    def voxel_count(self) -> int:
        return int(self.voxels.size)


def _centroid(voxels: np.ndarray, geometry: Geometry) -> tuple:
    idx = unravel_linear(voxels, geometry.dims)
    return tuple(float(c) for c in geometry.world(idx.mean(axis=0)))


def extract_candidates(likelihood: ScalarVolume, cfg: PipelineConfig | None = None) -> List[CandidateLesion]:
    """Iteratively peel peak-anchored regions off a likelihood map.

    Each round takes the global maximum ``v`` (smallest linear index on ties),
    grows the connected region of voxels ``>= rel_threshold * v`` around it,
    records it and zeroes it. Stops at ``max_lesions`` or when ``v`` drops
    below ``peak_floor``.
    """
    cfg = cfg or PipelineConfig()
    geometry = likelihood.geometry
    work = likelihood.data.astype(np.float64)  # exact copy of float32 values
    struct = _structure(cfg.connectivity)
    out: List[CandidateLesion] = []
    while len(out) < cfg.max_lesions:
        flat = work.ravel(order="F")
        p = int(np.argmax(flat))
        v = float(flat[p])
        if v < cfg.peak_floor or v <= 0.0:
            break
        above = work >= cfg.rel_threshold * v
        labels, _ = ndimage.label(above, structure=struct)
        seed = tuple(unravel_linear(p, geometry.dims))
        region = labels == labels[seed]
        voxels = np.flatnonzero(region.ravel(order="F"))
        work[region] = 0.0
        out.append(CandidateLesion(v, voxels, len(out) + 1, _centroid(voxels, geometry)))
    return out


def _as_index_array(a) -> np.ndarray:
    if isinstance(a, CandidateLesion):
        return a.voxels
    if isinstance(a, (set, frozenset)):
        return np.fromiter(sorted(a), dtype=np.int64, count=len(a))
    return np.unique(np.asarray(a, dtype=np.int64))


def dice(a, b) -> float:
    """2|a & b| / (|a| + |b|) for voxel index sets."""
    a, b = _as_index_array(a), _as_index_array(b)
    total = a.size + b.size
    if total == 0:
        raise ValueError("dice undefined for two empty sets")
    inter = np.intersect1d(a, b, assume_unique=True).size
    return 2.0 * inter / total


@dataclass(frozen=True)
class MatchResult:
    status: tuple  # per candidate, input order
    dice: tuple  # per candidate: Dice with claimed lesion (TP) or best overlap otherwise
    matched_lesion: tuple  # per candidate: lesion index or None
    lesion_match: tuple  # per lesion: candidate index or None

    @property
    def n_tp(self) -> int:
        return sum(s == TP for s in self.status)

    @property
    def n_fp(self) -> int:
        return sum(s == FP for s in self.status)


def match_candidates(
    cands: Sequence[CandidateLesion],
    gt_lesions: Sequence,
    dice_min: float = 0.1,
    duplicate_policy: str = "ignore",
) -> MatchResult:
    """Greedy confidence-descending matching of candidates to lesions."""
    if duplicate_policy not in ("ignore", "count-fp"):
        raise ValueError(f"unknown duplicate_policy {duplicate_policy!r}")
    lesions = [_as_index_array(g) for g in gt_lesions]
    order = sorted(range(len(cands)), key=lambda i: (-cands[i].confidence, cands[i].rank, i))
    status: list = [None] * len(cands)
    scores = [0.0] * len(cands)
    matched: list = [None] * len(cands)
    owner: list = [None] * len(lesions)
    for i in order:
        d = np.array([dice(cands[i], g) for g in lesions]) if lesions else np.zeros(0)
        free = [j for j in range(len(lesions)) if owner[j] is None and d[j] >= dice_min]
        if free:
            j = max(free, key=lambda k: (d[k], -k))
            owner[j] = i
            status[i], scores[i], matched[i] = TP, float(d[j]), j
        elif d.size and d.max() >= dice_min:
            status[i] = DUPLICATE if duplicate_policy == "ignore" else FP
            scores[i] = float(d.max())
        else:
            status[i] = FP
            scores[i] = float(d.max()) if d.size else 0.0
    return MatchResult(tuple(status), tuple(scores), tuple(matched), tuple(owner))


def lesion_size_axial(lesion, geometry: Geometry) -> float:
    """Largest in-plane voxel-center distance (mm) over all axial slices.

    ``lesion`` is either linear indices or an (n, 3) array of voxel indices.
    The result is never below the larger in-plane spacing.
    """
    if isinstance(lesion, (CandidateLesion, set, frozenset)):
        arr = _as_index_array(lesion)
    else:
        arr = np.asarray(lesion, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("lesion is empty")
    idx = arr if arr.ndim == 2 else unravel_linear(arr, geometry.dims)
    sx, sy, _ = geometry.spacing
    best = 0.0
    for z in np.unique(idx[:, 2]):
        pts = idx[idx[:, 2] == z, :2]
        # farthest pairs are convex-hull vertices, which are row extremes
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        pts = pts[order]
        ys, start = np.unique(pts[:, 1], return_index=True)
        end = np.r_[start[1:], len(pts)] - 1
        ext = np.unique(np.concatenate([pts[start], pts[end]]), axis=0).astype(np.float64)
        dx = (ext[:, None, 0] - ext[None, :, 0]) * sx
        dy = (ext[:, None, 1] - ext[None, :, 1]) * sy
        best = max(best, float(np.sqrt(dx * dx + dy * dy).max()))
    return max(best, max(sx, sy))


# ------------------------------------------------------------- serialization


def rle_encode(voxels) -> list:
    """Runs ``[start, length]`` over sorted linear indices."""
    v = _as_index_array(voxels)
    if v.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(v) != 1) + 1
    starts = np.r_[0, breaks]
    ends = np.r_[breaks, v.size]
    return [[int(v[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


def candidates_to_json(cands: Sequence[CandidateLesion]) -> list:
    return [
        {
            "rank": c.rank,
            "confidence": c.confidence,
            "voxel_count": c.voxel_count,
            "centroid_mm": list(c.centroid_mm),
            "rle": rle_encode(c.voxels),
        }
        for c in cands
    ]


def candidates_from_json(items) -> List[CandidateLesion]:
    if isinstance(items, (str, bytes)):
        items = json.loads(items)
    out = []
    for it in items:
        vox = rle_decode(it["rle"])
        if vox.size != it["voxel_count"]:
            raise ValueError(f"candidate {it['rank']}: rle length does not match voxel_count")
        out.append(CandidateLesion(float(it["confidence"]), vox, int(it["rank"]), tuple(it["centroid_mm"])))
    return out


def lesions_from_labels(labels, code: int = 1, connectivity: int = 26) -> List[np.ndarray]:
    """Connected components of one label code, as linear index arrays."""
    return connected_components(labels.mask([code]), connectivity).components()


def to_parent_indices(voxels, box, child_dims, parent_dims) -> np.ndarray:
    """Map linear indices inside a cropped box back to the parent volume."""
    idx = unravel_linear(voxels, child_dims) + np.asarray(box.lo)
    return np.sort(linear_index(idx, parent_dims))
