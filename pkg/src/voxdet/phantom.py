"""Seeded synthetic cohorts: ellipsoidal organ/tumor labels, coarse masks and
simulated detector likelihood maps."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .voxgrid import Geometry, LabelVolume, ScalarVolume, resample_inplane, write_nrrd

__all__ = [
    "DetectorParams",
    "PhantomParams",
    "PhantomCase",
    "PANCREAS_REGION",
    "case_seed",
    "gen_case",
    "simulate_likelihood",
    "gen_cohort",
]

# codes counted as "pancreas region" for the coarse mask
PANCREAS_REGION = (1, 2, 5)
_MAX_RETRIES = 200


@dataclass(frozen=True)
class DetectorParams:
    detect_prob: float = 0.85
    blur_sigma_mm: float = 1.5
    noise_sigma: float = 0.0
    fp_blob_rate: float = 1.0
    fp_blob_peak_range: Tuple[float, float] = (0.1, 0.7)
    fp_blob_radius_mm: Tuple[float, float] = (3.0, 8.0)
    rim_floor: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValueError("detect_prob must be in [0, 1]")
        if self.blur_sigma_mm < 0 or self.noise_sigma < 0 or self.fp_blob_rate < 0:
            raise ValueError("blur_sigma_mm, noise_sigma and fp_blob_rate must be >= 0")
        lo, hi = self.fp_blob_peak_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("fp_blob_peak_range must satisfy 0 < lo <= hi <= 1")
        lo, hi = self.fp_blob_radius_mm
        if not 0.0 < lo <= hi:
            raise ValueError("fp_blob_radius_mm must satisfy 0 < lo <= hi")
        if not 0.0 <= self.rim_floor < 1.0:
            raise ValueError("rim_floor must be in [0, 1)")

    @classmethod
    def oracle(cls) -> "DetectorParams":
        """Always finds the tumor, no noise, no false blobs."""
        return cls(detect_prob=1.0, noise_sigma=0.0, fp_blob_rate=0.0)


@dataclass(frozen=True)
class PhantomParams:
    dims: Tuple[int, int, int] = (96, 96, 48)
    spacing: Tuple[float, float, float] = (1.5, 1.5, 3.0)
    pancreas_radius_mm: Tuple[Tuple[float, float], ...] = ((42.0, 54.0), (32.0, 42.0), (32.0, 42.0))
    pancreas_jitter_mm: float = 6.0
    tumor_radius_mm: Tuple[float, float] = (4.0, 25.0)
    detector: DetectorParams = field(default_factory=DetectorParams)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.tumor_radius_mm
        if not 0 < lo <= hi:
            raise ValueError("tumor_radius_mm must satisfy 0 < lo <= hi")
        for lo, hi in self.pancreas_radius_mm:
            if not 0 < lo <= hi:
                raise ValueError("pancreas radius ranges must satisfy 0 < lo <= hi")
        if self.tumor_radius_mm[1] >= min(hi for _, hi in self.pancreas_radius_mm):
            raise ValueError("largest tumor cannot fit inside any pancreas")
        Geometry(self.dims, self.spacing)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.dims, self.spacing, (0.0, 0.0, 0.0))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomParams":
        d = {k: _tuplify(v) for k, v in d.items()}
        det = DetectorParams(**{k: _tuplify(v) for k, v in d.pop("detector", {}).items()})
        return cls(detector=det, **d)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


@dataclass(frozen=True, eq=False)
class PhantomCase:
    case_id: str
    cohort: str
    image: ScalarVolume
    gt_labels: LabelVolume
    coarse_mask: LabelVolume
    likelihoods: List[ScalarVolume]


def case_seed(case_id: str) -> int:
    """Stable 63-bit seed from a case id; independent of generation order."""
    return int.from_bytes(hashlib.sha256(case_id.encode()).digest()[:8], "little") >> 1


def _ellipsoid(points_mm: np.ndarray, center, radii) -> np.ndarray:
    q = (points_mm - np.asarray(center)) / np.asarray(radii)
    return (q * q).sum(axis=-1) <= 1.0


def _grid_mm(geometry: Geometry) -> np.ndarray:
    idx = np.stack(np.meshgrid(*(np.arange(n) for n in geometry.dims), indexing="ij"), axis=-1)
    return geometry.world(idx)


def _sample_anatomy(params: PhantomParams, rng: np.random.Generator, cohort: str):
    g = params.geometry
    pts = _grid_mm(g)
    center_vol = np.asarray(g.world((np.asarray(g.dims) - 1) / 2.0))
    for _ in range(_MAX_RETRIES):
        radii = np.array([rng.uniform(lo, hi) for lo, hi in params.pancreas_radius_mm])
        center = center_vol + rng.uniform(-1, 1, 3) * params.pancreas_jitter_mm
        pancreas = _ellipsoid(pts, center, radii)
        tumor = np.zeros_like(pancreas)
        if cohort == "pdac":
            r = rng.uniform(*params.tumor_radius_mm)
            t_radii = np.array([r, r * rng.uniform(0.7, 1.0), r * rng.uniform(0.7, 1.0)])
            slack = radii - t_radii.max()
            if np.any(slack <= 0):
                continue
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            t_center = center + direction * rng.uniform(0, 1) ** (1 / 3) * 0.6 * slack
            tumor = _ellipsoid(pts, t_center, t_radii)
            if not tumor.any() or np.any(tumor & ~pancreas):
                continue
        return pts, center, radii, pancreas, tumor
    raise RuntimeError(f"could not place a tumor inside the pancreas after {_MAX_RETRIES} tries")


def _labels(pts, center, radii, pancreas, tumor, spacing) -> np.ndarray:
    labels = np.zeros(pancreas.shape, dtype=np.uint8)
    # veins/arteries: axial tubes running alongside the organ
    for code, side in ((3, 1.0), (4, -1.0)):
        axis_pt = center + np.array([0.0, side * (radii[1] + 8.0), 0.0])
        d2 = ((pts[..., :2] - axis_pt[:2]) ** 2).sum(axis=-1)
        labels[(d2 <= 5.0**2) & ~pancreas] = code
    labels[pancreas] = 2
    # duct: thin tube along x through the organ center
    d2 = ((pts[..., 1:] - center[1:]) ** 2).sum(axis=-1)
    labels[pancreas & (d2 <= max(1.5, spacing[1]) ** 2)] = 5
    labels[tumor] = 1
    return labels


_INTENSITY = {0: 40.0, 1: 70.0, 2: 110.0, 3: 180.0, 4: 220.0, 5: 15.0}


def _image(labels: np.ndarray, geometry: Geometry, rng: np.random.Generator) -> np.ndarray:
    sigma = [10.0 / s for s in geometry.spacing]
    smooth = ndimage.gaussian_filter(rng.normal(0.0, 1.0, labels.shape), sigma)
    smooth *= 20.0 / max(float(smooth.std()), 1e-12)
    offsets = np.zeros(labels.shape)
    for code, value in _INTENSITY.items():
        offsets[labels == code] = value
    return (smooth + offsets + rng.normal(0.0, 10.0, labels.shape)).astype(np.float32)


def _coarse(labels: LabelVolume) -> LabelVolume:
    nx, ny, _ = labels.geometry.dims
    region = LabelVolume(labels.geometry, np.where(np.isin(labels.data, PANCREAS_REGION), 2, 0))
    return resample_inplane(region, max(1, nx // 4), max(1, ny // 4), mode="nearest")


def simulate_likelihood(gt_labels: LabelVolume, detector: DetectorParams, model_seed) -> ScalarVolume:
    """Likelihood map of a simulated detector.

    A detected tumor is a plateau at a peak drawn from [0.7, 1.0] with a
    Gaussian-blurred rim; false blobs are Gaussian bumps centred in the
    pancreas region or anywhere in the volume with equal probability. Rims
    and blobs are cut to zero below ``rim_floor`` times their own peak so the
    map carries no long tails.
    """
    rng = np.random.default_rng(model_seed)
    g = gt_labels.geometry
    tumor = gt_labels.data == 1
    out = np.zeros(g.dims, dtype=np.float64)

    if tumor.any() and rng.random() < detector.detect_prob:
        peak = rng.uniform(0.7, 1.0)
        if detector.blur_sigma_mm > 0:
            blurred = ndimage.gaussian_filter(tumor.astype(np.float64), [detector.blur_sigma_mm / s for s in g.spacing])
            blurred /= blurred.max()
            blurred[blurred < detector.rim_floor] = 0.0
            out = peak * np.maximum(tumor, blurred)
        else:
            out = peak * tumor

    n_blobs = rng.poisson(detector.fp_blob_rate) if detector.fp_blob_rate > 0 else 0
    if n_blobs:
        pts = _grid_mm(g)
        region = np.flatnonzero(np.isin(gt_labels.data, PANCREAS_REGION).ravel())
        for _ in range(n_blobs):
            if region.size and rng.random() < 0.5:
                flat = region[rng.integers(region.size)]
            else:
                flat = rng.integers(g.size)
            c = g.world(np.unravel_index(flat, g.dims))
            radius = rng.uniform(*detector.fp_blob_radius_mm)
            peak = rng.uniform(*detector.fp_blob_peak_range)
            d2 = ((pts - c) ** 2).sum(axis=-1)
            bump = np.exp(-0.5 * d2 / radius**2)
            bump[bump < detector.rim_floor] = 0.0
            np.maximum(out, peak * bump, out=out)

    if detector.noise_sigma > 0:
        out += rng.normal(0.0, detector.noise_sigma, g.dims)
    return ScalarVolume(g, np.clip(out, 0.0, 1.0))


def _seeds(params: PhantomParams, seed_of_case: int, n_models: int):
    ss = np.random.SeedSequence([params.seed, seed_of_case])
    case_ss, *model_ss = ss.spawn(1 + n_models)
    return case_ss, model_ss


def gen_case(params: PhantomParams, case_seed: int, cohort: str, n_models: int = 1, case_id: str | None = None) -> PhantomCase:
    """Generate one case; fully determined by ``(params.seed, case_seed)``."""
    if cohort not in ("pdac", "normal"):
        raise ValueError(f"unknown cohort {cohort!r}")
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    case_ss, model_ss = _seeds(params, case_seed, n_models)
    rng = np.random.default_rng(case_ss)
    g = params.geometry
    pts, center, radii, pancreas, tumor = _sample_anatomy(params, rng, cohort)
    labels = LabelVolume(g, _labels(pts, center, radii, pancreas, tumor, params.spacing))
    image = ScalarVolume(g, _image(labels.data, g, rng))
    maps = [simulate_likelihood(labels, params.detector, s) for s in model_ss]
    return PhantomCase(case_id or f"{cohort}_{case_seed}", cohort, image, labels, _coarse(labels), maps)


def _write_case(args):
    params, case_id, cohort, n_models, out_dir = args
    case = gen_case(params, case_seed(case_id), cohort, n_models, case_id)
    rel = Path("cases") / case_id
    (out_dir / rel).mkdir(parents=True, exist_ok=True)
    entry = {"id": case_id, "cohort": cohort}
    for key in ("image", "gt_labels", "coarse_mask"):
        write_nrrd(getattr(case, key), out_dir / rel / f"{key}.nrrd")
        entry[key] = (rel / f"{key}.nrrd").as_posix()
    entry["likelihoods"] = []
    for m, vol in enumerate(case.likelihoods):
        name = rel / f"likelihood_m{m:02d}.nrrd"
        write_nrrd(vol, out_dir / name)
        entry["likelihoods"].append(name.as_posix())
    return entry


def gen_cohort(n_pdac: int, n_normal: int, n_models: int, params: PhantomParams, out_dir, jobs: int = 1) -> dict:
    """Write a cohort of NRRD volumes plus ``manifest.json`` under ``out_dir``.

    Paths in the manifest are relative to ``out_dir``.
    """
    if n_pdac < 0 or n_normal < 0 or n_models < 1:
        raise ValueError("counts must be >= 0 and n_models >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs_list = [(params, f"pdac_{i:04d}", "pdac", n_models, out_dir) for i in range(n_pdac)]
    jobs_list += [(params, f"normal_{i:04d}", "normal", n_models, out_dir) for i in range(n_normal)]
    if jobs > 1 and len(jobs_list) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            entries = list(ex.map(_write_case, jobs_list))
    else:
        entries = [_write_case(j) for j in jobs_list]
    manifest = {"cases": entries, "params": params.to_dict(), "seed": params.seed}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
