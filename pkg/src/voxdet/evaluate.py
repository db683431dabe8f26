"""Cohort evaluation: run the detection pipeline over a manifest and build reports."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .candidates import (
    CandidateLesion,
    extract_candidates,
    lesion_size_axial,
    lesions_from_labels,
    match_candidates,
    to_parent_indices,
)
from .config import RunConfig
from .metrics import CaseResult, froc, mean_curve_ci, roc, subgroup_filter
from .morphology import crop
from .pipeline import ensemble_mean, extract_roi, mask_likelihood, patient_score, upsample_mask
from .voxgrid import LabelVolume, ScalarVolume, read_nrrd

__all__ = [
    "ENSEMBLE",
    "CaseError",
    "load_manifest",
    "analyze_likelihood",
    "evaluate_case",
    "evaluate_manifest",
    "summarize",
    "write_curve_csv",
    "dumps_report",
    "report_schema",
]

ENSEMBLE = "ensemble"
REPORT_SCHEMA_ID = "voxdet-report/1"


class CaseError(RuntimeError):
    """A single case could not be processed."""

    def __init__(self, case_id, message):
        super().__init__(f"{case_id}: {message}")
        self.case_id = case_id


def load_manifest(path):
    """Return ``(cases, base_dir)``; case paths are resolved against ``base_dir``."""
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    cases = manifest.get("cases")
    if not isinstance(cases, list):
        raise ValueError("manifest has no 'cases' list")
    for c in cases:
        missing = {"id", "cohort", "image", "gt_labels", "coarse_mask", "likelihoods"} - set(c)
        if missing:
            raise ValueError(f"manifest case {c.get('id', '?')} lacks {sorted(missing)}")
    return cases, path.parent


def analyze_likelihood(
    likelihood: ScalarVolume,
    roi_box,
    segmentation: LabelVolume,
    lesions: Sequence[np.ndarray],
    run: RunConfig,
):
    """Crop to the ROI, mask, extract and match candidates for one map.

    Returns ``(score, candidates, match)`` with candidate voxels expressed in
    the full-volume linear index space of ``likelihood``.
    """
    cfg = run.pipeline
    lik_roi = crop(likelihood, roi_box)
    masked = mask_likelihood(lik_roi, crop(segmentation, roi_box), cfg.mask_codes)
    cands = extract_candidates(masked, cfg)
    dims = likelihood.geometry.dims
    cands = [
        CandidateLesion(c.confidence, to_parent_indices(c.voxels, roi_box, lik_roi.geometry.dims, dims), c.rank, c.centroid_mm)
        for c in cands
    ]
    match = match_candidates(cands, lesions, run.dice_min, run.duplicate_policy)
    return patient_score(masked), cands, match


def _read(base: Path, rel: str, role=None):
    return read_nrrd(base / rel, role=role)


def evaluate_case(entry: dict, base, run: RunConfig) -> Dict[str, CaseResult]:
    """Evaluate one manifest case under every model and their ensemble."""
    base = Path(base)
    cid = entry["id"]
    try:
        image = _read(base, entry["image"])
        gt = _read(base, entry["gt_labels"])
        coarse = _read(base, entry["coarse_mask"])
        maps = [_read(base, p, role="likelihood") for p in entry["likelihoods"]]
        if not isinstance(image, ScalarVolume) or not isinstance(gt, LabelVolume) or not isinstance(coarse, LabelVolume):
            raise ValueError("image must be float, gt_labels and coarse_mask uint8")
        if not maps:
            raise ValueError("no likelihood maps")
        for name, vol in [("gt_labels", gt)] + [(f"likelihood {i}", m) for i, m in enumerate(maps)]:
            if vol.geometry != image.geometry:
                raise ValueError(f"geometry mismatch between image and {name}")
        if "segmentation" in entry:
            seg = _read(base, entry["segmentation"])
            if seg.geometry != image.geometry:
                raise ValueError("geometry mismatch between image and segmentation")
        else:
            seg = upsample_mask(coarse, image.geometry)
        roi = extract_roi(image, coarse, run.pipeline)
        lesions = lesions_from_labels(gt, 1, run.pipeline.connectivity)
        sizes = tuple(lesion_size_axial(les, gt.geometry) for les in lesions)
        cohort = entry["cohort"]
        if cohort == "pdac" and not lesions:
            raise ValueError("pdac case without tumor voxels")
        if cohort == "normal" and lesions:
            raise ValueError("normal case with tumor voxels")

        out = {}
        named = [(f"m{i:02d}", m) for i, m in enumerate(maps)] + [(ENSEMBLE, ensemble_mean(maps))]
        for model_id, lik in named:
            score, cands, match = analyze_likelihood(lik, roi.box, seg, lesions, run)
            out[model_id] = CaseResult(
                case_id=cid,
                cohort=cohort,
                patient_score=score,
                confidences=tuple(c.confidence for c in cands),
                status=match.status,
                dice=match.dice,
                gt_lesion_sizes_mm=sizes,
                model_id=model_id,
            )
        return out
    except (OSError, ValueError) as exc:
        raise CaseError(cid, exc) from exc


def _safe_eval(args):
    entry, base, run = args
    try:
        return evaluate_case(entry, base, run), None
    except CaseError as exc:
        return None, str(exc)


def summarize(cases: Sequence[CaseResult], run: RunConfig) -> dict:
    """ROC and FROC block for one model's case results."""
    pos = [c.patient_score for c in cases if c.cohort == "pdac"]
    neg = [c.patient_score for c in cases if c.cohort == "normal"]
    roc_block = roc(pos, neg).to_dict() if pos and neg else None
    froc_block = froc(cases, run.fp_lo, run.fp_hi).to_dict() if pos else None
    return {"roc": roc_block, "froc": froc_block}


def _metric_arrays(blocks: List[dict]) -> dict:
    def get(b, k, f):
        return b[k][f] if b[k] is not None else None

    return {"auc": [get(b, "roc", "auc") for b in blocks], "pauc": [get(b, "froc", "pauc") for b in blocks]}


def _mean_curves(per_model: Dict[str, List[CaseResult]], run: RunConfig) -> Optional[dict]:
    if len(per_model) < 2:
        return None
    rocs, frocs = [], []
    for cases in per_model.values():
        pos = [c.patient_score for c in cases if c.cohort == "pdac"]
        neg = [c.patient_score for c in cases if c.cohort == "normal"]
        if pos and neg:
            rocs.append(roc(pos, neg))
        if pos:
            frocs.append(froc(cases, run.fp_lo, run.fp_hi))
    out = {}
    if len(rocs) >= 2:
        out["roc"] = mean_curve_ci(rocs, np.linspace(0.0, 1.0, 101)).to_dict()
    if len(frocs) >= 2:
        out["froc"] = mean_curve_ci(frocs, np.linspace(0.0, run.fp_hi, 101)).to_dict()
    return out or None


def _block(per_model: Dict[str, List[CaseResult]], ensemble: List[CaseResult], run: RunConfig) -> dict:
    models = [{"model_id": m, **summarize(cs, run)} for m, cs in per_model.items()]
    block = {"per_case": [c.to_dict() for c in ensemble], **summarize(ensemble, run)}
    block["models"] = models
    block["metrics"] = _metric_arrays(models)
    block["mean_curves"] = _mean_curves(per_model, run)
    return block


def evaluate_manifest(manifest_path, run: RunConfig, jobs: int = 1):
    """Evaluate every case of a manifest.

    Cases are processed in sorted-id order regardless of manifest order or
    worker count, so the report depends only on the inputs and ``run``.

    Returns
    -------
    report : dict
    errors : list of str
        One message per case that failed; those cases are left out.
    """
    entries, base = load_manifest(manifest_path)
    if not entries:
        raise ValueError("manifest lists no cases")
    entries = sorted(entries, key=lambda e: e["id"])
    args = [(e, base, run) for e in entries]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_safe_eval, args))
    else:
        results = [_safe_eval(a) for a in args]

    errors = [err for _, err in results if err]
    done = [r for r, _ in results if r is not None]
    if not done:
        return None, errors
    model_ids = [m for m in done[0] if m != ENSEMBLE]
    if any(sorted(r) != sorted(done[0]) for r in done):
        raise ValueError("cases differ in their number of likelihood maps")
    per_model = {m: [r[m] for r in done] for m in model_ids}
    ensemble = [r[ENSEMBLE] for r in done]

    report = {
        "schema": REPORT_SCHEMA_ID,
        "config": run.to_dict(),
        "n_cases": len(done),
        "n_models": len(model_ids),
        **_block(per_model, ensemble, run),
    }
    if run.subgroup_max_mm is not None:
        sub_ens = subgroup_filter(ensemble, run.subgroup_max_mm)
        keep = {c.case_id for c in sub_ens}
        sub_models = {m: [c for c in cs if c.case_id in keep] for m, cs in per_model.items()}
        report["subgroup"] = {
            "max_size_mm": run.subgroup_max_mm,
            "case_count": len(sub_ens),
            "n_pdac": sum(c.cohort == "pdac" for c in sub_ens),
            "n_normal": sum(c.cohort == "normal" for c in sub_ens),
            **_block(sub_models, sub_ens, run),
        }
    return report, errors


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_report(report: dict) -> str:
    """Canonical JSON text; infinite thresholds become ``null``."""
    return json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_curve_csv(points, path) -> None:
    """Write ``[threshold, x, y]`` rows under the header ``threshold,x,y``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "x", "y"])
        for t, x, y in points:
            w.writerow(["inf" if t is None or t == math.inf else repr(float(t)), repr(float(x)), repr(float(y))])


def report_schema() -> dict:
    """The JSON schema every report produced by :func:`evaluate_manifest` satisfies."""
    from importlib.resources import files

    return json.loads(files("voxdet").joinpath("schemas/report.schema.json").read_text())
