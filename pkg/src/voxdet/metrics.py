"""Patient-level ROC, lesion-level FROC, curve averaging and permutation testing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .candidates import FP, TP
from .validation import check_scores

__all__ = [
    "CaseResult",
    "RocCurve",
    "FrocCurve",
    "MeanCurve",
    "ComparisonReport",
    "roc",
    "auc_rank",
    "froc",
    "step_values",
    "pauc_froc",
    "mean_curve_ci",
    "bonferroni",
    "permutation_test",
    "subgroup_filter",
]


@dataclass(frozen=True)
class CaseResult:
    """Evaluation record of one case under one model.

    ``confidences``/``status`` run over the extracted candidates in rank order.
    """

    case_id: str
    cohort: str
    patient_score: float
    confidences: Tuple[float, ...] = ()
    status: Tuple[str, ...] = ()
    dice: Tuple[float, ...] = ()
    gt_lesion_sizes_mm: Tuple[float, ...] = ()
    model_id: str = "0"

    def __post_init__(self):
        if self.cohort not in ("pdac", "normal"):
            raise ValueError(f"unknown cohort {self.cohort!r}")
        if self.cohort == "pdac" and not self.gt_lesion_sizes_mm:
            raise ValueError(f"pdac case {self.case_id} has no ground-truth lesion")
        if self.cohort == "normal" and self.gt_lesion_sizes_mm:
            raise ValueError(f"normal case {self.case_id} has ground-truth lesions")
        if self.cohort == "normal" and TP in self.status:
            raise ValueError(f"normal case {self.case_id} has a true positive")
        if len(self.confidences) != len(self.status):
            raise ValueError("confidences and status differ in length")
        if not self.dice:
            object.__setattr__(self, "dice", (0.0,) * len(self.status))

    @property
    def n_lesions(self) -> int:
        return len(self.gt_lesion_sizes_mm)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "cohort": self.cohort,
            "model_id": self.model_id,
            "patient_score": self.patient_score,
            "gt_lesion_sizes_mm": list(self.gt_lesion_sizes_mm),
            "candidates": [
                {"rank": i + 1, "confidence": c, "status": s, "dice": d}
                for i, (c, s, d) in enumerate(zip(self.confidences, self.status, self.dice))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseResult":
        cands = d.get("candidates", [])
        return cls(
            case_id=d["case_id"],
            cohort=d["cohort"],
            patient_score=float(d["patient_score"]),
            confidences=tuple(float(c["confidence"]) for c in cands),
            status=tuple(c["status"] for c in cands),
            dice=tuple(float(c.get("dice", 0.0)) for c in cands),
            gt_lesion_sizes_mm=tuple(float(s) for s in d.get("gt_lesion_sizes_mm", ())),
            model_id=str(d.get("model_id", "0")),
        )


# ---------------------------------------------------------------------- ROC


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def x(self):
        return self.fpr

    @property
    def y(self):
        return self.tpr

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self) -> dict:
        return {
            "points": [[float(t), float(x), float(y)] for t, x, y in zip(self.thresholds, self.fpr, self.tpr)],
            "auc": self.auc,
        }


def auc_rank(scores_pos, scores_neg) -> float:
    """Mann-Whitney estimate: P(pos > neg) + 0.5 P(pos == neg)."""
    pos = check_scores(scores_pos, "scores_pos")
    neg = np.sort(check_scores(scores_neg, "scores_neg"))
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return (float(below.sum()) + 0.5 * float(ties.sum())) / (pos.size * neg.size)


def roc(scores_pos, scores_neg) -> RocCurve:
    """Threshold sweep (positive when ``score >= t``) with trapezoidal AUC.

    The trapezoid area is cross-checked against :func:`auc_rank`.
    """
    pos = np.sort(check_scores(scores_pos, "scores_pos"))
    neg = np.sort(check_scores(scores_neg, "scores_neg"))
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    tpr = np.r_[0.0, tp / pos.size]
    fpr = np.r_[0.0, fp / neg.size]
    # exact integer trapezoid: sum dfp * (tp_i + tp_{i+1}) / (2 P N)
    tpi = np.r_[0, tp]
    fpi = np.r_[0, fp]
    area2 = int(np.sum(np.diff(fpi) * (tpi[1:] + tpi[:-1])))
    auc = area2 / (2.0 * pos.size * neg.size)
    rank = auc_rank(pos, neg)
    if abs(auc - rank) > 1e-12:
        raise AssertionError(f"trapezoid AUC {auc} disagrees with rank AUC {rank}")
    return RocCurve(fpr, tpr, np.r_[np.inf, thresholds], auc)


# --------------------------------------------------------------------- FROC


@dataclass(frozen=True, eq=False)
class FrocCurve:
    fp_per_case: np.ndarray
    sensitivity: np.ndarray
    thresholds: np.ndarray
    n_cases: int
    n_lesions: int
    pauc: float = float("nan")

    @property
    def x(self):
        return self.fp_per_case

    @property
    def y(self):
        return self.sensitivity

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fp_per_case.tolist(), self.sensitivity.tolist()))

    def sensitivity_at(self, fp) -> np.ndarray:
        return step_values(self.fp_per_case, self.sensitivity, fp)

    def to_dict(self) -> dict:
        return {
            "points": [
                [float(t), float(x), float(y)]
                for t, x, y in zip(self.thresholds, self.fp_per_case, self.sensitivity)
            ],
            "pauc": self.pauc,
            "n_cases": self.n_cases,
            "n_lesions": self.n_lesions,
        }


def froc(cases: Sequence[CaseResult], fp_lo: float = 0.001, fp_hi: float = 5.0) -> FrocCurve:
    """Lesion sensitivity against mean false positives per case.

    One operating point per distinct candidate confidence, descending. The FP
    denominator counts every case, normal ones included; duplicates of an
    already-claimed lesion count toward neither axis.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("froc needs at least one case")
    n_lesions = sum(c.n_lesions for c in cases)
    if n_lesions == 0:
        raise ValueError("froc needs at least one ground-truth lesion")
    conf = np.array([x for c in cases for x in c.confidences], dtype=np.float64)
    status = np.array([s for c in cases for s in c.status], dtype=object)
    tp_conf = np.sort(conf[status == TP])
    fp_conf = np.sort(conf[status == FP])
    thresholds = np.unique(conf)[::-1]
    n_tp = tp_conf.size - np.searchsorted(tp_conf, thresholds, side="left")
    n_fp = fp_conf.size - np.searchsorted(fp_conf, thresholds, side="left")
    sens = n_tp / n_lesions
    fpc = n_fp / len(cases)
    pauc = _step_area(fpc, sens, fp_lo, fp_hi)
    return FrocCurve(fpc.astype(np.float64), sens.astype(np.float64), thresholds, len(cases), n_lesions, pauc)


def step_values(xs, ys, at) -> np.ndarray:
    """Right-continuous carry-last step function through ``(xs, ys)``.

    Where several points share an abscissa the largest ordinate wins; left of
    the first point the value is 0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    at = np.asarray(at, dtype=np.float64)
    if xs.size == 0:
        return np.zeros_like(at)
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    ys = np.maximum.accumulate(ys[order])
    idx = np.searchsorted(xs, at, side="right") - 1
    return np.where(idx >= 0, ys[np.clip(idx, 0, None)], 0.0)


def pauc_froc(curve, fp_lo: float = 0.001, fp_hi: float = 5.0) -> float:
    """Area under the step-interpolated FROC curve over ``[fp_lo, fp_hi]``."""
    return _step_area(curve.x, curve.y, fp_lo, fp_hi)


def _step_area(xs, ys, lo, hi) -> float:
    if not lo < hi:
        raise ValueError("fp_lo must be < fp_hi")
    xs = np.asarray(xs, dtype=np.float64)
    inner = np.unique(xs[(xs > lo) & (xs < hi)])
    knots = np.r_[lo, inner, hi]
    vals = step_values(xs, ys, knots[:-1])
    return math.fsum((np.diff(knots) * vals).tolist())


# ------------------------------------------------------------ mean curves


@dataclass(frozen=True, eq=False)
class MeanCurve:
    grid: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_curves: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("grid", "mean", "sd", "lower", "upper")} | {
            "n_curves": self.n_curves
        }


def _xy(curve):
    if hasattr(curve, "x"):
        return curve.x, curve.y
    x, y = curve
    return x, y


def mean_curve_ci(curves, grid, z: float = 1.96) -> MeanCurve:
    """Vertical average of step curves with a normal-approximation band.

    Each curve is carried-last onto ``grid``; the band is
    ``mean +/- z * sd / sqrt(M)`` (sample sd), clipped to [0, 1].
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ValueError("mean_curve_ci needs at least two curves")
    grid = np.asarray(grid, dtype=np.float64)
    vals = np.stack([step_values(*_xy(c), grid) for c in curves])
    mean = vals.mean(axis=0)
    sd = vals.std(axis=0, ddof=1)
    half = z * sd / math.sqrt(len(curves))
    return MeanCurve(grid, mean, sd, np.clip(mean - half, 0, 1), np.clip(mean + half, 0, 1), len(curves))


# -------------------------------------------------------------- permutation


@dataclass(frozen=True)
class ComparisonReport:
    metric: str
    mean_a: float
    mean_b: float
    difference: float
    p_raw: float
    p_adjusted: float
    iterations: int
    seed: Optional[int]
    comparisons: int = 3
    alpha: float = 0.025
    n_a: int = 0
    n_b: int = 0

    @property
    def significant(self) -> bool:
        return self.p_adjusted < self.alpha

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["significant"] = self.significant
        return d


def bonferroni(p: float, m: int) -> float:
    if m < 1:
        raise ValueError("number of comparisons must be >= 1")
    return min(1.0, m * p)


_BATCH = 8192


def permutation_test(
    group_a,
    group_b,
    iterations: int = 100_000,
    seed: Optional[int] = None,
    *,
    metric: str = "auc",
    comparisons: int = 3,
    alpha: float = 0.025,
) -> ComparisonReport:
    """Two-sided permutation test on the difference of group means.

    Relabelings are drawn over the sorted pooled sample, with the groups put in
    a canonical order first, so swapping ``group_a`` and ``group_b`` only flips
    the sign of the difference and leaves ``p`` unchanged for the same seed.
    The p-value uses the add-one estimator ``(1 + hits) / (iterations + 1)``.
    """
    a = check_scores(group_a, "group_a")
    b = check_scores(group_b, "group_b")
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two values")
    iterations = int(iterations)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    diff = float(a.mean() - b.mean())

    first, second = a, b
    if (a.size, tuple(np.sort(a))) > (b.size, tuple(np.sort(b))):
        first, second = b, a
    pooled = np.sort(np.concatenate([first, second]))
    n1 = first.size

    if pooled[0] == pooled[-1]:
        p_raw = 1.0
    else:
        observed = abs(diff)
        tol = 1e-12 * max(1.0, float(np.abs(pooled).max()))
        rng = np.random.default_rng(seed)
        hits = 0
        done = 0
        while done < iterations:
            n = min(_BATCH, iterations - done)
            perm = rng.permuted(np.broadcast_to(pooled, (n, pooled.size)), axis=1)
            stat = perm[:, :n1].mean(axis=1) - perm[:, n1:].mean(axis=1)
            hits += int(np.count_nonzero(np.abs(stat) >= observed - tol))
            done += n
        p_raw = (1 + hits) / (iterations + 1)
    return ComparisonReport(
        metric=metric,
        mean_a=float(a.mean()),
        mean_b=float(b.mean()),
        difference=diff,
        p_raw=p_raw,
        p_adjusted=bonferroni(p_raw, comparisons),
        iterations=iterations,
        seed=seed,
        comparisons=comparisons,
        alpha=alpha,
        n_a=int(a.size),
        n_b=int(b.size),
    )


def subgroup_filter(cases: Sequence[CaseResult], max_size_mm: float = 20.0) -> List[CaseResult]:
    """Keep normal cases and pdac cases whose largest lesion is below ``max_size_mm``."""
    return [c for c in cases if c.cohort == "normal" or max(c.gt_lesion_sizes_mm) < max_size_mm]
