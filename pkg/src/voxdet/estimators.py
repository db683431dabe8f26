"""scikit-learn compatible wrappers around the detection pipeline.

Samples are volumes rather than feature rows, so ``X`` is a sequence of
per-case inputs. The estimators only borrow the parameter protocol
(``get_params``/``set_params``/``clone``) and the fit/transform/predict
vocabulary.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .candidates import extract_candidates
from .config import PipelineConfig
from .metrics import roc
from .pipeline import extract_roi, mask_likelihood, patient_score
from .validation import check_label_volume, check_likelihood, check_same_geometry, check_scalar_volume
from .voxgrid import LabelVolume, unravel_linear

__all__ = ["RoiExtractor", "LesionDetector"]


class RoiExtractor(TransformerMixin, BaseEstimator):
    """Crop images to the organ ROI given coarse low-resolution masks.

    Parameters
    ----------
    dilate_radius_mm : float
        Radius of the spherical dilation applied to the upsampled mask.
    margin_mm : float or "auto"
        Margin added around the dilated mask's bounding box. With ``"auto"``,
        :meth:`fit` learns the smallest margin that keeps every tumor voxel of
        the training cases inside the ROI, plus ``safety_mm``.
    safety_mm : float
        Extra margin added on top of the learned one.

    Attributes
    ----------
    margin_mm_ : float
        Margin used by :meth:`transform`.
    """

    def __init__(self, dilate_radius_mm=5.0, margin_mm=20.0, safety_mm=0.0):
        self.dilate_radius_mm = dilate_radius_mm
        self.margin_mm = margin_mm
        self.safety_mm = safety_mm

    def _config(self, margin):
        return PipelineConfig(dilate_radius_mm=self.dilate_radius_mm, margin_mm=margin)

    @staticmethod
    def _pairs(X):
        pairs = []
        for item in X:
            image, coarse = item
            pairs.append((check_scalar_volume(image, "image"), check_label_volume(coarse, "coarse_mask")))
        if not pairs:
            raise ValueError("X is empty")
        return pairs

    def fit(self, X, y=None):
        """X: sequence of ``(image, coarse_mask)``; y: ground-truth label volumes."""
        pairs = self._pairs(X)
        if self.margin_mm != "auto":
            self._config(self.margin_mm)
            self.margin_mm_ = float(self.margin_mm)
            return self
        if y is None:
            raise ValueError('margin_mm="auto" needs ground-truth labels y')
        y = [check_label_volume(v, "y") for v in y]
        if len(y) != len(pairs):
            raise ValueError("X and y differ in length")
        need = 0.0
        for (image, coarse), labels in zip(pairs, y):
            check_same_geometry(image, labels, names=("image", "y"))
            roi = extract_roi(image, coarse, self._config(0.0))
            tumor = np.flatnonzero(labels.ravel() == 1)
            if tumor.size == 0:
                continue
            idx = unravel_linear(tumor, image.geometry.dims)
            below = np.clip(np.asarray(roi.box.lo) - idx.min(axis=0), 0, None)
            above = np.clip(idx.max(axis=0) - np.asarray(roi.box.hi), 0, None)
            over = np.maximum(below, above) * np.asarray(image.geometry.spacing)
            need = max(need, float(over.max()))
        self.margin_mm_ = need + float(self.safety_mm)
        return self

    def transform(self, X):
        """Return one :class:`~voxdet.pipeline.RoiResult` per ``(image, coarse_mask)``."""
        check_is_fitted(self, "margin_mm_")
        cfg = self._config(self.margin_mm_)
        return [extract_roi(image, coarse, cfg) for image, coarse in self._pairs(X)]


class LesionDetector(BaseEstimator):
    """Peak-anchored lesion candidates and patient scores from likelihood maps.

    ``X`` items are likelihood volumes, or ``(likelihood, segmentation)`` pairs
    in which case the map is first restricted to ``mask_codes``. Nothing is
    learned; :meth:`fit` validates the parameters.
    """

    def __init__(self, rel_threshold=0.4, max_lesions=5, peak_floor=1e-3, connectivity=26, mask_codes=(1, 2)):
        self.rel_threshold = rel_threshold
        self.max_lesions = max_lesions
        self.peak_floor = peak_floor
        self.connectivity = connectivity
        self.mask_codes = mask_codes

    def fit(self, X=None, y=None):
        self.config_ = PipelineConfig(
            rel_threshold=self.rel_threshold,
            max_lesions=self.max_lesions,
            peak_floor=self.peak_floor,
            connectivity=self.connectivity,
            mask_codes=tuple(self.mask_codes),
        )
        return self

    def _maps(self, X):
        out = []
        for item in X:
            if isinstance(item, tuple):
                lik, seg = item
                lik = check_likelihood(lik)
                if not isinstance(seg, LabelVolume):
                    # a bare array takes the map's geometry
                    seg = check_label_volume(seg, "segmentation")
                    if seg.geometry.dims != lik.geometry.dims:
                        raise ValueError("likelihood and segmentation differ in shape")
                    seg = seg.with_data(seg.data, lik.geometry)
                lik = mask_likelihood(lik, seg, self.config_.mask_codes)
            else:
                lik = check_likelihood(item)
            out.append(lik)
        return out

    def predict(self, X):
        """Candidate lists, one per sample."""
        check_is_fitted(self, "config_")
        return [extract_candidates(m, self.config_) for m in self._maps(X)]

    def decision_function(self, X) -> np.ndarray:
        """Patient-level score: the maximum of each (masked) map."""
        check_is_fitted(self, "config_")
        return np.array([patient_score(m) for m in self._maps(X)])

    def score(self, X, y):
        """AUC-ROC of the patient scores against binary ``y`` (1 = tumor present)."""
        y = np.asarray(y).astype(bool)
        s = self.decision_function(X)
        if y.all() or not y.any():
            return math.nan
        return roc(s[y], s[~y]).auc
