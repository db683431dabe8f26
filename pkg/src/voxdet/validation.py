"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np

from .voxgrid import BinaryMask, Geometry, LabelVolume, ScalarVolume

__all__ = [
    "check_scalar_volume",
    "check_likelihood",
    "check_label_volume",
    "check_same_geometry",
    "check_scores",
]


def _unit_geometry(shape) -> Geometry:
    if len(shape) != 3:
        raise ValueError(f"expected a 3D array, got shape {shape}")
    return Geometry(shape, (1.0, 1.0, 1.0))


def check_scalar_volume(vol, name: str = "volume") -> ScalarVolume:
    """Accept a :class:`ScalarVolume` or a bare 3D array (unit spacing)."""
    if isinstance(vol, ScalarVolume):
        return vol
    if isinstance(vol, (LabelVolume, BinaryMask)):
        raise TypeError(f"{name} must be a scalar volume, got {type(vol).__name__}")
    arr = np.asarray(vol)
    if not np.issubdtype(arr.dtype, np.number) or np.issubdtype(arr.dtype, np.complexfloating):
        raise TypeError(f"{name} must be real-valued")
    return ScalarVolume(_unit_geometry(arr.shape), arr)


def check_likelihood(vol, name: str = "likelihood") -> ScalarVolume:
    vol = check_scalar_volume(vol, name)
    try:
        return vol.check_likelihood()
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from None


def check_label_volume(vol, name: str = "labels") -> LabelVolume:
    if isinstance(vol, LabelVolume):
        return vol
    arr = np.asarray(vol)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"{name} must hold integer codes")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(f"{name} codes out of range")
    return LabelVolume(_unit_geometry(arr.shape), arr)


def check_same_geometry(*vols, names=None) -> None:
    first = vols[0].geometry
    for i, v in enumerate(vols[1:], 1):
        if v.geometry != first:
            what = f"{names[0]} and {names[i]}" if names else f"inputs 0 and {i}"
            raise ValueError(f"geometry mismatch between {what}")


def check_scores(scores, name: str = "scores") -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
