"""Volumetric data types, geometry and a strict NRRD subset reader/writer.

Arrays are indexed ``data[x, y, z]``. The on-disk and "linear index" order is
x-fastest, i.e. ``numpy`` Fortran order: ``i = x + nx * (y + ny * z)``.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

__all__ = [
    "LABEL_CODES",
    "Geometry",
    "ScalarVolume",
    "LabelVolume",
    "BinaryMask",
    "VoxelBox",
    "NrrdError",
    "read_nrrd",
    "write_nrrd",
    "resample_inplane",
    "linear_index",
    "unravel_linear",
]

LABEL_CODES = {
    0: "background",
    1: "tumor",
    2: "pancreas",
    3: "veins",
    4: "arteries",
    5: "pancreatic_duct",
    6: "common_bile_duct",
    7: "cyst",
    8: "thrombosis",
}
_MAX_CODE = max(LABEL_CODES)

Triple = Tuple[float, float, float]


class NrrdError(ValueError):
    """Raised for files outside the supported NRRD subset."""


@dataclass(frozen=True)
class Geometry:
    dims: Tuple[int, int, int]
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("geometry must be three-dimensional")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be finite and > 0, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise ValueError(f"origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def world(self, index) -> np.ndarray:
        """Physical (mm) position of voxel centers; ``index`` is (..., 3)."""
        index = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + index * np.asarray(self.spacing)

    def voxel(self, point) -> np.ndarray:
        """Nearest lattice index of a physical point, inverse of :meth:`world`."""
        point = np.asarray(point, dtype=float)
        rel = (point - np.asarray(self.origin)) / np.asarray(self.spacing)
        return np.rint(rel).astype(np.int64)

    def extent_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Edge-to-edge physical bounds (lo, hi) of the grid."""
        spacing = np.asarray(self.spacing)
        lo = np.asarray(self.origin) - 0.5 * spacing
        return lo, lo + np.asarray(self.dims) * spacing

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "spacing": list(self.spacing), "origin": list(self.origin)}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class _Volume:
    geometry: Geometry
    data: np.ndarray

    dtype = np.float32

    def __post_init__(self):
        data = np.array(self.data, dtype=self.dtype, copy=True)
        if data.shape != self.geometry.dims:
            raise ValueError(f"data shape {data.shape} does not match dims {self.geometry.dims}")
        object.__setattr__(self, "data", _freeze(data))
        self._validate()

    def _validate(self):
        pass

    @property
    def shape(self):
        return self.geometry.dims

    def with_data(self, data, geometry: Geometry | None = None):
        return type(self)(self.geometry if geometry is None else geometry, data)

    def ravel(self) -> np.ndarray:
        """Values in x-fastest linear order."""
        return self.data.ravel(order="F")

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.geometry == other.geometry
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


class ScalarVolume(_Volume):
    """Real-valued volume (CT image or likelihood map), float32."""

    dtype = np.float32

    def check_likelihood(self) -> "ScalarVolume":
        d = self.data
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0 or d.max(initial=0.0) > 1:
            raise ValueError("likelihood values must lie in [0, 1]")
        return self


class LabelVolume(_Volume):
    """Segmentation with the fixed class code table :data:`LABEL_CODES`."""

    dtype = np.uint8

    def _validate(self):
        if self.data.size and int(self.data.max()) > _MAX_CODE:
            bad = sorted(set(np.unique(self.data).tolist()) - set(LABEL_CODES))
            raise ValueError(f"unknown label codes {bad}")

    def mask(self, codes) -> "BinaryMask":
        return BinaryMask(self.geometry, np.isin(self.data, list(codes)))


class BinaryMask(_Volume):
    dtype = np.bool_

    @property
    def count(self) -> int:
        return int(self.data.sum())


Volume = Union[ScalarVolume, LabelVolume, BinaryMask]


@dataclass(frozen=True)
class VoxelBox:
    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box lo {lo} exceeds hi {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def slices(self):
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))

    def within(self, dims) -> bool:
        return all(l >= 0 for l in self.lo) and all(h < d for h, d in zip(self.hi, dims))

    def contains(self, index) -> np.ndarray:
        index = np.atleast_2d(index)
        return np.all((index >= self.lo) & (index <= self.hi), axis=-1)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


def linear_index(index, dims) -> np.ndarray:
    """x-fastest linear index of (..., 3) voxel coordinates."""
    index = np.asarray(index, dtype=np.int64)
    return np.ravel_multi_index(tuple(np.moveaxis(index, -1, 0)), dims, order="F")


def unravel_linear(lin, dims) -> np.ndarray:
    return np.stack(np.unravel_index(np.asarray(lin, dtype=np.int64), dims, order="F"), axis=-1)


# --------------------------------------------------------------------------- NRRD

_TYPES = {"float": np.dtype("<f4"), "uint8": np.dtype("u1")}
_NUM = r"([-+0-9.eEinfa]+)"
_HEADER_PATTERNS = [
    ("magic", re.compile(r"NRRD0004")),
    ("type", re.compile(r"type: (\S+)")),
    ("dimension", re.compile(r"dimension: (\S+)")),
    ("sizes", re.compile(r"sizes: (\d+) (\d+) (\d+)")),
    ("space dimension", re.compile(r"space dimension: 3")),
    (
        "space directions",
        re.compile(rf"space directions: \({_NUM},0,0\) \(0,{_NUM},0\) \(0,0,{_NUM}\)"),
    ),
    ("space origin", re.compile(rf"space origin: \({_NUM},{_NUM},{_NUM}\)")),
    ("endian", re.compile(r"endian: little")),
    ("encoding", re.compile(r"encoding: (\S+)")),
]


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(vol: Volume) -> bytes:
    g = vol.geometry
    if isinstance(vol, ScalarVolume):
        typ = "float"
    elif isinstance(vol, LabelVolume):
        typ = "uint8"
    else:
        raise TypeError(f"cannot write {type(vol).__name__} as NRRD")
    sx, sy, sz = (_fmt(s) for s in g.spacing)
    ox, oy, oz = (_fmt(o) for o in g.origin)
    lines = [
        "NRRD0004",
        f"type: {typ}",
        "dimension: 3",
        "sizes: {} {} {}".format(*g.dims),
        "space dimension: 3",
        f"space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})",
        f"space origin: ({ox},{oy},{oz})",
        "endian: little",
        "encoding: raw",
        "",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_nrrd(vol: Volume, path) -> None:
    """Write ``vol`` as header + raw little-endian x-fastest payload."""
    header = _header(vol)
    dtype = _TYPES["float" if isinstance(vol, ScalarVolume) else "uint8"]
    payload = np.ascontiguousarray(vol.ravel(), dtype=dtype).tobytes()
    with open(os.fspath(path), "wb") as f:
        f.write(header)
        f.write(payload)


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise NrrdError(f"malformed number {text!r}") from None


def read_nrrd(path, role: str | None = None) -> Union[ScalarVolume, LabelVolume]:
    """Read a volume written by :func:`write_nrrd`.

    Parameters
    ----------
    path : path-like
        File to read.
    role : {"likelihood", None}
        With ``"likelihood"`` the values are additionally checked to lie in [0, 1].
    """
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    fields = {}
    pos = 0
    for name, pattern in _HEADER_PATTERNS:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise NrrdError("truncated header")
        line = raw[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        m = pattern.fullmatch(line)
        if m is None:
            key = line.split(":", 1)[0]
            if name == "magic":
                raise NrrdError("not an NRRD0004 file")
            if key != name:
                raise NrrdError(f"unsupported NRRD field {key!r} (expected {name!r})")
            raise NrrdError(f"unsupported value in line {line!r}")
        fields[name] = m.groups()
    if raw[pos : pos + 1] != b"\n":
        line = raw[pos : raw.find(b"\n", pos)].decode("ascii", errors="replace")
        raise NrrdError(f"unsupported NRRD field {line.split(':', 1)[0]!r}")
    pos += 1

    typ = fields["type"][0]
    if typ not in _TYPES:
        raise NrrdError(f"unsupported type {typ!r}")
    if fields["dimension"][0] != "3":
        raise NrrdError(f"unsupported dimension {fields['dimension'][0]}")
    if fields["encoding"][0] != "raw":
        raise NrrdError(f"unsupported encoding {fields['encoding'][0]!r}")
    dims = tuple(int(v) for v in fields["sizes"])
    spacing = tuple(_parse_float(v) for v in fields["space directions"])
    origin = tuple(_parse_float(v) for v in fields["space origin"])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NrrdError(f"non-positive spacing {spacing}")
    try:
        geometry = Geometry(dims, spacing, origin)
    except ValueError as exc:
        raise NrrdError(str(exc)) from None

    dtype = _TYPES[typ]
    payload = raw[pos:]
    expected = geometry.size * dtype.itemsize
    if len(payload) != expected:
        raise NrrdError(f"payload length {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(dims, order="F")
    if typ == "uint8":
        return LabelVolume(geometry, data)
    vol = ScalarVolume(geometry, data)
    if role == "likelihood":
        vol.check_likelihood()
    return vol


# ------------------------------------------------------------------ resampling


def _nearest_source(n_src: int, n_dst: int) -> np.ndarray:
    # source voxel containing the target center; exact integer arithmetic
    j = np.arange(n_dst, dtype=np.int64)
    return np.minimum(((2 * j + 1) * n_src) // (2 * n_dst), n_src - 1)


def _linear_weights(n_src: int, n_dst: int):
    pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def resample_inplane(vol, target_nx: int, target_ny: int, mode: str = "linear"):
    """Resample each axial slice to ``target_nx x target_ny``.

    Physical extent (dims * spacing) is preserved; z is untouched. ``nearest``
    picks the source voxel whose center is closest to the target center
    (a tie goes to the higher index); ``linear`` is bilinear per slice.
    """
    target_nx, target_ny = int(target_nx), int(target_ny)
    if target_nx < 1 or target_ny < 1:
        raise ValueError("target dims must be >= 1")
    if mode not in ("linear", "nearest"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "linear" and not isinstance(vol, ScalarVolume):
        raise ValueError("linear resampling is only defined for scalar volumes")

    g = vol.geometry
    nx, ny, nz = g.dims
    sx, sy, sz = g.spacing
    new_sx, new_sy = sx * nx / target_nx, sy * ny / target_ny
    origin = (
        g.origin[0] - 0.5 * sx + 0.5 * new_sx,
        g.origin[1] - 0.5 * sy + 0.5 * new_sy,
        g.origin[2],
    )
    geometry = Geometry((target_nx, target_ny, nz), (new_sx, new_sy, sz), origin)

    if mode == "nearest":
        ix = _nearest_source(nx, target_nx)
        iy = _nearest_source(ny, target_ny)
        data = vol.data[np.ix_(ix, iy, np.arange(nz))]
    else:
        src = vol.data.astype(np.float64)
        x0, x1, wx = _linear_weights(nx, target_nx)
        y0, y1, wy = _linear_weights(ny, target_ny)
        wx = wx[:, None, None]
        wy = wy[None, :, None]
        rows = src[x0] * (1.0 - wx) + src[x1] * wx
        data = rows[:, y0] * (1.0 - wy) + rows[:, y1] * wy
    return type(vol)(geometry, data)
