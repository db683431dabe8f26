"""Pipeline and run configuration."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Tuple


@dataclass(frozen=True)
class PipelineConfig:
    dilate_radius_mm: float = 5.0
    margin_mm: float = 20.0
    rel_threshold: float = 0.4
    max_lesions: int = 5
    peak_floor: float = 1e-3
    connectivity: int = 26
    mask_codes: Tuple[int, ...] = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "mask_codes", tuple(sorted(set(int(c) for c in self.mask_codes))))
        if not 0 < self.rel_threshold < 1:
            raise ValueError(f"rel_threshold must be in (0, 1), got {self.rel_threshold}")
        if self.peak_floor < 0:
            raise ValueError(f"peak_floor must be >= 0, got {self.peak_floor}")
        if int(self.max_lesions) != self.max_lesions or self.max_lesions < 1:
            raise ValueError(f"max_lesions must be a positive integer, got {self.max_lesions}")
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.dilate_radius_mm <= 0:
            raise ValueError("dilate_radius_mm must be > 0")
        if self.margin_mm < 0:
            raise ValueError("margin_mm must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines an evaluation run; embedded in every report."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    fp_lo: float = 0.001
    fp_hi: float = 5.0
    dice_min: float = 0.1
    duplicate_policy: str = "ignore"
    subgroup_max_mm: float | None = None
    iterations: int = 100_000
    seed: int = 0
    comparisons: int = 3
    alpha: float = 0.025

    def __post_init__(self):
        if not self.fp_lo < self.fp_hi:
            raise ValueError("fp_lo must be < fp_hi")
        if self.duplicate_policy not in ("ignore", "count-fp"):
            raise ValueError(f"unknown duplicate_policy {self.duplicate_policy!r}")
        if self.iterations < 1 or self.comparisons < 1:
            raise ValueError("iterations and comparisons must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("pipeline"))
        d["mask_codes"] = list(d["mask_codes"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        pipe_keys = {f.name for f in fields(PipelineConfig)}
        run_keys = {f.name for f in fields(cls)} - {"pipeline"}
        unknown = set(d) - pipe_keys - run_keys
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        pipeline = PipelineConfig(**{k: v for k, v in d.items() if k in pipe_keys})
        return cls(pipeline=pipeline, **{k: v for k, v in d.items() if k in run_keys})

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def override(self, **kw) -> "RunConfig":
        """Return a copy with non-None keyword values applied (flags win over file)."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        d = self.to_dict()
        d.update(kw)
        return type(self).from_dict(d)
