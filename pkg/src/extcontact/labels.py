"""Dense contact-affordance labels from sparse annotated contact points."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import as_cloud, nearest_distances


@dataclass(frozen=True)
class LabelGenParams:
    sigma: float = 0.010  # kernel bandwidth, m
    scale: float = 2.0    # pre-clamp gain

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")

    @property
    def saturation_radius(self) -> float:
        """Distance within which the label is exactly +1 (zero when scale <= 1)."""
        if self.scale <= 1.0:
            return 0.0
        return self.sigma * math.sqrt(2.0 * math.log(self.scale))

    @property
    def positive_radius(self) -> float:
        """Distance below which the label is strictly positive."""
        if self.scale <= 0.5:
            return 0.0
        return self.sigma * math.sqrt(2.0 * math.log(2.0 * self.scale))


def generate_affordance(cloud, annotation, params: LabelGenParams = LabelGenParams()) -> np.ndarray:
    """Per-point affordance in [-1, 1] for ``cloud`` given annotated points.

    With no annotated points the frame is a no-contact frame and every point
    gets -1.
    """
    pts = as_cloud(cloud)
    ann = np.asarray(annotation, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(ann)):
        raise DataError("annotation contains non-finite coordinates")
    if len(ann) == 0:
        return np.full(len(pts), -1.0)
    d = nearest_distances(pts, ann)
    y = np.exp(-(d * d) / (2.0 * params.sigma ** 2))
    return 2.0 * np.clip(params.scale * y, 0.0, 1.0) - 1.0


def extract_contact_patch(cloud, affordance) -> np.ndarray:
    """Points whose affordance is strictly positive, order preserved."""
    pts = np.asarray(cloud).reshape(-1, 3)
    aff = np.asarray(affordance).reshape(-1)
    if len(pts) != len(aff):
        raise DataError(f"cloud has {len(pts)} points but affordance has {len(aff)} values")
    return pts[aff > 0]
