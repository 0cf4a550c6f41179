"""Reconstruction scores: contrast, relative error, half-max localisation, overlap."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import binary_dilation, generate_binary_structure

HALF_MAX = 0.5


@dataclass
class Metrics:
    computed_contrast: float
    rel_L2_error: float
    centroid_error: float
    dice: float
    background_error: float
    J_final: float = float("nan")
    iterations: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def rel_L2_error(n_comp, n_true) -> float:
    n_comp = np.asarray(n_comp, dtype=float)
    n_true = np.asarray(n_true, dtype=float)
    return float(np.linalg.norm(n_comp - n_true) / np.linalg.norm(n_true))


def half_max_mask(n, background: float = 1.0) -> np.ndarray:
    """Nodes where n exceeds background + HALF_MAX * (max n - background)."""
    n = np.asarray(n, dtype=float)
    peak = n.max()
    if peak <= background:
        return np.zeros(n.shape, dtype=bool)
    return n >= background + HALF_MAX * (peak - background)


def centroid(mask: np.ndarray, axes) -> np.ndarray:
    if not mask.any():
        return np.full(len(axes), np.nan)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.array([g[mask].mean() for g in grids])


def centroid_error(n_comp, n_true, axes) -> float:
    """Distance between the centroids of the half-max regions; inf if either is empty."""
    a = centroid(half_max_mask(n_comp), axes)
    b = centroid(half_max_mask(n_true), axes)
    if np.any(np.isnan(a)) or np.any(np.isnan(b)):
        return float("inf")
    return float(np.linalg.norm(a - b))


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def background_error(n_comp, inclusion: np.ndarray, dilation: int = 1) -> float:
    """max |n - 1| over nodes outside the inclusion dilated by ``dilation`` nodes."""
    n_comp = np.asarray(n_comp, dtype=float)
    grown = inclusion
    if dilation > 0 and inclusion.any():
        grown = binary_dilation(inclusion, generate_binary_structure(3, 3), iterations=dilation)
    outside = ~grown
    if not outside.any():
        return 0.0
    return float(np.abs(n_comp[outside] - 1.0).max())


def evaluate(n_comp, n_true, axes, J_final: float = float("nan"), iterations: int = 0) -> Metrics:
    n_comp = np.asarray(n_comp, dtype=float)
    n_true = np.asarray(n_true, dtype=float)
    inclusion = n_true > 1.0 + 1e-12
    return Metrics(
        computed_contrast=float(n_comp.max()),
        rel_L2_error=rel_L2_error(n_comp, n_true),
        centroid_error=centroid_error(n_comp, n_true, axes),
        dice=dice(half_max_mask(n_comp), half_max_mask(n_true)),
        background_error=background_error(n_comp, inclusion),
        J_final=float(J_final),
        iterations=int(iterations),
    )
