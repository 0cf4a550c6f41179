"""Test media: unit background with a ball or an extruded letter of index n_inclusion."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .grid import GridSpec, ScalarField3

LETTERS = {"A": "A.pbm", "C": "C.pbm", "Omega": "Omega.pbm"}


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "ball"
    n_inclusion: float = 1.5
    center: tuple = (0.5, 0.5, 0.5)
    radius: float = 0.2
    mask_path: str = ""
    z_extent: tuple = (0.3, 0.7)
    smoothing: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "letter"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.n_inclusion < 1.0:
            raise ValueError("n_inclusion must be >= 1 so that m >= 1")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")

    @property
    def m_inclusion(self) -> float:
        return self.n_inclusion**2


def read_pbm(path) -> np.ndarray:
    """Plain-text bitmap: 'P1', optional # comments, 'width height', then 0/1 digits."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError(f"{path}: not a P1 bitmap")
    w, h = int(tokens[1]), int(tokens[2])
    bits = "".join(tokens[3:])
    if len(bits) != w * h or set(bits) - {"0", "1"}:
        raise ValueError(f"{path}: expected {w * h} binary digits")
    return np.frombuffer(bits.encode(), dtype=np.uint8).reshape(h, w) == ord("1")


def letter_mask_path(letter: str) -> str:
    return str(resources.files("traveltomo") / "data" / "masks" / LETTERS[letter])


@lru_cache(maxsize=16)
def _load_mask(path: str) -> np.ndarray:
    mask = read_pbm(path)
    mask.setflags(write=False)
    return mask


def _smooth_step(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _check_inside(lo, hi, spec: GridSpec):
    box_lo = np.array([0.0, 0.0, spec.B])
    box_hi = np.array([1.0, 1.0, spec.B + spec.rho])
    if np.any(lo <= box_lo) or np.any(hi >= box_hi):
        raise ValueError("inclusion must lie strictly inside Omega")


def ball_m(ps: PhantomSpec, X, Y, Z) -> np.ndarray:
    c = np.asarray(ps.center, dtype=float)
    r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
    if ps.smoothing > 0:
        w = _smooth_step(1.0 - (r - ps.radius) / ps.smoothing)
    else:
        w = (r <= ps.radius).astype(float)
    return 1.0 + (ps.m_inclusion - 1.0) * w


def letter_m(ps: PhantomSpec, X, Y, Z) -> np.ndarray:
    mask = _load_mask(ps.mask_path)
    nrow, ncol = mask.shape
    col = np.clip(np.floor(X * ncol).astype(int), 0, ncol - 1)
    row = np.clip(np.floor((1.0 - Y) * nrow).astype(int), 0, nrow - 1)
    z0, z1 = ps.z_extent
    if ps.smoothing > 0 and mask.any():
        # distance to the extruded set: in-plane distance from the raster, then z
        d_xy = distance_transform_edt(~mask, sampling=(1.0 / nrow, 1.0 / ncol))[row, col]
        d_z = np.maximum(0.0, np.maximum(z0 - Z, Z - z1))
        w = _smooth_step(1.0 - np.sqrt(d_xy**2 + d_z**2) / ps.smoothing)
    else:
        w = (mask[row, col] & (Z >= z0) & (Z <= z1)).astype(float)
    # the raster covers only the unit square
    w = np.where((X < 0) | (X > 1) | (Y < 0) | (Y > 1), 0.0, w)
    return 1.0 + (ps.m_inclusion - 1.0) * w


def phantom_m(ps: PhantomSpec, X, Y, Z) -> np.ndarray:
    """Squared index m = n^2 at arbitrary points."""
    X, Y, Z = (np.asarray(v, dtype=float) for v in (X, Y, Z))
    if ps.kind == "ball":
        return ball_m(ps, X, Y, Z)
    return letter_m(ps, X, Y, Z)


def validate(ps: PhantomSpec, spec: GridSpec) -> None:
    if ps.kind == "ball":
        c = np.asarray(ps.center, dtype=float)
        reach = ps.radius + ps.smoothing
        _check_inside(c - reach, c + reach, spec)
        return
    z0, z1 = ps.z_extent
    if not (spec.B < z0 - ps.smoothing and z1 + ps.smoothing < spec.B + spec.rho):
        raise ValueError("letter z-extent must lie inside (B, B + rho)")
    mask = _load_mask(ps.mask_path)
    if not mask.any():
        raise ValueError("letter mask is empty")
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("letter mask touches the lateral boundary")


def make_ball(ps: PhantomSpec, spec: GridSpec) -> ScalarField3:
    if ps.kind != "ball":
        raise ValueError("not a ball phantom")
    validate(ps, spec)
    X, Y, Z = spec.mesh()
    return ScalarField3(spec, ball_m(ps, X, Y, Z))


def make_letter(ps: PhantomSpec, spec: GridSpec) -> ScalarField3:
    if ps.kind != "letter":
        raise ValueError("not a letter phantom")
    validate(ps, spec)
    X, Y, Z = spec.mesh()
    return ScalarField3(spec, letter_m(ps, X, Y, Z))


def make_phantom(ps: PhantomSpec, spec: GridSpec) -> ScalarField3:
    return make_ball(ps, spec) if ps.kind == "ball" else make_letter(ps, spec)


def letter_spec(letter: str, **kw) -> PhantomSpec:
    return PhantomSpec(kind="letter", mask_path=letter_mask_path(letter), **kw)
