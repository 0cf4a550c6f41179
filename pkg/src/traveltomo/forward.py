"""Synthetic first-arrival data: fast marching per source, boundary sampling, noise."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .fmm import KNOWN, FastMarchError, _march, fast_march_raw
from .grid import GridSpec

FACES = ("top", "bottom", "x0", "x1", "y0", "y1")
PAD = 0.1


@dataclass(frozen=True)
class SourceLine:
    a: float = -2.0
    b: float = 3.0
    d: float = 0.5
    z0: float = -1.0
    count: int = 101

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least two sources")
        if not self.a < self.b:
            raise ValueError("need a < b")

    @property
    def alphas(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.count)

    def points(self) -> np.ndarray:
        al = self.alphas
        return np.column_stack([al, np.full_like(al, self.d), np.full_like(al, self.z0)])

    @classmethod
    def from_spec(cls, spec: GridSpec, count: int) -> "SourceLine":
        return cls(spec.a, spec.b, spec.d, spec.z0, count)


@dataclass(frozen=True)
class ExtendedGrid:
    """Fast-marching lattice ``origin + h * index`` enclosing Omega and the sources."""

    origin: tuple
    h: float
    shape: tuple

    @classmethod
    def around(cls, spec: GridSpec, h: float, pad: float = PAD) -> "ExtendedGrid":
        # lattice aligned with x = 0, y = 0, z = B so the faces of Omega are grid planes
        def lo(v):
            return math.floor(v / h + 1e-9)

        def hi(v):
            return math.ceil(v / h - 1e-9)

        i0, i1 = lo(min(spec.a, 0.0) - pad), hi(max(spec.b, 1.0) + pad)
        j0, j1 = lo(min(spec.d, 0.0) - pad), hi(max(spec.d, 1.0) + pad)
        l0, l1 = lo(spec.z0 - spec.B - pad), hi(spec.rho + pad)
        origin = (i0 * h, j0 * h, spec.B + l0 * h)
        return cls(origin, h, (i1 - i0 + 1, j1 - j0 + 1, l1 - l0 + 1))

    def axes(self):
        return tuple(self.origin[d] + self.h * np.arange(self.shape[d]) for d in range(3))

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")


def fast_march(m: np.ndarray, grid: ExtendedGrid, source, exact_below: float | None = None,
               return_order: bool = False):
    """Solve |grad tau|^2 = m with tau(source) = 0.

    The 3x3x3 node block around the source is set from the exact distance.
    With ``exact_below`` every node with z <= exact_below is also set exactly;
    this is only valid where m is constant in that half-space (checked).
    """
    if exact_below is None:
        return fast_march_raw(m, grid.origin, grid.h, source, return_order=return_order)
    m = np.ascontiguousarray(m, dtype=float)
    if np.any(m < 1.0 - 1e-12):
        raise ValueError("m must be >= 1 everywhere")
    src = np.asarray(source, dtype=float)
    if src[2] > exact_below:
        raise ValueError("source must lie in the exactly known half-space")
    X, Y, Z = grid.mesh()
    known = Z <= exact_below + 1e-12
    m_below = float(m[known].flat[0])
    if np.any(np.abs(m[known] - m_below) > 1e-12):
        raise ValueError("exact initialisation needs constant m below exact_below")
    tau = np.full(m.shape, np.inf)
    tau[known] = np.sqrt(m_below) * np.sqrt((X[known] - src[0]) ** 2 + (Y[known] - src[1]) ** 2
                         + (Z[known] - src[2]) ** 2)
    state = np.zeros(m.shape, dtype=np.int8)
    state[known] = KNOWN
    order, ok = _march(np.sqrt(m), grid.h, tau, state)
    if not ok:
        raise FastMarchError("narrow band emptied before all nodes were accepted")
    if return_order:
        return tau, order
    return tau


def face_axes(spec: GridSpec, step: float):
    """Detector coordinates along x/y and along z for the given nominal step."""
    nxy = max(int(round(1.0 / step)), 1)
    nz = max(int(round(spec.rho / step)), 1)
    return np.linspace(0.0, 1.0, nxy + 1), np.linspace(spec.B, spec.B + spec.rho, nz + 1)


def face_points(name: str, spec: GridSpec, step: float) -> np.ndarray:
    """Detector positions of one face, shape (n1, n2, 3).

    top/bottom are indexed [x, y]; x0/x1 are [y, z]; y0/y1 are [x, z].
    """
    s, z = face_axes(spec, step)
    top, bot = spec.B + spec.rho, spec.B
    if name in ("top", "bottom"):
        A, Bm = np.meshgrid(s, s, indexing="ij")
        C = np.full_like(A, top if name == "top" else bot)
        return np.stack([A, Bm, C], axis=-1)
    A, C = np.meshgrid(s, z, indexing="ij")
    const = np.full_like(A, 0.0 if name.endswith("0") else 1.0)
    if name.startswith("x"):
        return np.stack([const, A, C], axis=-1)
    if name.startswith("y"):
        return np.stack([A, const, C], axis=-1)
    raise KeyError(name)


def extract_boundary(tau: np.ndarray, grid: ExtendedGrid, spec: GridSpec, step: float) -> dict:
    """Trilinear interpolation of tau onto the six detector lattices."""
    out = {}
    org = np.asarray(grid.origin)
    for name in FACES:
        pts = face_points(name, spec, step)
        idx = (pts - org) / grid.h
        coords = [idx[..., d].ravel() for d in range(3)]
        vals = map_coordinates(tau, coords, order=1, mode="nearest")
        out[name] = vals.reshape(pts.shape[:2])
    return out


@dataclass
class TravelTimeData:
    """Boundary travel times ``faces[name][source, p, q]`` for every source."""

    source_line: SourceLine
    detector_step: float
    B: float
    rho: float
    faces: dict
    noise: dict = field(default_factory=lambda: {"delta": 0.0, "seed": 0, "mode": "none"})

    def copy(self) -> "TravelTimeData":
        return replace(self, faces={k: v.copy() for k, v in self.faces.items()},
                       noise=dict(self.noise))

    def max_abs(self) -> float:
        return max(float(np.abs(v).max()) for v in self.faces.values())


def _thread_count() -> int:
    env = os.environ.get("TRAVELTOMO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def simulate(m: np.ndarray, grid: ExtendedGrid, spec: GridSpec, sources: SourceLine,
             detector_step: float = 1.0 / 20, exact_below: float | None = None,
             threads: int | None = None) -> TravelTimeData:
    """Fast-march every source and sample the six faces of Omega."""
    pts = sources.points()
    if exact_below is None:
        exact_below = spec.B

    def one(p):
        tau = fast_march(m, grid, p, exact_below=exact_below)
        return extract_boundary(tau, grid, spec, detector_step)

    threads = threads or _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_source = list(pool.map(one, pts))
    else:
        per_source = [one(p) for p in pts]
    faces = {name: np.stack([r[name] for r in per_source]) for name in FACES}
    return TravelTimeData(sources, detector_step, spec.B, spec.rho, faces)


def noise_draws(seed: int, source_index: int, size=None) -> np.ndarray:
    """Uniform(-1, 1) draws from a Philox stream keyed by (seed, source index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, source_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.uniform(-1.0, 1.0, size=size)


def add_noise(data: TravelTimeData, delta: float, seed: int,
              per_detector: bool = False) -> TravelTimeData:
    """g + delta * max|g| * xi with xi ~ U(-1, 1).

    By default xi is drawn once per source and shared by all its detectors;
    ``per_detector`` draws an independent xi for every detector instead.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    out = data.copy()
    out.noise = {"delta": float(delta), "seed": int(seed),
                 "mode": "per_detector" if per_detector else "per_source"}
    if delta == 0.0:
        return out
    amp = delta * data.max_abs()
    S = data.source_line.count
    for s in range(S):
        if per_detector:
            sizes = [data.faces[name][s].size for name in FACES]
            xi = noise_draws(seed, s, sum(sizes))
            pos = 0
            for name, n in zip(FACES, sizes):
                out.faces[name][s] += amp * xi[pos : pos + n].reshape(data.faces[name][s].shape)
                pos += n
        else:
            xi = float(noise_draws(seed, s))
            for name in FACES:
                out.faces[name][s] += amp * xi
    return out
