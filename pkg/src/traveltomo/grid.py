"""Regular grid on Omega = (0,1)^2 x (B, B+rho), semidiscrete fields and norms.

Nodes are x_i = i h, y_j = j h (h = 1/k) and z_l = B + l hz (hz = rho/kz).
Field arrays are indexed ``[i, j, l]`` (plus a trailing component axis for
coefficient fields).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

H_FLOOR = 1.0 / 64


@dataclass(frozen=True)
class GridSpec:
    k: int = 10
    kz: int = 10
    B: float = 0.0
    rho: float = 1.0
    a: float = -2.0
    b: float = 3.0
    d: float = 0.5
    z0: float = -1.0
    h_floor: float = H_FLOOR

    def __post_init__(self):
        if self.k < 1 or self.kz < 1:
            raise ValueError("k and kz must be positive")
        if 1.0 / self.k < self.h_floor - 1e-15:
            raise ValueError(f"h = 1/{self.k} is below the floor {self.h_floor}")
        if not self.z0 < self.B:
            raise ValueError("source line must lie below the domain (z0 < B)")
        if not self.a < self.b:
            raise ValueError("need a < b")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @property
    def h(self) -> float:
        return 1.0 / self.k

    @property
    def hz(self) -> float:
        return self.rho / self.kz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.k + 1, self.k + 1, self.kz + 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.k + 1) * self.h

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.k + 1) * self.h

    @property
    def z(self) -> np.ndarray:
        return self.B + np.arange(self.kz + 1) * self.hz

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    def pinned_mask(self) -> np.ndarray:
        """True on Gamma^h (lateral faces) and D_B^h (bottom face)."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :, :] = mask[-1, :, :] = True
        mask[:, 0, :] = mask[:, -1, :] = True
        mask[:, :, 0] = True
        return mask

    def z_weights(self) -> np.ndarray:
        return trapezoid_weights(self.kz + 1, self.hz)


@dataclass
class ScalarField3:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"expected shape {self.spec.shape}, got {self.values.shape}")


@dataclass
class CoefficientField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:3] != self.spec.shape or self.values.ndim != 4:
            raise ValueError(f"expected shape {self.spec.shape} + (N,), got {self.values.shape}")

    @property
    def N(self) -> int:
        return self.values.shape[3]


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


@lru_cache(maxsize=64)
def first_derivative_matrix(n: int, step: float) -> np.ndarray:
    """Central differences inside, second-order one-sided rows at both ends."""
    if n < 3:
        raise ValueError("need at least 3 nodes")
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5, 0.5
    D[0, :3] = (-1.5, 2.0, -0.5)
    D[-1, -3:] = (0.5, -2.0, 1.5)
    D /= step
    D.setflags(write=False)
    return D


@lru_cache(maxsize=64)
def second_derivative_matrix(n: int, step: float) -> np.ndarray:
    if n < 3:
        raise ValueError("need at least 3 nodes")
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1 : i + 2] = (1.0, -2.0, 1.0)
    if n >= 4:
        D[0, :4] = (2.0, -5.0, 4.0, -1.0)
        D[-1, -4:] = (-1.0, 4.0, -5.0, 2.0)
    else:
        D[0, :3] = D[-1, -3:] = (1.0, -2.0, 1.0)
    D /= step**2
    D.setflags(write=False)
    return D


def apply_along(D: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(D, values, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def _wrap(field, values):
    if isinstance(field, np.ndarray):
        return values
    return type(field)(field.spec, values)


def ddx(field):
    """x-derivative; central at interior nodes, one-sided second order at i = 0, k."""
    spec = field.spec
    return _wrap(field, apply_along(first_derivative_matrix(spec.k + 1, spec.h), field.values, 0))


def ddy(field):
    spec = field.spec
    return _wrap(field, apply_along(first_derivative_matrix(spec.k + 1, spec.h), field.values, 1))


def ddz(field):
    spec = field.spec
    return _wrap(field, apply_along(first_derivative_matrix(spec.kz + 1, spec.hz), field.values, 2))


def d2dz2(field):
    spec = field.spec
    return _wrap(field, apply_along(second_derivative_matrix(spec.kz + 1, spec.hz), field.values, 2))


def l2h_sq(spec: GridSpec, values: np.ndarray) -> float:
    """Squared L2h norm: h^2 * sum over transverse nodes of the z-trapezoid of |Q|^2."""
    v2 = values**2
    if v2.ndim == 4:
        v2 = v2.sum(axis=3)
    return float(spec.h**2 * np.sum(v2 @ spec.z_weights()))


def norm_L2h(field) -> float:
    return float(np.sqrt(l2h_sq(field.spec, field.values)))


def norm_H1h(field) -> float:
    s = field.spec
    tot = l2h_sq(s, ddx(field).values) + l2h_sq(s, ddy(field).values) + l2h_sq(s, field.values)
    return float(np.sqrt(tot))


def norm_H2h(field) -> float:
    s = field.spec
    tot = (l2h_sq(s, ddx(field).values) + l2h_sq(s, ddy(field).values)
           + l2h_sq(s, field.values) + l2h_sq(s, ddz(field).values)
           + l2h_sq(s, d2dz2(field).values))
    return float(np.sqrt(tot))
