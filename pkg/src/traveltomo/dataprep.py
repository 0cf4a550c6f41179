"""Turn boundary travel times into projected data for the inversion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .basis import BasisSet
from .forward import TravelTimeData, face_axes
from .grid import GridSpec, trapezoid_weights

TRAILING_ENERGY_WARN = 0.5


class TruncationWarning(UserWarning):
    pass


def u0_exact(x, y, alpha, spec: GridSpec):
    """tau_z^2 on z = B for the homogeneous medium below Omega."""
    dz2 = (spec.B - spec.z0) ** 2
    return dz2 / ((np.asarray(x) - alpha) ** 2 + (np.asarray(y) - spec.d) ** 2 + dz2)


ALPHA_RULES = ("trapezoid", "simpson")


def alpha_rule(alphas: np.ndarray, rule: str = "trapezoid") -> np.ndarray:
    """Quadrature weights on uniformly spaced source positions.

    ``simpson`` is composite Simpson for an even number of intervals; with an
    odd count the last interval falls back to the trapezoid rule.
    """
    alphas = np.asarray(alphas, dtype=float)
    step = (alphas[-1] - alphas[0]) / (alphas.size - 1)
    if not np.allclose(np.diff(alphas), step, rtol=1e-9, atol=1e-12):
        raise ValueError("alpha samples must be uniformly spaced")
    if rule == "trapezoid" or alphas.size < 3:
        return trapezoid_weights(alphas.size, step)
    if rule != "simpson":
        raise ValueError(f"unknown alpha rule {rule!r}")
    n = alphas.size - 1
    even = n - (n % 2)
    w = np.zeros(alphas.size)
    w[: even + 1 : 2] = 2.0
    w[1:even:2] = 4.0
    w[0] = w[even] = 1.0
    w *= step / 3.0
    if n % 2:
        w[-2:] += 0.5 * step
    return w


def project_onto_basis(samples: np.ndarray, alphas: np.ndarray, basis: BasisSet,
                       rule: str = "trapezoid") -> np.ndarray:
    """c_n = int_a^b f(alpha) Phi_n(alpha) d alpha by the given rule over the samples.

    ``samples`` has the alpha axis last; the result replaces it with N
    coefficients.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size < basis.N + 1:
        raise ValueError("need at least N + 1 alpha samples")
    if abs(alphas[0] - basis.a) > 1e-9 or abs(alphas[-1] - basis.b) > 1e-9:
        raise ValueError("alpha samples must span [a, b]")
    w = alpha_rule(alphas, rule)
    Phi = basis.eval(alphas)
    coef = np.asarray(samples, dtype=float) @ (w[:, None] * Phi)
    nrm = np.linalg.norm(coef, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(nrm > 0, np.abs(coef[..., -1]) / nrm, 0.0)
    if basis.N > 1 and np.any(ratio > TRAILING_ENERGY_WARN):
        warnings.warn(f"trailing coefficient carries up to {ratio.max():.2f} of the norm; "
                      "N may be too small for these data", TruncationWarning, stacklevel=2)
    return coef


def synthesize(coef: np.ndarray, alphas: np.ndarray, basis: BasisSet) -> np.ndarray:
    return coef @ basis.eval(alphas).T


def tangential_derivatives(data: TravelTimeData, spec: GridSpec) -> dict:
    """Finite-difference tangential derivatives on the detector lattices.

    Returns ``gx``/``gy`` on the top face (indexed [source, x, y]) and ``gz``
    on each lateral face (indexed [source, s, z]).
    """
    s, z = face_axes(spec, data.detector_step)
    top = data.faces["top"]
    out = {
        "gx": np.gradient(top, s, axis=1, edge_order=2),
        "gy": np.gradient(top, s, axis=2, edge_order=2),
    }
    for name in ("x0", "x1", "y0", "y1"):
        out["gz_" + name] = np.gradient(data.faces[name], z, axis=2, edge_order=2)
    return out


def _to_nodes(values: np.ndarray, c1, c2, t1, t2) -> np.ndarray:
    """Bilinear transfer of per-source face samples [S, n1, n2] to nodes [m1, m2, S]."""
    interp = RegularGridInterpolator((c1, c2), np.moveaxis(values, 0, -1), method="linear")
    A, B = np.meshgrid(t1, t2, indexing="ij")
    pts = np.column_stack([np.clip(A.ravel(), c1[0], c1[-1]), np.clip(B.ravel(), c2[0], c2[-1])])
    return interp(pts).reshape(A.shape + (values.shape[0],))


@dataclass
class ProjectedData:
    """Basis coefficients of the boundary data on the inversion grid.

    G_top, Gx_top, Gy_top are indexed [i, j, n] on z = B + rho; Gtilde covers
    the full grid [i, j, l, n] and is meaningful where ``pinned`` is True.
    """

    spec: GridSpec
    basis: BasisSet
    alphas: np.ndarray
    G_top: np.ndarray
    Gx_top: np.ndarray
    Gy_top: np.ndarray
    Gtilde: np.ndarray
    pinned: np.ndarray
    rule: str = "trapezoid"

    @property
    def weights(self) -> np.ndarray:
        return alpha_rule(self.alphas, self.rule)


def boundary_function(data: TravelTimeData, spec: GridSpec) -> np.ndarray:
    """g~(x, alpha) sampled at the grid nodes, shape [i, j, l, S].

    tau_z^2 from the lateral faces on Gamma, exact u0 on D_B; zero elsewhere.
    """
    derivs = tangential_derivatives(data, spec)
    s, z = face_axes(spec, data.detector_step)
    alphas = data.source_line.alphas
    S = alphas.size
    out = np.zeros(spec.shape + (S,))
    xs, zs = spec.x, spec.z
    gz2 = {name: _to_nodes(derivs["gz_" + name], s, z, xs, zs) ** 2
           for name in ("x0", "x1", "y0", "y1")}
    out[0, :, :, :] = gz2["x0"]
    out[-1, :, :, :] = gz2["x1"]
    out[:, 0, :, :] = gz2["y0"]
    out[:, -1, :, :] = gz2["y1"]
    X, Y = np.meshgrid(spec.x, spec.y, indexing="ij")
    out[:, :, 0, :] = u0_exact(X[..., None], Y[..., None], alphas, spec)
    return out


def prepare(data: TravelTimeData, spec: GridSpec, basis: BasisSet,
            rule: str = "trapezoid") -> ProjectedData:
    """Project g, g_x, g_y on the top face and g~ on Gamma and D_B onto the basis."""
    if abs(data.B - spec.B) > 1e-12 or abs(data.rho - spec.rho) > 1e-12:
        raise ValueError("travel-time data and grid disagree on the domain")
    alphas = data.source_line.alphas
    s, _ = face_axes(spec, data.detector_step)
    derivs = tangential_derivatives(data, spec)
    xs = spec.x
    top = _to_nodes(data.faces["top"], s, s, xs, xs)
    gx = _to_nodes(derivs["gx"], s, s, xs, xs)
    gy = _to_nodes(derivs["gy"], s, s, xs, xs)
    gt = boundary_function(data, spec)
    pinned = spec.pinned_mask()
    Gtilde = np.zeros(spec.shape + (basis.N,))
    Gtilde[pinned] = project_onto_basis(gt[pinned], alphas, basis, rule)
    return ProjectedData(
        spec=spec, basis=basis, alphas=alphas.copy(),
        G_top=project_onto_basis(top, alphas, basis, rule),
        Gx_top=project_onto_basis(gx, alphas, basis, rule),
        Gy_top=project_onto_basis(gy, alphas, basis, rule),
        Gtilde=Gtilde, pinned=pinned, rule=rule,
    )
