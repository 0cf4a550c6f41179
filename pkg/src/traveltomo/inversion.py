"""Carleman-weighted least squares for the coefficient field W and recovery of m.

Unknown: W[i, j, l, n], the coefficients of u(x, alpha) = tau_z^2 in the basis
Phi_n.  For every interior transverse node, every z-level and every alpha
quadrature node the integrands

    A_x(alpha) = g_x(top, alpha) - int_z^{B+rho} u_x / (2 sqrt(u)) dt

(and the y analogue) are formed; the residual of the projected equation is

    R_n = (M W)_n + int_a^b Phi_n(alpha) d/d alpha [A_x^2 + A_y^2] d alpha.

The cost is ||R e^{lambda (z - B - rho)}||^2 in the semidiscrete L2 norm plus
beta ||W||^2 in the H2 norm.  The gradient is the exact adjoint of this
discrete computation.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataprep import ProjectedData, project_onto_basis
from .grid import (
    CoefficientField,
    GridSpec,
    ScalarField3,
    apply_along,
    first_derivative_matrix,
    norm_H1h,
    second_derivative_matrix,
)

log = logging.getLogger(__name__)

U_FLOOR = 0.05
CLAMP_WIDTH = 1e-3
CLAMP_WARN_FRACTION = 0.10


# "derivative": P_n = int Phi_n d/d alpha [A_x^2 + A_y^2]; "literal": no alpha-derivative
P_FORMS = ("derivative", "literal")


class ClampWarning(UserWarning):
    pass


def smooth_clamp(u, floor=U_FLOOR, width=CLAMP_WIDTH):
    """floor + width * softplus((u - floor) / width), with first and second derivatives."""
    x = (u - floor) / width
    v = floor + width * np.logaddexp(0.0, x)
    d1 = expit(x)
    d2 = d1 * (1.0 - d1) / width
    return v, d1, d2


def carleman_weight(z, lam: float):
    """The weight e^{2 lambda z}."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return np.exp(2.0 * lam * np.asarray(z, dtype=float))


def _rev_cumtrapz(f, step, axis):
    """int_{z_l}^{z_top} f dz by the trapezoid rule along ``axis`` (top value 0)."""
    f = np.moveaxis(f, axis, 0)
    seg = 0.5 * step * (f[:-1] + f[1:])
    out = np.zeros_like(f)
    out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return np.moveaxis(out, 0, axis)


def _rev_cumtrapz_adjoint(g, step, axis):
    g = np.moveaxis(g, axis, 0)
    segbar = np.cumsum(g[:-1], axis=0)
    out = np.zeros_like(g)
    out[:-1] += 0.5 * step * segbar
    out[1:] += 0.5 * step * segbar
    return np.moveaxis(out, 0, axis)


@dataclass
class InversionProblem:
    data: ProjectedData
    lam: float = 4.0
    beta: float = 1e-4
    u_floor: float = U_FLOOR
    R: float = math.inf
    grad_tol: float = 1e-6
    max_iter: int = 2000
    clamp_width: float = CLAMP_WIDTH
    gauss_points: int = 0
    form: str = "derivative"

    def __post_init__(self):
        if self.form not in P_FORMS:
            raise ValueError(f"form must be one of {P_FORMS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.u_floor <= 0:
            raise ValueError("u_floor must be positive")
        spec = self.spec
        if spec.k < 2 or spec.kz < 2:
            raise ValueError("need k >= 2 and kz >= 2")
        basis = self.data.basis
        if self.gauss_points > 0:
            al, self._wq = gauss_rule(basis.a, basis.b, self.gauss_points)
        else:
            al, self._wq = self.data.alphas, self.data.weights
        self._alphas = al
        self._Phi = basis.eval(al)
        self._dPhi = basis.eval_derivative(al)
        self._M = np.array(basis.M)
        inner = (slice(1, -1), slice(1, -1))
        self._gx = self.data.Gx_top[inner] @ self._Phi.T
        self._gxa = self.data.Gx_top[inner] @ self._dPhi.T
        self._gy = self.data.Gy_top[inner] @ self._Phi.T
        self._gya = self.data.Gy_top[inner] @ self._dPhi.T
        z = spec.z
        self._wz = spec.z_weights()
        # weight shifted so that its maximum (at the top face) is one
        self._omega2 = np.exp(2.0 * self.lam * (z - spec.B - spec.rho))
        # the same constant factor scales the penalty, so the minimiser is unchanged
        self._beta_eff = self.beta * math.exp(-2.0 * self.lam * (spec.B + spec.rho))
        self._res_w = spec.h**2 * self._wz * self._omega2
        self._free = ~self.data.pinned

    @property
    def spec(self) -> GridSpec:
        return self.data.spec

    @property
    def N(self) -> int:
        return self.data.basis.N

    @property
    def weight_scale(self) -> float:
        """e^{2 lambda (B + rho)}; J times this is the functional with the unshifted weight."""
        return math.exp(2.0 * self.lam * (self.spec.B + self.spec.rho))

    # ----------------------------------------------------------------- pieces
    def _transverse(self, W):
        h = self.spec.h
        Wi = W[1:-1, 1:-1]
        Wx = (W[2:, 1:-1] - W[:-2, 1:-1]) / (2.0 * h)
        Wy = (W[1:-1, 2:] - W[1:-1, :-2]) / (2.0 * h)
        return Wi, Wx, Wy

    def _forward(self, W):
        """All intermediates of the residual at interior transverse nodes."""
        hz = self.spec.hz
        Phi, dPhi = self._Phi, self._dPhi
        Wi, Wx, Wy = self._transverse(W)
        c = {}
        u = Wi @ Phi.T
        c["ua"] = Wi @ dPhi.T
        c["v"], c["v1"], c["v2"] = smooth_clamp(u, self.u_floor, self.clamp_width)
        c["clamped"] = float(np.mean(u < self.u_floor))
        s = np.sqrt(c["v"])
        c["s"] = s
        literal = self.form == "literal"
        for ax, Wd, g, ga in (("x", Wx, self._gx, self._gxa), ("y", Wy, self._gy, self._gya)):
            ud = Wd @ Phi.T
            f = ud / (2.0 * s)
            A = g[:, :, None, :] - _rev_cumtrapz(f, hz, axis=2)
            c["u" + ax], c["A" + ax] = ud, A
            if not literal:
                uda = Wd @ dPhi.T
                fa = uda / (2.0 * s) - ud * c["v1"] * c["ua"] / (4.0 * s**3)
                c["u" + ax + "a"] = uda
                c["A" + ax + "a"] = ga[:, :, None, :] - _rev_cumtrapz(fa, hz, axis=2)
        if literal:
            P = ((c["Ax"] ** 2 + c["Ay"] ** 2) * self._wq) @ Phi
        else:
            E = c["Ax"] * c["Axa"] + c["Ay"] * c["Aya"]
            P = (2.0 * E * self._wq) @ Phi
        c["P"] = P
        c["R"] = Wi @ self._M.T + P
        return c

    def apply_P(self, W: np.ndarray) -> np.ndarray:
        """P at interior transverse nodes, shape [k-1, k-1, kz+1, N]."""
        c = self._forward(np.asarray(W, dtype=float))
        if c["clamped"] > CLAMP_WARN_FRACTION:
            warnings.warn(f"u below u_floor on {100 * c['clamped']:.0f}% of evaluations",
                          ClampWarning, stacklevel=2)
        return c["P"]

    def residual(self, W: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(W, dtype=float))["R"]

    def _reg_terms(self, W):
        s = self.spec
        Dx = first_derivative_matrix(s.k + 1, s.h)
        Dz = first_derivative_matrix(s.kz + 1, s.hz)
        Dzz = second_derivative_matrix(s.kz + 1, s.hz)
        return ((Dx, 0), (Dx, 1), (None, None), (Dz, 2), (Dzz, 2))

    def _reg_value_grad(self, W, need_grad=True):
        s = self.spec
        wz = s.h**2 * s.z_weights()[None, None, :, None]
        val = 0.0
        grad = np.zeros_like(W) if need_grad else None
        for D, axis in self._reg_terms(W):
            DW = W if D is None else apply_along(D, W, axis)
            val += float(np.sum(wz * DW**2))
            if need_grad:
                g = 2.0 * wz * DW
                grad += g if D is None else apply_along(D.T, g, axis)
        return val, grad

    # ------------------------------------------------------------- functional
    def evaluate_J(self, W: np.ndarray) -> float:
        W = np.asarray(W, dtype=float)
        R = self._forward(W)["R"]
        val = float(np.sum(self._res_w[None, None, :, None] * R**2))
        if self.beta > 0:
            val += self._beta_eff * self._reg_value_grad(W, need_grad=False)[0]
        return val

    def value_and_grad(self, W: np.ndarray):
        W = np.asarray(W, dtype=float)
        hz, h = self.spec.hz, self.spec.h
        Phi, dPhi = self._Phi, self._dPhi
        c = self._forward(W)
        R = c["R"]
        rw = self._res_w[None, None, :, None]
        val = float(np.sum(rw * R**2))
        Rb = 2.0 * rw * R
        Wib = Rb @ self._M
        Eb = 2.0 * (Rb @ Phi.T) * self._wq
        s, v1, v2, ua = c["s"], c["v1"], c["v2"], c["ua"]
        sb = np.zeros_like(s)
        v1b = np.zeros_like(s)
        uab = np.zeros_like(s)
        Wd_bar = {}
        for ax in ("x", "y"):
            ud, A = c["u" + ax], c["A" + ax]
            if self.form == "literal":
                fb = _rev_cumtrapz_adjoint(-(Eb * A), hz, axis=2)
                sb += -fb * ud / (2.0 * s**2)
                Wd_bar[ax] = (fb / (2.0 * s)) @ Phi
                continue
            uda, Aa = c["u" + ax + "a"], c["A" + ax + "a"]
            fb = _rev_cumtrapz_adjoint(-(Eb * Aa), hz, axis=2)
            fab = _rev_cumtrapz_adjoint(-(Eb * A), hz, axis=2)
            inv_s3 = 1.0 / s**3
            udb = fb / (2.0 * s) - fab * v1 * ua * inv_s3 / 4.0
            udab = fab / (2.0 * s)
            sb += (-fb * ud / (2.0 * s**2) - fab * uda / (2.0 * s**2)
                   + 0.75 * fab * ud * v1 * ua / s**4)
            v1b += -fab * ud * ua * inv_s3 / 4.0
            uab += -fab * ud * v1 * inv_s3 / 4.0
            Wd_bar[ax] = udb @ Phi + udab @ dPhi
        vb = sb / (2.0 * s)
        ub = vb * v1 + v1b * v2
        Wib += ub @ Phi + uab @ dPhi
        grad = np.zeros_like(W)
        grad[1:-1, 1:-1] += Wib
        gx = Wd_bar["x"] / (2.0 * h)
        grad[2:, 1:-1] += gx
        grad[:-2, 1:-1] -= gx
        gy = Wd_bar["y"] / (2.0 * h)
        grad[1:-1, 2:] += gy
        grad[1:-1, :-2] -= gy
        if self.beta > 0:
            rv, rg = self._reg_value_grad(W)
            val += self._beta_eff * rv
            grad += self._beta_eff * rg
        grad[~self._free] = 0.0
        return val, grad

    def gradient_J(self, W: np.ndarray) -> np.ndarray:
        return self.value_and_grad(W)[1]

    def metric(self) -> np.ndarray:
        """Nodal weights h^2 w_z of the L2h inner product, broadcastable to W."""
        return (self.spec.h**2 * self._wz)[None, None, :, None]


# ---------------------------------------------------------------- utilities
def gauss_rule(a: float, b: float, n: int):
    """Gauss-Legendre nodes and weights on [a, b]."""
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def synthesize_u(W, basis, alpha, u_floor: float | None = None, width: float = CLAMP_WIDTH):
    """u(node, alpha) = sum_n W_n Phi_n(alpha), optionally through the smooth clamp."""
    vals = np.asarray(W, dtype=float) @ basis.eval(alpha).T
    if u_floor is None:
        return vals
    return smooth_clamp(vals, u_floor, width)[0]


def homogeneous_u(spec: GridSpec, alphas: np.ndarray) -> np.ndarray:
    """tau_z^2 for m = 1: (z - z0)^2 / |x - x_alpha|^2 at every node, shape [i, j, l, S]."""
    X, Y, Z = spec.mesh()
    X, Y, Z = X[..., None], Y[..., None], Z[..., None]
    dz2 = (Z - spec.z0) ** 2
    return dz2 / ((X - alphas) ** 2 + (Y - spec.d) ** 2 + dz2)


def initialize_W(spec: GridSpec, basis, data: ProjectedData) -> CoefficientField:
    """Project the homogeneous-medium u onto the basis, then pin the boundary data."""
    W = project_onto_basis(homogeneous_u(spec, data.alphas), data.alphas, basis, data.rule)
    W[data.pinned] = data.Gtilde[data.pinned]
    return CoefficientField(spec, W)


def recover_m(W, data: ProjectedData, u_floor: float = U_FLOOR,
              width: float = CLAMP_WIDTH, floor: bool = True,
              gauss_points: int = 0, known_boundary: bool = True) -> ScalarField3:
    """m = u + A_x^2 + A_y^2 at every node, averaged over alpha, floored at 1.

    With ``known_boundary`` the lateral faces and the bottom face take the
    a priori value m = 1 (the medium is homogeneous outside the cylinder over
    (0, 1)^2 and below z = B).
    """
    spec, basis = data.spec, data.basis
    W = W.values if isinstance(W, CoefficientField) else np.asarray(W, dtype=float)
    if gauss_points > 0:
        alphas, wq = gauss_rule(basis.a, basis.b, gauss_points)
    else:
        alphas, wq = data.alphas, data.weights
    Phi = basis.eval(alphas)
    Dx = first_derivative_matrix(spec.k + 1, spec.h)
    v = smooth_clamp(W @ Phi.T, u_floor, width)[0]
    s = np.sqrt(v)
    total = v.copy()
    for axis, G in ((0, data.Gx_top), (1, data.Gy_top)):
        ud = apply_along(Dx, W, axis) @ Phi.T
        A = (G @ Phi.T)[:, :, None, :] - _rev_cumtrapz(ud / (2.0 * s), spec.hz, axis=2)
        total += A**2
    m = (total @ wq) / (basis.b - basis.a)
    if floor:
        m = np.maximum(m, 1.0)
    if known_boundary:
        m[data.pinned] = 1.0
    return ScalarField3(spec, m)


def carleman_lemma_check(lam: float, q, B: float = 0.0, rho: float = 1.0, refine: int = 4096):
    """Both sides of int (int_z^{B+rho} |q|) e^{2 lam z} dz <= (1/2lam) int |q| e^{2 lam z} dz.

    ``q`` is sampled on a uniform grid of [B, B + rho] and read as the
    piecewise-linear interpolant of |q|; the integrals use the trapezoid rule
    on a grid refined to at least ``refine`` intervals.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    q = np.abs(np.asarray(q, dtype=float))
    if q.size < 2:
        raise ValueError("need at least two samples")
    factor = max(1, -(-refine // (q.size - 1)))
    n = (q.size - 1) * factor + 1
    z = np.linspace(B, B + rho, n)
    q = np.interp(z, np.linspace(B, B + rho, q.size), q)
    step = rho / (n - 1)
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    phi = carleman_weight(z - B - rho, lam)  # common factor e^{2 lam (B+rho)} cancels
    inner = _rev_cumtrapz(q, step, axis=0)
    lhs = float(np.sum(w * inner * phi))
    rhs = float(np.sum(w * q * phi)) / (2.0 * lam)
    scale = math.exp(2.0 * lam * (B + rho))
    return lhs * scale, rhs * scale


# ---------------------------------------------------------------- minimizer
@dataclass
class ReconstructionResult:
    W: CoefficientField
    m: ScalarField3
    n: ScalarField3
    J_history: list = field(default_factory=list)
    converged: bool = False
    message: str = ""


def _armijo_descent(fun, x0, metric, grad_tol, max_iter, step0, fixed_step, history, callback):
    """Gradient descent along the L2h-Riesz gradient with Armijo backtracking."""
    x = x0.copy()
    f, g = fun(x)
    step = step0
    t0 = time.perf_counter()
    history.append((0, f, float(np.abs(g).max()), 0.0, 0.0))
    for it in range(1, max_iter + 1):
        gmax = float(np.abs(g).max())
        if gmax < grad_tol:
            return x, True, "gradient tolerance reached"
        d = -g / metric
        slope = float(g @ d)
        if fixed_step:
            x = x + step * d
            f, g = fun(x)
        else:
            trial = min(2.0 * step, 1e12) if it > 1 else step
            while True:
                xn = x + trial * d
                fn, gn = fun(xn)
                if fn <= f + 1e-4 * trial * slope:
                    break
                trial *= 0.5
                if trial < 1e-14 * step0:
                    return x, False, "line search failed"
            x, f, g, step = xn, fn, gn, trial
        history.append((it, f, float(np.abs(g).max()), step, time.perf_counter() - t0))
        if callback is not None:
            callback(it, f)
    return x, False, "iteration cap reached"


def minimize(problem: InversionProblem, W0, method: str = "lbfgs", step0: float = 1e-2,
             fixed_step: bool = False, callback=None) -> ReconstructionResult:
    """Minimise J over the free coefficients starting from ``W0``.

    ``method="gd"`` is gradient descent with Armijo backtracking (halving,
    first trial step ``step0``, then twice the last accepted step);
    ``fixed_step=True`` turns it into the plain fixed-step iteration.
    ``method="lbfgs"`` uses scipy's L-BFGS-B on the same value and gradient.
    Both stop when the max-norm of the gradient drops below ``grad_tol`` or
    after ``max_iter`` iterations.
    """
    W0 = W0.values if isinstance(W0, CoefficientField) else np.asarray(W0, dtype=float)
    base = W0.copy()
    free = np.broadcast_to(problem._free[..., None], base.shape)
    base[problem.data.pinned] = problem.data.Gtilde[problem.data.pinned]
    metric = np.broadcast_to(problem.metric(), base.shape)[free]
    calls = {"n": 0}

    def unpack(x):
        W = base.copy()
        W[free] = x
        return W

    def fun(x):
        calls["n"] += 1
        val, grad = problem.value_and_grad(unpack(x))
        return val, grad[free]

    history: list = []
    x0 = base[free].copy()
    if method == "gd":
        x, converged, msg = _armijo_descent(fun, x0, metric, problem.grad_tol, problem.max_iter,
                                            step0, fixed_step, history, callback)
    elif method == "lbfgs":
        from scipy.optimize import minimize as sp_minimize

        t0 = time.perf_counter()
        f0, g0 = fun(x0)
        history.append((0, f0, float(np.abs(g0).max()), 0.0, 0.0))
        # work in variables scaled by the L2h metric so the problem is well scaled
        sq = np.sqrt(metric)

        def scaled(y):
            val, g = fun(y / sq)
            return val, g / sq

        def cb(y):
            it = len(history)
            val, g = fun(y / sq)
            history.append((it, val, float(np.abs(g).max()), 0.0, time.perf_counter() - t0))
            if callback is not None:
                callback(it, val)

        res = sp_minimize(scaled, x0 * sq, jac=True, method="L-BFGS-B", callback=cb,
                          options={"maxiter": problem.max_iter, "maxcor": 20,
                                   "gtol": 0.0, "ftol": 0.0,
                                   "maxfun": 4 * problem.max_iter})
        x = res.x / sq
        _, gfin = fun(x)
        converged = float(np.abs(gfin).max()) < problem.grad_tol
        msg = str(res.message)
    else:
        raise ValueError(f"unknown method {method!r}")
    W = unpack(x)
    m = recover_m(W, problem.data, problem.u_floor, problem.clamp_width,
                  gauss_points=problem.gauss_points)
    spec = problem.spec
    result = ReconstructionResult(
        W=CoefficientField(spec, W), m=m, n=ScalarField3(spec, np.sqrt(m.values)),
        J_history=history, converged=bool(converged), message=msg,
    )
    log.info("minimize(%s): %d iterations, %d evaluations, J=%.6e, %s",
             method, len(history) - 1, calls["n"], history[-1][1], msg)
    return result


def diagnostic_radius(W: CoefficientField) -> float:
    """||W||_{H1h}; compared against R for reporting only."""
    return norm_H1h(W)
