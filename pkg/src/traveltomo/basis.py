"""Orthonormal basis {Phi_n(alpha) = Q_n(alpha) e^alpha} of L2(a, b).

The basis is the Gram-Schmidt orthonormalisation of {alpha^n e^alpha}.  Each
Q_n is stored as a Legendre series in the scaled variable

    t = (alpha - c) / s,   c = (a + b) / 2,   s = (b - a) / 2,

which spans the same nested polynomial spaces as the monomials in alpha, so
Gram-Schmidt produces the same functions.  Inner products are evaluated in
closed form: products P_i P_j are linearised into Legendre polynomials with
non-negative coefficients and

    int_{-1}^{1} P_k(t) e^{kappa t} dt = 2 i_k(kappa)

with i_k the modified spherical Bessel function, so there is no cancellation
and no quadrature error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as leg
from scipy.special import spherical_in

MAX_N = 16
GRAM_TOL = 1e-8


class BasisError(ValueError):
    pass


def exact_exp_moment(k: int, a: float, b: float) -> float:
    """Return int_a^b alpha^k e^{2 alpha} d alpha via integration by parts.

    I_0 = (e^{2b} - e^{2a}) / 2 and
    I_k = [alpha^k e^{2 alpha} / 2]_a^b - (k / 2) I_{k-1}.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if not a < b:
        raise ValueError("need a < b")
    ea, eb = math.exp(2.0 * a), math.exp(2.0 * b)
    val = 0.5 * (eb - ea)
    for j in range(1, k + 1):
        val = 0.5 * (b**j * eb - a**j * ea) - 0.5 * j * val
    return val


def _lambda(k: int) -> float:
    # (2k-1)!! / k!
    out = 1.0
    for j in range(1, k + 1):
        out *= (2 * j - 1) / j
    return out


def legendre_exp_gram(N: int, a: float, b: float) -> np.ndarray:
    """Gram matrix G[i, j] = int_a^b P_i(t) P_j(t) e^{2 alpha} d alpha."""
    c, s = 0.5 * (a + b), 0.5 * (b - a)
    kappa = 2.0 * s
    nu = 2.0 * spherical_in(np.arange(2 * N), kappa)
    lam = [_lambda(k) for k in range(2 * N)]
    G = np.zeros((N, N))
    for m in range(N):
        for n in range(m, N):
            tot = 0.0
            # Adams linearisation: P_m P_n = sum_r A_r P_{m+n-2r}, A_r >= 0
            for r in range(min(m, n) + 1):
                k = m + n - 2 * r
                A = (lam[m - r] * lam[r] * lam[n - r] / lam[m + n - r]
                     * (2 * k + 1) / (2 * (m + n - r) + 1))
                tot += A * nu[k]
            G[m, n] = G[n, m] = tot
    return G * s * math.exp(2.0 * c)


@dataclass(frozen=True)
class BasisSet:
    """N orthonormal functions Phi_n = Q_n e^alpha on (a, b).

    ``coeffs[n]`` holds the Legendre coefficients (in t) of Q_n; row n has
    degree exactly n.  ``M[m, n] = <Phi_m, Phi_n'>``.
    """

    a: float
    b: float
    N: int
    coeffs: np.ndarray
    M: np.ndarray
    gram: np.ndarray = field(repr=False)

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.b - self.a)

    def _t(self, alpha):
        return (np.asarray(alpha, dtype=float) - self.center) / self.half_width

    def eval(self, alpha) -> np.ndarray:
        """Phi_n(alpha) for all n; shape alpha.shape + (N,)."""
        return eval_basis(self, alpha)

    def eval_derivative(self, alpha) -> np.ndarray:
        """Phi_n'(alpha) = (Q_n' + Q_n) e^alpha; shape alpha.shape + (N,)."""
        alpha = np.asarray(alpha, dtype=float)
        t = self._t(alpha)
        dcoef = self.derivative_coeffs()
        vals = leg.legval(t, (self.coeffs + dcoef).T)
        return np.moveaxis(np.atleast_1d(vals), 0, -1).reshape(alpha.shape + (self.N,)) \
            * np.exp(alpha)[..., None]

    def derivative_coeffs(self) -> np.ndarray:
        """Legendre coefficients (in t) of dQ_n/d alpha."""
        D = np.zeros_like(self.coeffs)
        for n in range(self.N):
            d = leg.legder(self.coeffs[n]) / self.half_width
            D[n, : d.size] = d
        return D

    def monomial_coeffs(self) -> np.ndarray:
        """Coefficients of Q_n in powers of alpha (row n, column = power).

        Provided for inspection; evaluation never goes through this form.
        """
        out = np.zeros((self.N, self.N))
        c, s = self.center, self.half_width
        for n in range(self.N):
            p_t = leg.leg2poly(self.coeffs[n])  # powers of t
            # substitute t = (alpha - c) / s
            lin = np.polynomial.Polynomial([-c / s, 1.0 / s])
            p = np.polynomial.Polynomial([0.0])
            for j, cj in enumerate(p_t):
                p = p + cj * lin**j
            out[n, : p.coef.size] = p.coef[: self.N]
        return out

    def inner(self, p: np.ndarray, q: np.ndarray) -> float:
        """<sum p_k P_k e^alpha, sum q_k P_k e^alpha> for Legendre coefficient vectors."""
        return float(p @ self.gram @ q)

    def orthonormality_error(self) -> float:
        E = self.coeffs @ self.gram @ self.coeffs.T
        return float(np.abs(E - np.eye(self.N)).max())


def build_basis(N: int, a: float, b: float) -> BasisSet:
    """Gram-Schmidt orthonormalisation of {alpha^n e^alpha}, n < N, on (a, b)."""
    if not 1 <= N <= MAX_N:
        raise BasisError(f"N must be in [1, {MAX_N}], got {N}")
    if not a < b:
        raise BasisError("need a < b")
    G = legendre_exp_gram(N, a, b)
    Q = np.zeros((N, N))
    for n in range(N):
        v = np.zeros(N)
        v[n] = 1.0
        # modified Gram-Schmidt, then one full re-orthogonalisation pass
        for _ in range(2):
            for m in range(n):
                v -= (Q[m] @ G @ v) * Q[m]
        nrm2 = v @ G @ v
        if nrm2 <= 0.0:
            raise BasisError(f"lost positivity at n={n}")
        Q[n] = v / math.sqrt(nrm2)
    err = np.abs(Q @ G @ Q.T - np.eye(N)).max()
    if err > GRAM_TOL:
        raise BasisError(f"Gram matrix off identity by {err:.2e}; N={N} too large")
    basis = BasisSet(a=float(a), b=float(b), N=N, coeffs=Q,
                     M=np.zeros((N, N)), gram=G)
    dQ = basis.derivative_coeffs()
    M = Q @ G @ (dQ + Q).T
    object.__setattr__(basis, "M", M)
    for arr in (Q, M, G):
        arr.setflags(write=False)
    return basis


def eval_basis(basis: BasisSet, alpha) -> np.ndarray:
    """(Phi_0(alpha), ..., Phi_{N-1}(alpha)) by Clenshaw summation of each Q_n."""
    alpha = np.asarray(alpha, dtype=float)
    t = basis._t(alpha)
    vals = leg.legval(t, basis.coeffs.T)
    return np.moveaxis(np.atleast_1d(vals), 0, -1).reshape(alpha.shape + (basis.N,)) \
        * np.exp(alpha)[..., None]
