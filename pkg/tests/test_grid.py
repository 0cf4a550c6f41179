from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traveltomo.grid import (CoefficientField, GridSpec, ScalarField3, d2dz2, ddx, ddy, ddz,
                             norm_H1h, norm_H2h, norm_L2h)


def field_of(spec, fn, N=1):
    X, Y, Z = spec.mesh()
    vals = np.repeat(fn(X, Y, Z)[..., None], N, axis=3)
    return CoefficientField(spec, vals)


def test_invariants():
    with pytest.raises(ValueError):
        GridSpec(k=100)
    with pytest.raises(ValueError):
        GridSpec(z0=0.5)
    spec = GridSpec(k=10, kz=5, B=0.2, rho=0.5)
    assert np.allclose(spec.z, 0.2 + 0.1 * np.arange(6))
    assert spec.shape == (11, 11, 6)
    mask = spec.pinned_mask()
    assert mask[:, :, 0].all() and not mask[1:-1, 1:-1, 1:].any()


@pytest.mark.parametrize("op,axis", [(ddx, 0), (ddy, 1)])
def test_first_derivative_exact_cases(op, axis):
    spec = GridSpec(k=10, kz=10)
    lin = field_of(spec, lambda *c: c[axis])
    assert np.allclose(op(lin).values, 1.0, atol=1e-12)
    quadf = field_of(spec, lambda *c: c[axis] ** 2)
    coord = spec.mesh()[axis]
    assert np.allclose(op(quadf).values[..., 0], 2 * coord, atol=1e-12)


@pytest.mark.parametrize("op,axis", [(ddx, 0), (ddy, 1)])
def test_first_derivative_taylor_bound(op, axis):
    spec = GridSpec(k=10, kz=10)
    f = field_of(spec, lambda *c: np.sin(np.pi * c[axis]))
    coord = spec.mesh()[axis]
    err = np.abs(op(f).values[..., 0] - np.pi * np.cos(np.pi * coord))
    inner = [slice(None)] * 3
    inner[axis] = slice(1, -1)
    assert err[tuple(inner)].max() < np.pi**3 * spec.h**2 / 6


def test_z_derivatives():
    spec = GridSpec(k=4, kz=10)
    f = field_of(spec, lambda x, y, z: z**2)
    assert np.allclose(d2dz2(f).values, 2.0, atol=1e-9)
    assert np.allclose(ddz(f).values[..., 0], 2 * spec.mesh()[2], atol=1e-12)


def test_norms_zero_and_constant():
    spec = GridSpec(k=10, kz=10, rho=0.8)
    zero = CoefficientField(spec, np.zeros(spec.shape + (3,)))
    assert norm_L2h(zero) == norm_H1h(zero) == norm_H2h(zero) == 0.0
    c = 2.5
    const = CoefficientField(spec, np.full(spec.shape + (1,), c))
    # h^2 times (k+1)^2 transverse nodes
    area = spec.h**2 * (spec.k + 1) ** 2
    assert norm_L2h(const) == pytest.approx(c * math.sqrt(spec.rho * area), rel=1e-12)
    assert norm_H1h(const) == pytest.approx(norm_L2h(const), rel=1e-12)


def test_H2_closed_form_for_z_squared():
    spec = GridSpec(k=10, kz=10)
    f = field_of(spec, lambda x, y, z: z**2)
    area = spec.h**2 * (spec.k + 1) ** 2
    # int z^4, int (2z)^2, int 4, all on the trapezoid rule in z
    w = spec.z_weights()
    z = spec.z
    expect = area * (np.sum(w * z**4) + np.sum(w * 4 * z**2) + np.sum(w * 4.0))
    assert norm_H2h(f) ** 2 == pytest.approx(expect, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_L2h_against_loop_oracle(seed):
    spec = GridSpec(k=5, kz=4)
    vals = np.random.default_rng(seed).normal(size=spec.shape + (3,))
    total = 0.0
    for i in range(spec.k + 1):
        for j in range(spec.k + 1):
            for l in range(spec.kz + 1):
                wz = spec.hz * (0.5 if l in (0, spec.kz) else 1.0)
                total += spec.h**2 * wz * float(np.sum(vals[i, j, l] ** 2))
    assert norm_L2h(CoefficientField(spec, vals)) == pytest.approx(math.sqrt(total), rel=1e-12)


def test_field_shape_checks():
    spec = GridSpec(k=4, kz=4)
    with pytest.raises(ValueError):
        ScalarField3(spec, np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        CoefficientField(spec, np.zeros(spec.shape))
