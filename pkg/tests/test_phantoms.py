from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.ndimage import label

from traveltomo.grid import GridSpec
from traveltomo.phantoms import (LETTERS, PhantomSpec, letter_spec, make_ball, make_letter,
                                 make_phantom, phantom_m, read_pbm)


def write_pbm(path, mask):
    h, w = mask.shape
    rows = "\n".join(" ".join("1" if v else "0" for v in row) for row in mask)
    path.write_text(f"P1\n{w} {h}\n{rows}\n")
    return str(path)


def test_ball_center_and_outside():
    spec = GridSpec(k=10, kz=10)
    m = make_ball(PhantomSpec(), spec).values
    assert m[5, 5, 5] == pytest.approx(2.25)
    X, Y, Z = spec.mesh()
    far = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2) > 0.2
    assert np.all(m[far] == 1.0)


def test_smoothed_ball_support():
    ps = PhantomSpec(smoothing=0.05)
    pts = np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.76], [0.5, 0.5, 0.74]])
    m = phantom_m(ps, *pts.T)
    assert m[0] == pytest.approx(2.25)
    assert m[1] == 1.0
    assert 1.0 < m[2] < 2.25


def ball_node_volume(k):
    spec = GridSpec(k=k, kz=k)
    return np.count_nonzero(make_ball(PhantomSpec(), spec).values > 1) * spec.h**3


def test_ball_volume_lattice_bound_at_h15():
    # every counted node lies within half a cell diagonal of the sphere
    h = 1 / 15
    band = math.sqrt(3) / 2 * h
    vol = ball_node_volume(15)
    assert 4 / 3 * math.pi * (0.2 - band) ** 3 < vol < 4 / 3 * math.pi * (0.2 + band) ** 3


@pytest.mark.parametrize("k", [30, 60])
def test_ball_volume_converges(k):
    assert ball_node_volume(k) == pytest.approx(4 / 3 * math.pi * 0.2**3, rel=0.05)


def test_ball_touching_boundary_rejected():
    with pytest.raises(ValueError):
        make_ball(PhantomSpec(center=(0.15, 0.5, 0.5)), GridSpec())
    with pytest.raises(ValueError):
        PhantomSpec(n_inclusion=0.9)


def test_empty_mask(tmp_path):
    path = write_pbm(tmp_path / "empty.pbm", np.zeros((8, 8), bool))
    ps = PhantomSpec(kind="letter", mask_path=path)
    X, Y, Z = GridSpec().mesh()
    assert np.all(phantom_m(ps, X, Y, Z) == 1.0)
    with pytest.raises(ValueError):
        make_letter(ps, GridSpec())


def test_full_mask_full_range(tmp_path):
    path = write_pbm(tmp_path / "full.pbm", np.ones((8, 8), bool))
    ps = PhantomSpec(kind="letter", mask_path=path, z_extent=(0.0, 1.0))
    X, Y, Z = GridSpec().mesh()
    m = phantom_m(ps, X, Y, Z)
    assert np.all(m[1:-1, 1:-1, 1:-1] == 2.25)


@pytest.mark.parametrize("letter", sorted(LETTERS))
def test_letters_valid(letter):
    spec = GridSpec(k=15, kz=15)
    m = make_phantom(letter_spec(letter), spec).values
    assert m.max() == pytest.approx(2.25)
    assert np.all(m[0] == 1) and np.all(m[-1] == 1) and np.all(m[:, :, 0] == 1)


def test_A_has_interior_void():
    spec = GridSpec(k=30, kz=10)
    m = make_letter(letter_spec("A"), spec).values
    slab = m[:, :, 5] > 1
    _, n_bg = label(~slab)
    assert n_bg >= 2
    _, n_fg = label(slab)
    assert n_fg == 1


def test_C_background_is_connected():
    spec = GridSpec(k=30, kz=10)
    m = make_letter(letter_spec("C"), spec).values
    _, n_bg = label(~(m[:, :, 5] > 1))
    assert n_bg == 1


def test_pbm_reader_errors(tmp_path):
    bad = tmp_path / "bad.pbm"
    bad.write_text("P2\n2 2\n0 1 1 0\n")
    with pytest.raises(ValueError):
        read_pbm(bad)
    bad.write_text("P1\n2 2\n0 1 1\n")
    with pytest.raises(ValueError):
        read_pbm(bad)
