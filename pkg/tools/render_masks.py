"""Regenerate the letter mask fixtures in src/traveltomo/data/masks.

Each letter is a union of stroked segments and arcs (stroke width 0.15) in
the unit square; pixels whose centre lies within half a stroke width of the
centre line are set.  Row 0 of the raster is the top (largest y).
"""
from pathlib import Path

import numpy as np

SIZE = 64
HALF = 0.075
OUT = Path(__file__).resolve().parents[1] / "src" / "traveltomo" / "data" / "masks"


def seg_dist(P, p0, p1):
    p0, p1 = np.asarray(p0), np.asarray(p1)
    d = p1 - p0
    t = np.clip(((P - p0) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(P - (p0 + t[..., None] * d), axis=-1)


def arc_dist(P, c, r, th0, th1):
    """Distance to the arc of radius r about c for angles in [th0, th1] (degrees)."""
    c = np.asarray(c)
    v = P - c
    ang = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    ang = np.where(ang < th0, ang + 360.0, ang)
    on = ang <= th1
    d_arc = np.abs(np.linalg.norm(v, axis=-1) - r)
    ends = [c + r * np.array([np.cos(np.radians(t)), np.sin(np.radians(t))]) for t in (th0, th1)]
    d_end = np.minimum(*(np.linalg.norm(P - e, axis=-1) for e in ends))
    return np.where(on, d_arc, d_end)


def pixel_centres():
    s = (np.arange(SIZE) + 0.5) / SIZE
    X, Y = np.meshgrid(s, s[::-1])  # row 0 at the top
    return np.stack([X, Y], axis=-1)


def letter_a(P):
    d = np.minimum(seg_dist(P, (0.2, 0.18), (0.5, 0.85)), seg_dist(P, (0.8, 0.18), (0.5, 0.85)))
    return np.minimum(d, seg_dist(P, (0.32, 0.40), (0.68, 0.40)))


def letter_c(P):
    return arc_dist(P, (0.5, 0.5), 0.3, 45.0, 315.0)


def letter_omega(P):
    c, r = (0.5, 0.55), 0.27
    d = arc_dist(P, c, r, -60.0, 240.0)
    for sgn in (1.0, -1.0):
        end = (0.5 + sgn * r * np.cos(np.radians(60.0)), 0.55 - r * np.sin(np.radians(60.0)))
        foot = (0.5 + sgn * 0.15, 0.2)
        d = np.minimum(d, seg_dist(P, end, foot))
        d = np.minimum(d, seg_dist(P, foot, (0.5 + sgn * 0.32, 0.2)))
    return d


def write_pbm(path, mask):
    rows = "\n".join(" ".join(str(int(v)) for v in row) for row in mask)
    path.write_text(f"P1\n# letter mask, row 0 = top of the unit square\n{SIZE} {SIZE}\n{rows}\n")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    P = pixel_centres()
    for name, fn in (("A", letter_a), ("C", letter_c), ("Omega", letter_omega)):
        write_pbm(OUT / f"{name}.pbm", fn(P) <= HALF)
        print(name, int((fn(P) <= HALF).sum()), "pixels")
