"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria share cached forward data and reconstructions, so the
whole file takes tens of minutes on a single core.
"""
from __future__ import annotations

import math
import time
import warnings

import numpy as np
import pytest

from traveltomo.basis import build_basis
from traveltomo.config import PipelineConfig
from traveltomo.dataprep import TruncationWarning, prepare, project_onto_basis
from traveltomo.forward import ExtendedGrid, fast_march
from traveltomo.grid import GridSpec
from traveltomo.inversion import (CLAMP_WIDTH, U_FLOOR, InversionProblem, carleman_lemma_check,
                                  homogeneous_u, synthesize_u)
from traveltomo.metrics import dice, half_max_mask
from traveltomo.pipeline import (noisy_data, phantom_on_forward_grid, project_data,
                                 reconstruct_data, run_all, score, simulate_data, true_n)

from conftest import ACCEPTANCE_LINES, analytic_data


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


# ------------------------------------------------------------------ shared data
_clean = {}
_runs = {}


def clean_data(cfg: PipelineConfig):
    key = cfg.digest(("phantom", "inversion_h", "kz", "sources", "detector_step",
                      "forward_step", "forward_pad", "letter_z0", "letter_z1", "smoothing"))
    if key not in _clean:
        _clean[key] = simulate_data(cfg, phantom_on_forward_grid(cfg))
    return _clean[key]


def reconstruct(cfg: PipelineConfig):
    """Metrics and computed n for one configuration, cached per session."""
    key = cfg.digest(tuple(cfg.to_dict()))
    if key not in _runs:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            pd = project_data(cfg, noisy_data(cfg, clean_data(cfg)))
        t0 = time.perf_counter()
        res = reconstruct_data(cfg, pd)
        n = np.sqrt(res.m.values)
        metrics = score(cfg, n, true_n(cfg), res.J_history[-1][1], len(res.J_history) - 1)
        print(f"\n  run {cfg.phantom} N={cfg.N} lambda={cfg.lam} delta={cfg.delta} "
              f"h=1/{cfg.k}: {time.perf_counter() - t0:.0f} s, {metrics}")
        _runs[key] = (metrics, n)
    return _runs[key]


BALL = PipelineConfig()


def exact_W(pd):
    return project_onto_basis(homogeneous_u(pd.spec, pd.alphas), pd.alphas, pd.basis, pd.rule)


@pytest.fixture(scope="module")
def desk8():
    spec = GridSpec(k=7, kz=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return prepare(analytic_data(spec), spec, build_basis(4, -2.0, 3.0), "simpson")


def random_feasible(pd, rng, scale):
    W = exact_W(pd)
    W[~pd.pinned] += scale * rng.standard_normal(W[~pd.pinned].shape)
    W[pd.pinned] = pd.Gtilde[pd.pinned]
    return W


def h1_norm_sq(W, spec: GridSpec) -> float:
    total = np.sum(W**2)
    for axis, step in enumerate((spec.h, spec.h, spec.hz)):
        total += np.sum(np.gradient(W, step, axis=axis) ** 2)
    return float(total * spec.h**2 * spec.hz)


# ------------------------------------------------------------------ criteria
def test_c01_basis_structure():
    t0 = time.perf_counter()
    basis = build_basis(10, -2.0, 3.0)
    M = np.asarray(basis.M)
    diag = np.abs(np.diag(M) - 1).max()
    lower = np.abs(np.tril(M, -1)).max()
    det = abs(np.linalg.det(M) - 1)
    ortho = basis.orthonormality_error()
    dt = time.perf_counter() - t0
    ok = diag < 1e-10 and lower < 1e-10 and det < 1e-8 and ortho < 1e-10 and dt < 1
    report(1, "basis structure", ok, f"diag {diag:.1e}, lower {lower:.1e}, det-1 {det:.1e}, "
           f"ortho {ortho:.1e}, {dt:.2f} s")
    assert ok


def fmm_error(h):
    spec = GridSpec(k=10, kz=10)
    grid = ExtendedGrid.around(spec, h)
    src = np.array([0.5, 0.5, -1.0])
    t0 = time.perf_counter()
    tau = fast_march(np.ones(grid.shape), grid, src, exact_below=spec.B)
    dt = time.perf_counter() - t0
    X, Y, Z = grid.mesh()
    eps = 1e-9
    inside = (X > -eps) & (X < 1 + eps) & (Y > -eps) & (Y < 1 + eps) & (Z > -eps) & (Z < 1 + eps)
    exact = np.sqrt((X - src[0]) ** 2 + (Y - src[1]) ** 2 + (Z - src[2]) ** 2)
    return float(np.max(np.abs(tau[inside] - exact[inside]) / exact[inside])), dt


def test_c02_fmm_accuracy():
    e1, t1 = fmm_error(1 / 30)
    e2, t2 = fmm_error(1 / 60)
    ratio = e1 / e2
    ok = e1 < 0.02 and 1.6 <= ratio <= 2.4 and t1 < 30
    report(2, "FMM accuracy", ok, f"err {e1:.4f} at h=1/30, ratio {ratio:.2f}, "
           f"solve {t1:.1f} s (h=1/60: {t2:.1f} s)")
    assert ok


def random_q(rng, n=201):
    kind = rng.integers(4)
    if kind == 0:
        return rng.uniform(-10, 10, n)
    if kind == 1:
        z = np.linspace(0, 1, n)
        return sum(rng.normal() * np.cos(math.pi * j * z + rng.uniform(0, 6)) for j in range(8))
    if kind == 2:
        q = np.zeros(n)
        q[rng.integers(n)] = rng.exponential()
        return q
    return rng.standard_normal(rng.integers(2, 40))


def test_c03_carleman_inequality():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    failures = 0
    for lam in (0.5, 1.0, 2.0, 4.0):
        for _ in range(1000):
            lhs, rhs = carleman_lemma_check(lam, random_q(rng))
            worst = max(worst, lhs / rhs)
            failures += lhs > rhs * (1 + 1e-6)
    dt = time.perf_counter() - t0
    ok = failures == 0 and dt < 5
    report(3, "Carleman inequality", ok,
           f"{failures} failures in 4000 trials, max lhs/rhs {worst:.4f}, {dt:.1f} s")
    assert ok


def test_c04_gradient(desk8):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(11)
    eps = 1e-6
    for lam in (0.0, 4.0):
        for beta in (0.0, 1e-4):
            pr = InversionProblem(desk8, lam=lam, beta=beta)
            W = random_feasible(desk8, rng, 0.02)
            _, g = pr.value_and_grad(W)
            free = np.argwhere(np.broadcast_to(pr._free[..., None], W.shape))
            for idx in free[rng.choice(len(free), 20, replace=False)]:
                idx = tuple(idx)
                Wp, Wm = W.copy(), W.copy()
                Wp[idx] += eps
                Wm[idx] -= eps
                fd = (pr.evaluate_J(Wp) - pr.evaluate_J(Wm)) / (2 * eps)
                worst = max(worst, abs(g[idx] - fd) / max(abs(fd), 1e-300))
    dt = time.perf_counter() - t0
    ok = worst < 1e-5 and dt < 120
    report(4, "gradient correctness", ok, f"max relative error {worst:.2e}, {dt:.1f} s")
    assert ok


def feasible(pd, W) -> bool:
    # admissible set: u stays clear of the clamp at every free node; pinned
    # values are shared by both members of a pair
    u = synthesize_u(W[~pd.pinned], pd.basis, pd.alphas)
    return bool(u.min() >= U_FLOOR + 10 * CLAMP_WIDTH)


def feasible_pair(pd, rng):
    while True:
        scale = 10 ** rng.uniform(-3, -1.5)
        W1, W2 = random_feasible(pd, rng, scale), random_feasible(pd, rng, scale)
        if feasible(pd, W1) and feasible(pd, W2):
            return W1, W2


def bregman_gaps(pd, lam, pairs, seed):
    pr = InversionProblem(pd, lam=lam, beta=1e-4)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(pairs):
        W1, W2 = feasible_pair(pd, rng)
        J1, g1 = pr.value_and_grad(W1)
        gap = pr.evaluate_J(W2) - J1 - float(np.sum(g1 * (W2 - W1)))
        ratios.append(gap / h1_norm_sq(W2 - W1, pd.spec))
    return np.array(ratios)


def test_c05_convexity(desk8):
    r4 = bregman_gaps(desk8, 4.0, 60, 5)
    r0 = bregman_gaps(desk8, 0.0, 60, 5)
    ok = bool(np.all(r4 > 0))
    report(5, "empirical convexity", ok, f"lambda=4: min gap/|dW|^2 {r4.min():.3e} over "
           f"{r4.size} pairs; lambda=0: {np.count_nonzero(r0 < 0)} violations, "
           f"min {r0.min():.3e}")
    assert ok


def test_c06_ball_reconstruction():
    m, _ = reconstruct(BALL)
    peak = m.computed_contrast
    ok = 1.25 <= peak <= 1.6 and m.centroid_error < 0.15 and m.background_error <= 0.1
    report(6, "ball reconstruction", ok, f"peak n {peak:.3f} (want [1.25, 1.6]), centroid "
           f"error {m.centroid_error:.3f}, background error {m.background_error:.3f}")
    assert ok


def test_c07_lambda_negative_control():
    e4 = reconstruct(BALL)[0].rel_L2_error
    e0 = reconstruct(BALL.replace(lam=0.0))[0].rel_L2_error
    ok = e0 > e4
    report(7, "lambda negative control", ok, f"rel L2 {e0:.4f} at lambda=0, {e4:.4f} at lambda=4")
    assert ok


def test_c08_N_stability():
    errs = {N: reconstruct(BALL.replace(N=N))[0].rel_L2_error for N in (6, 8, 10)}
    spread = max(errs.values()) - min(errs.values())
    ok = spread <= 0.05
    report(8, "N stability", ok, ", ".join(f"N={N}: {e:.4f}" for N, e in errs.items())
           + f", spread {spread:.4f}")
    assert ok


def test_c09_noise_trend():
    e5 = reconstruct(BALL)[0].rel_L2_error
    e1 = reconstruct(BALL.replace(delta=0.01))[0].rel_L2_error
    ok = e5 <= 3 * e1
    report(9, "noise stability trend", ok, f"rel L2 {e5:.4f} at delta=0.05, {e1:.4f} at delta=0.01")
    assert ok


@pytest.mark.parametrize("letter", ["A", "C", "Omega"])
def test_c10_letter_shapes(letter):
    cfg = BALL.replace(phantom=letter, inversion_h=1 / 15)
    _, n = reconstruct(cfg)
    d = dice(half_max_mask(n), true_n(cfg) > 1)
    ok = d >= 0.5
    report(10, f"letter {letter} shape", ok, f"Dice {d:.3f} (want >= 0.5)")
    assert ok


def test_c11_determinism(tmp_path):
    cfg = PipelineConfig(max_iter=100)
    for name in ("a", "b"):
        run_all(cfg, tmp_path / name)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    differ = [str(f) for f in files_a
              if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = files_a == files_b and not differ
    report(11, "determinism", ok, f"{len(files_a)} files compared, {len(differ)} differ")
    assert ok
