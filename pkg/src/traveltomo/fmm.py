"""First-order fast marching for |grad tau| = sqrt(m) on a regular 3-D grid."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

FAR, TRIAL, KNOWN = 0, 1, 2


@njit(cache=True, nogil=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if keys[p] <= keys[i]:
            break
        keys[p], keys[i] = keys[i], keys[p]
        vals[p], vals[i] = vals[i], vals[p]
        i = p
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(keys, vals, size):
    key, val = keys[0], vals[0]
    size -= 1
    keys[0], vals[0] = keys[size], vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        if l + 1 < size and keys[l + 1] < keys[l]:
            c = l + 1
        if keys[i] <= keys[c]:
            break
        keys[c], keys[i] = keys[i], keys[c]
        vals[c], vals[i] = vals[i], vals[c]
        i = c
    return key, val, size


@njit(cache=True, nogil=True)
def _solve_local(tau, state, slow, i, j, l, h):
    nx, ny, nz = tau.shape
    a = np.empty(3)
    na = 0
    # smallest accepted neighbour along each axis
    for ax in range(3):
        best = np.inf
        for sgn in (-1, 1):
            ii, jj, ll = i, j, l
            if ax == 0:
                ii += sgn
                if ii < 0 or ii >= nx:
                    continue
            elif ax == 1:
                jj += sgn
                if jj < 0 or jj >= ny:
                    continue
            else:
                ll += sgn
                if ll < 0 or ll >= nz:
                    continue
            if state[ii, jj, ll] == KNOWN and tau[ii, jj, ll] < best:
                best = tau[ii, jj, ll]
        if best < np.inf:
            a[na] = best
            na += 1
    a = np.sort(a[:na])
    fh = slow[i, j, l] * h
    t = a[0] + fh
    if na >= 2 and t > a[1]:
        s1 = a[0] + a[1]
        s2 = a[0] * a[0] + a[1] * a[1]
        disc = s1 * s1 - 2.0 * (s2 - fh * fh)
        t = 0.5 * (s1 + math.sqrt(max(disc, 0.0)))
        if na == 3 and t > a[2]:
            s1 += a[2]
            s2 += a[2] * a[2]
            disc = s1 * s1 - 3.0 * (s2 - fh * fh)
            t = (s1 + math.sqrt(max(disc, 0.0))) / 3.0
    return t


@njit(cache=True, nogil=True)
def _march(slow, h, tau, state):
    """Run fast marching from the KNOWN nodes already set in ``state``.

    Returns the flat indices of nodes in acceptance order (initial KNOWN nodes
    first) and a success flag.
    """
    nx, ny, nz = tau.shape
    n = nx * ny * nz
    cap = 7 * n + 64
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    size = 0
    order = np.empty(n, dtype=np.int64)
    n_acc = 0
    for idx in range(n):
        i = idx // (ny * nz)
        j = (idx // nz) % ny
        l = idx % nz
        if state[i, j, l] == KNOWN:
            order[n_acc] = idx
            n_acc += 1
    for q in range(n_acc):
        idx = order[q]
        i = idx // (ny * nz)
        j = (idx // nz) % ny
        l = idx % nz
        for d in range(6):
            ii, jj, ll = i, j, l
            if d == 0:
                ii -= 1
            elif d == 1:
                ii += 1
            elif d == 2:
                jj -= 1
            elif d == 3:
                jj += 1
            elif d == 4:
                ll -= 1
            else:
                ll += 1
            if ii < 0 or ii >= nx or jj < 0 or jj >= ny or ll < 0 or ll >= nz:
                continue
            if state[ii, jj, ll] == KNOWN:
                continue
            t = _solve_local(tau, state, slow, ii, jj, ll, h)
            if t < tau[ii, jj, ll]:
                tau[ii, jj, ll] = t
                state[ii, jj, ll] = TRIAL
                size = _heap_push(keys, vals, size, t, (ii * ny + jj) * nz + ll)
    while size > 0:
        t, idx, size = _heap_pop(keys, vals, size)
        i = idx // (ny * nz)
        j = (idx // nz) % ny
        l = idx % nz
        if state[i, j, l] == KNOWN or t > tau[i, j, l]:
            continue  # stale heap entry
        state[i, j, l] = KNOWN
        order[n_acc] = idx
        n_acc += 1
        for d in range(6):
            ii, jj, ll = i, j, l
            if d == 0:
                ii -= 1
            elif d == 1:
                ii += 1
            elif d == 2:
                jj -= 1
            elif d == 3:
                jj += 1
            elif d == 4:
                ll -= 1
            else:
                ll += 1
            if ii < 0 or ii >= nx or jj < 0 or jj >= ny or ll < 0 or ll >= nz:
                continue
            if state[ii, jj, ll] == KNOWN:
                continue
            tn = _solve_local(tau, state, slow, ii, jj, ll, h)
            if tn < tau[ii, jj, ll]:
                tau[ii, jj, ll] = tn
                state[ii, jj, ll] = TRIAL
                size = _heap_push(keys, vals, size, tn, (ii * ny + jj) * nz + ll)
    return order, n_acc == n


class FastMarchError(RuntimeError):
    pass


def fast_march_raw(m: np.ndarray, origin, h: float, source, return_order: bool = False):
    """Travel time from ``source`` on the grid ``origin + h * index``.

    ``m`` holds the squared index at the nodes.  The 3x3x3 block of nodes
    around the node nearest to the source is initialised with the exact
    straight-ray time (the medium is homogeneous there).
    """
    m = np.ascontiguousarray(m, dtype=float)
    if np.any(m < 1.0 - 1e-12):
        raise ValueError("m must be >= 1 everywhere")
    origin = np.asarray(origin, dtype=float)
    src = np.asarray(source, dtype=float)
    shape = np.array(m.shape)
    rel = (src - origin) / h
    if np.any(rel < -1e-9) or np.any(rel > shape - 1 + 1e-9):
        raise ValueError("source outside the computational grid")
    slow = np.sqrt(m)
    tau = np.full(m.shape, np.inf)
    state = np.zeros(m.shape, dtype=np.int8)
    c = np.clip(np.rint(rel).astype(int), 0, shape - 1)
    lo = np.maximum(c - 1, 0)
    hi = np.minimum(c + 2, shape)
    ii, jj, ll = np.meshgrid(*(np.arange(lo[d], hi[d]) for d in range(3)), indexing="ij")
    pts = origin + h * np.stack([ii, jj, ll], axis=-1)
    tau[ii, jj, ll] = slow[c[0], c[1], c[2]] * np.linalg.norm(pts - src, axis=-1)
    state[ii, jj, ll] = KNOWN
    order, ok = _march(slow, h, tau, state)
    if not ok:
        raise FastMarchError("narrow band emptied before all nodes were accepted")
    if return_order:
        return tau, order
    return tau
