"""Hot loops over run-length encoded masks.

Every kernel exists twice: a ``*_numba`` loop compiled with ``@njit`` and a
``*_numpy`` vectorized twin.  The unsuffixed names are bound to one of them
at import time (see :mod:`mapalign._accel`).  Both variants take and return
plain int64/uint8 arrays so they can be swapped freely and cross-checked.

Run counts follow the column-major convention: ``counts[0]`` is a background
run (possibly 0), then runs alternate foreground/background.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "encode_runs",
    "decode_runs",
    "intersect_runs",
    "pairwise_intersections",
    "pack_counts",
    "BACKEND",
]


# -- encode ------------------------------------------------------------------

@njit
def encode_runs_numba(flat):
    n = flat.shape[0]
    if n == 0:
        return np.zeros(1, dtype=np.int64)
    # flat holds 0/1 bytes; a branch-free change count sizes the output exactly
    first = 1 if flat[0] != 0 else 0
    changes = 0
    for i in range(1, n):
        changes += flat[i] != flat[i - 1]
    out = np.empty(changes + 1 + first, dtype=np.int64)
    k = 0
    if first:
        out[0] = 0
        k = 1
    start = 0
    for i in range(1, n):
        if flat[i] != flat[i - 1]:
            out[k] = i - start
            k += 1
            start = i
    out[k] = n - start
    return out


def encode_runs_numpy(flat):
    flat = np.asarray(flat).astype(bool, copy=False)
    n = flat.shape[0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    counts = np.diff(bounds).astype(np.int64)
    if n and flat[0]:
        counts = np.concatenate((np.zeros(1, np.int64), counts))
    return counts


# -- decode ------------------------------------------------------------------

@njit
def decode_runs_numba(counts, n):
    out = np.zeros(n, dtype=np.uint8)
    pos = 0
    for k in range(counts.shape[0]):
        c = counts[k]
        if k & 1:
            for p in range(pos, pos + c):
                out[p] = 1
        pos += c
    return out


def decode_runs_numpy(counts, n):
    counts = np.asarray(counts, dtype=np.int64)
    values = (np.arange(counts.shape[0]) & 1).astype(np.uint8)
    out = np.repeat(values, counts)
    if out.shape[0] != n:
        raise ValueError("run counts do not cover the grid")
    return out


# -- intersection --------------------------------------------------------------

@njit
def intersect_runs_numba(ca, cb):
    na = ca.shape[0]
    nb = cb.shape[0]
    if na == 0 or nb == 0:
        return 0
    ia = 0
    ib = 0
    ra = ca[0]
    rb = cb[0]
    total = 0
    while ia < na and ib < nb:
        step = ra if ra < rb else rb
        if (ia & 1) and (ib & 1):
            total += step
        ra -= step
        rb -= step
        if ra == 0:
            ia += 1
            if ia < na:
                ra = ca[ia]
        if rb == 0:
            ib += 1
            if ib < nb:
                rb = cb[ib]
    return total


def intersect_runs_numpy(ca, cb):
    ca = np.asarray(ca, dtype=np.int64)
    cb = np.asarray(cb, dtype=np.int64)
    if ca.shape[0] < 2 or cb.shape[0] < 2:
        return 0
    ta = np.cumsum(ca)
    tb = np.cumsum(cb)
    n = int(ta[-1])
    # pixel x is foreground iff an odd number of run boundaries are <= x
    cuts = np.unique(np.concatenate(([0], ta, tb)))
    cuts = cuts[cuts < n]
    seg = np.diff(np.append(cuts, n))
    fa = (np.searchsorted(ta, cuts, side="right") & 1).astype(bool)
    fb = (np.searchsorted(tb, cuts, side="right") & 1).astype(bool)
    return int(seg[fa & fb].sum())


# -- pairwise ------------------------------------------------------------------

def pack_counts(count_arrays):
    """Concatenate run-count arrays into one buffer plus an offsets vector."""
    offsets = np.zeros(len(count_arrays) + 1, dtype=np.int64)
    for k, c in enumerate(count_arrays):
        offsets[k + 1] = offsets[k] + len(c)
    if count_arrays:
        flat = np.concatenate([np.asarray(c, dtype=np.int64) for c in count_arrays])
    else:
        flat = np.zeros(0, dtype=np.int64)
    return flat, offsets


@njit
def pairwise_intersections_numba(flat_a, off_a, flat_b, off_b):
    na = off_a.shape[0] - 1
    nb = off_b.shape[0] - 1
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(na):
        ca = flat_a[off_a[i]:off_a[i + 1]]
        for j in range(nb):
            out[i, j] = intersect_runs_numba(ca, flat_b[off_b[j]:off_b[j + 1]])
    return out


def pairwise_intersections_numpy(flat_a, off_a, flat_b, off_b):
    na = len(off_a) - 1
    nb = len(off_b) - 1
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(na):
        ca = flat_a[off_a[i]:off_a[i + 1]]
        for j in range(nb):
            out[i, j] = intersect_runs_numpy(ca, flat_b[off_b[j]:off_b[j + 1]])
    return out


if USE_NUMBA:
    BACKEND = "numba"
    encode_runs = encode_runs_numba
    decode_runs = decode_runs_numba
    intersect_runs = intersect_runs_numba
    pairwise_intersections = pairwise_intersections_numba
else:
    BACKEND = "numpy"
    encode_runs = encode_runs_numpy
    decode_runs = decode_runs_numpy
    intersect_runs = intersect_runs_numpy
    pairwise_intersections = pairwise_intersections_numpy
