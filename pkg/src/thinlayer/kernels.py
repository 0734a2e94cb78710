"""Hot assembly kernels, each with a numba and a pure-numpy implementation.

The numba path is the default whenever numba imports; set THINLAYER_NO_NUMBA=1
(or any value other than "0") to force the numpy fallback, e.g. on platforms
where JIT compilation is unwanted. Both implementations fill the same triplet
slots in the same order, so assembled operators agree to rounding either way.
``benchmarks/bench_kernels.py`` times the two paths against each other.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_OK = False

    def njit(*args, **kwargs):  # pragma: no cover
        def wrap(fn):
            return fn

        return wrap


def _env_disabled() -> bool:
    return os.environ.get("THINLAYER_NO_NUMBA", "") not in ("", "0")


_ACTIVE = "numba" if (_NUMBA_OK and not _env_disabled()) else "numpy"


def active_backend() -> str:
    """Name of the kernel backend currently in use ("numba" or "numpy")."""
    return _ACTIVE


def set_backend(name: str) -> str:
    """Switch kernel backend at runtime; returns the previous backend."""
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not _NUMBA_OK:
        raise RuntimeError("numba backend requested but numba is not importable")
    prev = _ACTIVE
    _ACTIVE = name
    return prev


# ---------------------------------------------------------------------------
# divergence-form edge triplets
#
# One edge couples dofs gi <-> gj with off-diagonal magnitude coff (already
# weight-normalized) and diagonal additions di, dj. theta is the line integral
# of the vector potential along the edge; the off-diagonal entry picks up the
# unit phase exp(-i theta).
# ---------------------------------------------------------------------------


def _diag_triplets_np(gi, gj, coff, di, dj, theta):
    n = gi.size
    rows = np.empty(4 * n, np.int64)
    cols = np.empty(4 * n, np.int64)
    rows[0::4] = gi
    cols[0::4] = gj
    rows[1::4] = gj
    cols[1::4] = gi
    rows[2::4] = gi
    cols[2::4] = gi
    rows[3::4] = gj
    cols[3::4] = gj
    if theta is None:
        vals = np.empty(4 * n, np.float64)
        vals[0::4] = -coff
        vals[1::4] = -coff
    else:
        vals = np.empty(4 * n, np.complex128)
        off = -coff * np.exp(-1j * theta)
        vals[0::4] = off
        vals[1::4] = np.conj(off)
    vals[2::4] = di
    vals[3::4] = dj
    return rows, cols, vals


@njit(cache=True)
def _diag_triplets_nb_real(gi, gj, coff, di, dj):  # pragma: no cover - jitted
    n = gi.size
    rows = np.empty(4 * n, np.int64)
    cols = np.empty(4 * n, np.int64)
    vals = np.empty(4 * n, np.float64)
    for t in range(n):
        b = 4 * t
        rows[b] = gi[t]
        cols[b] = gj[t]
        vals[b] = -coff[t]
        rows[b + 1] = gj[t]
        cols[b + 1] = gi[t]
        vals[b + 1] = -coff[t]
        rows[b + 2] = gi[t]
        cols[b + 2] = gi[t]
        vals[b + 2] = di[t]
        rows[b + 3] = gj[t]
        cols[b + 3] = gj[t]
        vals[b + 3] = dj[t]
    return rows, cols, vals


@njit(cache=True)
def _diag_triplets_nb_cplx(gi, gj, coff, di, dj, theta):  # pragma: no cover
    n = gi.size
    rows = np.empty(4 * n, np.int64)
    cols = np.empty(4 * n, np.int64)
    vals = np.empty(4 * n, np.complex128)
    for t in range(n):
        b = 4 * t
        off = -coff[t] * np.exp(-1j * theta[t])
        rows[b] = gi[t]
        cols[b] = gj[t]
        vals[b] = off
        rows[b + 1] = gj[t]
        cols[b + 1] = gi[t]
        vals[b + 1] = np.conj(off)
        rows[b + 2] = gi[t]
        cols[b + 2] = gi[t]
        vals[b + 2] = di[t]
        rows[b + 3] = gj[t]
        cols[b + 3] = gj[t]
        vals[b + 3] = dj[t]
    return rows, cols, vals


def diag_triplets(gi, gj, coff, di, dj, theta=None):
    """COO triplets for one batch of divergence-form edges.

    Returns (rows, cols, vals) of length 4 * n_edges; vals is complex when
    theta is given, float otherwise.
    """
    if _ACTIVE == "numpy":
        return _diag_triplets_np(gi, gj, coff, di, dj, theta)
    if theta is None:
        return _diag_triplets_nb_real(gi, gj, coff, di, dj)
    return _diag_triplets_nb_cplx(gi, gj, coff, di, dj, theta)


# ---------------------------------------------------------------------------
# mixed-derivative (off-diagonal metric) triplets
#
# Centered covariant differences in two chart directions multiplied under a
# real node coefficient. Per node: 8 entries coupling the four neighbours
# (missing neighbours are marked -1 and emit inert zero slots at (0, 0)).
# base = sqrt|g| * G^{01} / (4 h0 h1); isw[g] = 1 / sqrt(node weight density).
# t0p is the phase angle for the hop node -> node+e0, t0m for node -> node-e0.
# ---------------------------------------------------------------------------


def _mixed_triplets_np(gp0, gm0, gp1, gm1, base, isw, t0p, t0m, t1p, t1m):
    n = base.size
    rows = np.empty(8 * n, np.int64)
    cols = np.empty(8 * n, np.int64)
    cplx = t0p is not None
    vals = np.empty(8 * n, np.complex128 if cplx else np.float64)

    def emit(slot, a, b, sign, pa, pb):
        ok = (a >= 0) & (b >= 0)
        aa = np.where(ok, a, 0)
        bb = np.where(ok, b, 0)
        v = sign * base * isw[aa] * isw[bb]
        if cplx:
            v = v * np.exp(1j * (pa - pb))
        v = np.where(ok, v, 0)
        rows[slot::8] = np.where(ok, aa, 0)
        cols[slot::8] = np.where(ok, bb, 0)
        vals[slot::8] = v
        rows[slot + 1 :: 8] = np.where(ok, bb, 0)
        cols[slot + 1 :: 8] = np.where(ok, aa, 0)
        vals[slot + 1 :: 8] = np.conj(v) if cplx else v

    z = np.zeros(n) if t0p is None else None
    a0p, a0m, a1p, a1m = (
        (t0p, t0m, t1p, t1m) if cplx else (z, z, z, z)
    )
    emit(0, gp0, gp1, 1.0, a0p, a1p)
    emit(2, gp0, gm1, -1.0, a0p, a1m)
    emit(4, gm0, gp1, -1.0, a0m, a1p)
    emit(6, gm0, gm1, 1.0, a0m, a1m)
    return rows, cols, vals


@njit(cache=True)
def _mixed_triplets_nb_real(gp0, gm0, gp1, gm1, base, isw):  # pragma: no cover
    n = base.size
    rows = np.zeros(8 * n, np.int64)
    cols = np.zeros(8 * n, np.int64)
    vals = np.zeros(8 * n, np.float64)
    for t in range(n):
        b8 = 8 * t
        pairs_a = (gp0[t], gp0[t], gm0[t], gm0[t])
        pairs_b = (gp1[t], gm1[t], gp1[t], gm1[t])
        signs = (1.0, -1.0, -1.0, 1.0)
        for q in range(4):
            a = pairs_a[q]
            b = pairs_b[q]
            s = b8 + 2 * q
            if a >= 0 and b >= 0:
                v = signs[q] * base[t] * isw[a] * isw[b]
                rows[s] = a
                cols[s] = b
                vals[s] = v
                rows[s + 1] = b
                cols[s + 1] = a
                vals[s + 1] = v
    return rows, cols, vals


@njit(cache=True)
def _mixed_triplets_nb_cplx(
    gp0, gm0, gp1, gm1, base, isw, t0p, t0m, t1p, t1m
):  # pragma: no cover
    n = base.size
    rows = np.zeros(8 * n, np.int64)
    cols = np.zeros(8 * n, np.int64)
    vals = np.zeros(8 * n, np.complex128)
    for t in range(n):
        b8 = 8 * t
        pairs_a = (gp0[t], gp0[t], gm0[t], gm0[t])
        pairs_b = (gp1[t], gm1[t], gp1[t], gm1[t])
        ph_a = (t0p[t], t0p[t], t0m[t], t0m[t])
        ph_b = (t1p[t], t1m[t], t1p[t], t1m[t])
        signs = (1.0, -1.0, -1.0, 1.0)
        for q in range(4):
            a = pairs_a[q]
            b = pairs_b[q]
            s = b8 + 2 * q
            if a >= 0 and b >= 0:
                v = (
                    signs[q]
                    * base[t]
                    * isw[a]
                    * isw[b]
                    * np.exp(1j * (ph_a[q] - ph_b[q]))
                )
                rows[s] = a
                cols[s] = b
                vals[s] = v
                rows[s + 1] = b
                cols[s + 1] = a
                vals[s + 1] = np.conj(v)
    return rows, cols, vals


def mixed_triplets(gp0, gm0, gp1, gm1, base, isw, t0p=None, t0m=None, t1p=None, t1m=None):
    """COO triplets for symmetrized mixed-derivative terms (8 per node)."""
    if _ACTIVE == "numpy":
        return _mixed_triplets_np(gp0, gm0, gp1, gm1, base, isw, t0p, t0m, t1p, t1m)
    if t0p is None:
        return _mixed_triplets_nb_real(gp0, gm0, gp1, gm1, base, isw)
    return _mixed_triplets_nb_cplx(gp0, gm0, gp1, gm1, base, isw, t0p, t0m, t1p, t1m)


# ---------------------------------------------------------------------------
# injectivity clearance scan
#
# For every node pair whose chart distance exceeds `cutoff`, measure the
# smallest ambient distance between their extreme layer points (the two
# offsets x +/- eps*n per node) and track the global minimum.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _clearance_nb(schart, period, plo, phi, cutoff):  # pragma: no cover
    n, naxes = schart.shape
    d = plo.shape[1]
    best = np.inf
    bi = -1
    bj = -1
    c2 = cutoff * cutoff
    for i in range(n):
        for j in range(i + 1, n):
            dist2 = 0.0
            for k in range(naxes):
                dk = abs(schart[i, k] - schart[j, k])
                if period[k] > 0.0 and dk > 0.5 * period[k]:
                    dk = period[k] - dk
                dist2 += dk * dk
            if dist2 <= c2:
                continue
            m = np.inf
            for a in range(2):
                pa = plo if a == 0 else phi
                for b in range(2):
                    pb = plo if b == 0 else phi
                    acc = 0.0
                    for k in range(d):
                        dv = pa[i, k] - pb[j, k]
                        acc += dv * dv
                    if acc < m:
                        m = acc
            if m < best:
                best = m
                bi = i
                bj = j
    return np.sqrt(best) if bi >= 0 else np.inf, bi, bj


def _clearance_np(schart, period, plo, phi, cutoff):
    n, naxes = schart.shape
    best = np.inf
    bi = bj = -1
    block = max(1, int(2.0e6 // max(n, 1)))
    for start in range(0, n, block):
        stop = min(n, start + block)
        dk = np.abs(schart[start:stop, None, :] - schart[None, :, :])
        for k in range(naxes):
            if period[k] > 0.0:
                dk[..., k] = np.minimum(dk[..., k], period[k] - dk[..., k])
        chart2 = np.sum(dk * dk, axis=-1)
        mask = chart2 > cutoff * cutoff
        iu = np.arange(start, stop)[:, None] < np.arange(n)[None, :]
        mask &= iu
        if not mask.any():
            continue
        m = np.full(mask.shape, np.inf)
        for pa in (plo[start:stop], phi[start:stop]):
            for pb in (plo, phi):
                dd = pa[:, None, :] - pb[None, :, :]
                np.minimum(m, np.sum(dd * dd, axis=-1), out=m)
        m[~mask] = np.inf
        idx = np.unravel_index(np.argmin(m), m.shape)
        if m[idx] < best:
            best = m[idx]
            bi = start + idx[0]
            bj = int(idx[1])
    return (np.sqrt(best) if bi >= 0 else np.inf), bi, bj


def min_clearance(schart, period, plo, phi, cutoff):
    """Minimum layer clearance over chart-separated node pairs.

    Returns (clearance, i, j); clearance is inf when no pair passes the
    chart-distance cutoff.
    """
    schart = np.ascontiguousarray(schart, dtype=np.float64)
    period = np.ascontiguousarray(period, dtype=np.float64)
    plo = np.ascontiguousarray(plo, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if _ACTIVE == "numpy":
        return _clearance_np(schart, period, plo, phi, float(cutoff))
    return _clearance_nb(schart, period, plo, phi, float(cutoff))
