"""Compiled inner loops.

Everything here works on plain arrays so the public modules can stay numpy-
and dataclass-based. Axes are passed packed: ``nodes`` is an ``(n, max_len)``
array padded with NaN, ``lengths`` holds the real length of each axis,
``inv_dx`` is the reciprocal spacing of uniform axes (0 for non-uniform ones)
and ``strides`` are the row-major strides (in elements) of the coefficient
array.

No ``fastmath``: reproducibility across runs and thread counts matters more
than the last few percent of speed.
"""

import numpy as np
from numba import njit

GAUSSIAN = 0
EPANECHNIKOV = 1

# exp(-0.5 * r**2) rounds to exactly 0.0 for r above this, so skipping those
# offsets does not change any sum.
GAUSS_ZERO_RADIUS = 38.61


@njit(cache=True, nogil=True)
def _lower_index(ax, m, inv_dx, xd):
    # largest j in [0, m-2] with ax[j] <= xd; caller guarantees ax[0] <= xd <= ax[m-1]
    if inv_dx > 0.0:
        # uniform axis: guess directly, then fix up rounding against the stored nodes
        j = int((xd - ax[0]) * inv_dx)
        if j > m - 2:
            j = m - 2
        if j < 0:
            j = 0
        while j > 0 and ax[j] > xd:
            j -= 1
        while j < m - 2 and ax[j + 1] <= xd:
            j += 1
        return j
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ax[mid] <= xd:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def interp_point(nodes, lengths, inv_dx, strides, coeffs, x):
    n = x.shape[0]
    return _interp(nodes, lengths, inv_dx, strides, coeffs, x, np.empty(n, np.int64),
                   np.empty(n))


@njit(cache=True, nogil=True)
def _interp(nodes, lengths, inv_dx, strides, coeffs, x, idx, t):
    # idx, t: caller-provided scratch of length n
    n = x.shape[0]
    for d in range(n):
        m = lengths[d]
        xd = x[d]
        if not (xd >= nodes[d, 0] and xd <= nodes[d, m - 1]):
            return 0.0
        j = _lower_index(nodes[d], m, inv_dx[d], xd)
        idx[d] = j
        t[d] = (xd - nodes[d, j]) / (nodes[d, j + 1] - nodes[d, j])
    total = 0.0
    for corner in range(1 << n):
        w = 1.0
        off = 0
        for d in range(n):
            if (corner >> d) & 1:
                w *= t[d]
                off += (idx[d] + 1) * strides[d]
            else:
                w *= 1.0 - t[d]
                off += idx[d] * strides[d]
        total += w * coeffs[off]
    return total


@njit(cache=True, nogil=True)
def interp_many(nodes, lengths, inv_dx, strides, coeffs, points, out):
    n = points.shape[1]
    idx = np.empty(n, np.int64)
    t = np.empty(n)
    for i in range(points.shape[0]):
        out[i] = _interp(nodes, lengths, inv_dx, strides, coeffs, points[i], idx, t)


@njit(cache=True, nogil=True)
def gridded_chain(nodes, lengths, inv_dx, strides, coeffs, init, steps, log_u,
                  burn_in, thinning, out):
    """Random-walk Metropolis on the multilinear interpolant.

    ``steps`` are the pre-drawn proposal increments and ``log_u`` the logs of
    the pre-drawn uniforms, one per iteration. Returns the accepted count.
    """
    n = init.shape[0]
    if n == 1:
        return _chain_1d(nodes[0], lengths[0], inv_dx[0], coeffs, init[0], steps[:, 0], log_u,
                         burn_in, thinning, out[:, 0])
    idx = np.empty(n, np.int64)
    t = np.empty(n)
    cur = init.copy()
    cand = np.empty(n)
    cur_lp = np.log(_interp(nodes, lengths, inv_dx, strides, coeffs, cur, idx, t))
    n_iter = steps.shape[0]
    accepted = 0
    o = 0
    for i in range(n_iter):
        for d in range(n):
            cand[d] = cur[d] + steps[i, d]
        p = _interp(nodes, lengths, inv_dx, strides, coeffs, cand, idx, t)
        if p > 0.0:
            lp = np.log(p)
            if log_u[i] <= lp - cur_lp:
                for d in range(n):
                    cur[d] = cand[d]
                cur_lp = lp
                accepted += 1
        if i >= burn_in and (i - burn_in + 1) % thinning == 0:
            for d in range(n):
                out[o, d] = cur[d]
            o += 1
    return accepted


@njit(cache=True, nogil=True)
def _interp_1d(ax, m, inv_dx, coeffs, x):
    # identical arithmetic to _interp with n == 1
    if not (x >= ax[0] and x <= ax[m - 1]):
        return 0.0
    j = _lower_index(ax, m, inv_dx, x)
    t = (x - ax[j]) / (ax[j + 1] - ax[j])
    return (1.0 - t) * coeffs[j] + t * coeffs[j + 1]


@njit(cache=True, nogil=True)
def _chain_1d(ax, m, inv_dx, coeffs, init, steps, log_u, burn_in, thinning, out):
    cur = init
    cur_lp = np.log(_interp_1d(ax, m, inv_dx, coeffs, cur))
    accepted = 0
    o = 0
    for i in range(steps.shape[0]):
        cand = cur + steps[i]
        p = _interp_1d(ax, m, inv_dx, coeffs, cand)
        if p > 0.0:
            lp = np.log(p)
            if log_u[i] <= lp - cur_lp:
                cur = cand
                cur_lp = lp
                accepted += 1
        if i >= burn_in and (i - burn_in + 1) % thinning == 0:
            out[o] = cur
            o += 1
    return accepted


@njit(cache=True, nogil=True)
def _kernel(kind, z):
    n = z.shape[0]
    if kind == GAUSSIAN:
        r2 = 0.0
        for d in range(n):
            r2 += z[d] * z[d]
        return (2.0 * np.pi) ** (-0.5 * n) * np.exp(-0.5 * r2)
    val = 1.0
    for d in range(n):
        q = 0.75 * (1.0 - z[d] * z[d])
        if q <= 0.0:
            return 0.0
        val *= q
    return val


@njit(cache=True, nogil=True)
def kde_scatter(nodes, lengths, strides, samples, whiten, reach, kind, lo, hi, out):
    """Accumulate kernel sums for flat node indices ``lo <= a < hi`` into ``out``.

    Samples are visited in index order and each node only ever receives
    additions from this call, so every node's sum has the same summation order
    no matter how the node range is split. ``reach[d]`` bounds the state-space
    distance beyond which the kernel is exactly zero.
    """
    n_s, n = samples.shape
    if n == 1:
        _kde_scatter_1d(nodes[0], lengths[0], samples[:, 0], whiten[0, 0], reach[0], kind,
                        lo, hi, out)
        return
    first = np.empty(n, np.int64)
    last = np.empty(n, np.int64)
    cur = np.empty(n, np.int64)
    diff = np.empty(n)
    z = np.empty(n)
    for s in range(n_s):
        x = samples[s]
        empty = False
        for d in range(n):
            m = lengths[d]
            a = x[d] - reach[d]
            b = x[d] + reach[d]
            # first node >= a
            i0 = 0
            i1 = m
            while i0 < i1:
                mid = (i0 + i1) // 2
                if nodes[d, mid] < a:
                    i0 = mid + 1
                else:
                    i1 = mid
            first[d] = i0
            # last node <= b
            j0 = 0
            j1 = m
            while j0 < j1:
                mid = (j0 + j1) // 2
                if nodes[d, mid] <= b:
                    j0 = mid + 1
                else:
                    j1 = mid
            last[d] = j0 - 1
            if first[d] > last[d]:
                empty = True
                break
        if empty:
            continue
        # row-major: clip the leading axis to the requested flat range
        lead_lo = lo // strides[0]
        lead_hi = (hi - 1) // strides[0]
        if first[0] < lead_lo:
            first[0] = lead_lo
        if last[0] > lead_hi:
            last[0] = lead_hi
        if first[0] > last[0]:
            continue
        for d in range(n):
            cur[d] = first[d]
        while True:
            flat = 0
            for d in range(n):
                flat += cur[d] * strides[d]
            if flat >= lo and flat < hi:
                for d in range(n):
                    diff[d] = nodes[d, cur[d]] - x[d]
                for r in range(n):
                    acc = 0.0
                    for c in range(n):
                        acc += whiten[r, c] * diff[c]
                    z[r] = acc
                out[flat - lo] += _kernel(kind, z)
            # odometer over the box, last axis fastest
            d = n - 1
            while d >= 0:
                cur[d] += 1
                if cur[d] <= last[d]:
                    break
                cur[d] = first[d]
                d -= 1
            if d < 0:
                break


@njit(cache=True, nogil=True)
def _kde_scatter_1d(ax, m, xs, whiten, reach, kind, lo, hi, out):
    # same arithmetic as the general path with n == 1
    gauss_norm = (2.0 * np.pi) ** -0.5
    for s in range(xs.shape[0]):
        x = xs[s]
        a = x - reach
        b = x + reach
        i0 = 0
        i1 = m
        while i0 < i1:
            mid = (i0 + i1) // 2
            if ax[mid] < a:
                i0 = mid + 1
            else:
                i1 = mid
        j0 = i0
        j1 = m
        while j0 < j1:
            mid = (j0 + j1) // 2
            if ax[mid] <= b:
                j0 = mid + 1
            else:
                j1 = mid
        first = max(i0, lo)
        last = min(j0 - 1, hi - 1)
        for j in range(first, last + 1):
            z = whiten * (ax[j] - x)
            if kind == GAUSSIAN:
                out[j - lo] += gauss_norm * np.exp(-0.5 * (z * z))
            else:
                q = 0.75 * (1.0 - z * z)
                if q > 0.0:
                    out[j - lo] += q
