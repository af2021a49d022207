"""Compiled inner loops.

Everything here works on plain arrays. Volumes are laid out as
``(n_theta, ny, nx)`` with row 0 the lowest-y row of the grid. Reductions are
chunked per orientation slice and then summed serially so results do not
depend on the number of worker threads.
"""

import math
import warnings

import numpy as np
from numba import NumbaWarning, njit, prange

# an old system TBB only means numba picks another threading layer
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

# cast codes; a non-negative return value is a hit range in meters
NO_HIT = -1.0
ORIGIN_OCCUPIED = -2.0
ORIGIN_OUTSIDE = -3.0

NEG_INF = -np.inf


FREE = 0
OCCUPIED = 1
OUTSIDE = 2


def padded_codes(occ):
    """Cell codes with a one-cell OUTSIDE border: codes[j + 1, i + 1] is cell (i, j)."""
    ny, nx = occ.shape
    codes = np.full((ny + 2, nx + 2), OUTSIDE, dtype=np.uint8)
    codes[1:-1, 1:-1] = np.where(occ, OCCUPIED, FREE)
    return codes


@njit(cache=True, nogil=True)
def cast(codes, x0, y0, res, ox, oy, dx, dy, max_range):
    """Amanatides-Woo walk from world point (ox, oy) along unit (dx, dy)."""
    ny = codes.shape[0] - 2
    nx = codes.shape[1] - 2
    gx = (ox - x0) / res
    gy = (oy - y0) / res
    if not (gx >= 0.0 and gx < nx and gy >= 0.0 and gy < ny):
        return ORIGIN_OUTSIDE
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    if codes[iy + 1, ix + 1] != FREE:
        return ORIGIN_OCCUPIED
    # on a grid line: start in the cell we are moving into
    if dx < 0.0 and gx == ix:
        ix -= 1
    if dy < 0.0 and gy == iy:
        iy -= 1
    c = codes[iy + 1, ix + 1]
    if c == OUTSIDE:
        return NO_HIT
    if c == OCCUPIED:
        return 0.0

    if dx > 0.0:
        sx = 1
        tmax_x = (ix + 1 - gx) / dx
        tdx = 1.0 / dx
    elif dx < 0.0:
        sx = -1
        tmax_x = (ix - gx) / dx
        tdx = -1.0 / dx
    else:
        sx = 0
        tmax_x = np.inf
        tdx = np.inf
    if dy > 0.0:
        sy = 1
        tmax_y = (iy + 1 - gy) / dy
        tdy = 1.0 / dy
    elif dy < 0.0:
        sy = -1
        tmax_y = (iy - gy) / dy
        tdy = -1.0 / dy
    else:
        sy = 0
        tmax_y = np.inf
        tdy = np.inf

    # the OUTSIDE border guarantees termination
    px = ix + 1
    py = iy + 1
    while True:
        if tmax_x < tmax_y:
            t = tmax_x
            px += sx
            tmax_x += tdx
        else:
            t = tmax_y
            py += sy
            tmax_y += tdy
        c = codes[py, px]
        if c != FREE:
            if c == OUTSIDE or t * res > max_range:
                return NO_HIT
            return t * res


@njit(cache=True, parallel=True)
def range_table(codes, x0, y0, res, px, py, dirx, diry, max_range, out):
    """out[c, a] = cast range from (px[c], py[c]) along direction a."""
    n = px.shape[0]
    m = dirx.shape[0]
    for c in prange(n):
        for a in range(m):
            out[c, a] = cast(codes, x0, y0, res, px[c], py[c], dirx[a], diry[a], max_range)


@njit(cache=True, parallel=True)
def loglik(table, cell_y, cell_x, col, cos_a, depth, inv_b, log_norm, miss, prior, box, out):
    """Sum of per-ray Laplace log densities for every (bin, free cell).

    ``col[k, j]`` indexes the table column holding world direction
    ``phi_k + alpha_j``. Only cells inside ``box = (y0, y1, x0, x1)`` whose
    ``prior`` entry is > -inf are evaluated; others keep their ``out`` value.
    """
    n = cell_y.shape[0]
    n_theta, n_rays = col.shape
    y0, y1, x0, x1 = box[0], box[1], box[2], box[3]
    for c in prange(n):
        iy = cell_y[c]
        ix = cell_x[c]
        if iy < y0 or iy >= y1 or ix < x0 or ix >= x1:
            continue
        for k in range(n_theta):
            if prior[k, iy, ix] == NEG_INF:
                continue
            s = 0.0
            for j in range(n_rays):
                r = table[c, col[k, j]]
                if r < 0.0:
                    s += miss[j]
                else:
                    s += log_norm[j] - abs(depth[j] - r * cos_a[j]) * inv_b[j]
            out[k, iy, ix] = s


@njit(cache=True, parallel=True)
def loglik_direct(codes, x0, y0, res, dirx, diry, max_range, cos_a, depth, inv_b, log_norm, miss, prior, box, out):
    """Same sums as :func:`loglik`, casting every ray instead of reading a table.

    ``dirx[k, j], diry[k, j]`` is the unit direction of ray j in bin k.
    """
    n_theta, n_rays = dirx.shape
    for iy in prange(box[0], box[1]):
        py = y0 + (iy + 0.5) * res
        for ix in range(box[2], box[3]):
            if codes[iy + 1, ix + 1] != FREE:
                continue
            px = x0 + (ix + 0.5) * res
            for k in range(n_theta):
                if prior[k, iy, ix] == NEG_INF:
                    continue
                s = 0.0
                for j in range(n_rays):
                    r = cast(codes, x0, y0, res, px, py, dirx[k, j], diry[k, j], max_range)
                    if r < 0.0:
                        s += miss[j]
                    else:
                        s += log_norm[j] - abs(depth[j] - r * cos_a[j]) * inv_b[j]
                out[k, iy, ix] = s


@njit(cache=True)
def _push_slice(src, wx, lx, offx, wy, ly, offy, dst):
    """dst += separable push of the linear slice ``src`` (ny, nx)."""
    ny, nx = src.shape
    tmp = np.zeros((ny, nx))
    for t in range(lx):
        w = wx[t]
        s = offx + t
        lo = max(0, -s)
        hi = min(nx, nx - s)
        for y in range(ny):
            for x in range(lo, hi):
                tmp[y, x + s] += w * src[y, x]
    for t in range(ly):
        w = wy[t]
        s = offy + t
        lo = max(0, -s)
        hi = min(ny, ny - s)
        for y in range(lo, hi):
            for x in range(nx):
                dst[y + s, x] += w * tmp[y, x]


@njit(cache=True, parallel=True)
def translate(lin, wx, lx, offx, wy, ly, offy, out):
    """Per orientation slice k, push linear mass through kernel (wx[k], wy[k]).

    Mass moves from cell x to ``x + offx[k] + t`` with weight ``wx[k, t]``
    for ``t < lx[k]`` (then likewise along y). Mass pushed past the array
    edge is dropped.
    """
    out[:] = 0.0
    for k in prange(lin.shape[0]):
        _push_slice(lin[k], wx[k], lx[k], offx[k], wy[k], ly[k], offy[k], out[k])


@njit(cache=True)
def live_bbox(a):
    """(y0, y1, x0, x1) half-open box around entries > -inf; empty box if none."""
    K, ny, nx = a.shape
    y0 = ny
    y1 = 0
    x0 = nx
    x1 = 0
    for k in range(K):
        for y in range(ny):
            for x in range(nx):
                if a[k, y, x] > NEG_INF:
                    if y < y0:
                        y0 = y
                    if y + 1 > y1:
                        y1 = y + 1
                    if x < x0:
                        x0 = x
                    if x + 1 > x1:
                        x1 = x + 1
    if y1 == 0:
        return 0, 0, 0, 0
    return y0, y1, x0, x1


@njit(cache=True, parallel=True)
def mix_bins(lin, scale, offr, out):
    """out[k] = sum_t scale[k, t] * lin[(k - offr[t]) % K] (circular push along bins)."""
    K, ny, nx = lin.shape
    out[:] = 0.0
    for k in prange(K):
        for t in range(offr.shape[0]):
            f = scale[k, t]
            if f == 0.0:
                continue
            src = (k - offr[t]) % K
            for y in range(ny):
                for x in range(nx):
                    out[k, y, x] += f * lin[src, y, x]


@njit(cache=True, parallel=True)
def slice_max(a, out):
    for k in prange(a.shape[0]):
        m = NEG_INF
        for y in range(a.shape[1]):
            for x in range(a.shape[2]):
                if a[k, y, x] > m:
                    m = a[k, y, x]
        out[k] = m


def logsumexp3(a):
    """log(sum(exp(a))) over a 3D array; -inf if every entry is -inf.

    Summed per leading slice, then across slices, in a fixed order.
    """
    if a.size == 0:
        return NEG_INF
    m = float(a.max())
    if m == NEG_INF:
        return NEG_INF
    sums = np.exp(a - m).sum(axis=(1, 2))
    return m + math.log(float(np.sum(sums)))


@njit(cache=True, parallel=True)
def add_and_mask(a, b, blocked, out):
    """out = a + b, with -inf wherever ``blocked[y, x]``."""
    for k in prange(a.shape[0]):
        for y in range(a.shape[1]):
            for x in range(a.shape[2]):
                if blocked[y, x]:
                    out[k, y, x] = NEG_INF
                else:
                    out[k, y, x] = a[k, y, x] + b[k, y, x]


@njit(cache=True, parallel=True)
def shift_and_prune(a, shift, floor):
    """In place: a -= shift; entries below ``floor`` (after shifting) become -inf."""
    for k in prange(a.shape[0]):
        for y in range(a.shape[1]):
            for x in range(a.shape[2]):
                v = a[k, y, x]
                if v > NEG_INF:
                    v = v - shift
                    if v < floor:
                        v = NEG_INF
                    a[k, y, x] = v
