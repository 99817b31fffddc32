"""One-dimensional Dirichlet heat quantities on (0, L) for the generator Delta.

The free kernel is g_t(z) = (4 pi t)^(-1/2) exp(-z^2 / 4t).  Short times use
the method of images, long times the sine series; both are absolutely
convergent and are truncated once the neglected terms fall below 1e-17.
"""

import math

import numpy as np
from scipy import special

# switch from images to eigen series at t = SWITCH * L^2
SWITCH = 0.1
_SQPI = math.sqrt(math.pi)


def gauss(t, z):
    return np.exp(-z * z / (4 * t)) / np.sqrt(4 * math.pi * t)


def _image_count(tmax, L):
    return int(math.ceil(6.2 * math.sqrt(tmax) / L)) + 1


def _mode_count(tmin, L):
    return int(math.ceil(math.sqrt(42.0 / tmin) * L / math.pi)) + 1


def _split(t, L, *arrays):
    t, *arrays = np.broadcast_arrays(np.asarray(t, float), *[np.asarray(a, float) for a in arrays])
    return t, arrays, t <= SWITCH * L * L


def _far_images(t, diff, plus, L):
    """Images of level k >= 1 (nearest distance (2k-1) L).

    A level only matters where (2k-1)^2 L^2 < 160 t, i.e. where its terms can
    exceed exp(-40) g_t(0); elsewhere it is skipped element-wise.
    """
    acc = np.zeros(t.shape)
    M = _image_count(t.max(), L)
    for k in range(1, M + 1):
        sel = t > ((2 * k - 1) * L) ** 2 / 160.0
        if not sel.any():
            break
        if sel.all():
            tt, a, b, idx = t, diff, plus, slice(None)
        else:
            idx = np.nonzero(sel)
            tt, a, b = t[idx], diff[idx], plus[idx]
        acc[idx] += gauss(tt, a + 2 * k * L) + gauss(tt, a - 2 * k * L) \
            - gauss(tt, b + 2 * k * L) - gauss(tt, b - 2 * (k + 1) * L)
    return acc


def kernel(t, x, y, L, method="auto"):
    """p_(0,L)(t, x, y)."""
    t, (x, y), short = _split(t, L, x, y)
    out = np.empty(t.shape)
    if method == "images":
        short = np.ones_like(short)
    elif method == "eigen":
        short = np.zeros_like(short)
    if short.any():
        ts, xs, ys = t[short], x[short], y[short]
        out[short] = gauss(ts, xs - ys) - gauss(ts, xs + ys) - gauss(ts, xs + ys - 2 * L) \
            + _far_images(ts, xs - ys, xs + ys, L)
    if (~short).any():
        tl, xl, yl = t[~short], x[~short], y[~short]
        K = _mode_count(tl.min(), L)
        acc = np.zeros(tl.shape)
        for n in range(1, K + 1):
            k = n * math.pi / L
            acc += np.exp(-k * k * tl) * np.sin(k * xl) * np.sin(k * yl)
        out[~short] = 2.0 / L * acc
    return out if out.ndim else float(out)


def kernel_rows(t, x, y, L):
    """p_(0,L)(t_i, x, y_j) for a vector of times, one source x and targets y.

    Same truncation as ``kernel``; long times are a matrix product over modes.
    """
    t = np.asarray(t, float).ravel()
    y = np.asarray(y, float).ravel()
    out = np.empty((t.size, y.size))
    short = t <= SWITCH * L * L
    if short.any():
        ts = t[short][:, None]
        diff, plus = x - y, x + y
        acc = gauss(ts, diff) - gauss(ts, plus) - gauss(ts, plus - 2 * L)
        for k in range(1, _image_count(ts.max(), L) + 1):
            rows = ts[:, 0] > ((2 * k - 1) * L) ** 2 / 160.0
            if not rows.any():
                break
            tk = ts[rows]
            acc[rows] += gauss(tk, diff + 2 * k * L) + gauss(tk, diff - 2 * k * L) \
                - gauss(tk, plus + 2 * k * L) - gauss(tk, plus - 2 * (k + 1) * L)
        out[short] = acc
    if (~short).any():
        tl = t[~short]
        k = np.arange(1, _mode_count(tl.min(), L) + 1) * (math.pi / L)
        left = np.exp(-np.multiply.outer(tl, k * k)) * np.sin(k * x)
        out[~short] = (2.0 / L) * left @ np.sin(np.multiply.outer(k, y))
    return out


def exit_probability(t, x, L, method="auto"):
    """1 - survival, accurate when it is tiny (images) or close to 1."""
    t, (x,), short = _split(t, L, x)
    if method == "images":
        short = np.ones_like(short)
    elif method == "eigen":
        short = np.zeros_like(short)
    out = np.empty(t.shape)
    if short.any():
        ts, xs = t[short], x[short]
        s = 2 * np.sqrt(ts)
        K = _image_count(ts.max(), L)
        acc = np.zeros(ts.shape)
        for k in range(K + 1):
            sign = 1.0 if k % 2 == 0 else -1.0
            acc += sign * (special.erfc((xs + k * L) / s) + special.erfc(((k + 1) * L - xs) / s))
        out[short] = acc
    if (~short).any():
        out[~short] = 1.0 - _survival_eigen(t[~short], x[~short], L)
    return out if out.ndim else float(out)


def _survival_eigen(t, x, L):
    K = _mode_count(t.min(), L)
    acc = np.zeros(t.shape)
    for n in range(1, K + 1, 2):
        k = n * math.pi / L
        acc += 4.0 / (n * math.pi) * np.exp(-k * k * t) * np.sin(k * x)
    return acc


def survival(t, x, L, method="auto"):
    """P_x(tau > t) for Brownian motion with generator Delta on (0, L)."""
    t, (x,), short = _split(t, L, x)
    if method == "images":
        short = np.ones_like(short)
    elif method == "eigen":
        short = np.zeros_like(short)
    out = np.empty(t.shape)
    if short.any():
        out[short] = 1.0 - exit_probability(t[short], x[short], L, method="images")
    if (~short).any():
        out[~short] = _survival_eigen(t[~short], x[~short], L)
    return out if out.ndim else float(out)


def flux(t, x, L, method="auto"):
    """Exit-time density -d/dt survival (flux through both endpoints)."""
    t, (x,), short = _split(t, L, x)
    if method == "images":
        short = np.ones_like(short)
    elif method == "eigen":
        short = np.zeros_like(short)
    out = np.empty(t.shape)
    if short.any():
        ts, xs = t[short], x[short]
        K = _image_count(ts.max(), L)
        c = 1.0 / (2 * _SQPI * ts ** 1.5)
        acc = np.zeros(ts.shape)
        for k in range(K + 1):
            sign = 1.0 if k % 2 == 0 else -1.0
            a, b = xs + k * L, (k + 1) * L - xs
            acc += sign * (a * np.exp(-a * a / (4 * ts)) + b * np.exp(-b * b / (4 * ts)))
        out[short] = c * acc
    if (~short).any():
        tl, xl = t[~short], x[~short]
        K = _mode_count(tl.min(), L)
        acc = np.zeros(tl.shape)
        for n in range(1, K + 1, 2):
            k = n * math.pi / L
            acc += 4.0 / (n * math.pi) * k * k * np.exp(-k * k * tl) * np.sin(k * xl)
        out[~short] = acc
    return out if out.ndim else float(out)


def kernel_image_remainder(t, x, y, L):
    """p_(0,L)(t,x,y) - g_t(x-y), computed without cancellation (t <= SWITCH L^2)."""
    t, x, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float), np.asarray(y, float))
    return -gauss(t, x + y) - gauss(t, x + y - 2 * L) + _far_images(t, x - y, x + y, L)


# -- product integration ------------------------------------------------------

def _cumulative(t, z):
    """Antiderivatives of g_t(z) and z g_t(z) in z (up to constants)."""
    s = 2 * math.sqrt(t)
    return 0.5 * special.erf(z / s), -2 * t * gauss(t, z)


def segment_moments(t, x, a, b, L):
    """int_a^b p(t,x,y) dy and int_a^b p(t,x,y) (y - a) dy.

    x has shape (nx,), a and b shape (ns,); results are (nx, ns).
    """
    x = np.asarray(x, float)[:, None]
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    # erf differences lose digits on segments much thinner than sqrt(t); there
    # the kernel is smooth across the segment and Gauss-Legendre is used instead
    thin = (b - a) < 0.3 * math.sqrt(t)
    m0 = np.zeros((x.shape[0], a.size))
    m1 = np.zeros_like(m0)
    wide = ~thin
    if wide.any():
        aw, bw = a[wide][None, :], b[wide][None, :]
        M = _image_count(t, L)
        s0acc = np.zeros((x.shape[0], aw.shape[1]))
        s1acc = np.zeros_like(s0acc)
        for m in range(-M, M + 1):
            for sign, c in ((1.0, x + 2 * m * L), (-1.0, -x - 2 * m * L)):
                I0a, I1a = _cumulative(t, aw - c)
                I0b, I1b = _cumulative(t, bw - c)
                s0 = I0b - I0a
                s0acc += sign * s0
                s1acc += sign * ((I1b - I1a) + (c - aw) * s0)
        m0[:, wide], m1[:, wide] = s0acc, s1acc
    if thin.any():
        at, ht = a[thin], (b - a)[thin]
        z = at[:, None] + 0.5 * ht[:, None] * (_THIN_X + 1)
        p = kernel(t, x[:, :, None], z[None], L)
        w = 0.5 * ht[:, None] * _THIN_W
        m0[:, thin] = np.einsum("xsq,sq->xs", p, w)
        m1[:, thin] = np.einsum("xsq,sq->xs", p, w * (z - at[:, None]))
    return m0, m1


_THIN_X, _THIN_W = np.polynomial.legendre.leggauss(6)


def product_weights(t, x, nodes, L):
    """Weights of int_0^L p(t, x, y) g(y) dy for piecewise-linear g on ``nodes``.

    Columns: [lo0, lo1, hat_0 .. hat_(n-1), hi0, hi1].  lo0 / hi0 are the
    integrals of p over the end segments [0, y_0] and [y_(n-1), L]; lo1 / hi1
    are the integrals of p times the linear ramp vanishing at the face, scaled
    by how close p is to linear there (1 when p is linear through the face,
    0 when p is concentrated at the end node).
    """
    y = np.asarray(nodes, float)
    n = y.size
    a, b = y[:-1], y[1:]
    h = b - a
    m0, m1 = segment_moments(t, x, a, b, L)
    W = np.zeros((len(x), n + 4))
    # hat_k on [y_k, y_k+1] is 1 - (y - y_k)/h, hat_(k+1) is (y - y_k)/h
    W[:, 2:n + 1] += m0 - m1 / h
    W[:, 3:n + 2] += m1 / h
    e0, e1 = segment_moments(t, x, [0.0], [y[0]], L)
    # ramp y / y_0 on [0, y_0]
    lo0, lo1 = e0[:, 0], e1[:, 0] / y[0]
    f0, f1 = segment_moments(t, x, [y[-1]], [L], L)
    hw = L - y[-1]
    hi0, hi1 = f0[:, 0], f0[:, 0] - f1[:, 0] / hw
    W[:, 0], W[:, 1] = lo0, lo1 * _linearity(lo0, lo1)
    W[:, n + 2], W[:, n + 3] = hi0, hi1 * _linearity(hi0, hi1)
    return W


def _linearity(m0, m1):
    # for p linear through the face m1/m0 = 2/3, for p piled at the node it tends to 1
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(m0 > 0, m1 / m0, 2.0 / 3.0)
    return np.clip(3.0 * (1.0 - r), 0.0, 1.0)


def projection_weights(modes, nodes, L, order=10):
    """sqrt(2/L) int_0^L sin(k pi y / L) ell(y) dy for the same column layout."""
    y = np.asarray(nodes, float)
    n = y.size
    gx, gw = np.polynomial.legendre.leggauss(order)
    k = np.arange(1, modes + 1) * math.pi / L
    norm = math.sqrt(2.0 / L)

    def moments(a, b):
        # int_a^b sin(k y) dy and int_a^b sin(k y)(y - a)/(b - a) dy by Gauss-Legendre
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        z = 0.5 * (b - a)[:, None] * (gx + 1)[None, :] + a[:, None]
        w = 0.5 * (b - a)[:, None] * gw[None, :]
        s = np.sin(k[:, None, None] * z[None])
        r = (z - a[:, None]) / (b - a)[:, None]
        return norm * np.sum(s * w, axis=-1), norm * np.sum(s * w * r, axis=-1)

    Q = np.zeros((modes, n + 4))
    s0, s1 = moments(y[:-1], y[1:])
    Q[:, 2:n + 1] += s0 - s1
    Q[:, 3:n + 2] += s1
    e0, e1 = moments(0.0, y[0])
    Q[:, 0], Q[:, 1] = e0[:, 0], e1[:, 0]
    f0, f1 = moments(y[-1], L)
    Q[:, n + 2], Q[:, n + 3] = f0[:, 0], f0[:, 0] - f1[:, 0]
    return Q


def face_weight(y, L, beta):
    """(y / L)^-beta + (1 - y / L)^-beta, smooth inside (0, L)."""
    y = np.asarray(y, float) / L
    return y ** (-beta) + (1 - y) ** (-beta)


def _lagrange_rows(y, z):
    """Rows of the 4-point Lagrange interpolation matrix from nodes y to points z.

    Points beyond the end nodes get the end value (constant extension).
    """
    n = y.size
    R = np.zeros((z.size, n))
    inside = (z >= y[0]) & (z <= y[-1])
    R[z < y[0], 0] = 1.0
    R[z > y[-1], n - 1] = 1.0
    if n < 4:
        pos = np.clip(np.searchsorted(y, z) - 1, 0, n - 2)
        frac = np.clip((z - y[pos]) / (y[pos + 1] - y[pos]), 0.0, 1.0)
        rows = np.nonzero(inside)[0]
        R[rows, pos[rows]] = 1 - frac[rows]
        R[rows, pos[rows] + 1] += frac[rows]
        return R
    rows = np.nonzero(inside)[0]
    first = np.clip(np.searchsorted(y, z[rows]) - 2, 0, n - 4)
    for a in range(4):
        num = np.ones(rows.size)
        for b in range(4):
            if b != a:
                num *= (z[rows] - y[first + b]) / (y[first + a] - y[first + b])
        R[rows, first + a] += num
    return R


def weighted_refinement(nodes, L, beta, ratio=1.04, depth=1e-2, min_pieces=8):
    """Fine nodes z and the map from coarse values h to augmented fine data.

    The data model is g(y) = w(y) * h(y), w = face_weight (w = 1 when beta
    is zero), h the 4-point
    Lagrange interpolant of the coarse values, constant beyond the end nodes.
    The fine grid resolves w geometrically (consecutive distance ratios <=
    ``ratio``) down to ``depth`` times the first node, with at least
    ``min_pieces`` pieces per coarse segment; below that w is integrated as
    an exact power law.  Returns (z, P) where P has shape
    (len(z) + 4, len(nodes)) and matches the column layout of
    ``product_weights``.
    """
    if not 0 <= beta < 1.95:
        raise ValueError("weight exponent must lie in [0, 1.95)")
    y = np.asarray(nodes, float)
    lr = math.log(ratio)

    def pieces(a, b):
        if a < 0.5 * L < b:
            return np.linspace(a, b, 2 * min_pieces + 1)[:-1]
        da, db = min(a, L - a), min(b, L - b)
        k = max(min_pieces, int(math.ceil(abs(math.log(db / da)) / lr)))
        # uniform in log distance on each half
        if b <= 0.5 * L:
            return np.exp(np.linspace(math.log(a), math.log(b), k + 1))[:-1]
        return L - np.exp(np.linspace(math.log(L - a), math.log(L - b), k + 1))[:-1]

    lo = y[0] * np.exp(-lr * np.arange(int(math.ceil(-math.log(depth) / lr)), 0, -1))
    hi = L - (L - y[-1]) * np.exp(-lr * np.arange(1, int(math.ceil(-math.log(depth) / lr)) + 1))
    mid = [pieces(a, b) for a, b in zip(y[:-1], y[1:])]
    z = np.concatenate([lo] + mid + [y[-1:], hi])
    n, nz = y.size, z.size
    P = np.zeros((nz + 4, n))
    wz = face_weight(z, L, beta) if beta > 0 else np.ones(nz)
    P[2:nz + 2] = wz[:, None] * _lagrange_rows(y, z)
    ramp = 3.0 / (2.0 - beta) - 1.5
    P[0, 0], P[1, 0] = wz[0], wz[0] * ramp
    P[nz + 2, n - 1], P[nz + 3, n - 1] = wz[-1], wz[-1] * ramp
    return z, P
