"""Exact kernel moments over straight segments in the right half plane.

The evolution curves need contour integrals of kernels

    K_A(s) = exp(-c s)            (decay factor of the initialization term)
    K_B(s) = (1 - exp(-t s)) / s  (gradient-flow propagator kernel)

against quadratically interpolated functional values, where s = z + lambda
stays in the open right half plane on every admissible contour.  Integrating
the kernels exactly per segment keeps the quadrature uniformly accurate in t:
a plain trapezoid rule cannot track the oscillation of exp(-t s) along the
contour sides once t is large.

All helpers are vectorized over arrays of segment endpoints; the kernel scale
(c or t) is a scalar per call.
"""

from __future__ import annotations

import numpy as np
from scipy.special import exp1

_SERIES_CUT = 12.0  # switch between Ein series and log + E1 evaluation
_R_CUT = 100.0      # switch between direct moments and 1/r expansion


def phim(m: int, w) -> np.ndarray:
    """Integral of tau^m * exp(w tau) over tau in [0, 1], elementwise in w."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) < 0.5
    if small.any():
        ws = w[small]
        acc = np.zeros_like(ws)
        term = np.ones_like(ws)
        for j in range(0, 30):
            acc = acc + term / (m + j + 1)
            term = term * ws / (j + 1)
            if np.max(np.abs(term)) < 1e-20:
                break
        out[small] = acc
    big = ~small
    if big.any():
        wb = w[big]
        ew = np.exp(wb)
        val = (ew - 1.0) / wb
        for k in range(1, m + 1):
            val = (ew - k * val) / wb
        out[big] = val
    return out


def _ein_series_diff(w1, w2) -> np.ndarray:
    """Ein(w2) - Ein(w1) by the entire series, stable for nearby arguments.

    Uses w2^k - w1^k = (w2 - w1) * sum_{j<k} w1^j w2^(k-1-j) to avoid
    cancellation between the two series.
    """
    dw = w2 - w1
    p = np.ones_like(w1)      # power sum P_k, starts at P_1 = 1
    w1_pow = np.ones_like(w1)
    acc = np.zeros_like(w1)
    sign = 1.0
    fact = 1.0
    for k in range(1, 60):
        acc = acc + sign * p / (k * fact)
        term_scale = np.max(np.abs(p)) / (k * fact)
        if term_scale < 1e-22:
            break
        w1_pow = w1_pow * w1
        p = p * w2 + w1_pow
        sign = -sign
        fact *= k + 1
    return dw * acc


def _clog1p(q) -> np.ndarray:
    q = np.asarray(q, dtype=complex)
    out = np.empty_like(q)
    small = np.abs(q) < 1e-4
    qs = q[small]
    out[small] = qs * (1.0 - qs * (0.5 - qs * (1.0 / 3.0 - qs * 0.25)))
    out[~small] = np.log(1.0 + q[~small])
    return out


def ein_diff(w1, w2) -> np.ndarray:
    """Ein(w2) - Ein(w1) for arguments in the right half plane."""
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    out = np.empty_like(w1)
    use_series = np.maximum(np.abs(w1), np.abs(w2)) <= _SERIES_CUT
    if use_series.any():
        out[use_series] = _ein_series_diff(w1[use_series], w2[use_series])
    big = ~use_series
    if big.any():
        a, b = w1[big], w2[big]
        # Ein(w) = gamma + Log w + E1(w); the Log difference collapses to
        # log1p since both arguments share the right half plane
        out[big] = _clog1p((b - a) / a) + exp1(b) - exp1(a)
    return out


def kernel_a_pair_moments(s0, s2, c: float):
    """(M0, M1, M2) of exp(-c s) against {1, xi, xi^2} on chords s0 -> s2."""
    s0 = np.asarray(s0, dtype=complex)
    s2 = np.asarray(s2, dtype=complex)
    delta = s2 - s0
    if c == 0.0:
        return delta, delta / 2.0, delta / 3.0
    w = -c * delta
    damp = np.exp(-c * s0)
    return (delta * damp * phim(0, w),
            delta * damp * phim(1, w),
            delta * damp * phim(2, w))


def _one_minus_phim(m: int, w) -> np.ndarray:
    """1/(m+1) - phim(m, w) = -integral of tau^m expm1(w tau), stable near 0."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) < 0.5
    if small.any():
        ws = w[small]
        acc = np.zeros_like(ws)
        term = ws.copy()
        for j in range(1, 30):
            acc = acc + term / (m + j + 1)
            term = term * ws / (j + 1)
            if np.max(np.abs(term)) < 1e-20:
                break
        out[small] = -acc
    big = ~small
    if big.any():
        out[big] = 1.0 / (m + 1) - phim(m, w[big])
    return out


def _a_moments(s0, delta, t: float, m_max: int):
    """A_m = integral of tau^m (1 - exp(-t s(tau))) dtau for m = 0..m_max.

    Split as (1 - e^{-t s0})/(m+1) + e^{-t s0} (1/(m+1) - phim(m, -t delta))
    so both pieces stay cancellation-free for small t|s|.
    """
    w0 = -t * s0
    one_minus_damp = -w0 * phim(0, w0)  # 1 - exp(-t s0), exact identity
    damp = np.exp(w0)
    wd = -t * delta
    return [one_minus_damp / (m + 1) + damp * _one_minus_phim(m, wd)
            for m in range(m_max + 1)]


def kernel_b_pair_moments(s0, s2, t: float):
    """(M0, M1, M2) of (1 - exp(-t s))/s against {1, xi, xi^2} on chords."""
    s0 = np.asarray(s0, dtype=complex)
    s2 = np.asarray(s2, dtype=complex)
    if t == 0.0:
        zero = np.zeros_like(s0)
        return zero, zero.copy(), zero.copy()
    delta = s2 - s0
    r = s0 / delta
    i0 = ein_diff(t * s0, t * s2)
    m0 = i0
    m1 = np.empty_like(i0)
    m2 = np.empty_like(i0)
    direct = np.abs(r) <= _R_CUT
    if direct.any():
        a = _a_moments(s0[direct], delta[direct], t, 1)
        rd, i0d = r[direct], i0[direct]
        m1[direct] = a[0] - rd * i0d
        m2[direct] = a[1] - rd * a[0] + rd * rd * i0d
    far = ~direct
    if far.any():
        a = _a_moments(s0[far], delta[far], t, 6)
        rf = r[far]
        inv = 1.0 / rf
        m1[far] = inv * (a[1] - inv * (a[2] - inv * (a[3] - inv * (a[4] - inv * a[5]))))
        m2[far] = inv * (a[2] - inv * (a[3] - inv * (a[4] - inv * (a[5] - inv * a[6]))))
    return m0, m1, m2


def _chord_moments(s0, s2, kernel: str, scale: float):
    """Directed moments of the kernel against {1, xi, xi^2} on chords s0 -> s2.

    Chords with Re(s2) < Re(s0) are integrated from the other end (so the
    kernel exponent never has a growing real part) and mapped back with the
    binomial relations for (1 - xi)^m.
    """
    flip = s2.real < s0.real
    a = np.where(flip, s2, s0)
    b = np.where(flip, s0, s2)
    if kernel == "exp":
        j0, j1, j2 = kernel_a_pair_moments(a, b, scale)
    elif kernel == "flow":
        j0, j1, j2 = kernel_b_pair_moments(a, b, scale)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    m0 = np.where(flip, -j0, j0)
    m1 = np.where(flip, -(j0 - j1), j1)
    m2 = np.where(flip, -(j0 - 2.0 * j1 + j2), j2)
    return m0, m1, m2


def pair_weights(s_nodes: np.ndarray, triples: np.ndarray, kernel: str,
                 scale: float) -> np.ndarray:
    """Per-node weights W with sum_j W_j f(z_j) ~ closed-contour kernel integral.

    ``triples`` is an (n, 3) index array of consecutive collinear nodes; the
    functional values are interpolated quadratically on each chord pair and the
    kernel is integrated exactly.  Degenerate chords (clustered nodes that
    coincide at double precision) degrade gracefully to linear interpolation
    or zero weight.
    """
    i0 = triples[:, 0]
    i1 = triples[:, 1]
    i2 = triples[:, 2]
    s0, s1, s2 = s_nodes[i0], s_nodes[i1], s_nodes[i2]
    delta = s2 - s0
    good = np.abs(delta) > 1e-14 * (np.abs(s0) + np.abs(s2) + 1e-300)
    if not good.all():
        i0, i1, i2 = i0[good], i1[good], i2[good]
        s0, s1, s2 = s0[good], s1[good], s2[good]
        delta = delta[good]
    m0, m1, m2 = _chord_moments(s0, s2, kernel, scale)
    xi1 = ((s1 - s0) / delta).real  # collinear within a side
    quad = (xi1 > 1e-9) & (xi1 < 1.0 - 1e-9)
    out = np.zeros(s_nodes.shape, dtype=complex)
    if quad.any():
        x = xi1[quad]
        q0, q1, q2 = m0[quad], m1[quad], m2[quad]
        np.add.at(out, i0[quad], (q2 - (1.0 + x) * q1 + x * q0) / x)
        np.add.at(out, i1[quad], (q2 - q1) / (x * x - x))
        np.add.at(out, i2[quad], (q2 - x * q1) / (1.0 - x))
    lin = ~quad
    if lin.any():
        # midpoint coincides with an endpoint: interpolate linearly instead
        np.add.at(out, i0[lin], m0[lin] - m1[lin])
        np.add.at(out, i2[lin], m1[lin])
    return out
