"""Kernel-moment helpers validated against adaptive mpmath quadrature."""

import mpmath
import numpy as np
import pytest

from descent._segquad import (
    ein_diff,
    kernel_a_pair_moments,
    kernel_b_pair_moments,
    pair_weights,
    phim,
)

mpmath.mp.dps = 30


def mp_moment(s0, s2, kernel, m, panels=2):
    """Adaptive reference integral with enough panels to resolve oscillation."""
    delta = s2 - s0

    def f(xi):
        s = s0 + xi * delta
        return mpmath.mpc(xi) ** m * kernel(s) * delta

    pts = [k / panels for k in range(panels + 1)]
    return complex(mpmath.quad(f, pts))


# (segment, t, panels); panels sized to |t delta| so the reference resolves
# the kernel oscillation.  t Re(s) > 80 cases exercise the underflow branch
# where the kernel reduces to 1/s.
FLOW_CASES = [
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 0.0, 2),
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 1e-3, 2),
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 0.7, 2),
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 2.4e4, 32),      # |t delta| = 48
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 8e4, 96),        # oscillatory window
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 1e6, 4),         # t Re s = 500: dead exp
    ((0.0005 + 0.3j, 0.0005 + 0.45j), 0.7, 2),
    ((0.0005 + 0.3j, 0.0005 + 0.45j), 220.0, 24),       # |t delta| = 33
    ((0.0005 + 0.3j, 0.0005 + 0.45j), 1e6, 4),          # dead exp
    ((2.0 + 3.0j, 2.6 + 3.0j), 0.0, 2),
    ((2.0 + 3.0j, 2.6 + 3.0j), 35.0, 16),
    ((9.0 - 0.4j, 9.0 + 0.4j), 12.0, 8),
    ((1e-4 + 1e-5j, 1.3e-4 + 1e-5j), 1e-3, 2),
    ((1e-4 + 1e-5j, 1.3e-4 + 1e-5j), 2.4e4, 4),
    ((1e-4 + 1e-5j, 1.3e-4 + 1e-5j), 3e6, 4),
]


@pytest.mark.parametrize("seg,t,panels", FLOW_CASES)
def test_flow_kernel_moments(seg, t, panels):
    s0, s2 = complex(seg[0]), complex(seg[1])
    m = kernel_b_pair_moments(np.array([s0]), np.array([s2]), t)

    def kern(s):
        return (1 - mpmath.e ** (-t * s)) / s if t else mpmath.mpc(0)

    for order in range(3):
        ref = mp_moment(s0, s2, kern, order, panels)
        tol = 1e-13 + 5e-11 * abs(ref)
        assert abs(m[order][0] - ref) < tol, (order, ref, m[order][0])


EXP_CASES = [
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 0.0, 2),
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 1e-2, 2),
    ((0.0005 + 0.0j, 0.0005 + 0.002j), 4.8e4, 64),       # c |delta| = 96
    ((0.0005 + 0.3j, 0.0005 + 0.45j), 2.0, 2),
    ((0.0005 + 0.3j, 0.0005 + 0.45j), 200.0, 24),
    ((2.0 + 3.0j, 2.6 + 3.0j), 2.0, 4),
    ((9.0 - 0.4j, 9.0 + 0.4j), 12.0, 8),
]


@pytest.mark.parametrize("seg,c,panels", EXP_CASES)
def test_exp_kernel_moments(seg, c, panels):
    s0, s2 = complex(seg[0]), complex(seg[1])
    m = kernel_a_pair_moments(np.array([s0]), np.array([s2]), c)

    def kern(s):
        return mpmath.e ** (-c * s)

    for order in range(3):
        ref = mp_moment(s0, s2, kern, order, panels)
        tol = 1e-13 + 5e-11 * abs(ref)
        assert abs(m[order][0] - ref) < tol


def test_phim_matches_quadrature():
    w = np.array([0.0 + 0.0j, 0.3 - 0.2j, -8.0 + 3.0j, -300.0 + 40.0j])
    for m in range(4):
        vals = phim(m, w)
        for wi, vi in zip(w, vals):
            ref = complex(mpmath.quad(
                lambda u: mpmath.mpc(u) ** m * mpmath.e ** (wi * u), [0, 0.5, 1]))
            assert abs(vi - ref) <= 1e-13 * max(1.0, abs(ref))


def test_ein_diff_matches_mpmath():
    rng = np.random.default_rng(7)
    w1 = rng.uniform(1e-4, 20, 12) + 1j * rng.uniform(-30, 30, 12)
    w2 = w1 * (1 + rng.uniform(-0.3, 0.3, 12) + 1j * rng.uniform(-0.2, 0.2, 12))
    w2 = np.where(w2.real <= 1e-6, w1 * (1 + 0.1j), w2)
    got = ein_diff(w1, w2)
    for a, b, g in zip(w1, w2, got):
        ref = complex(mpmath.e1(b) - mpmath.e1(a) + mpmath.log(b) - mpmath.log(a))
        assert abs(g - ref) < 1e-12 * max(1.0, abs(ref))


def test_ein_diff_nearby_arguments():
    # difference of nearby arguments must not lose precision to cancellation
    w1 = np.array([3.0 + 4.0j])
    w2 = w1 * (1 + 1e-9)
    got = ein_diff(w1, w2)[0]
    ref = complex((mpmath.e1(complex(w2[0])) - mpmath.e1(complex(w1[0])))
                  + mpmath.log(complex(w2[0])) - mpmath.log(complex(w1[0])))
    assert abs(got - ref) < 1e-15


def test_pair_weights_reproduce_polynomial_integrals():
    # quadratic interpolation is exact on quadratics: integrate s^2 e^{-cs}
    s = np.array([0.1, 0.25, 0.5, 0.8, 1.2], dtype=complex)
    triples = np.array([[0, 1, 2], [2, 3, 4]])
    w = pair_weights(s, triples, "exp", 1.3)
    got = np.sum(w * s**2)
    ref = complex(mpmath.quad(lambda u: u**2 * mpmath.e ** (-1.3 * u), [0.1, 1.2]))
    assert abs(got - ref) < 1e-12
