"""Admissible rectangular contours and the full time-evolution assembly.

The contour is a rectangle enclosing the limiting student-gram spectrum but
not -lambda, crossing the real axis at -lambda/2 and 1.2 max(spectrum).  Nodes
are graded toward the left crossing (where the resolvent functionals vary on
the lambda scale) and toward the corners (so the closed-curve trapezoid rule
keeps spectral accuracy for analytic integrands).  Time-dependent kernels are
integrated exactly per segment against quadratically interpolated functional
values; see :mod:`descent._segquad`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from ._segquad import pair_weights
from .selfconsistent import (
    ConvergenceError,
    SingularPoleError,
    solve_zeta,
    spectral_density_log,
    zeta_on_contour,
)

DEFAULT_NODES_PER_SIDE = 400
DEFAULT_TIMES = np.logspace(-2.0, 6.0, 60)
IMAG_RESIDUE_TOL = 1e-6


def _bump(x):
    """exp(-1/x) extended by 0 at x <= 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 1e-12
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _smooth01(x):
    """C-infinity step on [0, 1]; every derivative vanishes at both ends.

    The trapezoid rule on a closed contour parametrized through this map is
    spectrally accurate despite the rectangle corners.
    """
    f, g = _bump(x), _bump(1.0 - x)
    return f / (f + g)


def _smooth01_deriv(x):
    x = np.asarray(x, dtype=float)
    f, g = _bump(x), _bump(1.0 - x)
    fp = np.zeros_like(x)
    gp = np.zeros_like(x)
    pos = x > 1e-12
    fp[pos] = f[pos] / x[pos] ** 2
    neg = (1.0 - x) > 1e-12
    gp[neg] = g[neg] / (1.0 - x[neg]) ** 2
    return (fp * g + f * gp) / (f + g) ** 2


def _odd_smooth(t):
    """Odd C-infinity map [-1,1] -> [-1,1], derivative 2 at the midpoint."""
    return 2.0 * _smooth01((np.asarray(t) + 1.0) / 2.0) - 1.0


def _odd_smooth_deriv(t):
    return _smooth01_deriv((np.asarray(t) + 1.0) / 2.0)


def _solve_sinh_ratio(ratio: float) -> float:
    """a with sinh(a)/a = ratio (clustering strength), ratio >= 1."""
    if ratio <= 1.0 + 1e-12:
        return 1e-8
    return brentq(lambda a: math.sinh(a) / a - ratio, 1e-8, 60.0)


def _solve_exp_ratio(ratio: float) -> float:
    """b with (e^b - 1)/b = ratio, ratio >= 1."""
    if ratio <= 1.0 + 1e-12:
        return 1e-8
    return brentq(lambda b: math.expm1(b) / b - ratio, 1e-8, 60.0)


@dataclass(frozen=True)
class Contour:
    """Closed rectangular contour with nodes, plain weights and side layout.

    Nodes run counterclockwise from the bottom-right corner; node (5n - j) mod
    4n is the conjugate of node j, which downstream code uses to make Schwarz
    symmetry exact.
    """

    nodes: np.ndarray
    weights: np.ndarray
    rect: tuple[float, float, float]  # (left, right, half_height)
    lam: float
    nodes_per_side: int

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return self.nodes.size

    def conj_index(self, j: int) -> int:
        n = self.nodes_per_side
        return (5 * n - j) % (4 * n)

    def right_crossing_index(self) -> int:
        return self.nodes_per_side // 2

    def left_crossing_index(self) -> int:
        return 2 * self.nodes_per_side + self.nodes_per_side // 2

    def chain_indices(self, full: bool = False) -> list[int]:
        """Continuation order: right crossing, counterclockwise.

        The default stops at the left crossing (upper half; the rest follows
        by conjugation); ``full`` walks the whole loop.
        """
        n = self.nodes_per_side
        start = self.right_crossing_index()
        count = 4 * n if full else (self.left_crossing_index() - start + 1)
        return [(start + k) % (4 * n) for k in range(count)]

    def triples(self) -> np.ndarray:
        """Non-overlapping collinear index triples covering the closed loop."""
        m = 4 * self.nodes_per_side
        j = np.arange(0, m, 2)
        return np.stack([j, (j + 1) % m, (j + 2) % m], axis=1)


def build_rectangle(spectrum_max: float, lam: float, half_height: float | None = None,
                    nodes_per_side: int = DEFAULT_NODES_PER_SIDE) -> Contour:
    """Rectangle crossing the real axis at -lambda/2 and 1.2 max(spectrum, lambda).

    ``nodes_per_side`` counts segments per side (rounded up to even, >= 8);
    trapezoidal weights come from the analytic derivative of the graded,
    corner-smoothed parametrization of each side.
    """
    if spectrum_max < 0:
        raise ValueError("spectrum_max must be nonnegative")
    if not lam > 0:
        raise ValueError("lambda must be positive; the contour must exclude -lambda")
    if nodes_per_side < 8:
        raise ValueError("nodes_per_side must be at least 8")
    nps = int(nodes_per_side) + (int(nodes_per_side) % 2)
    left = -lam / 2.0
    right = 1.2 * max(spectrum_max, lam)
    width = right - left
    h = 0.5 * width if half_height is None else float(half_height)
    if h <= 0:
        raise ValueError("half_height must be positive")

    # vertical grid: cluster toward y = 0 at the lambda scale
    s_min_v = max(min(lam / 4.0, h / 8.0), 4.0 * h / (nps * 50.0))
    a = _solve_sinh_ratio(4.0 * h / (nps * s_min_v))
    tau = -1.0 + 2.0 * np.arange(nps + 1) / nps
    pmap = _odd_smooth(tau)
    ygrid = h * np.sinh(a * pmap) / math.sinh(a)
    ygrid = 0.5 * (ygrid - ygrid[::-1])  # enforce exact odd symmetry
    dy_dtau = h * a * np.cosh(a * pmap) / math.sinh(a) * _odd_smooth_deriv(tau)

    # horizontal grid: mild clustering toward the left end
    s_min_h = max(min(lam, width / 16.0), width / (nps * 25.0))
    b = _solve_exp_ratio(2.0 * width / (nps * s_min_h))
    sig = np.arange(nps + 1) / nps
    v = 1.0 - _smooth01(sig)
    xgrid = left + width * np.expm1(b * v) / math.expm1(b)  # right -> left
    dx_dsig = -width * b * np.exp(b * v) / math.expm1(b) * _smooth01_deriv(sig)

    nodes = np.empty(4 * nps, dtype=complex)
    weights = np.zeros(4 * nps, dtype=complex)
    dtau, dsig = 2.0 / nps, 1.0 / nps
    idx = np.arange(nps)
    # right side, bottom corner -> top corner
    nodes[idx] = right + 1j * ygrid[:-1]
    weights[idx] += 1j * dy_dtau[:-1] * dtau
    # top side, right -> left
    nodes[nps + idx] = xgrid[:-1] + 1j * h
    weights[nps + idx] += dx_dsig[:-1] * dsig
    # left side, top -> bottom
    nodes[2 * nps + idx] = left + 1j * ygrid[::-1][:-1]
    weights[2 * nps + idx] += -1j * dy_dtau[::-1][:-1] * dtau
    # bottom side, left -> right
    nodes[3 * nps + idx] = xgrid[::-1][:-1] - 1j * h
    weights[3 * nps + idx] += -dx_dsig[::-1][:-1] * dsig

    return Contour(nodes, weights, (left, right, h), float(lam), nps)


def contour_integral(contour: Contour, integrand) -> complex:
    """Plain quadrature of a closed-contour integral, sum f(node) * weight."""
    try:
        vals = np.asarray(integrand(contour.nodes), dtype=complex)
        if vals.shape != contour.nodes.shape:
            raise TypeError
    except TypeError:
        vals = np.array([complex(integrand(z)) for z in contour.nodes])
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise ArithmeticError(f"integrand not finite at node {k} (z = {contour.nodes[k]})")
    return complex(np.sum(vals * contour.weights))


def estimate_spectrum_max(provider, lam: float, *, density_floor: float = 1e-8,
                          grid_points: int = 240) -> float:
    """Upper spectral edge estimate for contour sizing.

    Every provider is scanned with the log-eigenvalue density on a descending
    log grid starting above its support hint; the largest point with density
    above ``density_floor`` is inflated by 1.2.  The imaginary offset sits
    well below the floor so the off-support Lorentzian tail cannot trip the
    detector.
    """
    hint = float(provider.support_hint())
    if hint <= 0:
        return 0.0
    hi = 4.0 * hint + 2.0 * lam
    grid = np.geomspace(hi, hi * 1e-10, grid_points)
    warm = None
    for x in grid:
        sol = solve_zeta(provider, complex(x, 1e-9), warm_start=warm)
        warm = sol.zeta
        if -sol.eta.imag / math.pi > density_floor:
            return 1.2 * float(x)
    return 0.0


@dataclass(frozen=True)
class CurveResult:
    """Full time evolution of the limiting test and training errors."""

    times: np.ndarray
    gen: np.ndarray
    train: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    lam: float
    r0: float
    params: dict
    meta: dict = field(default_factory=dict)

    CSV_HEADER = "t,gen_error,train_error,B0,B1,H0,H1"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER.split(","))
            for row in zip(self.times, self.gen, self.train, self.b0, self.b1,
                           self.h0, self.h1):
                writer.writerow([repr(float(v)) for v in row])

    def to_json_dict(self) -> dict:
        return {
            "kind": "curve_result",
            "lambda": self.lam,
            "r0": self.r0,
            "params": self.params,
            "meta": self.meta,
            "times": self.times.tolist(),
            "gen_error": self.gen.tolist(),
            "train_error": self.train.tolist(),
            "B0": self.b0.tolist(),
            "B1": self.b1.tolist(),
            "H0": self.h0.tolist(),
            "H1": self.h1.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "CurveResult":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(np.array(doc["times"]), np.array(doc["gen_error"]),
                   np.array(doc["train_error"]), np.array(doc["B0"]),
                   np.array(doc["B1"]), np.array(doc["H0"]), np.array(doc["H1"]),
                   doc["lambda"], doc["r0"], doc["params"], doc.get("meta", {}))


def _check_real(name: str, value: complex, tol: float) -> float:
    if abs(value.imag) > tol:
        raise ArithmeticError(
            f"{name} has imaginary residue {value.imag:.3e} above {tol:.1e}; "
            "increase nodes_per_side")
    return float(value.real)


def evolution_curves(provider, lam: float, r0: float, times=None,
                     nodes_per_side: int = DEFAULT_NODES_PER_SIDE,
                     half_height: float | None = None,
                     spectrum_max: float | None = None,
                     h1_variant: str = "result4",
                     imag_tol: float = IMAG_RESIDUE_TOL) -> CurveResult:
    """Assemble the test/train error curves from the contour representation.

    zeta is solved once per node by continuation; the f1/h1 kernels are then
    tensor products over the cached node grid, so each time point costs one
    set of kernel weights plus an N x N contraction.
    """
    if not lam > 0:
        raise ValueError(
            "lambda must be positive for the contour evolution; for the "
            "lambda -> 0 limit evaluate infinite_time_errors at a small lambda")
    times = DEFAULT_TIMES.copy() if times is None else np.asarray(times, dtype=float)
    if (times < 0).any():
        raise ValueError("times must be nonnegative")
    smax = estimate_spectrum_max(provider, lam) if spectrum_max is None else spectrum_max
    contour = build_rectangle(smax, lam, half_height, nodes_per_side)
    sols = zeta_on_contour(provider, contour)

    zeta = np.array([s.zeta for s in sols])
    eta = np.array([s.eta for s in sols])
    f0 = np.array([s.f0 for s in sols])
    f2v = np.asarray(provider.f2_of(zeta), dtype=complex)
    c0 = provider.c0()

    a_grid, b_grid = provider.f1_parts_grid(zeta, zeta)
    np.subtract(1.0, b_grid, out=b_grid)
    if np.abs(b_grid).min() < 1e-13:
        raise SingularPoleError("f1_tilde pole met on the contour grid")
    f1t = np.divide(a_grid, b_grid, out=a_grid)  # a_grid becomes f1_tilde
    del a_grid, b_grid
    h2v = eta * (c0 * f0 + f2v)
    h0v = eta * f0
    if h1_variant == "result4":
        h1m = np.outer(eta, eta) * f1t
    elif h1_variant == "appendix-b":
        h1m = np.outer(eta, eta) * (f1t + f2v[:, None] + f2v[None, :] - c0)
    else:
        raise ValueError(f"unknown h1_variant {h1_variant!r}")
    h1m += h2v[:, None]
    h1m += h2v[None, :]
    h1m -= c0
    f1 = f1t  # reuse the buffer: f1 = f2(x) + f2(y) + f1_tilde - c0
    f1 += f2v[:, None]
    f1 += f2v[None, :]
    f1 -= c0

    s_nodes = contour.nodes + lam
    triples = contour.triples()
    inv_2pii = 1.0 / (2j * math.pi)
    out = {k: np.empty(times.size) for k in ("b0", "b1", "h0", "h1")}
    for i, t in enumerate(times):
        wa = pair_weights(s_nodes, triples, "exp", 2.0 * t)
        wb = pair_weights(s_nodes, triples, "flow", float(t))
        b0 = -inv_2pii * np.dot(wa, f0)
        h0 = -inv_2pii * np.dot(wa, h0v)
        single_b = (2.0 * inv_2pii) * np.dot(wb, f2v)
        single_h = (2.0 * inv_2pii) * np.dot(wb, h2v)
        double_b = -(1.0 / (4 * math.pi**2)) * np.dot(wb, f1 @ wb)
        double_h = -(1.0 / (4 * math.pi**2)) * np.dot(wb, h1m @ wb)
        out["b0"][i] = _check_real("B0", b0, imag_tol)
        out["h0"][i] = _check_real("H0", h0, imag_tol)
        out["b1"][i] = _check_real("B1", double_b + single_b, imag_tol)
        out["h1"][i] = _check_real("H1", double_h + single_h, imag_tol)

    gen = c0 + r0**2 * out["b0"] + out["b1"]
    train = c0 + r0**2 * out["h0"] + out["h1"]
    params = provider.describe() if hasattr(provider, "describe") else {}
    meta = {"nodes_per_side": contour.nodes_per_side, "spectrum_max": smax,
            "half_height": contour.rect[2], "h1_variant": h1_variant}
    return CurveResult(times, gen, train, out["b0"], out["b1"], out["h0"],
                       out["h1"], float(lam), float(r0), params, meta)
