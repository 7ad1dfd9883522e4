"""Model zoo: joint eigenvalue atoms of the commuting (U, V*) pair.

Every named model is reduced to a discrete joint law of (u, v*) atoms plus the
sample ratio phi = n/d.  The resulting :class:`AtomSpectrum` implements the
functional-provider interface consumed by the self-consistent solver and the
contour machinery.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

MERGE_TOL = 1e-14
WEIGHT_SUM_TOL = 1e-12


def _merge_atoms(weights, u, v):
    """Merge atoms with coinciding (u, v*) coordinates, summing weights."""
    order = np.lexsort((v, u))
    weights, u, v = weights[order], u[order], v[order]
    out_w, out_u, out_v = [], [], []
    for w_i, u_i, v_i in zip(weights, u, v):
        if out_u and abs(u_i - out_u[-1]) <= MERGE_TOL and abs(v_i - out_v[-1]) <= MERGE_TOL:
            out_w[-1] += w_i
        else:
            out_w.append(w_i)
            out_u.append(u_i)
            out_v.append(v_i)
    return np.array(out_w), np.array(out_u), np.array(out_v)


@dataclass(frozen=True)
class AtomSpectrum:
    """Discrete joint law of (u, v*) with sample ratio phi = n/d.

    Weights are probability masses; u are eigenvalues of U = AA^T; v_star are
    the matching eigenvalues of the beta*-averaged V*.
    """

    weights: np.ndarray
    u: np.ndarray
    v_star: np.ndarray
    sample_ratio: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v_star, dtype=float)
        if not (w.shape == u.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("atoms must be 1-d arrays of equal length")
        # drop exact zero-weight atoms before validating
        keep = w > 0.0
        if not keep.all():
            if (w[~keep] < 0.0).any():
                raise ValueError("atom weights must be positive")
            w, u, v = w[keep], u[keep], v[keep]
        w, u, v = _merge_atoms(w, u, v)
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"atom weights sum to {w.sum()!r}, expected 1")
        if (u < 0).any() or (v < 0).any():
            raise ValueError("u and v* atoms must be nonnegative")
        if not self.sample_ratio > 0:
            raise ValueError("sample ratio phi must be positive")
        for name, arr in (("weights", w), ("u", u), ("v_star", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- functional-provider interface -------------------------------------

    def phi(self) -> float:
        return float(self.sample_ratio)

    def c0(self) -> float:
        return float(np.dot(self.weights, self.v_star))

    def mean_u(self) -> float:
        return float(np.dot(self.weights, self.u))

    def zeta_rhs(self, zeta):
        """Trace term of the zeta-equation, sum_w zeta*u / (phi*u + zeta)."""
        z = np.asarray(zeta)[..., None]
        pu = self.sample_ratio * self.u
        return np.sum(self.weights * z * self.u / (pu + z), axis=-1)

    def zeta_rhs_deriv(self, zeta):
        z = np.asarray(zeta)[..., None]
        pu = self.sample_ratio * self.u
        return np.sum(self.weights * pu * self.u / (pu + z) ** 2, axis=-1)

    def f2_of(self, zeta):
        z = np.asarray(zeta)[..., None]
        pu = self.sample_ratio * self.u
        return self.c0() - np.sum(self.weights * z * self.v_star / (pu + z), axis=-1)

    def f1_parts(self, zeta_x, zeta_y):
        """Coefficients (a, b) with f1_tilde = a / (1 - b)."""
        pu = self.sample_ratio * self.u
        dx = pu + zeta_x
        dy = pu + zeta_y
        a = np.sum(self.weights * zeta_x * zeta_y * self.v_star / (dx * dy))
        b = np.sum(self.weights * pu * self.u / (dx * dy))
        return complex(a), complex(b)

    def f1_parts_grid(self, zeta_x, zeta_y):
        """Vectorized f1_parts over the outer grid zeta_x[:, None] x zeta_y[None, :]."""
        zx = np.asarray(zeta_x)[:, None]
        zy = np.asarray(zeta_y)[:, None]
        pu = self.sample_ratio * self.u
        px = 1.0 / (pu + zx)  # (nx, natoms)
        py = 1.0 / (pu + zy)
        a = (zx * px * (self.weights * self.v_star)) @ (zy * py).T
        b = (px * (self.weights * pu * self.u)) @ py.T
        return a, b

    def support_hint(self) -> float:
        """Crude upper bound for the top of the student-gram spectrum."""
        umax = float(self.u.max())
        return umax * (1.0 + math.sqrt(self.sample_ratio)) ** 2

    def describe(self) -> dict:
        return {
            "provider": "atoms",
            "phi": self.sample_ratio,
            "atoms": [list(t) for t in zip(self.weights, self.u, self.v_star)],
        }


# ---------------------------------------------------------------------------
# Named model constructors (Table-1 zoo)
# ---------------------------------------------------------------------------

def ridgeless_spectrum(r: float, sigma: float, psi: float, phi: float) -> AtomSpectrum:
    """Ridgeless regression with signal r and noise sigma; psi = p/d."""
    if not 0 < psi < 1:
        raise ValueError(f"psi must lie in (0, 1), got {psi}")
    atoms_w = [psi, 1.0 - psi]
    atoms_u = [1.0 / psi, 0.0]
    atoms_v = [r**2 / psi, sigma**2 / (1.0 - psi)]
    return AtomSpectrum(np.array(atoms_w), np.array(atoms_u), np.array(atoms_v), phi)


def mismatched_spectrum(r: float, sigma: float, gamma: float, psi: float, phi: float) -> AtomSpectrum:
    """Mismatched ridgeless regression: the student sees a gamma-fraction of features."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if not 0 < psi < 1:
        raise ValueError(f"psi must lie in (0, 1), got {psi}")
    w = np.array([gamma * psi, (1.0 - gamma) * psi, 1.0 - psi])
    u = np.array([1.0 / (gamma * psi), 0.0, 0.0])
    v = np.array([r**2 / psi, r**2 / psi, sigma**2 / (1.0 - psi)])
    return AtomSpectrum(w, u, v, phi)


def nonisotropic_spectrum(p_levels: int, alpha: float, phi: float) -> AtomSpectrum:
    """Noiseless model with p_levels feature groups scaled by alpha^-i."""
    if p_levels < 1:
        raise ValueError("p_levels must be >= 1")
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    i = np.arange(p_levels)
    return AtomSpectrum(np.full(p_levels, 1.0 / p_levels), alpha ** (-i.astype(float)),
                        np.ones(p_levels), phi)


def nonisotropic_asymptote(p_levels: int, phi: float) -> float:
    """alpha -> infinity limit of the infinite-time test error at sample ratio phi.

    phi(1-phi) / [p (phi - k/p)((k+1)/p - phi)] - phi on the open cell
    (k/p, (k+1)/p) containing phi; the cell boundaries are poles.
    """
    if not 0 < phi < 1:
        raise ValueError("phi must lie in (0, 1)")
    p = int(p_levels)
    k = math.floor(phi * p)
    if min(abs(phi * p - round(phi * p)), abs(phi * p - k), abs(phi * p - k - 1)) < 1e-12:
        raise ValueError(f"phi = {phi} sits on a grid point k/{p} (pole of the expansion)")
    return phi * (1.0 - phi) / (p * (phi - k / p) * ((k + 1) / p - phi)) - phi


def kernel_spectrum(omega: Sequence[float], theta0: Sequence[float], phi: float) -> AtomSpectrum:
    """Kernel regression with weights omega_i and target coefficients theta0_i.

    Uses the diagonal replacement of V* valid for diagonal U, giving commuting
    atoms (omega_i, theta0_i^2 omega_i) of weight 1/d each.
    """
    om = np.asarray(omega, dtype=float)
    th = np.asarray(theta0, dtype=float)
    if om.shape != th.shape or om.ndim != 1 or om.size == 0:
        raise ValueError("omega and theta0 must be 1-d arrays of the same length")
    if (om < 0).any():
        raise ValueError("omega must be nonnegative")
    d = om.size
    return AtomSpectrum(np.full(d, 1.0 / d), om, th**2 * om, phi)


def atoms_c0(spectrum: AtomSpectrum) -> float:
    """Limiting normalized trace of V*: the weighted sum of v* atoms."""
    return spectrum.c0()


# ---------------------------------------------------------------------------
# Gaussian equivalence parameters for a pointwise activation
# ---------------------------------------------------------------------------

class HermiteEquivalents(NamedTuple):
    mu: float
    nu_sq: float
    he0: float


def hermite_equivalents(activation: Callable[[np.ndarray], np.ndarray],
                        quadrature_order: int = 200) -> HermiteEquivalents:
    """Equivalent (mu, nu^2) of an activation against the probabilists' Hermite basis.

    mu = <f, He_1>, nu^2 = <f, f> - mu^2 under the N(0,1) inner product,
    evaluated with Gauss-Hermite quadrature.  The He_0 component is returned so
    the caller can check the centering condition; a non-centered activation
    triggers a warning, not a failure.
    """
    if quadrature_order < 32:
        raise ValueError("quadrature_order must be >= 32")
    nodes, weights = hermegauss(quadrature_order)
    weights = weights / weights.sum()  # normalize the N(0,1) measure
    try:
        vals = np.asarray(activation(nodes), dtype=float)
        if vals.shape != nodes.shape:
            raise TypeError
    except TypeError:
        vals = np.array([float(activation(x)) for x in nodes])
    he0 = float(np.dot(weights, vals))
    mu = float(np.dot(weights, vals * nodes))
    norm_sq = float(np.dot(weights, vals * vals))
    nu_sq = norm_sq - mu**2
    if abs(he0) > 1e-8:
        warnings.warn(f"activation is not centered: <f, He_0> = {he0:.3e}", stacklevel=2)
    return HermiteEquivalents(mu, nu_sq, he0)


# ---------------------------------------------------------------------------
# Model parameter records and their JSON form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgelessParams:
    r: float
    sigma: float
    psi: float
    phi: float

    @property
    def phi0(self) -> float:
        return self.phi / self.psi

    def spectrum(self) -> AtomSpectrum:
        return ridgeless_spectrum(self.r, self.sigma, self.psi, self.phi)

    def to_dict(self) -> dict:
        return {"model": "ridgeless", "r": self.r, "sigma": self.sigma,
                "psi": self.psi, "phi": self.phi}


@dataclass(frozen=True)
class MismatchedParams:
    r: float
    sigma: float
    gamma: float
    psi: float
    phi: float

    @property
    def phi0(self) -> float:
        return self.phi / self.psi

    @property
    def kappa(self) -> float:
        return self.phi0 / self.gamma

    def spectrum(self) -> AtomSpectrum:
        return mismatched_spectrum(self.r, self.sigma, self.gamma, self.psi, self.phi)

    def to_dict(self) -> dict:
        return {"model": "mismatched", "r": self.r, "sigma": self.sigma,
                "gamma": self.gamma, "psi": self.psi, "phi": self.phi}


@dataclass(frozen=True)
class NonisotropicParams:
    p_levels: int
    alpha: float
    phi: float

    def spectrum(self) -> AtomSpectrum:
        return nonisotropic_spectrum(self.p_levels, self.alpha, self.phi)

    def to_dict(self) -> dict:
        return {"model": "nonisotropic", "p_levels": self.p_levels,
                "alpha": self.alpha, "phi": self.phi}


@dataclass(frozen=True)
class KernelParams:
    omega: tuple
    theta0: tuple
    phi: float

    def spectrum(self) -> AtomSpectrum:
        return kernel_spectrum(self.omega, self.theta0, self.phi)

    def to_dict(self) -> dict:
        return {"model": "kernel", "omega": list(self.omega),
                "theta0": list(self.theta0), "phi": self.phi}


def model_from_dict(doc: dict):
    """Parse a model-spec document into its parameter record."""
    kind = doc.get("model")
    if kind == "ridgeless":
        return RidgelessParams(doc["r"], doc["sigma"], doc["psi"], doc["phi"])
    if kind == "mismatched":
        return MismatchedParams(doc["r"], doc["sigma"], doc["gamma"], doc["psi"], doc["phi"])
    if kind == "nonisotropic":
        return NonisotropicParams(int(doc["p_levels"]), doc["alpha"], doc["phi"])
    if kind == "kernel":
        return KernelParams(tuple(doc["omega"]), tuple(doc["theta0"]), doc["phi"])
    if kind == "random_features":
        from .randomfeatures import RFParams

        return RFParams(doc["mu"], doc["nu"], doc["r"], doc["sigma"],
                        doc["phi0"], doc["psi0"], doc["psi"])
    raise ValueError(f"unknown model kind: {kind!r}")


def model_from_json(path) -> object:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def provider_for(params):
    """Functional provider for a parameter record (atoms or RF system)."""
    if hasattr(params, "spectrum"):
        return params.spectrum()
    return params  # RFParams is its own provider
