"""Random-features specialization: the coupled (zeta, gamma, delta) system.

The random-features model does not reduce to commuting atoms; instead the
limiting functionals close on two auxiliary scalars gamma_z, delta_z coupled to
zeta_z.  :class:`RFParams` solves that system and exposes the same
functional-provider interface as :class:`~descent.spectra.AtomSpectrum`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KAPPA1_DENOM_TOL = 1e-13


@dataclass(frozen=True)
class RFParams:
    """Random features of a noisy linear target.

    mu, nu: linear/nonlinear activation coefficients; r, sigma: target signal
    and noise; phi0 = n/p, psi0 = N/p; psi = p/d with d = p + N + q.
    """

    mu: float
    nu: float
    r: float
    sigma: float
    phi0: float
    psi0: float
    psi: float

    def __post_init__(self):
        if self.phi0 <= 0 or self.psi0 <= 0:
            raise ValueError("phi0 and psi0 must be positive")
        if not 0 < self.psi:
            raise ValueError("psi must be positive")
        if (1.0 + self.psi0) * self.psi >= 1.0:
            raise ValueError("(1 + psi0) * psi must stay below 1 (noise block size)")

    # -- functional-provider interface -------------------------------------

    def phi(self) -> float:
        return self.phi0 * self.psi

    def c0(self) -> float:
        return self.r**2 + self.sigma**2

    def mean_u(self) -> float:
        # (1/d) tr U for the random-features blocks
        return self.psi0 * (self.mu**2 + self.nu**2)

    def gamma_delta(self, zeta):
        """Solve the inner (gamma, delta) pair for given zeta (vectorized).

        gamma solves a*g^2 + b*g - 1 = 0 with a = mu^2 psi0 (zeta/phi0 + nu^2)
        and b = mu^2 (1 - psi0) + zeta/phi0 + nu^2; the physical root continues
        gamma ~ phi0/zeta at large zeta.  Selection: damped iteration of the
        defining pair from delta = 1, then snap to the closer quadratic root.
        """
        zeta = np.asarray(zeta, dtype=complex)
        mu2, nu2 = self.mu**2, self.nu**2
        base = zeta / self.phi0 + nu2
        if mu2 == 0.0:
            gamma = 1.0 / base
            return gamma, np.ones_like(gamma)
        gamma = 1.0 / (mu2 + base)  # delta = 1 start
        for _ in range(400):
            delta = 1.0 / (1.0 + gamma * mu2 * self.psi0)
            new = 1.0 / (mu2 * delta + base)
            step = np.max(np.abs(new - gamma) / (1.0 + np.abs(new)))
            gamma = 0.5 * gamma + 0.5 * new
            if step <= 1e-15:
                break
        # snap to the exact quadratic root nearest the iterate
        a = mu2 * self.psi0 * base
        b = mu2 * (1.0 - self.psi0) + base
        disc = np.sqrt(b * b + 4.0 * a)
        root_plus = (-b + disc) / (2 * a)
        root_minus = (-b - disc) / (2 * a)
        gamma = np.where(np.abs(root_plus - gamma) <= np.abs(root_minus - gamma),
                         root_plus, root_minus)
        delta = 1.0 / (1.0 + gamma * mu2 * self.psi0)
        return gamma, delta

    def zeta_rhs(self, zeta):
        """Trace term of the zeta-equation through the closed gamma relation."""
        zeta = np.asarray(zeta, dtype=complex)
        gamma, _ = self.gamma_delta(zeta)
        return zeta * (self.psi0 / self.phi0) * (1.0 - gamma * zeta / self.phi0)

    def zeta_rhs_deriv(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        gamma, _ = self.gamma_delta(zeta)
        mu2, nu2 = self.mu**2, self.nu**2
        base = zeta / self.phi0 + nu2
        a = mu2 * self.psi0 * base
        b = mu2 * (1.0 - self.psi0) + base
        da = mu2 * self.psi0 / self.phi0
        db = 1.0 / self.phi0
        dgamma = -(da * gamma**2 + db * gamma) / (2.0 * a * gamma + b) if mu2 else -db / base**2
        return (self.psi0 / self.phi0) * (1.0 - 2.0 * gamma * zeta / self.phi0
                                          - zeta**2 * dgamma / self.phi0)

    def f2_of(self, zeta):
        _, delta = self.gamma_delta(np.asarray(zeta, dtype=complex))
        return self.c0() - (self.r**2 * delta + self.sigma**2)

    def _kappa1(self, gx, gy, dx, dy):
        mu2 = self.mu**2
        denom = 1.0 - mu2**2 * self.psi0 * dx * dy * gx * gy
        if np.min(np.abs(denom)) < KAPPA1_DENOM_TOL:
            raise ArithmeticError("kappa_1 denominator vanished (interpolation pole)")
        return dx * dy * (1.0 + self.nu**2 * mu2 * self.psi0 * gx * gy) / denom

    def f1_parts(self, zeta_x, zeta_y):
        zx, zy = complex(zeta_x), complex(zeta_y)
        gx, dx = self.gamma_delta(zx)
        gy, dy = self.gamma_delta(zy)
        a = self.r**2 * complex(self._kappa1(gx, gy, dx, dy)) + self.sigma**2
        if abs(zx - zy) < 1e-7 * (1.0 + abs(zx)):
            b = complex(self.zeta_rhs_deriv(zx))
        else:
            # b = 1 + (y - x)/(zeta_y - zeta_x) with z recovered from the branch
            x = -zx + complex(self.zeta_rhs(zx))
            y = -zy + complex(self.zeta_rhs(zy))
            b = 1.0 + (y - x) / (zy - zx)
        return a, b

    def f1_parts_grid(self, zeta_x, zeta_y):
        zx = np.asarray(zeta_x, dtype=complex)
        zy = np.asarray(zeta_y, dtype=complex)
        gx, dx = self.gamma_delta(zx)
        gy, dy = self.gamma_delta(zy)
        mu2 = self.mu**2
        denom = 1.0 - mu2**2 * self.psi0 * np.outer(dx * gx, dy * gy)
        if np.min(np.abs(denom)) < KAPPA1_DENOM_TOL:
            raise ArithmeticError("kappa_1 denominator vanished on the grid")
        kappa1 = np.outer(dx, dy) * (1.0 + self.nu**2 * mu2 * self.psi0 * np.outer(gx, gy)) / denom
        a = self.r**2 * kappa1 + self.sigma**2
        rhs_x = self.zeta_rhs(zx)
        rhs_y = self.zeta_rhs(zy)
        dz = zy[None, :] - zx[:, None]
        near = np.abs(dz) < 1e-7 * (1.0 + np.abs(zx)[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            b = (rhs_y[None, :] - rhs_x[:, None]) / dz
        if near.any():
            deriv = self.zeta_rhs_deriv(zx)
            b = np.where(near, deriv[:, None], b)
        return a, b

    def support_hint(self) -> float:
        u_top = (abs(self.mu) * (1.0 + math.sqrt(self.psi0)) ** 2 * max(1.0, self.psi0)
                 + self.nu**2) / self.psi + 1.0
        return u_top * (1.0 + math.sqrt(self.phi())) ** 2

    def describe(self) -> dict:
        return self.to_dict()

    def to_dict(self) -> dict:
        return {"model": "random_features", "mu": self.mu, "nu": self.nu,
                "r": self.r, "sigma": self.sigma, "phi0": self.phi0,
                "psi0": self.psi0, "psi": self.psi}


@dataclass(frozen=True)
class RFState:
    """Jointly converged (zeta, gamma, delta) at a spectral parameter z."""

    z: complex
    zeta: complex
    gamma_z: complex
    delta_z: complex
    residual: float
    iterations: int

    def equation_residuals(self, params: RFParams) -> tuple[float, float, float]:
        """Residuals of the delta, gamma and zeta defining equations."""
        mu2 = params.mu**2
        r1 = abs(self.delta_z * (1.0 + self.gamma_z * mu2 * params.psi0) - 1.0)
        r2 = abs(self.gamma_z * (mu2 * self.delta_z + self.zeta / params.phi0
                                 + params.nu**2) - 1.0)
        r3 = abs((self.gamma_z / params.phi0) * self.zeta - 1.0
                 + (params.phi0 / params.psi0) * (1.0 + self.z / self.zeta))
        return r1, r2, r3


def rf_solve_state(params: RFParams, z, warm_start=None, *, damping: float = 0.5,
                   tol: float = 1e-12, max_iter: int = 100_000) -> RFState:
    """Damped simultaneous iteration of the coupled (zeta, gamma, delta) system.

    Update order: delta from gamma, gamma from (delta, zeta), zeta from gamma.
    """
    z = complex(z)
    if z == 0:
        raise ValueError("z = 0 is not an admissible spectral parameter")
    mu2, nu2 = params.mu**2, params.nu**2
    phi0, psi0 = params.phi0, params.psi0
    if warm_start is not None:
        zeta = complex(warm_start.zeta if isinstance(warm_start, RFState) else warm_start)
    elif z.imag == 0 and z.real <= 0:
        zeta = -z + abs(z) + 1.0
    else:
        zeta = -z
    gamma = 1.0 / (mu2 + zeta / phi0 + nu2)
    delta = 1.0 / (1.0 + gamma * mu2 * psi0)
    omega = damping
    prev_res = math.inf
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        delta_new = 1.0 / (1.0 + gamma * mu2 * psi0)
        gamma_new = 1.0 / (mu2 * delta_new + zeta / phi0 + nu2)
        zeta_new = -z + zeta * (psi0 / phi0) * (1.0 - gamma_new * zeta / phi0)
        res = max(abs(delta_new - delta), abs(gamma_new - gamma),
                  abs(zeta_new - zeta) / max(1.0, abs(zeta)))
        delta = delta_new
        gamma = (1 - omega) * gamma + omega * gamma_new
        zeta = (1 - omega) * zeta + omega * zeta_new
        if res <= max(tol, 1e-5) or it >= 2000:
            break
        if res > prev_res:
            omega = max(omega / 2, 1.0 / 64)
        prev_res = res
    # Newton on the reduced scalar equation finishes off slow damped tails
    # near the interpolation threshold; the stop criterion is the gamma-zeta
    # relation itself so all three stated equations hold to tol.
    gamma, delta = params.gamma_delta(zeta)
    for extra in range(200):
        f = zeta + z - zeta * (psi0 / phi0) * (1.0 - gamma * zeta / phi0)
        rel = abs(f) * (psi0 / phi0) / max(abs(zeta), 1e-300)
        if rel <= 0.5 * tol and abs(f) <= tol * max(1.0, abs(zeta)):
            break
        fp = 1.0 - complex(params.zeta_rhs_deriv(zeta))
        zeta = zeta - f / fp
        gamma, delta = params.gamma_delta(zeta)
    else:
        raise ArithmeticError(
            f"random-features state iteration did not converge: residual {res:.3e}")
    final = abs(zeta + z - zeta * (psi0 / phi0) * (1.0 - gamma * zeta / phi0))
    return RFState(z, complex(zeta), complex(gamma), complex(delta),
                   float(final / max(1.0, abs(zeta))), it + extra)


def rf_functionals(params: RFParams, state_x: RFState, state_y: RFState):
    """(f1_tilde, f2_x, c0) assembled from two converged states.

    kappa_2 = -(zeta_y - zeta_x)/(y - x), replaced by the central-difference
    limit (step 1e-6 (1 + |x|)) when the two states coincide.
    """
    x, y = state_x.z, state_y.z
    if abs(x - y) > 1e-9 * (1.0 + abs(x)):
        kappa2 = -(state_y.zeta - state_x.zeta) / (y - x)
    else:
        h = 1e-6 * (1.0 + abs(x))
        up = rf_solve_state(params, x + h, warm_start=state_x)
        dn = rf_solve_state(params, x - h, warm_start=state_x)
        kappa2 = -(up.zeta - dn.zeta) / (2 * h)
    kappa1 = params._kappa1(state_x.gamma_z, state_y.gamma_z,
                            state_x.delta_z, state_y.delta_z)
    f1_tilde = kappa2 * (params.r**2 * complex(kappa1) + params.sigma**2)
    f2_x = params.c0() - (params.r**2 * state_x.delta_z + params.sigma**2)
    return f1_tilde, f2_x, params.c0()
