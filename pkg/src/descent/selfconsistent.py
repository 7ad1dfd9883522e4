"""Self-consistent zeta-equation solver and the limiting functionals.

The central object is the scalar fixed point

    zeta_z = -z + T(zeta_z),    T(zeta) = provider.zeta_rhs(zeta),

whose solution feeds every limiting quantity: f0, f2, f1_tilde, the h-family
for the training error, infinite-time errors, and the spectral density.

Providers are duck-typed: anything exposing phi(), c0(), zeta_rhs(zeta),
f2_of(zeta) and f1_parts(zeta_x, zeta_y) -> (a, b) with f1_tilde = a/(1-b)
works (atom spectra, the random-features system, empirical duals).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence, runtime_checkable


@runtime_checkable
class FunctionalProvider(Protocol):
    def phi(self) -> float: ...

    def c0(self) -> float: ...

    def zeta_rhs(self, zeta): ...

    def f2_of(self, zeta): ...

    def f1_parts(self, zeta_x, zeta_y): ...


class ConvergenceError(ArithmeticError):
    """Fixed-point iteration failed; carries the last residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BranchJumpError(ArithmeticError):
    """Continuation along a contour lost branch continuity."""


class SingularPoleError(ArithmeticError):
    """f1_tilde evaluated at an interpolation-threshold pole (1 - b ~ 0)."""


@dataclass(frozen=True)
class ZetaSolution:
    """Converged branch value of the self-consistent equation at z."""

    z: complex
    zeta: complex
    eta: complex
    f0: complex
    residual: float
    iterations: int


def _damped_newton(provider, z: complex, start: complex, damping: float,
                   tol: float, max_iter: int) -> tuple[complex, float, int]:
    """Damped fixed-point iteration with Newton refinement once it is close.

    The damped map is zeta <- (1-w) zeta + w (-z + T(zeta)) with adaptive w.
    Newton steps on g(zeta) = zeta + z - T(zeta) are attempted periodically and
    kept only when they shrink |g|; this rescues the slow damped tail near
    interpolation thresholds where T'(zeta) -> 1.
    """
    zeta = complex(start)
    omega = damping
    prev_res = math.inf
    best = (zeta, math.inf)
    newton_every = 40
    for it in range(1, max_iter + 1):
        target = -z + complex(provider.zeta_rhs(zeta))
        res = abs(target - zeta) / max(1.0, abs(zeta))
        if res < best[1]:
            best = (zeta, res)
        if res <= tol:
            return zeta, res, it
        if res > 2.0 * prev_res:
            omega = max(omega / 2.0, 1.0 / 64)
        prev_res = res
        nxt = (1.0 - omega) * zeta + omega * target
        if it % newton_every == 0 or res < 1e-4:
            g = zeta - target
            h = 1e-7 * (1.0 + abs(zeta))
            gp = 1.0 - (complex(provider.zeta_rhs(zeta + h))
                        - complex(provider.zeta_rhs(zeta))) / h
            if gp != 0:
                cand = zeta - g / gp
                if cmath.isfinite(cand):
                    g_cand = cand + z - complex(provider.zeta_rhs(cand))
                    if abs(g_cand) < abs(g):
                        nxt = cand
        zeta = nxt
    raise ConvergenceError(
        f"zeta fixed point did not converge at z = {z!r} "
        f"(residual {best[1]:.3e}); z may lie inside the spectrum support, "
        "add an imaginary offset or refine the contour",
        best[1], max_iter)


def solve_zeta(provider, z, warm_start=None, *, damping: float = 0.5,
               tol: float = 1e-12, max_iter: int = 100_000) -> ZetaSolution:
    """Solve the self-consistent equation at z on the physical branch.

    Real z <= 0 without a warm start selects the positive real root (the
    lambda -> 0+ continuous branch) by starting from -z + |z| + 1.  Off-axis
    points descend an imaginary-offset ladder so the Herglotz branch
    (Im(1/zeta) sharing the sign of Im z) is tracked from far away.
    """
    z = complex(z)
    if z == 0:
        raise ValueError("z = 0 is not an admissible spectral parameter")
    if warm_start is not None:
        start = complex(warm_start.zeta if isinstance(warm_start, ZetaSolution) else warm_start)
        zeta, res, its = _damped_newton(provider, z, start, damping, tol, max_iter)
    elif z.imag == 0.0 and z.real < 0.0:
        zeta, res, its = _damped_newton(provider, z, -z + abs(z) + 1.0,
                                        damping, tol, max_iter)
        zeta = complex(zeta.real, 0.0)  # positive real root, drop roundoff
    else:
        # ladder: start far from the real axis and descend onto z
        sign = 1.0 if z.imag >= 0 else -1.0
        lift = 1.0 + abs(z)
        rungs = []
        im = lift
        while im > max(abs(z.imag), 1e-9 * lift) and len(rungs) < 40:
            rungs.append(complex(z.real, sign * im))
            im /= 4.0
        rungs.append(z)
        zeta, its = -rungs[0], 0
        for rung in rungs:
            zeta, res, used = _damped_newton(provider, rung, zeta, damping,
                                             tol if rung is rungs[-1] else 1e-10,
                                             max_iter)
            its += used
        if z.imag == 0.0 and abs(zeta.imag) > 1e-8 * (1.0 + abs(zeta)):
            raise ConvergenceError(
                f"z = {z!r} lies inside the spectrum support: the resolvent "
                "limit is complex; evaluate at z + i*eps instead", res, its)
    eta = -z / zeta
    f0 = -(1.0 + zeta / z)
    return ZetaSolution(z, zeta, eta, f0, res, its)


def zeta_on_contour(provider, contour, *, damping: float = 0.5, tol: float = 1e-12,
                    max_iter: int = 100_000, jump_factor: float = 50.0,
                    mirror: bool = True) -> list[ZetaSolution]:
    """Solve zeta at every contour node by warm-started continuation.

    The sweep starts at the right real-axis crossing (far from the spectrum)
    and walks counterclockwise.  With ``mirror`` the lower half plane is filled
    in by Schwarz reflection of the upper chain, which makes conjugate symmetry
    of downstream quadratures exact; ``mirror=False`` continues serially around
    the closed loop instead.
    """
    nodes = contour.nodes
    order = contour.chain_indices(full=not mirror)
    sols: dict[int, ZetaSolution] = {}
    prev = None
    prev_prev = None
    for idx in order:
        z = complex(nodes[idx])
        warm = prev.zeta if prev is not None else None
        sol = solve_zeta(provider, z, warm_start=warm, damping=damping,
                         tol=tol, max_iter=max_iter)
        if prev is not None and prev_prev is not None:
            dz_prev = abs(prev.z - prev_prev.z)
            lipschitz = abs(prev.zeta - prev_prev.zeta) / dz_prev if dz_prev > 0 else 0.0
            allowed = jump_factor * (lipschitz * abs(z - prev.z) + 1e-5 * (1.0 + abs(prev.zeta)))
            if abs(sol.zeta - prev.zeta) > allowed:
                raise BranchJumpError(
                    f"branch jump detected at node {idx} (z = {z:.6g}): "
                    f"|dzeta| = {abs(sol.zeta - prev.zeta):.3e} exceeds {allowed:.3e}; "
                    "use a finer contour")
        sols[idx] = sol
        prev_prev = prev
        prev = sol
    if mirror:
        for idx in range(len(nodes)):
            if idx in sols:
                continue
            src = sols[contour.conj_index(idx)]
            sols[idx] = ZetaSolution(complex(nodes[idx]), src.zeta.conjugate(),
                                     src.eta.conjugate(), src.f0.conjugate(),
                                     src.residual, src.iterations)
    return [sols[i] for i in range(len(nodes))]


def f2(provider, zeta_sol: ZetaSolution) -> complex:
    """Limiting functional f2 at a converged zeta."""
    return complex(provider.f2_of(zeta_sol.zeta))


def f1_tilde(provider, zeta_x: ZetaSolution, zeta_y: ZetaSolution) -> complex:
    """f1_tilde = a / (1 - b); exact because it enters its own trace linearly."""
    a, b = provider.f1_parts(zeta_x.zeta, zeta_y.zeta)
    if abs(1.0 - b) < 1e-13:
        raise SingularPoleError(
            f"f1_tilde pole: |1 - b| = {abs(1.0 - b):.3e} at "
            f"(x, y) = ({zeta_x.z:.6g}, {zeta_y.z:.6g})")
    return a / (1.0 - b)


class InfiniteTimeErrors(NamedTuple):
    gen: float
    train: float
    eta: float


def infinite_time_errors(provider, lam: float, **solver_kw) -> InfiniteTimeErrors:
    """Infinite-time test and training errors at ridge lambda > 0.

    gen = f1_tilde(-lambda, -lambda) and train = eta^2 gen with
    eta = lambda / zeta(-lambda); lambda = 0 is reached by extrapolating a
    sequence lambda -> 0+ (use e.g. lambda = 1e-8).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive; extrapolate for lambda = 0")
    sol = solve_zeta(provider, -lam, **solver_kw)
    gen = f1_tilde(provider, sol, sol)
    eta = float(sol.eta.real)
    return InfiniteTimeErrors(float(gen.real), eta**2 * float(gen.real), eta)


class HFunctions(NamedTuple):
    h1_tilde: complex
    h2_x: complex
    h2_y: complex
    h0_x: complex


def h_functions(provider, zeta_x: ZetaSolution, zeta_y: ZetaSolution,
                variant: str = "result4") -> HFunctions:
    """Training-error functionals from two converged zeta solutions.

    ``variant="result4"`` uses h1_tilde = eta_x eta_y f1_tilde(x, y); the
    alternative ``"appendix-b"`` uses eta_x eta_y f1(x, y).  The finite-size
    Monte Carlo oracle discriminates the two (see the acceptance suite); only
    the default is physical.
    """
    c0 = provider.c0()
    ft = f1_tilde(provider, zeta_x, zeta_y)
    if variant == "result4":
        h1t = zeta_x.eta * zeta_y.eta * ft
    elif variant == "appendix-b":
        f1 = complex(provider.f2_of(zeta_x.zeta)) + complex(provider.f2_of(zeta_y.zeta)) + ft - c0
        h1t = zeta_x.eta * zeta_y.eta * f1
    else:
        raise ValueError(f"unknown h1 variant {variant!r}")
    h2x = zeta_x.eta * (c0 * zeta_x.f0 + complex(provider.f2_of(zeta_x.zeta)))
    h2y = zeta_y.eta * (c0 * zeta_y.f0 + complex(provider.f2_of(zeta_y.zeta)))
    h0x = zeta_x.eta * zeta_x.f0
    return HFunctions(h1t, h2x, h2y, h0x)


def spectral_density_log(provider, x: float, epsilon: float = 1e-6,
                         warm_start=None, **solver_kw) -> float:
    """Log-eigenvalue density of the student data at x > 0.

    Returns -(1/pi) Im(eta_{x+i eps}), i.e. x rho(x) up to the O(eps) offset,
    clamped at zero against roundoff.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    sol = solve_zeta(provider, complex(x, epsilon), warm_start=warm_start, **solver_kw)
    return max(0.0, -sol.eta.imag / math.pi)


def closed_loop_residual(provider, contour, **solver_kw) -> float:
    """Continuation consistency: re-solving node 0 after a full loop.

    Returns |zeta_loop - zeta_first| after serially continuing all the way
    around the contour and warm-starting node 0 from the final node.
    """
    sols = zeta_on_contour(provider, contour, mirror=False, **solver_kw)
    chain = contour.chain_indices(full=True)
    first = sols[chain[0]]
    last = sols[chain[-1]]
    back = solve_zeta(provider, first.z, warm_start=last.zeta, **solver_kw)
    return abs(back.zeta - first.zeta)
