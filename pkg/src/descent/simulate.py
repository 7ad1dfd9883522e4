"""Finite-dimensional empirical oracle: sampled instances and exact flow.

Samples the Table-style block matrices (A, B) at finite d, draws the shared
Gaussian data matrix Z, and integrates the gradient flow exactly through one
eigendecomposition of the student gram matrix.  A discrete gradient-descent
integrator and trace-identity checks are included for protocol-level
comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .randomfeatures import RFParams
from .spectra import (
    KernelParams,
    MismatchedParams,
    NonisotropicParams,
    RidgelessParams,
)

BLOCK_RATIO_TOL = 0.05


def _check_block(name: str, size: int, target: float) -> int:
    if size < 1:
        raise ValueError(f"block {name} rounds to zero rows; increase d")
    if target > 0 and abs(size - target) / target > BLOCK_RATIO_TOL:
        raise ValueError(
            f"block {name}: rounded size {size} deviates from {target:.2f} "
            f"by more than {BLOCK_RATIO_TOL:.0%}; choose d compatible with the ratios")
    return size


@dataclass
class FiniteInstance:
    """One sampled realization of the generative model at finite d."""

    a_factor: np.ndarray      # d x p_A
    b_factor: np.ndarray      # d x p_B
    beta_star: np.ndarray     # p_B
    z: np.ndarray             # n x d, entries of variance 1/d
    lam: float
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d, p_a = self.a_factor.shape
        d2, p_b = self.b_factor.shape
        n, d3 = self.z.shape
        if d != d2 or d != d3 or self.beta_star.shape != (p_b,):
            raise ValueError("inconsistent factor/data shapes")
        self._student = None

    @property
    def d(self) -> int:
        return self.a_factor.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def phi(self) -> float:
        return self.n / self.d

    def student_data(self) -> np.ndarray:
        """X_hat = Z A, cached."""
        if self._student is None:
            self._student = self.z @ self.a_factor
        return self._student

    def targets(self) -> np.ndarray:
        return self.z @ (self.b_factor @ self.beta_star)

    def teacher_field(self) -> np.ndarray:
        """B beta* in the ambient d-space (for population-error quadratics)."""
        return self.b_factor @ self.beta_star


def _blocks_ridgeless(params, d, rng):
    psi = params.psi
    p = _check_block("p", round(psi * d), psi * d)
    q = _check_block("q", d - p, (1 - psi) * d)
    a = np.zeros((d, p))
    a[:p, :] = math.sqrt(d / p) * np.eye(p)
    b = np.zeros((d, d))
    b[:p, :p] = params.r * math.sqrt(d / p) * np.eye(p)
    b[p:, p:] = params.sigma * math.sqrt(d / q) * np.eye(q)
    beta = rng.standard_normal(d)
    return a, b, beta


def _blocks_mismatched(params, d, rng):
    psi, gamma = params.psi, params.gamma
    p = _check_block("p", round(psi * d), psi * d)
    gp = _check_block("gamma p", round(gamma * p), gamma * p)
    q = _check_block("q", d - p, (1 - psi) * d)
    a = np.zeros((d, gp))
    a[:gp, :] = math.sqrt(d / gp) * np.eye(gp)
    b = np.zeros((d, d))
    b[:p, :p] = params.r * math.sqrt(d / p) * np.eye(p)
    b[p:, p:] = params.sigma * math.sqrt(d / q) * np.eye(q)
    beta = rng.standard_normal(d)
    return a, b, beta


def _blocks_nonisotropic(params, d, rng):
    levels = params.p_levels
    size = _check_block("level", d // levels, d / levels)
    d_eff = size * levels
    if d_eff != d:
        raise ValueError(f"d must be a multiple of p_levels = {levels}")
    scales = np.repeat(params.alpha ** (-0.5 * np.arange(levels)), size)
    a = np.diag(scales)
    b = np.eye(d)
    beta = rng.standard_normal(d)
    return a, b, beta


def _blocks_kernel(params, d, rng):
    omega = np.asarray(params.omega, dtype=float)
    if omega.size != d:
        raise ValueError(f"kernel model requires d = len(omega) = {omega.size}")
    root = np.diag(np.sqrt(omega))
    beta = np.asarray(params.theta0, dtype=float).copy()
    return root, root.copy(), beta


def _blocks_random_features(params, d, rng):
    psi, psi0 = params.psi, params.psi0
    p = _check_block("p", round(psi * d), psi * d)
    nfeat = _check_block("N", round(psi0 * p), psi0 * p)
    q = _check_block("q", d - p - nfeat, (1 - (1 + psi0) * psi) * d)
    w = rng.standard_normal((p, nfeat)) / math.sqrt(p)
    a = np.zeros((d, nfeat))
    a[:p, :] = params.mu * math.sqrt(d / p) * w
    a[p:p + nfeat, :] = params.nu * math.sqrt(d / p) * np.eye(nfeat)
    b = np.zeros((d, p + q))
    b[:p, :p] = params.r * math.sqrt(d / p) * np.eye(p)
    b[p + nfeat:, p:] = params.sigma * math.sqrt(d / q) * np.eye(q)
    beta = rng.standard_normal(p + q)
    return a, b, beta


_BUILDERS = {
    RidgelessParams: _blocks_ridgeless,
    MismatchedParams: _blocks_mismatched,
    NonisotropicParams: _blocks_nonisotropic,
    KernelParams: _blocks_kernel,
    RFParams: _blocks_random_features,
}


def sample_instance(params, d: int, seed: int, lam: float,
                    n: int | None = None) -> FiniteInstance:
    """Draw a finite instance of a zoo model: blocks, beta*, and Z.

    ``n`` defaults to round(phi * d) with phi taken from the model parameters.
    """
    builder = _BUILDERS.get(type(params))
    if builder is None:
        raise ValueError(f"no finite-size builder for {type(params).__name__}")
    rng = np.random.default_rng(seed)
    a, b, beta = builder(params, d, rng)
    phi = params.phi() if callable(getattr(params, "phi", None)) else params.phi
    n_rows = _check_block("n", round(phi * d), phi * d) if n is None else int(n)
    z = rng.standard_normal((n_rows, d)) / math.sqrt(d)
    return FiniteInstance(a, b, beta, z, float(lam), int(seed),
                          params.to_dict() if hasattr(params, "to_dict") else {})


@dataclass(frozen=True)
class TrajectoryResult:
    """Empirical error curves along one exact-flow or descent trajectory."""

    times: np.ndarray
    train_errors: np.ndarray              # lambda-free objective
    train_errors_regularized: np.ndarray
    gen_errors: np.ndarray
    beta_norms: np.ndarray
    seed: int

    CSV_HEADER = "t,gen_error,train_error,B0,B1,H0,H1,seed"

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(self.CSV_HEADER.split(","))
            for t, g, tr in zip(self.times, self.gen_errors, self.train_errors):
                writer.writerow([repr(float(t)), repr(float(g)), repr(float(tr)),
                                 "nan", "nan", "nan", "nan", self.seed])

    def to_json_dict(self) -> dict:
        return {
            "kind": "trajectory_result",
            "seed": self.seed,
            "times": self.times.tolist(),
            "gen_error": self.gen_errors.tolist(),
            "train_error": self.train_errors.tolist(),
            "train_error_regularized": self.train_errors_regularized.tolist(),
            "beta_norm": self.beta_norms.tolist(),
        }


def _trajectory_errors(instance: FiniteInstance, betas: np.ndarray,
                       times: np.ndarray, seed: int) -> TrajectoryResult:
    """Population gen error and empirical train error for a (T, p_A) path."""
    xhat = instance.student_data()
    y = instance.targets()
    field_t = betas @ instance.a_factor.T  # (T, d)
    resid_gen = field_t - instance.teacher_field()
    gen = np.einsum("ij,ij->i", resid_gen, resid_gen) / instance.d
    resid_train = betas @ xhat.T - y
    train = np.einsum("ij,ij->i", resid_train, resid_train) / instance.n
    norms = np.einsum("ij,ij->i", betas, betas)
    train_reg = train + instance.lam * norms / instance.n
    return TrajectoryResult(np.asarray(times, dtype=float), train, train_reg,
                            gen, norms, seed)


def exact_flow_errors(instance: FiniteInstance, times: Sequence[float], r0: float,
                      seed_beta0: int) -> TrajectoryResult:
    """Gradient-flow errors evaluated exactly at the requested times.

    One eigendecomposition of X_hat^T X_hat gives
    beta_t = Q e^{-t(L+lam)} Q^T beta_0 + Q (1-e^{-t(L+lam)})/(L+lam) Q^T X^T Y,
    with the t * 1 limit at L + lam = 0 (Moore-Penrose behavior at lam = 0).
    """
    times = np.asarray(times, dtype=float)
    xhat = instance.student_data()
    evals, q = np.linalg.eigh(xhat.T @ xhat)
    evals = np.maximum(evals, 0.0)
    rng = np.random.default_rng(seed_beta0)
    beta0 = r0 * rng.standard_normal(xhat.shape[1])
    m0 = q.T @ beta0
    m1 = q.T @ (xhat.T @ instance.targets())
    shift = evals + instance.lam
    tgrid = times[:, None]
    decay = np.exp(-tgrid * shift[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(shift[None, :] > 0.0, -np.expm1(-tgrid * shift[None, :]) / shift[None, :],
                        tgrid * np.ones_like(shift)[None, :])
    coef = decay * m0[None, :] + gain * m1[None, :]
    betas = coef @ q.T
    return _trajectory_errors(instance, betas, times, seed_beta0)


def tikhonov_errors(instance: FiniteInstance) -> tuple[float, float]:
    """(gen, train) of the ridge estimator, the t -> infinity flow limit."""
    xhat = instance.student_data()
    h = xhat.T @ xhat + instance.lam * np.eye(xhat.shape[1])
    beta = np.linalg.solve(h, xhat.T @ instance.targets())
    res = _trajectory_errors(instance, beta[None, :], np.array([math.inf]), 0)
    return float(res.gen_errors[0]), float(res.train_errors[0])


def gradient_descent_errors(instance: FiniteInstance, dt: float, steps: int,
                            r0: float, seed_beta0: int,
                            n_records: int = 50) -> TrajectoryResult:
    """Explicit-Euler gradient descent with flow-time mapping t = k dt.

    dt must respect the 2/(lam_max + lam) stability bound; errors are recorded
    on a log-spaced subset of steps.
    """
    xhat = instance.student_data()
    h = xhat.T @ xhat
    lam_max = float(np.linalg.eigvalsh(h)[-1])
    if dt >= 2.0 / (lam_max + instance.lam):
        raise ValueError(
            f"dt = {dt} exceeds the stability bound {2.0 / (lam_max + instance.lam):.3e}")
    g = xhat.T @ instance.targets()
    rng = np.random.default_rng(seed_beta0)
    beta = r0 * rng.standard_normal(xhat.shape[1])
    record = np.unique(np.concatenate(
        [[0], np.geomspace(1, steps, n_records).astype(int), [steps]]))
    betas = np.empty((record.size, beta.size))
    times = record * dt
    pos = 0
    initial = None
    for k in range(steps + 1):
        if pos < record.size and k == record[pos]:
            betas[pos] = beta
            pos += 1
        if k == steps:
            break
        beta = beta - dt * (h @ beta + instance.lam * beta - g)
        if k % 256 == 0:
            norm = float(beta @ beta)
            if initial is None:
                initial = max(norm, 1.0)
            elif not math.isfinite(norm) or norm > 1e6 * initial:
                raise ArithmeticError(f"gradient descent diverged at step {k}")
    return _trajectory_errors(instance, betas, times, seed_beta0)


@dataclass(frozen=True)
class IdentityReport:
    """Finite-size checks of the limiting trace identities."""

    trace_ztzv: float
    phi_c0: float
    trace_rel_err: float
    resolvent_point: complex
    resolvent_trace: complex
    zeta_inverse: complex
    resolvent_rel_err: float


def empirical_identities(instance: FiniteInstance, provider=None,
                         z: complex = -1.0) -> IdentityReport:
    """Check (1/d) tr(Z^T Z V*) ~ phi c0 and m(z) ~ 1/zeta on the instance.

    ``provider`` supplies the limiting zeta; when omitted it is rebuilt from
    the instance's recorded model parameters.
    """
    from .selfconsistent import solve_zeta
    from .spectra import model_from_dict, provider_for

    if provider is None:
        provider = provider_for(model_from_dict(instance.params))
    diag_v = np.einsum("ij,ij->i", instance.b_factor, instance.b_factor)
    col_norms = np.einsum("ij,ij->j", instance.z, instance.z)
    trace_ztzv = float(col_norms @ diag_v) / instance.d
    phi_c0 = instance.phi * provider.c0()
    xhat = instance.student_data()
    gram = xhat @ xhat.T
    m_emp = complex(np.trace(np.linalg.inv(gram - z * np.eye(instance.n)))) / instance.n
    sol = solve_zeta(provider, z)
    m_theory = 1.0 / sol.zeta
    return IdentityReport(
        trace_ztzv, phi_c0,
        abs(trace_ztzv - phi_c0) / max(abs(phi_c0), 1e-300),
        complex(z), m_emp, m_theory,
        abs(m_emp - m_theory) / max(abs(m_theory), 1e-300),
    )
