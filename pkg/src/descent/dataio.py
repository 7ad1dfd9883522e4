"""Realistic-dataset pipeline: IDX parsing, preprocessing, empirical duals.

The dual route estimates U_star ~ X^T X / n_tot and Xi beta* ~ X^T Y / n_tot
from a full dataset, then evaluates every limiting functional through the
n_train-normalized trace sums, which plug into the same solver and contour
machinery as the synthetic models.
"""

from __future__ import annotations

import gzip
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray  # (n_tot, d) float64, flattened row-major
    labels: np.ndarray  # (n_tot,) integers


def _read_idx(path) -> tuple[np.ndarray, int]:
    path = Path(path)
    with open(path, "rb") as probe:
        gzipped = probe.read(2) == b"\x1f\x8b"
    opener = gzip.open if gzipped else open
    with opener(path, "rb") as fh:
        payload = fh.read()
    if len(payload) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", payload[:4])[0]
    ndim = magic & 0xFF
    if (magic >> 8) & 0xFF != 0x08 or magic >> 16 != 0:
        # dtype byte must be 0x08 (unsigned byte) for MNIST-style containers
        raise ValueError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    if len(payload) < 4 + 4 * ndim:
        raise ValueError(f"{path}: truncated IDX dimension table")
    dims = struct.unpack(f">{ndim}I", payload[4:4 + 4 * ndim])
    data = np.frombuffer(payload, dtype=np.uint8, offset=4 + 4 * ndim)
    expected = int(np.prod(dims))
    if data.size != expected:
        raise ValueError(f"{path}: payload holds {data.size} bytes, expected {expected}")
    return data.reshape(dims), magic


def load_idx_dataset(images_path, labels_path) -> RawDataset:
    """Decode big-endian IDX image/label files (gzip accepted)."""
    images, magic_i = _read_idx(images_path)
    if magic_i != IMAGE_MAGIC:
        raise ValueError(f"{images_path}: magic 0x{magic_i:08x} is not an IDX image file")
    labels, magic_l = _read_idx(labels_path)
    if magic_l != LABEL_MAGIC:
        raise ValueError(f"{labels_path}: magic 0x{magic_l:08x} is not an IDX label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    return RawDataset(flat, labels.astype(np.int64))


def preprocess(raw) -> np.ndarray:
    """Center columns, divide by the global std, then by sqrt(d)."""
    x = raw.images if isinstance(raw, RawDataset) else np.asarray(raw, dtype=float)
    if x.size == 0:
        raise ValueError("empty dataset")
    x = x - x.mean(axis=0, keepdims=True)
    std = float(x.std())
    if std == 0.0:
        raise ValueError("dataset has zero global standard deviation")
    return x / (std * np.sqrt(x.shape[1]))


def parity_labels(labels, label_map=None) -> np.ndarray:
    """Map integer labels to +-1: even -> +1, odd -> -1 by default.

    ``label_map`` hooks in other binary splits (e.g. the above-the-waist
    grouping of clothing categories): any callable int -> bool.
    """
    labels = np.asarray(labels)
    if label_map is None:
        positive = labels % 2 == 0
    else:
        positive = np.array([bool(label_map(int(v))) for v in labels])
    return np.where(positive, 1.0, -1.0)


@dataclass(frozen=True)
class EmpiricalDual:
    """Eigen-data of U_star ~ X^T X / n_tot and v = Xi beta* ~ X^T Y / n_tot."""

    eigvals: np.ndarray   # spectrum of X^T X / n_tot, ascending, clamped >= 0
    coeffs: np.ndarray    # eigvector projections of X^T Y / n_tot
    n_train: int
    c0: float

    def __post_init__(self):
        if self.eigvals.shape != self.coeffs.shape:
            raise ValueError("coeffs length must equal eigvals length")


def estimate_dual(x: np.ndarray, y: np.ndarray, n_train: int,
                  c0: float | None = None) -> EmpiricalDual:
    """Eigendecompose the dual estimates; c0 defaults to mean(Y^2)."""
    n_tot, _ = x.shape
    if n_train > n_tot / 10:
        warnings.warn(
            f"n_train = {n_train} is not small against n_tot = {n_tot}; "
            "the dual estimates assume n_train << n_tot", stacklevel=2)
    u_star = (x.T @ x) / n_tot
    v = (x.T @ y) / n_tot
    evals, q = np.linalg.eigh(u_star)
    if evals.min() < -1e-10 * max(evals.max(), 1.0):
        raise ValueError("dual operator strongly non-PSD; preprocessing bug?")
    evals = np.maximum(evals, 0.0)
    coeffs = q.T @ v
    c0_val = float(np.mean(y**2)) if c0 is None else float(c0)
    return EmpiricalDual(evals, coeffs, int(n_train), c0_val)


@dataclass(frozen=True)
class DualProvider:
    """Functional provider over the n_train-normalized dual trace sums.

    The Remark-style sums use U_star = phi A^T A; the empirical estimate
    X^T X / n_tot approaches U_star / n, so eigenvalues and projections are
    rescaled by n_train before entering the formulas.
    """

    lam_scaled: np.ndarray   # n * eig(X^T X / n_tot)
    coeff_scaled: np.ndarray  # n * projections
    n_train: int
    c0_value: float

    def phi(self) -> float:
        return float(self.n_train) / self.lam_scaled.size

    def c0(self) -> float:
        return self.c0_value

    def mean_u(self) -> float:
        return float(self.lam_scaled.sum()) / self.n_train

    def zeta_rhs(self, zeta):
        z = np.asarray(zeta)[..., None]
        return np.sum(z * self.lam_scaled / (self.lam_scaled + z), axis=-1) / self.n_train

    def zeta_rhs_deriv(self, zeta):
        z = np.asarray(zeta)[..., None]
        return np.sum(self.lam_scaled**2 / (self.lam_scaled + z) ** 2, axis=-1) / self.n_train

    def f2_of(self, zeta):
        z = np.asarray(zeta)[..., None]
        return np.sum(self.coeff_scaled**2 / (self.lam_scaled + z), axis=-1) / self.n_train

    def f1_parts(self, zeta_x, zeta_y):
        dx = self.lam_scaled + zeta_x
        dy = self.lam_scaled + zeta_y
        cross = np.sum(self.coeff_scaled**2 * self.lam_scaled / (dx * dy)) / self.n_train
        a = cross - complex(self.f2_of(zeta_x)) - complex(self.f2_of(zeta_y)) + self.c0_value
        b = np.sum(self.lam_scaled**2 / (dx * dy)) / self.n_train
        return complex(a), complex(b)

    def f1_parts_grid(self, zeta_x, zeta_y):
        zx = np.asarray(zeta_x)[:, None]
        zy = np.asarray(zeta_y)[:, None]
        px = 1.0 / (self.lam_scaled + zx)   # (nx, n_eig)
        py = 1.0 / (self.lam_scaled + zy)
        cross = (px * (self.coeff_scaled**2 * self.lam_scaled)) @ py.T / self.n_train
        f2x = np.asarray(self.f2_of(np.asarray(zeta_x)))
        f2y = np.asarray(self.f2_of(np.asarray(zeta_y)))
        a = cross - f2x[:, None] - f2y[None, :] + self.c0_value
        b = (px * self.lam_scaled**2) @ py.T / self.n_train
        return a, b

    def support_hint(self) -> float:
        # the n-sampled student gram spreads past the largest dual eigenvalue
        # by a Marchenko-Pastur-type factor; the density scan trims this back
        ratio = self.n_train / self.lam_scaled.size
        return float(self.lam_scaled.max()) * (1.0 + np.sqrt(ratio)) ** 2

    def describe(self) -> dict:
        return {"provider": "empirical_dual", "n_train": self.n_train,
                "n_eig": int(self.lam_scaled.size), "c0": self.c0_value}


def dual_provider(dual: EmpiricalDual, n_train: int | None = None,
                  c0: float | None = None) -> DualProvider:
    n = dual.n_train if n_train is None else int(n_train)
    c0_val = dual.c0 if c0 is None else float(c0)
    return DualProvider(n * dual.eigvals, n * dual.coeffs, n, c0_val)


def dataset_descent_run(x_train: np.ndarray, y_train: np.ndarray,
                        x_test: np.ndarray, y_test: np.ndarray,
                        lam: float, dt: float, steps: int, r0: float,
                        seed: int, n_records: int = 50):
    """Constant-rate gradient descent on a real training subset.

    Returns (times, train_errors, test_errors) with the lambda-free training
    objective and the held-out mean squared error recorded on a log-spaced
    subset of steps.
    """
    n, d = x_train.shape
    h = x_train.T @ x_train
    lam_max = float(np.linalg.eigvalsh(h)[-1])
    if dt >= 2.0 / (lam_max + lam):
        raise ValueError(f"dt = {dt} exceeds the stability bound "
                         f"{2.0 / (lam_max + lam):.3e}")
    g = x_train.T @ y_train
    rng = np.random.default_rng(seed)
    beta = r0 * rng.standard_normal(d)
    record = np.unique(np.concatenate(
        [[0], np.geomspace(1, steps, n_records).astype(int), [steps]]))
    times = record * dt
    train_err = np.empty(record.size)
    test_err = np.empty(record.size)
    pos = 0
    for k in range(steps + 1):
        if pos < record.size and k == record[pos]:
            r_train = x_train @ beta - y_train
            r_test = x_test @ beta - y_test
            train_err[pos] = float(r_train @ r_train) / n
            test_err[pos] = float(r_test @ r_test) / x_test.shape[0]
            pos += 1
        if k == steps:
            break
        beta = beta - dt * (h @ beta + lam * beta - g)
    return times, train_err, test_err


def write_curves(result, path, fmt: str = "csv") -> None:
    """Persist a CurveResult or TrajectoryResult as CSV or JSON."""
    path = Path(path)
    try:
        if fmt == "csv":
            result.to_csv(path)
        elif fmt == "json":
            if hasattr(result, "to_json"):
                result.to_json(path)
            else:
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(result.to_json_dict(), fh, indent=1)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write curves to {path}: {exc}") from exc
