"""Generic linear-pencil fixed point: block specs, eta-map, solver, oracle.

A pencil is M = M0 + H where M0 holds constant blocks and H holds Gaussian
matrix symbols placed (optionally transposed) in named blocks.  The limiting
normalized block traces g of M^{-1} solve

    g_ij = blockTraces( (M0 - eta(g) (x) I)^{-1} )_ij,
    [eta(g)]_ij = sum_kl gamma_k sigma_{ik}^{lj} g_kl,

with the covariance profile sigma derived from the symbol placements.  The
index convention of the eta-map is pinned by the Wigner and Marchenko-Pastur
reference laws (see tests); published statements of the profile are prone to
index typos, the reference laws are not.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .spectra import AtomSpectrum


@dataclass(frozen=True)
class SymbolSpec:
    """Independent Gaussian matrix: shape, entry variance, optional symmetry."""

    rows: int
    cols: int
    variance: float
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.rows != self.cols:
            raise ValueError("symmetric symbols must be square")
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


@dataclass
class PencilSpec:
    """Block-matrix description: dims, constant blocks, random assignments."""

    dims: tuple
    constants: dict = field(default_factory=dict)   # (i, j) -> ndarray
    randoms: dict = field(default_factory=dict)     # (i, j) -> (symbol, coeff, transposed)
    symbols: dict = field(default_factory=dict)     # name -> SymbolSpec

    def __post_init__(self):
        self.dims = tuple(int(p) for p in self.dims)
        if any(p < 1 for p in self.dims):
            raise ValueError("block dims must be positive")

    @property
    def n_blocks(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def gammas(self) -> np.ndarray:
        return np.array(self.dims, dtype=float) / self.total_dim

    def set_constant(self, i: int, j: int, value) -> "PencilSpec":
        """Constant block: scalar c means c * I (square blocks only)."""
        self._check_pos(i, j)
        if np.isscalar(value):
            if self.dims[i] != self.dims[j]:
                raise ValueError(f"scalar identity block ({i},{j}) must be square")
            mat = complex(value) * np.eye(self.dims[i], dtype=complex)
        else:
            mat = np.asarray(value, dtype=complex)
            if mat.shape != (self.dims[i], self.dims[j]):
                raise ValueError(
                    f"constant block ({i},{j}) has shape {mat.shape}, "
                    f"expected {(self.dims[i], self.dims[j])}")
        self.constants[(i, j)] = mat
        return self

    def add_symbol(self, name: str, rows: int, cols: int, variance: float,
                   symmetric: bool = False) -> "PencilSpec":
        self.symbols[name] = SymbolSpec(int(rows), int(cols), float(variance), symmetric)
        return self

    def assign(self, i: int, j: int, symbol: str, coeff: float = 1.0,
               transposed: bool = False) -> "PencilSpec":
        self._check_pos(i, j)
        if symbol not in self.symbols:
            raise ValueError(f"symbol {symbol!r} not declared")
        if (i, j) in self.randoms:
            raise ValueError(f"block ({i},{j}) already holds a random symbol")
        spec = self.symbols[symbol]
        shape = (spec.cols, spec.rows) if transposed else (spec.rows, spec.cols)
        if shape != (self.dims[i], self.dims[j]):
            raise ValueError(
                f"symbol {symbol!r} placed at ({i},{j}) has shape {shape}, "
                f"expected {(self.dims[i], self.dims[j])}")
        self.randoms[(i, j)] = (symbol, float(coeff), bool(transposed))
        return self

    def _check_pos(self, i: int, j: int) -> None:
        if not (0 <= i < self.n_blocks and 0 <= j < self.n_blocks):
            raise ValueError(f"block index ({i},{j}) out of range")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        blocks = []
        for (i, j), mat in self.constants.items():
            diag = np.diagonal(mat)
            if (mat.shape[0] == mat.shape[1]
                    and np.allclose(mat, diag[0] * np.eye(mat.shape[0]))):
                blocks.append({"i": i, "j": j, "kind": "identity_scalar",
                               "value": _cplx(diag[0])})
            else:
                blocks.append({"i": i, "j": j, "kind": "constant",
                               "matrix_real": mat.real.tolist(),
                               "matrix_imag": mat.imag.tolist()})
        for (i, j), (sym, coeff, transposed) in self.randoms.items():
            blocks.append({"i": i, "j": j, "kind": "random", "symbol": sym,
                           "coeff": coeff, "transposed": transposed})
        return {
            "dims": list(self.dims),
            "blocks": blocks,
            "symbols": {name: {"rows": s.rows, "cols": s.cols,
                               "variance": s.variance, "symmetric": s.symmetric}
                        for name, s in self.symbols.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PencilSpec":
        spec = cls(tuple(doc["dims"]))
        for name, s in doc.get("symbols", {}).items():
            spec.add_symbol(name, s["rows"], s["cols"], s["variance"],
                            s.get("symmetric", False))
        for blk in doc.get("blocks", []):
            i, j, kind = blk["i"], blk["j"], blk["kind"]
            if kind == "zero":
                continue
            if kind == "identity_scalar":
                spec.set_constant(i, j, _from_cplx(blk["value"]))
            elif kind == "constant":
                mat = np.array(blk["matrix_real"], dtype=complex)
                if "matrix_imag" in blk:
                    mat = mat + 1j * np.array(blk["matrix_imag"])
                spec.set_constant(i, j, mat)
            elif kind == "random":
                spec.assign(i, j, blk["symbol"], blk.get("coeff", 1.0),
                            blk.get("transposed", False))
            else:
                raise ValueError(f"unknown block kind {kind!r}")
        return spec

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path) -> "PencilSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _cplx(v) -> list:
    v = complex(v)
    return [v.real, v.imag]


def _from_cplx(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def derive_profile(spec: PencilSpec) -> dict:
    """Covariance profile sigma_{ij}^{kl} = E[H_uv^{ij} H_vu^{kl}].

    Two placements of one symbol correlate when they sit in mutually
    transposed orientation (or the symbol is symmetric), contributing
    coeff_ij coeff_kl N_total v_m; everything else vanishes for independent
    real Gaussian entries.
    """
    total = spec.total_dim
    placements = [(i, j, sym, coeff, transposed)
                  for (i, j), (sym, coeff, transposed) in spec.randoms.items()]
    sigma: dict = {}
    for a in range(len(placements)):
        i, j, sym_a, ca, ta = placements[a]
        for b in range(a, len(placements)):
            k, l, sym_b, cb, tb = placements[b]
            if sym_a != sym_b:
                continue
            symbol = spec.symbols[sym_a]
            if ta == tb and not symbol.symmetric:
                continue
            if spec.dims[i] != spec.dims[l] or spec.dims[j] != spec.dims[k]:
                continue
            value = ca * cb * total * symbol.variance
            sigma[(i, j, k, l)] = sigma.get((i, j, k, l), 0.0) + value
            if (i, j) != (k, l):
                sigma[(k, l, i, j)] = sigma.get((k, l, i, j), 0.0) + value
    return sigma


def eta_map(spec: PencilSpec, sigma: dict, g: np.ndarray) -> np.ndarray:
    """[eta(g)]_ij = sum_kl gamma_k sigma_{ik}^{lj} g_kl."""
    n = spec.n_blocks
    gammas = spec.gammas()
    out = np.zeros((n, n), dtype=complex)
    for (i, k, l, j), value in sigma.items():
        out[i, j] += gammas[k] * value * g[k, l]
    return out


@dataclass(frozen=True)
class GSolution:
    """Normalized block traces of the pencil inverse."""

    g: np.ndarray
    residual: float
    iterations: int


def _assemble_m0(spec: PencilSpec) -> np.ndarray:
    offs = np.concatenate([[0], np.cumsum(spec.dims)])
    m0 = np.zeros((spec.total_dim, spec.total_dim), dtype=complex)
    for (i, j), mat in spec.constants.items():
        m0[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = mat
    return m0


def _block_traces(spec: PencilSpec, full: np.ndarray) -> np.ndarray:
    offs = np.concatenate([[0], np.cumsum(spec.dims)])
    n = spec.n_blocks
    g = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            if spec.dims[i] != spec.dims[j]:
                continue
            block = full[offs[i]:offs[i + 1], offs[j]:offs[j + 1]]
            g[i, j] = np.trace(block) / spec.dims[i]
    return g


def solve_pencil(spec: PencilSpec, init: np.ndarray | None = None,
                 damping: float = 0.5, tol: float = 1e-10,
                 max_iter: int = 2000) -> GSolution:
    """Damped fixed point g <- blockTraces((M0 - eta(g) (x) I)^{-1}).

    Block inversion runs numerically at the declared finite dims; the traces
    converge to the limit values as the dims grow (and are exact whenever the
    constant blocks are diagonal with the declared atom weights).
    """
    sigma = derive_profile(spec)
    m0 = _assemble_m0(spec)
    offs = np.concatenate([[0], np.cumsum(spec.dims)])
    n = spec.n_blocks
    g = np.zeros((n, n), dtype=complex) if init is None else np.array(init, dtype=complex)
    omega = damping
    prev = math.inf
    eye = np.eye(spec.total_dim, dtype=complex)
    for it in range(1, max_iter + 1):
        pim = m0.copy()
        eta = eta_map(spec, sigma, g)
        for i in range(n):
            for j in range(n):
                if eta[i, j] != 0.0 and spec.dims[i] == spec.dims[j]:
                    idx = np.arange(offs[i], offs[i + 1])
                    pim[idx, idx - offs[i] + offs[j]] -= eta[i, j]
        try:
            inv = np.linalg.solve(pim, eye)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError(f"Pi(M) singular at iteration {it}") from exc
        gnew = _block_traces(spec, inv)
        res = float(np.max(np.abs(gnew - g)) / (1.0 + np.max(np.abs(gnew))))
        if res <= tol:
            return GSolution(gnew, res, it)
        g = (1.0 - omega) * g + omega * gnew
        if res > prev:
            omega = max(omega / 2.0, 1.0 / 32)
        prev = res
    raise ArithmeticError(f"pencil fixed point did not converge: residual {prev:.3e}")


def sample_finite_pencil(spec: PencilSpec, seed: int) -> GSolution:
    """Monte Carlo oracle: draw every symbol once, assemble, invert, trace."""
    if spec.total_dim > 20_000:
        raise ValueError("finite-size oracle limited to moderate dims")
    rng = np.random.default_rng(seed)
    draws = {}
    for name, sym in spec.symbols.items():
        mat = rng.normal(0.0, math.sqrt(sym.variance), (sym.rows, sym.cols))
        if sym.symmetric:
            mat = (mat + mat.T) / math.sqrt(2.0)
        draws[name] = mat
    offs = np.concatenate([[0], np.cumsum(spec.dims)])
    m = _assemble_m0(spec)
    for (i, j), (name, coeff, transposed) in spec.randoms.items():
        block = draws[name].T if transposed else draws[name]
        m[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] += coeff * block
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("sampled pencil is singular") from exc
    return GSolution(_block_traces(spec, inv), 0.0, 1)


def amplify(spec: PencilSpec) -> PencilSpec:
    """Self-adjoint amplification [[0, M], [M^T, 0]] of a real pencil.

    The lower-left quadrant of the amplified solution reproduces the
    unamplified block traces.
    """
    n = spec.n_blocks
    out = PencilSpec(spec.dims + spec.dims)
    for name, sym in spec.symbols.items():
        out.add_symbol(name, sym.rows, sym.cols, sym.variance, sym.symmetric)
    for (i, j), mat in spec.constants.items():
        out.set_constant(i, n + j, mat)
        out.set_constant(n + j, i, mat.T)
    for (i, j), (name, coeff, transposed) in spec.randoms.items():
        out.assign(i, n + j, name, coeff, transposed)
        out.assign(n + j, i, name, coeff, not transposed)
    return out


# ---------------------------------------------------------------------------
# Reference pencils
# ---------------------------------------------------------------------------

def wigner_pencil(z: complex, dim: int = 600) -> PencilSpec:
    """M = H/sqrt(dim) - z I with H a unit-variance symmetric Wigner matrix."""
    spec = PencilSpec((dim,))
    spec.set_constant(0, 0, -complex(z))
    spec.add_symbol("H", dim, dim, 1.0 / dim, symmetric=True)
    spec.assign(0, 0, "H")
    return spec


def marchenko_pastur_pencil(z: complex, phi: float, total: int = 600) -> PencilSpec:
    """Blocks [[-z I_N, X^T/sqrt(N)], [X/sqrt(N), -I_d]] with phi = N/d."""
    n_dim = round(total * phi / (1.0 + phi))
    d_dim = total - n_dim
    spec = PencilSpec((n_dim, d_dim))
    spec.set_constant(0, 0, -complex(z))
    spec.set_constant(1, 1, -1.0)
    spec.add_symbol("X", d_dim, n_dim, 1.0 / n_dim)
    spec.assign(0, 1, "X", transposed=True)
    spec.assign(1, 0, "X")
    return spec


def _spectrum_diagonals(spectrum: AtomSpectrum, d: int):
    counts = spectrum.weights * d
    rounded = np.round(counts).astype(int)
    if np.max(np.abs(counts - rounded)) > 1e-9 or rounded.sum() != d:
        raise ValueError(f"d = {d} incompatible with atom weights {spectrum.weights}")
    u = np.repeat(spectrum.u, rounded)
    v = np.repeat(spectrum.v_star, rounded)
    return np.diag(u.astype(complex)), np.diag(v.astype(complex))


def f1_pencil(x: complex, y: complex, spectrum: AtomSpectrum, d: int) -> PencilSpec:
    """Six-block pencil whose (0,0) trace is f1_tilde(x, y) and (1,1) is h1_tilde.

    Also exposes f0(x) = -g[0,4]; the data symbol Z has entry variance 1/d and
    n = phi d rows.
    """
    n_rows = round(spectrum.phi() * d)
    if abs(n_rows - spectrum.phi() * d) > 1e-9:
        raise ValueError("phi * d must be integral for the pencil dims")
    u, v = _spectrum_diagonals(spectrum, d)
    spec = PencilSpec((d, n_rows, d, d, d, n_rows))
    spec.set_constant(0, 3, -complex(y))
    spec.set_constant(1, 5, 1.0)
    spec.set_constant(2, 3, u)
    spec.set_constant(2, 4, 1.0)
    spec.set_constant(3, 0, -complex(x))
    spec.set_constant(3, 2, u)
    spec.set_constant(3, 3, -complex(x) * complex(y) * v)
    spec.set_constant(4, 2, 1.0)
    spec.set_constant(5, 1, 1.0)
    spec.add_symbol("Z", n_rows, d, 1.0 / d)
    spec.assign(0, 5, "Z", transposed=True)
    spec.assign(1, 4, "Z")
    spec.assign(4, 1, "Z", transposed=True)
    spec.assign(5, 0, "Z")
    return spec


def f2_pencil(z: complex, spectrum: AtomSpectrum, d: int) -> PencilSpec:
    """Six-block pencil with g[0,0] = f2(z) - c0 and g[2,0] = phi (h2(z) - c0)."""
    n_rows = round(spectrum.phi() * d)
    if abs(n_rows - spectrum.phi() * d) > 1e-9:
        raise ValueError("phi * d must be integral for the pencil dims")
    u, v = _spectrum_diagonals(spectrum, d)
    spec = PencilSpec((d, n_rows, d, d, d, n_rows))
    spec.set_constant(0, 3, 1.0)
    spec.set_constant(1, 5, 1.0)
    spec.set_constant(2, 4, 1.0)
    spec.set_constant(3, 0, -complex(z))
    spec.set_constant(3, 2, u)
    spec.set_constant(3, 3, -complex(z) * v)
    spec.set_constant(4, 2, 1.0)
    spec.set_constant(5, 1, 1.0)
    spec.add_symbol("Z", n_rows, d, 1.0 / d)
    spec.assign(4, 1, "Z", transposed=True)
    spec.assign(5, 0, "Z")
    return spec


def trace_identity_pencil(spectrum: AtomSpectrum, d: int) -> PencilSpec:
    """Four-block pencil with g[0,3] = phi c0 (the Z^T Z V* trace identity)."""
    n_rows = round(spectrum.phi() * d)
    _, v = _spectrum_diagonals(spectrum, d)
    spec = PencilSpec((d, d, n_rows, d))
    spec.set_constant(0, 0, 1.0)
    spec.set_constant(0, 1, -v)
    spec.set_constant(1, 1, 1.0)
    spec.set_constant(2, 2, 1.0)
    spec.set_constant(3, 3, 1.0)
    spec.add_symbol("Z", n_rows, d, 1.0 / d)
    spec.assign(1, 2, "Z", transposed=True)
    spec.assign(2, 3, "Z")
    return spec
