"""Transform-based fast ring multiplication.

A fast algorithm replaces the n^2 real products of ``G @ x`` by ``m``
component-wise products::

    z = T_z @ ((T_g @ g) * (T_x @ x))

It is correct for a ring exactly when the decomposition identity
``M[i, k, j] == sum_r T_z[i, r] T_g[r, k] T_x[r, j]`` holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ringcnn.ring import RingError, RingSpec, basis_matrices, multiply


class NotSimultaneouslyDiagonalizable(RingError):
    pass


class NotRealDiagonalizable(RingError):
    pass


@dataclass(frozen=True, eq=False)
class FastAlgorithm:
    t_g: np.ndarray  # (m, n)
    t_x: np.ndarray  # (m, n)
    t_z: np.ndarray  # (n, m)

    def __post_init__(self):
        for name in ("t_g", "t_x", "t_z"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        m, n = self.t_g.shape
        if self.t_x.shape != (m, n) or self.t_z.shape != (n, m):
            raise RingError(
                f"inconsistent transform shapes T_g{self.t_g.shape} T_x{self.t_x.shape} T_z{self.t_z.shape}"
            )

    @property
    def n(self) -> int:
        return self.t_g.shape[1]

    @property
    def m(self) -> int:
        return self.t_g.shape[0]

    def tensor(self) -> np.ndarray:
        """The indexing tensor this algorithm computes."""
        return np.einsum("ir,rk,rj->ikj", self.t_z, self.t_g, self.t_x)


def transform_weight(alg: FastAlgorithm, g) -> np.ndarray:
    return np.asarray(g, dtype=np.float64) @ alg.t_g.T


def transform_data(alg: FastAlgorithm, x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) @ alg.t_x.T


def apply_pretransformed(alg: FastAlgorithm, g_tilde, x) -> np.ndarray:
    """``T_z @ (g_tilde * T_x x)`` with a cached ``g_tilde = T_g g``."""
    return (np.asarray(g_tilde) * transform_data(alg, x)) @ alg.t_z.T


def apply_fast(alg: FastAlgorithm, g, x) -> np.ndarray:
    return apply_pretransformed(alg, transform_weight(alg, g), x)


@dataclass
class FastReport:
    passed: bool
    identity_deviation: float
    sample_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.identity_deviation, self.sample_deviation)

    def __bool__(self):
        return self.passed


def verify_fast(spec: RingSpec, alg: FastAlgorithm, trials: int = 1000, seed: int = 0, tol: float = 1e-10) -> FastReport:
    if alg.n != spec.n:
        raise RingError(f"{spec.name}: algorithm has n={alg.n}, ring has n={spec.n}")
    ident = float(np.max(np.abs(alg.tensor() - spec.m_tensor)))
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((trials, spec.n))
    x = rng.standard_normal((trials, spec.n))
    sample = float(np.max(np.abs(apply_fast(alg, g, x) - multiply(spec, g, x))))
    return FastReport(ident < tol and sample < tol, ident, sample)


def generic_rank(spec: RingSpec, seed: int = 0, threshold: float = 1e-9) -> int:
    """Rank of ``G(g)`` at a random weight point (a lower bound on ``m``)."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(spec.n)
    e = basis_matrices(spec).matrices.astype(np.float64)
    s = np.linalg.svd(np.einsum("k,kij->ij", g, e), compute_uv=False)
    return int(np.sum(s > threshold * max(s[0], 1.0)))


def _snap(a, tol=1e-10, denom=256):
    """Snap entries within ``tol`` of a multiple of ``1/denom``."""
    r = np.round(a * denom) / denom
    return np.where(np.abs(a - r) < tol, r, a)


def _normalize_rows(t):
    out = np.array(t, dtype=np.float64)
    for r in range(out.shape[0]):
        row = out[r]
        lead = row[np.flatnonzero(np.abs(row) > 1e-12)[0]]
        out[r] = row / (np.max(np.abs(row)) * np.sign(lead))
    return _snap(out)


def _sort_rows_desc(rows):
    order = sorted(range(len(rows)), key=lambda r: tuple(np.round(rows[r], 12)), reverse=True)
    return np.asarray(rows)[order]


def _commuting_basis(spec):
    e = basis_matrices(spec).matrices.astype(np.float64)
    for a in range(spec.n):
        for b in range(a + 1, spec.n):
            if not np.allclose(e[a] @ e[b], e[b] @ e[a], atol=1e-12):
                raise NotSimultaneouslyDiagonalizable(f"{spec.name}: E_{a} and E_{b} do not commute")
    return e


def _probe(spec, e, rng, attempts):
    """Eigendecomposition of a random combination of the basis with separated eigenvalues."""
    for _ in range(attempts):
        c = rng.standard_normal(spec.n)
        w, v = np.linalg.eig(np.einsum("k,kij->ij", c, e))
        gaps = np.abs(w[:, None] - w[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() >= 1e-6:
            return w, v
    raise NotSimultaneouslyDiagonalizable(
        f"{spec.name}: eigenvalues stayed degenerate over {attempts} probes"
    )


def minimal_algorithm(spec: RingSpec, seed: int = 0, attempts: int = 8) -> FastAlgorithm:
    """Minimal algorithm ``m = rank(G)`` for a ring whose ``G`` is real-diagonalizable.

    ``G = T^-1 D T`` gives ``T_x = T``, ``T_z = T^-1`` and
    ``(T_g)_ij = (T E_j T^-1)_ii``. Rows whose diagonal entry is
    identically zero are dropped.
    """
    e = _commuting_basis(spec)
    w, v = _probe(spec, e, np.random.default_rng(seed), attempts)
    if np.max(np.abs(w.imag)) > 1e-9:
        raise NotRealDiagonalizable(f"{spec.name}: generic G has complex eigenvalues")
    t = _sort_rows_desc(_normalize_rows(np.linalg.inv(v.real)))
    t_inv = _snap(np.linalg.inv(t))
    t_g = _snap(np.einsum("ia,kab,bi->ik", t, e, t_inv))
    keep = np.any(np.abs(t_g) > 1e-12, axis=1)
    return FastAlgorithm(t_g=t_g[keep], t_x=t[keep], t_z=t_inv[:, keep])


# products of the 3-multiplication complex product (a + ib)(x0 + i x1)
_GAUSS_G = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
_GAUSS_Z = np.array([[1.0, -1.0, 0.0], [-1.0, -1.0, 1.0]])


def semisimple_algorithm(spec: RingSpec, seed: int = 0, attempts: int = 8) -> FastAlgorithm:
    """Fast algorithm for a commutative ring whose generic ``G`` is diagonalizable over C.

    Real eigen-directions cost one product each; every complex-conjugate
    pair is handled as a complex product with three real multiplications.
    """
    e = _commuting_basis(spec)
    w, v = _probe(spec, e, np.random.default_rng(seed), attempts)
    left = np.linalg.inv(v)  # rows are left eigenvectors
    real_rows, blocks = [], []
    for idx in np.argsort(-w.real, kind="stable"):
        if abs(w[idx].imag) <= 1e-9:
            real_rows.append(left[idx].real)
        elif w[idx].imag > 0:
            row = left[idx]
            lead = row[np.flatnonzero(np.abs(row) > 1e-12)[0]]
            row = row / lead
            pair = np.stack([row.real, row.imag])
            # the conjugate row is an equally valid basis; keep the imaginary row leading positive
            if pair[1][np.flatnonzero(np.abs(pair[1]) > 1e-12)[0]] < 0:
                pair[1] = -pair[1]
            blocks.append(_snap(pair / np.max(np.abs(pair))))
    rows = list(_sort_rows_desc(_normalize_rows(real_rows))) if real_rows else []
    n_real = len(rows)
    for pair in blocks:
        rows.extend(pair)
    t = np.array(rows)
    t_inv = _snap(np.linalg.inv(t))
    b = _snap(np.einsum("ia,kab,bj->kij", t, e, t_inv))  # b[k] = T E_k T^-1

    m = n_real + 3 * len(blocks)
    t_g = np.zeros((m, spec.n))
    t_x = np.zeros((m, spec.n))
    recon = np.zeros((spec.n, m))
    for r in range(n_real):
        t_g[r] = b[:, r, r]
        t_x[r] = t[r]
        recon[r, r] = 1.0
    for q in range(len(blocks)):
        p = n_real + 2 * q
        c = n_real + 3 * q
        ab = np.stack([b[:, p, p], b[:, p + 1, p]])  # (a, b) coefficient rows
        t_g[c:c + 3] = _GAUSS_G @ ab
        t_x[c:c + 3] = _GAUSS_G @ t[p:p + 2]
        recon[p:p + 2, c:c + 3] = _GAUSS_Z
    return FastAlgorithm(t_g=_snap(t_g), t_x=_snap(t_x), t_z=_snap(t_inv @ recon))


def quaternion_algorithm() -> FastAlgorithm:
    """Eight-product Hamilton product ``g * x`` for ``(re, i, j, k)`` components."""
    t_g = [
        [0, 0, -1, 1],
        [1, 1, 0, 0],
        [1, -1, 0, 0],
        [0, 0, 1, 1],
        [0, -1, 0, 1],
        [0, 1, 0, 1],
        [1, 0, 1, 0],
        [1, 0, -1, 0],
    ]
    t_x = [
        [0, 0, 1, -1],
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [1, -1, 0, 0],
        [0, 1, -1, 0],
        [0, 1, 1, 0],
        [1, 0, 0, -1],
        [1, 0, 0, 1],
    ]
    h = 0.5
    t_z = [
        [1, 0, 0, 0, h, -h, h, h],
        [0, 1, 0, 0, h, -h, -h, -h],
        [0, 0, 1, 0, h, h, h, -h],
        [0, 0, 0, 1, h, h, -h, h],
    ]
    return FastAlgorithm(t_g=t_g, t_x=t_x, t_z=t_z)


def identity_algorithm(n: int) -> FastAlgorithm:
    eye = np.eye(n)
    return FastAlgorithm(eye, eye, eye)


@dataclass(frozen=True)
class CostProfile:
    dof: int
    real_mults: int
    storage_efficiency: float
    mult_efficiency: float
    bitwidth_pair: tuple[int, int]  # (w_g, w_x)
    complexity_8bit: float


def transformed_bitwidth(t, w: int) -> int:
    """Worst-case width of ``t @ v`` for ``w``-bit ``v``: ``w + ceil(log2(max row L1 norm))``."""
    growth = max(float(np.sum(np.abs(row))) for row in np.asarray(t))
    return w + max(0, math.ceil(math.log2(growth) - 1e-12))


def cost_profile(spec: RingSpec, alg: FastAlgorithm, w: int = 8) -> CostProfile:
    if w < 2:
        raise ValueError("bitwidth must be >= 2")
    n, m = spec.n, alg.m
    e = basis_matrices(spec).matrices.reshape(n, n * n)
    dof = int(np.linalg.matrix_rank(e.astype(np.float64)))
    w_g = transformed_bitwidth(alg.t_g, w)
    w_x = transformed_bitwidth(alg.t_x, w)
    return CostProfile(
        dof=dof,
        real_mults=m,
        storage_efficiency=n * n / dof,
        mult_efficiency=n * n / m,
        bitwidth_pair=(w_g, w_x),
        complexity_8bit=n * n * w * w / (m * w_g * w_x),
    )
