"""Rings over real n-tuples defined by a {-1, 0, 1} indexing tensor.

A ring multiplication ``z = g . x`` is bilinear::

    z_i = sum_j sum_k M[i, k, j] * g_k * x_j

with ``i`` the output component, ``k`` the weight component and ``j`` the
data component. Everything here works on plain numpy arrays; the indexing
tensor is an ``(n, n, n)`` int8 array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from ringcnn.fast import FastAlgorithm
    from ringcnn.tensor import DirectionalReLU


class RingError(ValueError):
    pass


class NonExclusiveError(RingError):
    """Raised when an indexing tensor cannot be written as ``G_ij = S_ij g_{P_ij}``."""

    def __init__(self, message, offenders):
        super().__init__(message)
        self.offenders = offenders


def validate_indexing_tensor(m_tensor) -> np.ndarray:
    m = np.asarray(m_tensor)
    if m.ndim != 3 or not (m.shape[0] == m.shape[1] == m.shape[2]) or m.shape[0] < 1:
        raise RingError(f"indexing tensor must be n x n x n, got shape {m.shape}")
    if not np.all(np.isin(m, (-1, 0, 1))):
        raise RingError("indexing tensor entries must be in {-1, 0, 1}")
    out = m.astype(np.int8)
    out.setflags(write=False)
    return out


def distribution_counts(m_tensor) -> np.ndarray:
    """Number of output components each sub-product ``g_k x_j`` is sent to, indexed ``[k, j]``."""
    return np.count_nonzero(np.asarray(m_tensor), axis=0)


def is_exclusive(m_tensor) -> bool:
    return bool(np.all(distribution_counts(m_tensor) == 1))


@dataclass(frozen=True)
class ComponentWise:
    """Marker for the component-wise ReLU."""

    kind: str = field(default="componentwise", init=False)


@dataclass(frozen=True, eq=False)
class RingSpec:
    name: str
    m_tensor: np.ndarray
    fast: FastAlgorithm | None = None
    nonlinearity: ComponentWise | DirectionalReLU = ComponentWise()

    def __post_init__(self):
        object.__setattr__(self, "m_tensor", validate_indexing_tensor(self.m_tensor))
        if self.fast is not None and self.fast.n != self.n:
            raise RingError(f"{self.name}: fast algorithm has n={self.fast.n}, ring has n={self.n}")

    @property
    def n(self) -> int:
        return self.m_tensor.shape[0]

    @property
    def exclusive(self) -> bool:
        return is_exclusive(self.m_tensor)

    def __repr__(self):
        m = "none" if self.fast is None else str(self.fast.m)
        return f"RingSpec({self.name!r}, n={self.n}, fast m={m})"


def _check_dim(spec: RingSpec, *vectors):
    for v in vectors:
        if np.shape(v)[-1:] != (spec.n,):
            raise RingError(f"{spec.name}: expected trailing dimension {spec.n}, got shape {np.shape(v)}")


def ring_multiply(spec: RingSpec, g, x) -> np.ndarray:
    """Reference product ``g . x`` by the direct triple loop, in float64.

    This is the oracle the fast paths are checked against; it never touches
    ``spec.fast``.
    """
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g.shape != (spec.n,) or x.shape != (spec.n,):
        raise RingError(f"{spec.name}: ring elements must have shape ({spec.n},), got {g.shape} and {x.shape}")
    m = spec.m_tensor
    n = spec.n
    z = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            for k in range(n):
                if m[i, k, j]:
                    acc += m[i, k, j] * g[k] * x[j]
        z[i] = acc
    return z


def isomorphic_matrix(spec: RingSpec, g) -> np.ndarray:
    """``G`` with ``G @ x == g . x``; ``g`` may carry leading batch axes."""
    g = np.asarray(g, dtype=np.float64)
    _check_dim(spec, g)
    return np.einsum("ikj,...k->...ij", spec.m_tensor.astype(np.float64), g)


def right_matrix(spec: RingSpec, x) -> np.ndarray:
    """``X`` with ``X @ g == g . x`` (multiplication from the right by ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(spec, x)
    return np.einsum("ikj,...j->...ik", spec.m_tensor.astype(np.float64), x)


def multiply(spec: RingSpec, g, x) -> np.ndarray:
    """Batched ``g . x`` through the isomorphic matrix (broadcasts leading axes)."""
    return np.einsum("...ij,...j->...i", isomorphic_matrix(spec, g), np.asarray(x, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class SignPerm:
    """Decomposition ``G_ij = S_ij * g[P_ij]``.

    Entries where ``G_ij`` is identically zero have ``P_ij = -1`` and
    ``S_ij = 0``; ``full_support`` is False when any such entry exists.
    """

    S: np.ndarray
    P: np.ndarray
    full_support: bool


def extract_sign_perm(spec: RingSpec, allow_partial: bool = True) -> SignPerm:
    m = spec.m_tensor
    n = spec.n
    counts = distribution_counts(m)
    multi = [(int(k), int(j)) for k, j in zip(*np.nonzero(counts > 1))]
    if multi:
        raise NonExclusiveError(
            f"{spec.name}: sub-products (k, j) distributed to multiple outputs: {multi}", multi
        )
    zero = [(int(k), int(j)) for k, j in zip(*np.nonzero(counts == 0))]
    if zero and not allow_partial:
        raise NonExclusiveError(f"{spec.name}: sub-products (k, j) distributed to no output: {zero}", zero)

    S = np.zeros((n, n), dtype=np.int8)
    P = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            ks = np.flatnonzero(m[i, :, j])
            if len(ks) > 1:
                raise NonExclusiveError(
                    f"{spec.name}: G[{i},{j}] mixes weight components {ks.tolist()}", [(i, j)]
                )
            if len(ks) == 1:
                P[i, j] = ks[0]
                S[i, j] = m[i, ks[0], j]
    full = bool(np.all(P >= 0))
    if full:
        for axis in (0, 1):
            if not np.all(np.sort(P, axis=axis) == np.arange(n).reshape((-1, 1) if axis == 0 else (1, -1))):
                raise NonExclusiveError(f"{spec.name}: P is not a Latin square", [])
    return SignPerm(S=S, P=P, full_support=full)


def tensor_from_sign_perm(S, P) -> np.ndarray:
    """Inverse of :func:`extract_sign_perm`: build ``M`` from ``(S, P)``."""
    S = np.asarray(S)
    P = np.asarray(P)
    n = S.shape[0]
    m = np.zeros((n, n, n), dtype=np.int8)
    for i in range(n):
        for j in range(n):
            if P[i, j] >= 0:
                m[i, P[i, j], j] = S[i, j]
    return m


@dataclass(frozen=True, eq=False)
class SignedPermutationBasis:
    matrices: np.ndarray  # (n, n, n), matrices[k] = E_k

    @property
    def is_signed_permutation(self) -> bool:
        nz = self.matrices != 0
        return bool(np.all(nz.sum(axis=1) == 1) and np.all(nz.sum(axis=2) == 1))

    def __getitem__(self, k):
        return self.matrices[k]

    def __len__(self):
        return len(self.matrices)


def basis_matrices(spec: RingSpec) -> SignedPermutationBasis:
    # (E_k)_ij = M[i, k, j]
    e = np.ascontiguousarray(np.transpose(spec.m_tensor, (1, 0, 2))).astype(np.int8)
    return SignedPermutationBasis(e)


def unity(spec: RingSpec, tol: float = 1e-12) -> np.ndarray | None:
    """Two-sided identity element, or None if the ring has none."""
    n = spec.n
    e = basis_matrices(spec).matrices.astype(np.float64)
    a = e.reshape(n, n * n).T
    # left unity: sum_k u_k E_k = I ; right unity: sum_j u_j M[:, :, j] = I
    f = np.transpose(spec.m_tensor, (2, 0, 1)).astype(np.float64).reshape(n, n * n).T
    target = np.eye(n).ravel()
    u, *_ = np.linalg.lstsq(np.vstack([a, f]), np.concatenate([target, target]), rcond=None)
    if np.max(np.abs(a @ u - target)) > tol or np.max(np.abs(f @ u - target)) > tol:
        return None
    return np.where(np.abs(u - np.round(u)) < tol, np.round(u), u)


def random_elements(n, count, rng) -> np.ndarray:
    return rng.standard_normal((count, n))


@dataclass
class CommutativityReport:
    element_commutative: bool
    basis_commutative: bool
    max_deviation: float

    def __bool__(self):
        return self.element_commutative and self.basis_commutative


def check_commutativity(spec: RingSpec, trials: int = 100, seed: int = 0, tol: float = 1e-12) -> CommutativityReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    g = random_elements(spec.n, trials, rng)
    x = random_elements(spec.n, trials, rng)
    dev = float(np.max(np.abs(multiply(spec, g, x) - multiply(spec, x, g))))
    e = basis_matrices(spec).matrices.astype(np.int64)
    prod = np.einsum("aij,bjl->abil", e, e)
    basis_ok = bool(np.array_equal(prod, np.transpose(prod, (1, 0, 2, 3))))
    return CommutativityReport(dev < tol, basis_ok, dev)


@dataclass
class AssociativityReport:
    passed: bool
    max_deviation: float

    def __bool__(self):
        return self.passed


def check_associativity(spec: RingSpec, trials: int = 100, seed: int = 0, tol: float = 1e-10) -> AssociativityReport:
    """Checks ``G(a . b) == G(a) @ G(b)`` on random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    a = random_elements(spec.n, trials, rng)
    b = random_elements(spec.n, trials, rng)
    lhs = isomorphic_matrix(spec, multiply(spec, a, b))
    rhs = isomorphic_matrix(spec, a) @ isomorphic_matrix(spec, b)
    dev = float(np.max(np.abs(lhs - rhs)))
    return AssociativityReport(dev < tol, dev)


def adjoint_basis_map(spec: RingSpec, tol: float = 1e-12) -> np.ndarray | None:
    """Matrix ``A`` with ``G(g)^T == G(A @ g)`` for every ``g``, if it exists.

    When it does, backprop through ``z = g . x`` is itself a ring product:
    ``dL/dx = (A g) . dL/dz``.
    """
    n = spec.n
    e = basis_matrices(spec).matrices.astype(np.float64)
    basis = e.reshape(n, n * n).T
    et = np.transpose(e, (0, 2, 1)).reshape(n, n * n).T
    a, *_ = np.linalg.lstsq(basis, et, rcond=None)
    if np.max(np.abs(basis @ a - et)) > tol:
        return None
    return np.round(a) if np.allclose(a, np.round(a), atol=tol) else a


def relabel(m_tensor, perm, signs=None) -> np.ndarray:
    """Apply the basis change ``x -> Q x`` with ``Q[perm[a], a] = signs[a]`` to all three modes."""
    m = np.asarray(m_tensor)
    n = m.shape[0]
    signs = np.ones(n, dtype=np.int64) if signs is None else np.asarray(signs)
    q = np.zeros((n, n), dtype=np.int64)
    q[np.asarray(perm), np.arange(n)] = signs
    return np.einsum("ia,kb,jc,abc->ikj", q, q, q, m.astype(np.int64)).astype(np.int8)
