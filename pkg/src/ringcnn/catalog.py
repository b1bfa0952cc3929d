"""Built-in rings.

Tensors are entered from their defining structure: identity rings are
diagonal, R_H and R_O4 are rebuilt from their diagonalizing transforms,
the grank-5 variants are sign twists of 4-point circular convolution, and
C / H are the usual complex and Hamilton products. Each fast algorithm is
checked against its tensor when the catalog is first built.
"""

from __future__ import annotations

import functools

import numpy as np

from ringcnn.fast import (
    FastAlgorithm,
    identity_algorithm,
    minimal_algorithm,
    quaternion_algorithm,
    semisimple_algorithm,
    verify_fast,
)
from ringcnn.ring import RingError, RingSpec, tensor_from_sign_perm

CATALOG_NAMES = (
    "R_I2", "R_H2", "C",
    "R_I4", "R_H4", "R_O4",
    "R_H4-I", "R_H4-II", "R_O4-I", "R_O4-II",
    "H", "R_I8",
)

ALIASES = {
    "complex": "C",
    "quaternion": "H",
    "quaternions": "H",
}


def hadamard(n: int) -> np.ndarray:
    """Unnormalized Sylvester Hadamard matrix (entries +-1)."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"Hadamard order must be a power of two, got {n}")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def reflected_householder() -> np.ndarray:
    """``O = 2 L1 (I - 2 v v^T)`` with ``L1 = diag(1, -1, -1, -1)`` and ``v = (1, 1, 1, 1) / 2``."""
    l1 = np.diag([1.0, -1.0, -1.0, -1.0])
    v = np.full(4, 0.5)
    return 2.0 * l1 @ (np.eye(4) - 2.0 * np.outer(v, v))


def identity_tensor(n: int) -> np.ndarray:
    m = np.zeros((n, n, n), dtype=np.int8)
    for i in range(n):
        m[i, i, i] = 1
    return m


def tensor_from_diagonalizer(t) -> np.ndarray:
    """``M`` of the ring with ``G(g) = T^-1 diag(T g) T``."""
    t = np.asarray(t, dtype=np.float64)
    t_inv = np.linalg.inv(t)
    m = np.einsum("ia,ak,aj->ikj", t_inv, t, t)
    r = np.round(m)
    if np.max(np.abs(m - r)) > 1e-9 or not np.all(np.isin(r, (-1, 0, 1))):
        raise RingError("diagonalizer does not produce a {-1, 0, 1} indexing tensor")
    return r.astype(np.int8)


def xor_permutation(n: int) -> np.ndarray:
    return np.bitwise_xor.outer(np.arange(n), np.arange(n))


def cyclic_permutation(n: int) -> np.ndarray:
    i = np.arange(n)
    return (i[:, None] - i[None, :]) % n


def coboundary_signs(p, s) -> np.ndarray:
    """Sign matrix ``S_ij = s_i s_{P_ij} s_j`` (the relabeling ``x_i -> s_i x_i`` of an all-plus ring)."""
    p = np.asarray(p)
    s = np.asarray(s)
    return (s[:, None] * s[p] * s[None, :]).astype(np.int8)


def complex_tensor() -> np.ndarray:
    return tensor_from_sign_perm([[1, -1], [1, 1]], [[0, 1], [1, 0]])


def quaternion_tensor() -> np.ndarray:
    # G(g) for g = g0 + g1 i + g2 j + g3 k acting on x from the right of g
    s = [[1, -1, -1, -1], [1, 1, -1, 1], [1, 1, 1, -1], [1, -1, 1, 1]]
    return tensor_from_sign_perm(s, xor_permutation(4))


_GRANK5_SIGNS = {
    "R_H4-I": (1, 1, 1, 1),
    "R_H4-II": (1, 1, -1, -1),
    "R_O4-I": (1, 1, 1, -1),
    "R_O4-II": (1, 1, -1, 1),
}


def _checked(name, m, alg: FastAlgorithm) -> RingSpec:
    spec = RingSpec(name=name, m_tensor=m, fast=alg)
    report = verify_fast(spec, alg, trials=64)
    if not report:
        raise RingError(f"catalog ring {name}: fast algorithm fails (deviation {report.max_deviation:.3g})")
    return spec


def _build(name: str) -> RingSpec:
    if name in ("R_I2", "R_I4", "R_I8"):
        n = int(name[3:])
        return _checked(name, identity_tensor(n), identity_algorithm(n))
    if name in ("R_H2", "R_H4"):
        m = tensor_from_diagonalizer(hadamard(int(name[3:])))
        return _checked(name, m, minimal_algorithm(RingSpec(name, m)))
    if name == "R_O4":
        m = tensor_from_diagonalizer(reflected_householder())
        return _checked(name, m, minimal_algorithm(RingSpec(name, m)))
    if name == "C":
        m = complex_tensor()
        return _checked(name, m, semisimple_algorithm(RingSpec(name, m)))
    if name in _GRANK5_SIGNS:
        p = cyclic_permutation(4)
        m = tensor_from_sign_perm(coboundary_signs(p, _GRANK5_SIGNS[name]), p)
        return _checked(name, m, semisimple_algorithm(RingSpec(name, m)))
    if name == "H":
        return _checked(name, quaternion_tensor(), quaternion_algorithm())
    raise KeyError(name)


@functools.cache
def get_ring(name: str) -> RingSpec:
    key = ALIASES.get(name.lower(), name) if name not in CATALOG_NAMES else name
    if key not in CATALOG_NAMES:
        raise KeyError(f"unknown ring {name!r}; known: {', '.join(CATALOG_NAMES)}")
    return _build(key)


def catalog() -> list[RingSpec]:
    return [get_ring(name) for name in CATALOG_NAMES]
