import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ringcnn.catalog import CATALOG_NAMES, catalog, get_ring
from ringcnn.ring import (
    NonExclusiveError,
    RingError,
    RingSpec,
    adjoint_basis_map,
    basis_matrices,
    check_associativity,
    check_commutativity,
    extract_sign_perm,
    is_exclusive,
    isomorphic_matrix,
    multiply,
    relabel,
    right_matrix,
    ring_multiply,
    tensor_from_sign_perm,
    unity,
)

floats = st.floats(-100, 100, allow_nan=False)


def test_examples():
    assert np.array_equal(ring_multiply(get_ring("C"), [0, 1], [0, 1]), [-1, 0])
    assert np.array_equal(ring_multiply(get_ring("R_I2"), [2, 3], [5, 7]), [10, 21])
    assert np.array_equal(ring_multiply(get_ring("H"), [0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])


def test_quaternion_table():
    h = get_ring("H")
    e = np.eye(4)
    # i j = k, j k = i, k i = j, i^2 = j^2 = k^2 = -1
    assert np.array_equal(ring_multiply(h, e[2], e[3]), e[1])
    assert np.array_equal(ring_multiply(h, e[3], e[1]), e[2])
    for a in (1, 2, 3):
        assert np.array_equal(ring_multiply(h, e[a], e[a]), -e[0])
    assert np.array_equal(ring_multiply(h, e[2], e[1]), -e[3])


def test_dimension_mismatch():
    with pytest.raises(RingError):
        ring_multiply(get_ring("C"), [1, 2, 3], [1, 2])
    with pytest.raises(RingError):
        multiply(get_ring("C"), np.ones((3, 4)), np.ones((3, 4)))


def test_tensor_validation():
    with pytest.raises(RingError):
        RingSpec("bad", np.full((2, 2, 2), 2))
    with pytest.raises(RingError):
        RingSpec("bad", np.zeros((2, 3, 2)))
    spec = get_ring("C")
    with pytest.raises(ValueError):
        spec.m_tensor[0, 0, 0] = 1  # read-only


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_unity(name):
    spec = get_ring(name)
    u = unity(spec)
    assert u is not None
    if not name.startswith("R_I"):
        assert np.array_equal(u, np.eye(spec.n)[0])
    x = np.random.default_rng(0).standard_normal(spec.n)
    assert np.array_equal(ring_multiply(spec, u, x), x)
    assert np.array_equal(ring_multiply(spec, x, u), x)


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_sign_perm_round_trip(name):
    spec = get_ring(name)
    sp = extract_sign_perm(spec)
    assert sp.full_support == (not name.startswith("R_I"))
    assert np.array_equal(tensor_from_sign_perm(sp.S, sp.P), spec.m_tensor)
    assert is_exclusive(spec.m_tensor) == sp.full_support


def test_partial_support_identity_ring():
    sp = extract_sign_perm(get_ring("R_I2"))
    assert sp.P.tolist() == [[0, -1], [-1, 1]]
    assert sp.S.tolist() == [[1, 0], [0, 1]]
    with pytest.raises(NonExclusiveError):
        extract_sign_perm(get_ring("R_I2"), allow_partial=False)


def test_non_exclusive_rejected():
    m = np.zeros((2, 2, 2), dtype=int)
    m[0, 0, 0] = m[1, 0, 0] = 1  # g0 x0 sent to both outputs
    with pytest.raises(NonExclusiveError) as err:
        extract_sign_perm(RingSpec("multi", m))
    assert (0, 0) in err.value.offenders


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_basis_completeness(name):
    spec = get_ring(name)
    e = basis_matrices(spec)
    assert e.is_signed_permutation == (not name.startswith("R_I"))
    rng = np.random.default_rng(5)
    g = rng.standard_normal((100, spec.n))
    x = rng.standard_normal((100, spec.n))
    via_basis = np.einsum("bk,kij,bj->bi", g, e.matrices, x)
    ref = np.array([ring_multiply(spec, a, b) for a, b in zip(g, x)])
    assert np.max(np.abs(via_basis - ref)) < 1e-13


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_associativity_and_commutativity(name):
    spec = get_ring(name)
    assert check_associativity(spec)
    comm = check_commutativity(spec)
    # element commutativity and E_k commutativity agree for rings with unity
    assert comm.element_commutative == comm.basis_commutative
    assert comm.element_commutative == (name != "H")


def test_right_matrix_consistent(rng):
    for spec in catalog():
        g, x = rng.standard_normal((2, spec.n))
        assert np.allclose(right_matrix(spec, x) @ g, isomorphic_matrix(spec, g) @ x, atol=1e-13)


def test_adjoint_map_all_catalog(rng):
    for spec in catalog():
        a = adjoint_basis_map(spec)
        assert a is not None, spec.name
        g = rng.standard_normal(spec.n)
        assert np.allclose(isomorphic_matrix(spec, a @ g), isomorphic_matrix(spec, g).T, atol=1e-13)


def test_relabel_preserves_algebra(rng):
    spec = get_ring("H")
    perm, signs = (0, 2, 3, 1), (1, -1, 1, 1)
    m2 = relabel(spec.m_tensor, perm, signs)
    q = np.zeros((4, 4))
    q[list(perm), range(4)] = signs
    s2 = RingSpec("H'", m2)
    g, x = rng.standard_normal((2, 4))
    assert np.allclose(ring_multiply(s2, q @ g, q @ x), q @ ring_multiply(spec, g, x))


@settings(max_examples=60, deadline=None)
@given(
    name=st.sampled_from(CATALOG_NAMES[:11]),
    a=floats,
    b=floats,
    data=st.data(),
)
def test_bilinearity_property(name, a, b, data):
    spec = get_ring(name)
    vec = arrays(np.float64, spec.n, elements=st.floats(-10, 10, allow_nan=False))
    g, x, y = data.draw(vec), data.draw(vec), data.draw(vec)
    lhs = ring_multiply(spec, g, a * x + b * y)
    rhs = a * ring_multiply(spec, g, x) + b * ring_multiply(spec, g, y)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)
    assert np.allclose(multiply(spec, g, x), ring_multiply(spec, g, x), rtol=1e-12, atol=1e-12)
