import numpy as np
import pytest

from ringcnn.catalog import get_ring
from ringcnn.ring import tensor_from_sign_perm
from ringcnn.search import (
    Relabeling,
    Unresolved,
    canonical_key,
    cp_rank_fit,
    enumerate_candidates,
    find_isomorphism,
    flattening_rank,
    grank_estimate,
    match_catalog,
    raw_permutations,
    relabelings,
    satisfies_c1,
    satisfies_c2,
    search_rings,
    sign_patterns,
)

# regression constants from exhaustive enumeration
RAW_PERMUTATIONS = {2: 1, 4: 4}
SIGN_PATTERNS_PER_P = {2: 2, 4: 64}
SIGNED_ORBITS_N4 = [10, 12]


def test_enumeration_n2():
    classes = enumerate_candidates(2)
    assert len(classes) == 1
    assert classes[0].representative.tolist() == [[0, 1], [1, 0]]


def test_enumeration_n4():
    classes = enumerate_candidates(4)
    assert len(classes) == 2
    assert sorted(c.size for c in classes) == [1, 3]
    for n, count in RAW_PERMUTATIONS.items():
        assert len(raw_permutations(n)) == count


def test_raw_permutations_satisfy_conditions():
    for n in (2, 4):
        for P in raw_permutations(n):
            assert satisfies_c1(P) and satisfies_c2(P)
            for row in P:
                assert sorted(row) == list(range(n))
            for col in P.T:
                assert sorted(col) == list(range(n))


def test_sign_patterns():
    for n in (2, 4):
        for P in raw_permutations(n):
            pats = list(sign_patterns(P))
            assert len(pats) == SIGN_PATTERNS_PER_P[n]
            assert len({p.tobytes() for p in pats}) == len(pats)
            for S in pats:
                assert satisfies_c1(P, S) and satisfies_c2(P, S)


def test_signed_orbit_counts():
    for pc, expected in zip(enumerate_candidates(4), SIGNED_ORBITS_N4):
        keys = {canonical_key(tensor_from_sign_perm(S, P), signed=True) for P in pc.members for S in sign_patterns(P)}
        assert len(keys) == expected


def test_condition_checks_reject():
    P = np.array([[0, 1], [1, 0]])
    assert not satisfies_c1(P, np.array([[1, 1], [-1, 1]]))
    assert not satisfies_c1(np.array([[1, 0], [0, 1]]))
    P4 = np.array([[0, 1, 2, 3], [1, 0, 3, 2], [2, 3, 0, 1], [3, 2, 1, 0]])
    S = np.ones((4, 4), dtype=int)
    S[1, 2] = -1  # breaks the pair (1,2)/(1,3)
    assert not satisfies_c2(P4, S)


def test_relabeling_group_sizes():
    assert len(list(relabelings(4))) == 6
    assert len(list(relabelings(4, signed=True))) == 48


def test_isomorphism_is_explicit():
    h4, o4 = get_ring("R_H4").m_tensor, get_ring("R_O4").m_tensor
    assert find_isomorphism(h4, o4) is None
    r = find_isomorphism(o4, h4, signed=True)
    assert r is not None and np.array_equal(r.apply(o4), h4)
    # a permuted copy is found and the relabeling reproduces it
    m = get_ring("R_H4-II").m_tensor
    moved = Relabeling((0, 3, 1, 2), (1, 1, 1, 1)).apply(m)
    r = find_isomorphism(m, moved)
    assert np.array_equal(r.apply(m), moved)
    assert canonical_key(m) == canonical_key(moved)


def test_cp_fit_examples():
    c = get_ring("C").m_tensor
    assert cp_rank_fit(c, 3, seed=0).residual < 1e-8
    fail = cp_rank_fit(c, 2, restarts=50, seed=0)
    assert fail.residual > 1e-3 and fail.restarts_used == 50 and not fail.certified
    assert cp_rank_fit(get_ring("R_I4").m_tensor, 4, seed=0).residual < 1e-12
    with pytest.raises(ValueError):
        cp_rank_fit(c, 0)


def test_cp_fit_factors_reconstruct():
    fit = cp_rank_fit(get_ring("R_H4").m_tensor, 4, seed=3)
    a, b, c = fit.factors
    assert np.allclose(np.einsum("ir,kr,jr->ikj", a, b, c), get_ring("R_H4").m_tensor, atol=1e-7)


def test_cp_fit_deterministic():
    m = get_ring("R_H4-I").m_tensor
    assert cp_rank_fit(m, 4, restarts=10, seed=7).residual == cp_rank_fit(m, 4, restarts=10, seed=7).residual


def test_cp_residual_monotone_in_rank():
    m = get_ring("R_O4-I").m_tensor
    res = [cp_rank_fit(m, r, restarts=20, seed=1).residual for r in (3, 4, 5)]
    assert res[0] >= res[1] >= res[2]


def test_grank_estimates():
    assert grank_estimate(get_ring("R_O4").m_tensor).grank == 4
    est = grank_estimate(get_ring("R_H4-I").m_tensor)
    assert est.grank == 5 and est.residuals[4] > 1e-3
    assert "heuristic" in est.evidence
    assert flattening_rank(get_ring("H").m_tensor) == 4


def test_grank_unresolved():
    with pytest.raises(Unresolved) as err:
        grank_estimate(get_ring("R_H4-I").m_tensor, r_max=4, restarts=10)
    assert 4 in err.value.residuals
    with pytest.raises(ValueError):
        grank_estimate(get_ring("C").m_tensor, r_max=1)


def test_search_n2():
    res = search_rings(2)
    rings = res.rings
    assert len(rings) == 2
    names = {match_catalog(v, [get_ring("R_H2"), get_ring("C")]) for v in rings}
    assert names == {"R_H2", "C"}
    assert sorted(v.grank_upper for v in rings) == [2, 3]
    assert res.to_csv() == search_rings(2).to_csv()


def test_search_rejects_n():
    with pytest.raises(ValueError):
        search_rings(3)
