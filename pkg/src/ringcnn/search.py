"""Discovery of proper rings: enumeration under the unity and cyclic-mapping
conditions, isomorphism reduction, and generic-rank estimation by CP-ALS.

Conditions on a candidate ``(P, S)`` with ``G_ij = S_ij g[P_ij]``:

* unity (C1): ``P[i, 0] = i``, ``P[i, i] = 0``, ``S[i, 0] = S[i, i] = +1``
* cyclic mapping (C2): ``P[i, j] = j'`` implies ``P[i, j'] = j`` and ``S[i, j] = S[i, j']``
* minimal rank (C3): keep only sign patterns of minimal generic rank per permutation.

C2 makes every row of ``P`` an involution, which is what the enumerator
walks over.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from ringcnn.ring import (
    RingSpec,
    check_associativity,
    check_commutativity,
    relabel,
    tensor_from_sign_perm,
)


class Unresolved(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


FIT_TOL = 1e-8


# ---------------------------------------------------------------- candidates

@dataclass(eq=False)
class Candidate:
    n: int
    P: np.ndarray
    S: np.ndarray | None = None
    class_id: int = -1
    grank_upper: int | None = None  # certified by a CP fit
    grank_lower_evidence: int | None = None  # no fit found below this (heuristic)
    residuals: dict[int, float] = field(default_factory=dict)

    @property
    def m_tensor(self) -> np.ndarray:
        if self.S is None:
            raise ValueError("candidate has no sign pattern")
        return tensor_from_sign_perm(self.S, self.P)

    def spec(self, name: str | None = None) -> RingSpec:
        return RingSpec(name or f"cand{self.class_id}", self.m_tensor)


def satisfies_c1(P, S=None) -> bool:
    P = np.asarray(P)
    n = len(P)
    idx = np.arange(n)
    ok = np.array_equal(P[:, 0], idx) and np.all(P[idx, idx] == 0)
    if S is not None:
        S = np.asarray(S)
        ok = ok and np.all(S[:, 0] == 1) and np.all(S[idx, idx] == 1)
    return bool(ok)


def satisfies_c2(P, S=None) -> bool:
    P = np.asarray(P)
    n = len(P)
    for i in range(n):
        for j in range(n):
            jp = P[i, j]
            if P[i, jp] != j:
                return False
            if S is not None and S[i, j] != S[i, jp]:
                return False
    return True


def _is_latin(P) -> bool:
    n = len(P)
    full = np.arange(n)
    return all(np.array_equal(np.sort(P[i]), full) and np.array_equal(np.sort(P[:, i]), full) for i in range(n))


def _involutions_through(n, i):
    """Involutions ``p`` of ``range(n)`` with ``p[0] == i``."""
    p = [-1] * n
    p[0], p[i] = i, 0

    def rec():
        try:
            a = p.index(-1)
        except ValueError:
            yield tuple(p)
            return
        p[a] = a
        yield from rec()
        for b in range(a + 1, n):
            if p[b] == -1:
                p[a], p[b] = b, a
                yield from rec()
                p[b] = -1
        p[a] = -1

    yield from rec()


def raw_permutations(n: int) -> list[np.ndarray]:
    """Every index matrix ``P`` (Latin square) meeting the index parts of C1 and C2."""
    rows = [list(_involutions_through(n, i)) for i in range(n)]
    out = []
    used = [set() for _ in range(n)]

    def rec(i, acc):
        if i == n:
            out.append(np.array(acc))
            return
        for row in rows[i]:
            if any(row[j] in used[j] for j in range(n)):
                continue
            for j in range(n):
                used[j].add(row[j])
            rec(i + 1, acc + [row])
            for j in range(n):
                used[j].discard(row[j])

    rec(0, [])
    return out


# ---------------------------------------------------------------- isomorphism

@dataclass(frozen=True)
class Relabeling:
    """Basis change ``x -> Q x`` with ``Q[perm[a], a] = signs[a]``; fixes the unity component."""

    perm: tuple[int, ...]
    signs: tuple[int, ...]

    def apply(self, m_tensor) -> np.ndarray:
        return relabel(m_tensor, self.perm, self.signs)

    def apply_perm(self, P) -> np.ndarray:
        P = np.asarray(P)
        out = np.empty_like(P)
        pi = np.asarray(self.perm)
        out[np.ix_(pi, pi)] = pi[P]
        return out


def relabelings(n: int, signed: bool = False):
    """Relabelings that keep the unity ``e_0`` in place (``perm[0] = 0``, ``signs[0] = +1``)."""
    sign_sets = itertools.product((1, -1), repeat=n - 1) if signed else [(1,) * (n - 1)]
    sign_sets = list(sign_sets)
    for rest in itertools.permutations(range(1, n)):
        for s in sign_sets:
            yield Relabeling((0,) + rest, (1,) + tuple(s))


def canonical_key(m_tensor, signed: bool = False) -> bytes:
    m = np.asarray(m_tensor, dtype=np.int8)
    return min(r.apply(m).tobytes() for r in relabelings(m.shape[0], signed))


def find_isomorphism(m_from, m_to, signed: bool = False) -> Relabeling | None:
    """A relabeling taking ``m_from`` to ``m_to``, or None."""
    m_from = np.asarray(m_from, dtype=np.int8)
    m_to = np.asarray(m_to, dtype=np.int8)
    if m_from.shape != m_to.shape:
        return None
    for r in relabelings(m_from.shape[0], signed):
        if np.array_equal(r.apply(m_from), m_to):
            return r
    return None


def _perm_key(P) -> bytes:
    P = np.asarray(P)
    return min(r.apply_perm(P).astype(np.int8).tobytes() for r in relabelings(len(P)))


@dataclass(eq=False)
class PermutationClass:
    class_id: int
    representative: np.ndarray
    members: list[np.ndarray]

    @property
    def size(self) -> int:
        return len(self.members)


def enumerate_candidates(n: int) -> list[PermutationClass]:
    """Permutation classes (one canonical representative each) for dimension ``n``."""
    if n not in (2, 4, 8):
        raise ValueError("enumeration supports n in {2, 4} (8 is allowed but slow)")
    groups: dict[bytes, list[np.ndarray]] = {}
    for P in raw_permutations(n):
        groups.setdefault(_perm_key(P), []).append(P)
    out = []
    for cid, key in enumerate(sorted(groups)):
        rep = np.frombuffer(key, dtype=np.int8).reshape(n, n).astype(np.int64)
        out.append(PermutationClass(cid, rep, groups[key]))
    return out


def sign_patterns(P):
    """All ``S`` consistent with C1 and C2 for the index matrix ``P``."""
    P = np.asarray(P)
    n = len(P)
    groups, seen = [], set()
    for i in range(n):
        for j in range(n):
            if (i, j) in seen:
                continue
            pair = {(i, j), (i, int(P[i, j]))}
            seen |= pair
            if any(c == 0 or c == i for _, c in pair):
                continue  # fixed to +1 by C1
            groups.append(sorted(pair))
    for bits in itertools.product((1, -1), repeat=len(groups)):
        S = np.ones((n, n), dtype=np.int8)
        for b, cells in zip(bits, groups):
            for i, j in cells:
                S[i, j] = b
        yield S


# ---------------------------------------------------------------- CP-ALS

@dataclass(eq=False)
class CpFit:
    rank: int
    factors: tuple[np.ndarray, np.ndarray, np.ndarray]
    residual: float
    restarts_used: int
    fit_tol: float = FIT_TOL

    @property
    def certified(self) -> bool:
        return self.residual < self.fit_tol


def _khatri_rao(p, q):
    b, j, r = p.shape
    return (p[:, :, None, :] * q[:, None, :, :]).reshape(b, j * q.shape[1], r)


def _als_update(unfolded, p, q):
    gram = (p.transpose(0, 2, 1) @ p) * (q.transpose(0, 2, 1) @ q)
    rhs = unfolded @ _khatri_rao(p, q)
    r = gram.shape[-1]
    ridge = 1e-15 * np.trace(gram, axis1=1, axis2=2)[:, None, None] / r
    return np.linalg.solve(gram + ridge * np.eye(r), rhs.transpose(0, 2, 1)).transpose(0, 2, 1)


def _balance(a, b, c):
    na, nb, nc = (np.linalg.norm(f, axis=1) + 1e-300 for f in (a, b, c))
    s = np.cbrt(na * nb * nc)
    return a * (s / na)[:, None, :], b * (s / nb)[:, None, :], c * (s / nc)[:, None, :]


def cp_rank_fit(
    m_tensor,
    r: int,
    restarts: int = 50,
    seed: int = 0,
    max_iter: int = 2000,
    tol: float = 1e-12,
    fit_tol: float = FIT_TOL,
    chunk: int = 10,
) -> CpFit:
    """Best-of-restarts rank-``r`` CP fit of a 3-way tensor by alternating least squares.

    Restarts run in vectorized batches of ``chunk``; the search stops after
    the first batch that certifies a fit (residual below ``fit_tol``).
    """
    if r < 1:
        raise ValueError("trial rank must be >= 1")
    t = np.asarray(m_tensor, dtype=np.float64)
    norm = np.linalg.norm(t)
    x1 = t.reshape(t.shape[0], -1)
    x2 = np.transpose(t, (1, 0, 2)).reshape(t.shape[1], -1)
    x3 = np.transpose(t, (2, 0, 1)).reshape(t.shape[2], -1)
    rng = np.random.default_rng(seed)
    best, best_factors, used = np.inf, None, 0
    while used < restarts:
        b = min(chunk, restarts - used)
        a, bb, c = (rng.standard_normal((b, s, r)) for s in t.shape)
        prev = np.full(b, np.inf)
        res = prev
        for it in range(max_iter):
            a = _als_update(x1, bb, c)
            bb = _als_update(x2, a, c)
            c = _als_update(x3, a, bb)
            if it % 10 == 9 or it == max_iter - 1:
                a, bb, c = _balance(a, bb, c)
                approx = np.einsum("bir,bjr,bkr->bijk", a, bb, c)
                res = np.linalg.norm((approx - t).reshape(b, -1), axis=1) / norm
                stalled = np.isfinite(prev) & (np.abs(prev - res) <= tol * prev)
                prev = res
                if np.all(stalled | (res < 1e-14)):
                    break
        used += b
        k = int(np.argmin(res))
        if res[k] < best:
            best, best_factors = float(res[k]), (a[k].copy(), bb[k].copy(), c[k].copy())
        if best < fit_tol:
            break
    return CpFit(r, best_factors, best, used, fit_tol)


def flattening_rank(m_tensor) -> int:
    """Largest rank among the three unfoldings; an exact lower bound on tensor rank."""
    t = np.asarray(m_tensor, dtype=np.float64)
    mats = [
        t.reshape(t.shape[0], -1),
        np.transpose(t, (1, 0, 2)).reshape(t.shape[1], -1),
        np.transpose(t, (2, 0, 1)).reshape(t.shape[2], -1),
    ]
    return max(int(np.linalg.matrix_rank(m)) for m in mats)


@dataclass
class GrankEstimate:
    grank: int
    lower_bound: int  # exact, from flattening ranks
    residuals: dict[int, float]

    @property
    def evidence(self) -> str:
        below = self.grank - 1
        if below < self.lower_bound:
            return f"grank = {self.grank} (fit certified, matches the flattening-rank lower bound)"
        return (
            f"grank <= {self.grank} certified by CP fit (residual {self.residuals[self.grank]:.2e}); "
            f"no fit found at rank {below} (best residual {self.residuals[below]:.2e}), heuristic evidence only"
        )


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def grank_estimate(m_tensor, r_max: int | None = None, restarts: int = 50, seed: int = 0) -> GrankEstimate:
    """Smallest rank with a certified CP fit, scanning upward from the flattening rank."""
    t = np.asarray(m_tensor)
    n = t.shape[0]
    r_max = 2 * n if r_max is None else r_max
    if r_max < n:
        raise ValueError("r_max must be >= n")
    lower = flattening_rank(t)
    residuals = {}
    for r in range(lower, r_max + 1):
        fit = cp_rank_fit(t, r, restarts=restarts, seed=derive_seed(seed, r))
        residuals[r] = fit.residual
        if fit.certified:
            return GrankEstimate(r, lower, residuals)
    raise Unresolved(f"no certified CP fit up to rank {r_max}", residuals)


# ---------------------------------------------------------------- search

@dataclass(eq=False)
class ClassResult:
    perm_class: PermutationClass
    raw_sign_patterns: int
    orbit_granks: list[tuple[np.ndarray, int | None, dict[int, float]]]  # (M rep, grank or None, residuals)
    min_grank: int
    variants: list[Candidate]


@dataclass(eq=False)
class SearchResult:
    n: int
    classes: list[ClassResult]
    apply_c3: bool

    @property
    def rings(self) -> list[Candidate]:
        return [v for c in self.classes for v in c.variants]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        ranks = sorted({r for c in self.classes for v in c.variants for r in v.residuals})
        w.writerow(["class_id", "S", "grank_upper", "grank_lower_evidence"] + [f"residual_r{r}" for r in ranks])
        for v in self.rings:
            s = ";".join(",".join(str(int(e)) for e in row) for row in v.S)
            res = [f"{v.residuals[r]:.3e}" if r in v.residuals else "" for r in ranks]
            w.writerow([v.class_id, s, v.grank_upper, v.grank_lower_evidence] + res)
        return buf.getvalue()


def search_rings(
    n: int,
    r_max: int | None = None,
    restarts: int = 50,
    seed: int = 0,
    apply_c3: bool | None = None,
) -> SearchResult:
    """Find the proper ring variants of dimension ``n``.

    Generic rank is evaluated once per signed-relabeling orbit (it is a
    basis-change invariant); variants are then reported up to unity-fixing
    component permutations. With C3 (default for ``n > 2``) ranks are
    scanned upward per permutation class and only the minimal-rank sign
    patterns are kept.
    """
    if n not in (2, 4):
        raise ValueError("search supports n in {2, 4}")
    apply_c3 = n > 2 if apply_c3 is None else apply_c3
    r_max = 2 * n if r_max is None else r_max
    results = []
    for pc in enumerate_candidates(n):
        raw = [(P, S) for P in pc.members for S in sign_patterns(P)]
        orbits: dict[bytes, list[int]] = {}
        for idx, (P, S) in enumerate(raw):
            orbits.setdefault(canonical_key(tensor_from_sign_perm(S, P), signed=True), []).append(idx)
        orbit_keys = sorted(orbits)
        reps = [np.frombuffer(k, dtype=np.int8).reshape(n, n, n) for k in orbit_keys]
        granks: list[int | None] = [None] * len(reps)
        residuals: list[dict[int, float]] = [{} for _ in reps]
        min_grank = None
        for r in range(n, r_max + 1):
            for o, m in enumerate(reps):
                if granks[o] is not None:
                    continue
                fit = cp_rank_fit(m, r, restarts=restarts, seed=derive_seed(seed, pc.class_id, o, r))
                residuals[o][r] = fit.residual
                if fit.certified:
                    granks[o] = r
            if any(g == r for g in granks) and min_grank is None:
                min_grank = r
            if apply_c3 and min_grank is not None:
                break
            if all(g is not None for g in granks):
                break
        if min_grank is None or (not apply_c3 and any(g is None for g in granks)):
            raise Unresolved(
                f"class {pc.class_id}: no certified fit up to rank {r_max}",
                {o: residuals[o] for o in range(len(reps))},
            )

        keep = [o for o, g in enumerate(granks) if g is not None and (not apply_c3 or g == min_grank)]
        variants: dict[bytes, Candidate] = {}
        for o in keep:
            for idx in orbits[orbit_keys[o]]:
                P, S = raw[idx]
                key = canonical_key(tensor_from_sign_perm(S, P))
                if key in variants:
                    continue
                g = granks[o]
                failed_below = residuals[o].get(g - 1, 0.0) >= FIT_TOL
                lower = g if (failed_below or g <= flattening_rank(reps[o])) else None
                variants[key] = Candidate(
                    n=n, P=np.asarray(P), S=np.asarray(S), class_id=pc.class_id,
                    grank_upper=granks[o], grank_lower_evidence=lower, residuals=dict(residuals[o]),
                )
        chosen = [variants[k] for k in sorted(variants)]
        for v in chosen:
            assert satisfies_c1(v.P, v.S) and satisfies_c2(v.P, v.S)
        results.append(ClassResult(pc, len(raw), list(zip(reps, granks, residuals)), min_grank, chosen))
    return SearchResult(n, results, apply_c3)


@dataclass
class VariantCheck:
    commutative: bool
    associative: bool


def cross_check(candidate: Candidate, seed: int = 0) -> VariantCheck:
    spec = candidate.spec()
    return VariantCheck(bool(check_commutativity(spec, 200, seed)), bool(check_associativity(spec, 200, seed)))


def match_catalog(candidate: Candidate, rings) -> str | None:
    """Name of the catalog ring isomorphic (unity-fixing permutation) to ``candidate``."""
    key = canonical_key(candidate.m_tensor)
    for spec in rings:
        if spec.n == candidate.n and canonical_key(spec.m_tensor) == key:
            return spec.name
    return None
