"""Sample covariances, log-likelihood pieces, and score-equation systems.

The log-likelihood of a concentration matrix K given a sample covariance S
is ``log det K - trace(S K)`` (up to an affine reparametrization that does
not move critical points).  In edge parameters the only denominators in the
score equations are the factors of det K, so each cleared polynomial system
here records exactly which divisors were removed.

Three system builders:

* ``score_system_star``     -- the all-quadratic form for star trees, with a
                               single reciprocal variable for the edge sum;
* ``score_system_reciprocal`` -- its generalization: one reciprocal variable
                               per internal-node determinant factor.  Every
                               solution automatically has all coordinates in
                               the torus, keeping total-degree path counts
                               small; this is the pipeline default.
* ``score_system_general``  -- direct denominator clearing in the edge
                               variables only (degrees grow, spurious
                               solutions on the removed divisors possible).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from .determinants import FactoredDeterminant, det_formula, det_fraction
from .polynomials import Arena, PolySystem, SparsePoly
from .toric import leaf_pairs, pair_index, symbolic_concentration, theta_arena, theta_name
from .trees import PhyloTree


def _exact(x):
    if isinstance(x, (int, Fraction)):
        return x
    return Fraction(x)  # floats convert exactly


@dataclass(frozen=True)
class SampleCovariance:
    """Symmetric n x n sample covariance with exact rational entries."""

    n: int
    entries: tuple[tuple[Fraction | int, ...], ...]
    provenance: str = "data"

    def __post_init__(self):
        if len(self.entries) != self.n or any(len(r) != self.n for r in self.entries):
            raise ValueError("covariance matrix has wrong shape")
        for i in range(self.n):
            for j in range(i):
                if self.entries[i][j] != self.entries[j][i]:
                    raise ValueError("covariance matrix is not symmetric")

    @classmethod
    def from_matrix(cls, matrix, provenance: str = "data") -> "SampleCovariance":
        rows = tuple(tuple(_exact(x) for x in row) for row in matrix)
        return cls(len(rows), rows, provenance)

    def __getitem__(self, ij: tuple[int, int]):
        """Entry s_ij indexed by non-root leaf labels 1..n."""
        i, j = ij
        return self.entries[i - 1][j - 1]

    def as_float(self):
        import numpy as np

        return np.array([[float(x) for x in row] for row in self.entries], dtype=float)

    def is_positive_definite(self, pivot_tol: float = 1e-10) -> bool:
        return cholesky_is_pd(self.as_float(), pivot_tol)


def cholesky_is_pd(matrix, pivot_tol: float = 1e-10) -> bool:
    """Floating Cholesky with a pivot tolerance relative to the diagonal scale."""
    import numpy as np

    A = np.array(matrix, dtype=float, copy=True)
    m = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    for k in range(m):
        if A[k, k] <= pivot_tol * scale:
            return False
        A[k, k] = np.sqrt(A[k, k])
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k + 1:, k])
    return True


def sample_covariance(data) -> SampleCovariance:
    """S = (1/m) sum of u u^T over the data rows, exact over the rationals."""
    rows = [list(map(_exact, row)) for row in data]
    if not rows:
        raise ValueError("empty data")
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise ValueError("ragged data rows")
    m = len(rows)
    S = [[Fraction(0)] * n for _ in range(n)]
    for u in rows:
        for i in range(n):
            if u[i] == 0:
                continue
            for j in range(i, n):
                S[i][j] += Fraction(u[i] * u[j], m)
    for i in range(n):
        for j in range(i):
            S[i][j] = S[j][i]
    return SampleCovariance.from_matrix(S, provenance=f"data(m={m})")


def random_generic_s(n: int, seed: int) -> SampleCovariance:
    """Deterministic full-rank integer Wishart-style covariance.

    S = W W^T with W an n x (n+2) matrix of uniform integers in [-10, 10];
    rank-deficient draws are rejected and redrawn from the same stream.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = random.Random(seed)
    while True:
        W = [[rng.randint(-10, 10) for _ in range(n + 2)] for _ in range(n)]
        S = [[sum(W[i][k] * W[j][k] for k in range(n + 2)) for j in range(n)] for i in range(n)]
        if det_fraction(S) != 0:
            return SampleCovariance.from_matrix(S, provenance=f"generic(seed={seed})")


# -------------------------------------------------------------------------- #
# Log-likelihood pieces
# -------------------------------------------------------------------------- #

def s_name(i: int, j: int) -> str:
    i, j = min(i, j), max(i, j)
    return f"s{i}{j}" if j <= 9 else f"s{i}_{j}"


def trace_poly(tree: PhyloTree, S: SampleCovariance | None, arena: Arena) -> SparsePoly:
    """trace(S K(theta)) expanded over *arena*.

    With S=None the arena must contain symbolic s_ij variables and the result
    is linear in them; otherwise coefficients are the exact entries of S.
    """
    K = symbolic_concentration(tree, arena)
    n = tree.n
    total = arena.zero()
    for i in range(1, n + 1):
        sii = arena.var(s_name(i, i)) if S is None else arena.const(S[i, i])
        total = total + sii * K[i - 1][i - 1]
        for j in range(i + 1, n + 1):
            sij = arena.var(s_name(i, j)) if S is None else arena.const(S[i, j])
            total = total + 2 * sij * K[i - 1][j - 1]
    return total


def loglik_terms(tree: PhyloTree, S: SampleCovariance | None = None):
    """The two pieces of the log-likelihood: det factors and the trace.

    Returns ``(factored_det, trace)`` where the log-likelihood is the sum of
    logs of the determinant factors (with their exponents) minus the trace.
    With ``S=None`` the trace keeps symbolic ``s_ij`` coefficients.
    """
    if S is None:
        names = [theta_name(e) for e in range(tree.num_edges)]
        names += [s_name(i, j) for i in range(1, tree.n + 1) for j in range(i, tree.n + 1)]
        arena = Arena(names)
    else:
        if S.n != tree.n:
            raise ValueError("covariance dimension does not match the tree")
        arena = theta_arena(tree)
    return det_formula(tree, arena), trace_poly(tree, S, arena)


def loglik_value(tree: PhyloTree, S: SampleCovariance, K):
    """log det K - trace(S K) for a numeric concentration matrix K."""
    import numpy as np

    K = np.asarray(K, dtype=float)
    sign, logdet = np.linalg.slogdet(K)
    if sign <= 0:
        return -np.inf
    return float(logdet - np.sum(S.as_float() * K))


# -------------------------------------------------------------------------- #
# Score-equation systems
# -------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ScoreSystem:
    """A cleared score-equation system plus its removed-divisor record."""

    system: PolySystem
    removed_divisors: tuple[SparsePoly, ...]
    fiber_size: int
    theta_count: int
    mode: str
    tree: PhyloTree | None = None

    def __post_init__(self):
        if not self.system.is_square:
            raise ValueError("score system must be square")


def _pair_coefficients(n: int, S: SampleCovariance):
    """c_0j = s_jj and c_ij = s_ii + s_jj - 2 s_ij: the coefficients of
    theta_i theta_j in trace(S K) for a star tree."""
    c = {}
    for i, j in leaf_pairs(n):
        if i == 0:
            c[(i, j)] = S[j, j]
        else:
            c[(i, j)] = S[i, i] + S[j, j] - 2 * S[i, j]
    return c


def score_system_star(n: int, S: SampleCovariance) -> ScoreSystem:
    """All-quadratic score system for the star tree on n+1 leaves.

    Unknowns are the edge parameters t_0..t_n plus one reciprocal variable
    psi for the edge sum; every equation is quadratic, so the total-degree
    path count is 2^(n+2).  Every solution has all coordinates nonzero: if
    t_i = 0 the i-th equation reads 1 = 0, and likewise for psi.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if S.n != n:
        raise ValueError("covariance dimension mismatch")
    arena = Arena([theta_name(e) for e in range(n + 1)] + ["psi"])
    t = [arena.var(theta_name(e)) for e in range(n + 1)]
    psi = arena.var("psi")
    c = _pair_coefficients(n, S)
    cij = lambda i, j: c[(min(i, j), max(i, j))]
    eqs = []
    for i in range(n + 1):
        inner = (n - 1) * psi
        for j in range(n + 1):
            if j != i:
                inner = inner - cij(i, j) * t[j]
        eqs.append(1 + t[i] * inner)
    total = t[0]
    for x in t[1:]:
        total = total + x
    eqs.append(1 - psi * total)
    system = PolySystem(arena, tuple(eqs))
    return ScoreSystem(
        system=system,
        removed_divisors=tuple(t) + (total,),
        fiber_size=2,
        theta_count=n + 1,
        mode="star",
    )


def _internal_factors(tree: PhyloTree, arena: Arena):
    """(node, D_v, exponent) for the internal-node determinant factors."""
    return det_formula(tree, arena).factors


def score_system_reciprocal(tree: PhyloTree, S: SampleCovariance) -> ScoreSystem:
    """Score system with one reciprocal variable per internal-node factor.

    For each edge e the cleared equation is
    ``1 + t_e (sum_v (deg v - 2) psi_v dD_v/dt_e - d trace/dt_e)`` and each
    reciprocal variable carries its defining equation ``1 - psi_v D_v``.
    All solutions lie in the torus with every D_v nonzero, so no divisor
    filtering is needed and path counts stay at (max degree)^(#equations)
    with degrees bounded by the local factor degrees, not their product.
    """
    if S.n != tree.n:
        raise ValueError("covariance dimension mismatch")
    internal = sorted(tree.internal_nodes())
    names = [theta_name(e) for e in range(tree.num_edges)] + [f"psi{v}" for v in internal]
    arena = Arena(names)
    factors = _internal_factors(tree, arena)
    tr = trace_poly(tree, S, arena)
    eqs = []
    for e in range(tree.num_edges):
        te = theta_name(e)
        inner = arena.zero()
        for v, D, exp in factors:
            dD = D.diff(te)
            if not dD.is_zero():
                inner = inner + exp * arena.var(f"psi{v}") * dD
        inner = inner - tr.diff(te)
        eqs.append(1 + arena.var(te) * inner)
    for v, D, _ in factors:
        eqs.append(1 - arena.var(f"psi{v}") * D)
    system = PolySystem(arena, tuple(eqs))
    divisors = tuple(arena.var(theta_name(e)) for e in range(tree.num_edges))
    divisors += tuple(D for _, D, _ in factors)
    return ScoreSystem(
        system=system,
        removed_divisors=divisors,
        fiber_size=2 ** tree.num_internal,
        theta_count=tree.num_edges,
        mode="reciprocal",
        tree=tree,
    )


def score_system_general(tree: PhyloTree, S: SampleCovariance) -> ScoreSystem:
    """Directly cleared score system in the edge variables only.

    Each partial derivative ``1/t_e + sum_v (deg v - 2) dD_v/D_v - d trace``
    is multiplied by ``t_e * prod_v D_v`` (each removed divisor to the first
    power).  Solutions landing on a removed divisor are spurious and must be
    filtered numerically downstream.
    """
    if S.n != tree.n:
        raise ValueError("covariance dimension mismatch")
    arena = theta_arena(tree)
    factors = _internal_factors(tree, arena)
    tr = trace_poly(tree, S, arena)
    B = arena.one()
    for _, D, _ in factors:
        B = B * D
    eqs = []
    for e in range(tree.num_edges):
        te = arena.var(theta_name(e))
        eq = B
        for idx, (v, D, exp) in enumerate(factors):
            dD = D.diff(theta_name(e))
            if dD.is_zero():
                continue
            others = arena.one()
            for jdx, (_, D2, _) in enumerate(factors):
                if jdx != idx:
                    others = others * D2
            eq = eq + exp * te * dD * others
        eq = eq - te * tr.diff(theta_name(e)) * B
        eqs.append(eq)
    system = PolySystem(arena, tuple(eqs))
    divisors = tuple(arena.var(theta_name(e)) for e in range(tree.num_edges))
    divisors += tuple(D for _, D, _ in factors)
    return ScoreSystem(
        system=system,
        removed_divisors=divisors,
        fiber_size=2 ** tree.num_internal,
        theta_count=tree.num_edges,
        mode="cleared",
        tree=tree,
    )


# -------------------------------------------------------------------------- #
# Re-rooting transforms
# -------------------------------------------------------------------------- #

def reroot_covariance(S: SampleCovariance, r: int) -> SampleCovariance:
    """Covariance transform matching a re-rooting at leaf r.

    In the re-rooted coordinates (non-root leaves ordered 1..r-1, 0, r+1..n,
    with the old root occupying slot r): ``s'_rr = s_rr``,
    ``s'_rj = s_rr - s_rj``, ``s'_ii = s_rr + s_ii - 2 s_ri`` and
    ``s'_ij = s_rr - s_ri - s_rj + s_ij``.  The transform is an involution.
    """
    n = S.n
    if not 1 <= r <= n:
        raise ValueError(f"reroot target {r} out of range 1..{n}")
    out = [[None] * n for _ in range(n)]
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            if i == r and j == r:
                val = S[r, r]
            elif i == r:
                val = S[r, r] - S[r, j]
            elif j == r:
                val = S[r, r] - S[r, i]
            elif i == j:
                val = S[r, r] + S[i, i] - 2 * S[r, i]
            else:
                val = S[r, r] - S[r, i] - S[r, j] + S[i, j]
            out[i - 1][j - 1] = val
            out[j - 1][i - 1] = val
    return SampleCovariance.from_matrix(out, provenance=f"{S.provenance}|reroot(r={r})")


def reroot_concentration(p, r: int, n: int):
    """Concentration matrix of the re-rooted model from pair coordinates.

    Row/column slot i corresponds to leaf i for i != r and to the old root
    leaf 0 in slot r.  ``k'_rr = sum_t p_0t``, ``k'_rj = -p_0j``,
    ``k'_ii = sum_{t != i} p_it`` and ``k'_ij = -p_ij``.  Entries are generic
    (numbers or polynomials).
    """
    if not 1 <= r <= n:
        raise ValueError(f"reroot target {r} out of range 1..{n}")
    if len(p) != (n + 1) * n // 2:
        raise ValueError("pair coordinate vector has wrong length")
    P = lambda i, j: p[pair_index(n, i, j)]
    K = [[None] * n for _ in range(n)]
    for i in range(1, n + 1):
        if i == r:
            terms = [P(0, t) for t in range(1, n + 1)]
        else:
            terms = [P(i, t) for t in range(0, n + 1) if t != i]
        diag = terms[0]
        for x in terms[1:]:
            diag = diag + x
        K[i - 1][i - 1] = diag
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if i == r or j == r:
                other = j if i == r else i
                val = -P(0, other)
            else:
                val = -P(i, j)
            K[i - 1][j - 1] = val
            K[j - 1][i - 1] = val
    return K
