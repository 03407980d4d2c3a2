"""Toric structure of tree concentration matrices.

The linear change of coordinates (the Farris transform) sends a symmetric
concentration matrix ``K`` to coordinates ``p_ij`` indexed by unordered leaf
pairs; under it the inverse covariance variety of a tree becomes toric, cut
out by quartet binomials and parametrized monomially by edge parameters:
``p_ij -> prod of theta_e over the i..j tree path``.

Everything here is generic over the entry type: exact rationals, floats,
complex numbers, or :class:`~bmt.polynomials.SparsePoly`.
"""

from __future__ import annotations

from itertools import combinations

from .polynomials import Arena, SparsePoly
from .trees import PhyloTree


# -------------------------------------------------------------------------- #
# Index conventions
# -------------------------------------------------------------------------- #

def leaf_pairs(n: int) -> list[tuple[int, int]]:
    """Unordered leaf pairs {i,j} of {0..n} in lexicographic order."""
    return list(combinations(range(n + 1), 2))


def pair_name(i: int, j: int) -> str:
    i, j = min(i, j), max(i, j)
    if j <= 9:
        return f"p{i}{j}"
    return f"p{i}_{j}"


def theta_name(e: int) -> str:
    return f"t{e}"


def theta_arena(tree: PhyloTree) -> Arena:
    """Arena with one variable per canonical edge index (t0, t1, ...)."""
    return Arena([theta_name(e) for e in range(tree.num_edges)])


def pair_arena(n: int) -> Arena:
    return Arena([pair_name(i, j) for i, j in leaf_pairs(n)])


def pair_index(n: int, i: int, j: int) -> int:
    i, j = min(i, j), max(i, j)
    # pairs (0,1),(0,2),..,(0,n),(1,2),..  in lexicographic order
    return i * n - i * (i - 1) // 2 + (j - i - 1)


# -------------------------------------------------------------------------- #
# Farris transform
# -------------------------------------------------------------------------- #

def farris_p_from_k(K) -> list:
    """Leaf-pair coordinates of a symmetric n x n matrix.

    ``p_ij = -k_ij`` for non-root pairs and ``p_0i = sum_j k_ij`` (row sum).
    Rows/columns of K are indexed by the non-root leaves 1..n.
    """
    n = len(K)
    for i in range(n):
        if len(K[i]) != n:
            raise ValueError("matrix is not square")
        for j in range(i):
            if not _entries_equal(K[i][j], K[j][i]):
                raise ValueError("matrix is not symmetric")
    p = []
    for i, j in leaf_pairs(n):
        if i == 0:
            row = K[j - 1]
            total = row[0]
            for x in row[1:]:
                total = total + x
            p.append(total)
        else:
            p.append(-K[i - 1][j - 1])
    return p


def k_from_p(p, n: int):
    """Inverse of :func:`farris_p_from_k`.

    Diagonal entries are ``k_ii = p_0i + sum_{j != i, j >= 1} p_ij``;
    off-diagonal ``k_ij = -p_ij``.
    """
    if len(p) != (n + 1) * n // 2:
        raise ValueError(f"expected {(n + 1) * n // 2} pair coordinates, got {len(p)}")
    K = [[None] * n for _ in range(n)]
    for i in range(1, n + 1):
        diag = p[pair_index(n, 0, i)]
        for j in range(1, n + 1):
            if j == i:
                continue
            diag = diag + p[pair_index(n, i, j)]
        K[i - 1][i - 1] = diag
        for j in range(i + 1, n + 1):
            off = -p[pair_index(n, i, j)]
            K[i - 1][j - 1] = off
            K[j - 1][i - 1] = off
    return K


def _entries_equal(a, b) -> bool:
    if isinstance(a, SparsePoly) or isinstance(b, SparsePoly):
        return a == b
    if isinstance(a, complex) or isinstance(b, complex):
        return a == b
    return a == b


# -------------------------------------------------------------------------- #
# Path parametrization
# -------------------------------------------------------------------------- #

class ExponentMatrix:
    """0/1 incidence of edges against leaf-pair paths.

    Rows follow canonical edge order (variable ``t_e``); columns follow
    :func:`leaf_pairs` order.  Entry (e, {i,j}) is 1 iff edge e lies on the
    tree path between leaves i and j.
    """

    def __init__(self, tree: PhyloTree):
        self.tree = tree
        self.pairs = leaf_pairs(tree.n)
        rows = [[0] * len(self.pairs) for _ in range(tree.num_edges)]
        for col, (i, j) in enumerate(self.pairs):
            for e in tree.path_edges(i, j):
                rows[e][col] = 1
        self.matrix = tuple(tuple(r) for r in rows)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.matrix), len(self.pairs))

    def column(self, i: int, j: int) -> tuple[int, ...]:
        col = pair_index(self.tree.n, i, j)
        return tuple(row[col] for row in self.matrix)

    def rank(self) -> int:
        """Rank over the rationals (exact Gaussian elimination)."""
        from fractions import Fraction

        m = [[Fraction(x) for x in row] for row in self.matrix]
        rank = 0
        cols = len(self.pairs)
        for col in range(cols):
            pivot = next((r for r in range(rank, len(m)) if m[r][col]), None)
            if pivot is None:
                continue
            m[rank], m[pivot] = m[pivot], m[rank]
            inv = 1 / m[rank][col]
            m[rank] = [x * inv for x in m[rank]]
            for r in range(len(m)):
                if r != rank and m[r][col]:
                    factor = m[r][col]
                    m[r] = [a - factor * b for a, b in zip(m[r], m[rank])]
            rank += 1
            if rank == len(m):
                break
        return rank


def exponent_matrix(tree: PhyloTree) -> ExponentMatrix:
    return ExponentMatrix(tree)


def path_monomial(tree: PhyloTree, arena: Arena, i: int, j: int) -> SparsePoly:
    """The monomial prod of t_e over the i..j path, in *arena*."""
    exps = [0] * len(arena)
    for e in tree.path_edges(i, j):
        exps[arena.index(theta_name(e))] += 1
    return arena.monomial(exps)


def path_map_eval(tree: PhyloTree, theta) -> list:
    """Evaluate the path parametrization at an edge-parameter vector.

    Returns the pair coordinates in :func:`leaf_pairs` order; exact for
    rational input.
    """
    theta = list(theta)
    if len(theta) != tree.num_edges:
        raise ValueError(f"expected {tree.num_edges} edge parameters, got {len(theta)}")
    out = []
    for i, j in leaf_pairs(tree.n):
        prod = 1
        for e in tree.path_edges(i, j):
            prod = prod * theta[e]
        out.append(prod)
    return out


def symbolic_concentration(tree: PhyloTree, arena: Arena | None = None) -> list[list[SparsePoly]]:
    """The concentration matrix K(theta) as polynomials in the edge variables.

    Equals ``k_from_p`` applied to the path monomials, i.e. the principal
    submatrix of the weighted complete-graph Laplacian with row/column of
    leaf 0 removed.
    """
    if arena is None:
        arena = theta_arena(tree)
    p = [path_monomial(tree, arena, i, j) for i, j in leaf_pairs(tree.n)]
    return k_from_p(p, tree.n)


# -------------------------------------------------------------------------- #
# Quartet binomial generators
# -------------------------------------------------------------------------- #

def toric_generators(tree: PhyloTree, arena: Arena | None = None) -> list[SparsePoly]:
    """Binomial generators of the vanishing ideal in pair coordinates.

    One binomial per quartet with a resolved cherry split {i,j}|{k,l}
    (``p_ik p_jl - p_il p_jk``), and two independent binomials per quartet
    whose induced subtree is a star (where every pair is vacuously a cherry,
    only two of the three pairing differences being independent).  The list
    is deduplicated and deterministically ordered; it is empty for trees
    with fewer than 4 leaves.
    """
    if arena is None:
        arena = pair_arena(tree.n)
    if tree.n + 1 < 4:
        return []

    def pvar(i, j):
        return arena.var(pair_name(i, j))

    def normalized(b: SparsePoly) -> SparsePoly:
        _, lead = b.leading_term()
        return -b if lead < 0 else b

    gens: list[SparsePoly] = []
    seen = set()
    for quartet in combinations(range(tree.n + 1), 4):
        split = tree.induced_quartet_cherries(quartet)
        a, b, c, d = quartet
        if split == "star":
            m1 = pvar(a, b) * pvar(c, d)
            m2 = pvar(a, c) * pvar(b, d)
            m3 = pvar(a, d) * pvar(b, c)
            candidates = [m1 - m2, m1 - m3]
        else:
            (i, j), (k, l) = sorted(tuple(sorted(ch)) for ch in split)
            candidates = [pvar(i, k) * pvar(j, l) - pvar(i, l) * pvar(j, k)]
        for g in candidates:
            if g.is_zero():
                continue
            g = normalized(g)
            key = frozenset(g.terms.items())
            if key not in seen:
                seen.add(key)
                gens.append(g)
    return gens


# -------------------------------------------------------------------------- #
# Fibers of the path parametrization
# -------------------------------------------------------------------------- #

def sign_vector(tree: PhyloTree, subset) -> tuple[int, ...]:
    """Edge signs (-1)^(#(S and e)) for a subset S of internal nodes."""
    S = set(subset)
    for v in S:
        if v not in tree.internal_nodes():
            raise ValueError(f"{v} is not an internal node")
    return tuple(
        -1 if (len(S.intersection(e)) % 2) else 1
        for e in tree.edges
    )


def fiber(tree: PhyloTree, theta) -> list[tuple]:
    """All preimages of the path map sharing the image of *theta*.

    The 2^#internal points are the componentwise products of *theta* with
    the sign vectors of internal-node subsets.  Requires every image
    coordinate (equivalently every entry of *theta*) to be nonzero.
    """
    theta = tuple(theta)
    if len(theta) != tree.num_edges:
        raise ValueError(f"expected {tree.num_edges} edge parameters")
    if any(x == 0 for x in path_map_eval(tree, theta)):
        raise ValueError("fiber structure requires all image coordinates nonzero")
    internal = list(tree.internal_nodes())
    points = []
    for mask in range(1 << len(internal)):
        subset = {internal[i] for i in range(len(internal)) if mask >> i & 1}
        eps = sign_vector(tree, subset)
        points.append(tuple(s * x for s, x in zip(eps, theta)))
    return points
