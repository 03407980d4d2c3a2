"""Determinant of the tree concentration matrix, three independent ways.

1. The closed-form factorization: the product of all edge variables times,
   for every internal node v, the sum over leaves of the v-to-leaf path
   monomials raised to ``deg(v) - 2``.
2. A symbolic determinant of the concentration matrix itself (minor
   expansion with subset memoization, or fraction-free Bareiss).
3. A brute-force weighted matrix-tree oracle: enumerate all spanning trees
   of the complete graph on the leaves via Pruefer sequences and sum the
   products of path-monomial edge weights.

Having #2 and #3 independent of #1 lets every identity be cross-checked
exactly over the rationals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .polynomials import Arena, SparsePoly
from .toric import leaf_pairs, path_monomial, theta_arena
from .trees import PhyloTree

_ENUMERATION_LIMIT = 9  # max leaf count for the spanning-tree oracle


def laplacian(tree: PhyloTree, arena: Arena | None = None) -> list[list[SparsePoly]]:
    """Laplacian of the complete graph on the leaves, weighted by path monomials.

    Row/column order is leaf order 0..n.  Deleting row and column 0 yields
    the symbolic concentration matrix exactly.
    """
    if arena is None:
        arena = theta_arena(tree)
    n1 = tree.n + 1
    W = [[arena.zero() for _ in range(n1)] for _ in range(n1)]
    for i, j in leaf_pairs(tree.n):
        w = path_monomial(tree, arena, i, j)
        W[i][j] = w
        W[j][i] = w
    L = [[arena.zero() for _ in range(n1)] for _ in range(n1)]
    for i in range(n1):
        diag = arena.zero()
        for j in range(n1):
            if j != i:
                diag = diag + W[i][j]
                L[i][j] = -W[i][j]
        L[i][i] = diag
    return L


@dataclass(frozen=True)
class FactoredDeterminant:
    """det K in factored form: edge monomial times internal-node sums."""

    arena: Arena
    edge_product: SparsePoly
    factors: tuple[tuple[int, SparsePoly, int], ...]  # (node, sum, exponent)

    def expanded(self) -> SparsePoly:
        result = self.edge_product
        for _, base, exp in self.factors:
            result = result * base**exp
        return result

    def eval(self, theta):
        """Evaluate without expanding (product of factor evaluations)."""
        names = self.arena.names
        assignment = dict(zip(names, theta)) if not isinstance(theta, dict) else theta
        value = self.edge_product.eval(assignment)
        for _, base, exp in self.factors:
            value = value * base.eval(assignment) ** exp
        return value

    def __str__(self) -> str:
        pieces = []
        for exps, _ in self.edge_product.sorted_terms():
            for name, e in zip(self.arena.names, exps):
                pieces.extend([name] * e)
        text = "*".join(pieces)
        for _, base, exp in self.factors:
            text += f"*({base})^{exp}"
        return text


def det_formula(tree: PhyloTree, arena: Arena | None = None) -> FactoredDeterminant:
    """Closed-form factorization of det K(theta).

    ``det K = (prod over edges of t_e) * prod over internal v of
    (sum over leaves l of the v..l path monomial)^(deg(v) - 2)``.
    """
    if arena is None:
        arena = theta_arena(tree)
    from .toric import theta_name

    pos = [arena.index(theta_name(e)) for e in range(tree.num_edges)]
    edge_exps = [0] * len(arena)
    for e in range(tree.num_edges):
        edge_exps[pos[e]] = 1
    edge_product = arena.monomial(edge_exps)
    factors = []
    for v in sorted(tree.internal_nodes()):
        total = arena.zero()
        for leaf in tree.leaves():
            exps = [0] * len(arena)
            for e in tree.node_leaf_path_edges(v, leaf):
                exps[pos[e]] += 1
            total = total + arena.monomial(exps)
        factors.append((v, total, tree.degree(v) - 2))
    return FactoredDeterminant(arena, edge_product, tuple(factors))


# -------------------------------------------------------------------------- #
# Symbolic / exact determinants
# -------------------------------------------------------------------------- #

def det_minor_expansion(matrix) -> SparsePoly:
    """Determinant by first-row expansion with memoization on column subsets.

    Division-free, so it works over any commutative ring (ints, Fractions,
    SparsePoly).  Practical up to ~8x8 for polynomial entries.
    """
    m = len(matrix)
    if m == 0:
        raise ValueError("empty matrix")
    for row in matrix:
        if len(row) != m:
            raise ValueError("matrix is not square")
    # prev maps a bitmask of surviving columns (|S| = m - row) to the minor
    # determinant of rows row..m-1 on those columns
    prev = {1 << c: matrix[m - 1][c] for c in range(m)}
    for row in range(m - 2, -1, -1):
        size = m - row
        cur = {}
        for mask in _masks_of_size(m, size):
            acc = None
            sign = 1
            rest = mask
            while rest:
                low = rest & -rest
                c = low.bit_length() - 1
                term = matrix[row][c] * prev[mask ^ low]
                contrib = term if sign > 0 else -term
                acc = contrib if acc is None else acc + contrib
                sign = -sign
                rest ^= low
            cur[mask] = acc
        prev = cur
    return prev[(1 << m) - 1]


@lru_cache(maxsize=32)
def _masks_of_size(nbits: int, size: int) -> tuple[int, ...]:
    from itertools import combinations

    return tuple(
        sum(1 << c for c in comb) for comb in combinations(range(nbits), size)
    )


def det_bareiss_poly(matrix) -> SparsePoly:
    """Fraction-free Bareiss determinant over the polynomial ring.

    Exact division by the previous pivot keeps intermediate entries to
    genuine minors; preferred over minor expansion for larger matrices.
    """
    m = len(matrix)
    arena = matrix[0][0].arena
    A = [[matrix[i][j] for j in range(m)] for i in range(m)]
    sign = 1
    prev = arena.one()
    for k in range(m - 1):
        if A[k][k].is_zero():
            swap = next((r for r in range(k + 1, m) if not A[r][k].is_zero()), None)
            if swap is None:
                return arena.zero()
            A[k], A[swap] = A[swap], A[k]
            sign = -sign
        for i in range(k + 1, m):
            for j in range(k + 1, m):
                num = A[i][j] * A[k][k] - A[i][k] * A[k][j]
                A[i][j] = num.divexact(prev)
        prev = A[k][k]
    det = A[m - 1][m - 1]
    return -det if sign < 0 else det


def det_fraction(matrix) -> Fraction:
    """Exact determinant of a rational matrix by Gaussian elimination."""
    m = len(matrix)
    A = [[Fraction(x) for x in row] for row in matrix]
    det = Fraction(1)
    for k in range(m):
        pivot = next((r for r in range(k, m) if A[r][k] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != k:
            A[k], A[pivot] = A[pivot], A[k]
            det = -det
        det *= A[k][k]
        inv = 1 / A[k][k]
        for r in range(k + 1, m):
            if A[r][k]:
                factor = A[r][k] * inv
                A[r] = [a - factor * b for a, b in zip(A[r], A[k])]
    return det


# -------------------------------------------------------------------------- #
# Spanning-tree oracle
# -------------------------------------------------------------------------- #

@lru_cache(maxsize=8)
def _pruefer_edge_lists(num_vertices: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Edge lists of all labelled spanning trees of K_num_vertices.

    Decodes every Pruefer sequence of length num_vertices - 2; there are
    num_vertices^(num_vertices - 2) of them.
    """
    V = num_vertices
    if V == 2:
        return (((0, 1),),)
    out = []
    seq = [0] * (V - 2)
    while True:
        out.append(_decode_pruefer(seq, V))
        # odometer increment
        i = V - 3
        while i >= 0 and seq[i] == V - 1:
            seq[i] = 0
            i -= 1
        if i < 0:
            break
        seq[i] += 1
    return tuple(out)


def _decode_pruefer(seq, V: int) -> tuple[tuple[int, int], ...]:
    import heapq

    degree = [1] * V
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(V) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, x))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((u, v))
    return tuple(edges)


def spanning_tree_oracle(tree: PhyloTree, theta):
    """Weighted spanning-tree enumeration of the leaf complete graph.

    Sums, over all spanning trees of the complete graph on leaves 0..n, the
    product of edge weights given by path monomials evaluated at *theta*.
    Exact for rational input.  Refuses more than 9 leaves (the enumeration
    exceeds 10^7 trees beyond that).
    """
    V = tree.n + 1
    if V > _ENUMERATION_LIMIT:
        raise ValueError(f"spanning-tree enumeration refused for {V} > {_ENUMERATION_LIMIT} leaves")
    theta = list(theta)
    if len(theta) != tree.num_edges:
        raise ValueError("edge parameter count mismatch")
    weight = {}
    for i, j in leaf_pairs(tree.n):
        w = 1
        for e in tree.path_edges(i, j):
            w = w * theta[e]
        weight[(i, j)] = w
        weight[(j, i)] = w
    total = 0
    for edges in _pruefer_edge_lists(V):
        prod = 1
        for e in edges:
            prod = prod * weight[e]
        total = total + prod
    return total
