"""Rooted phylogenetic trees with a leaf root.

Conventions
-----------
* Leaves are labelled ``0..n``; leaf ``0`` is the distinguished root.
* Internal nodes carry ids ``n+1..n+m`` assigned in post-order during
  construction, so all derived matrices and ideals are reproducible.
* No internal node may have degree < 3.
* Edges carry canonical indices: the pendant edge of leaf ``i`` has index
  ``i``; internal edges are indexed ``n+1, n+2, ...`` ordered by the id of
  their child-side (smaller-id) endpoint.
* Newick text places leaf ``0`` as an explicit child of the outermost node
  (the internal node adjacent to it), e.g. ``((1,2,3),4,0);``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

EdgePath = tuple[int, ...]


class NewickError(ValueError):
    """Malformed or non-conforming Newick input."""


class TreeError(ValueError):
    """Structurally invalid tree."""


class PhyloTree:
    """Immutable rooted tree with root leaf 0 and canonical node/edge ids."""

    __slots__ = ("n", "num_internal", "edges", "adjacency", "_edge_index",
                 "_parent", "_parent_edge", "_depth")

    def __init__(self, n: int, edges: Sequence[tuple[int, int]]):
        self.n = n
        self.edges = tuple(tuple(sorted(e)) for e in edges)
        adjacency: dict[int, list[int]] = {}
        for u, v in self.edges:
            adjacency.setdefault(u, []).append(v)
            adjacency.setdefault(v, []).append(u)
        self.adjacency = {v: tuple(sorted(nb)) for v, nb in adjacency.items()}
        self.num_internal = len(self.adjacency) - (n + 1)
        self._edge_index = {e: i for i, e in enumerate(self.edges)}
        self._validate()
        self._parent, self._parent_edge, self._depth = self._root_at_zero()

    # -- structure ------------------------------------------------------- #

    def _validate(self) -> None:
        n = self.n
        nodes = set(self.adjacency)
        leaves = set(range(n + 1))
        if not leaves <= nodes:
            raise TreeError(f"missing leaf labels: {sorted(leaves - nodes)}")
        internal = nodes - leaves
        expected_internal = set(range(n + 1, n + 1 + self.num_internal))
        if internal != expected_internal:
            raise TreeError("internal node ids must be contiguous above the leaves")
        for leaf in leaves:
            if len(self.adjacency[leaf]) != 1:
                raise TreeError(f"leaf {leaf} has degree {len(self.adjacency[leaf])}")
        for v in internal:
            if len(self.adjacency[v]) < 3:
                raise TreeError(f"internal node {v} has degree {len(self.adjacency[v])} < 3")
        if len(self.edges) != len(nodes) - 1:
            raise TreeError("edge count does not match a tree")
        if len(set(self.edges)) != len(self.edges):
            raise TreeError("duplicate edges")
        # connectivity
        seen = {0}
        stack = [0]
        while stack:
            for w in self.adjacency[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if seen != nodes:
            raise TreeError("tree is not connected")
        # canonical edge indices: pendant edge of leaf i at position i
        for i in range(n + 1):
            (u, v) = self.edges[i]
            if i not in (u, v) or (u > n and v > n):
                raise TreeError("pendant edge indices out of canonical order")

    def _root_at_zero(self):
        parent: dict[int, int] = {0: -1}
        parent_edge: dict[int, int] = {}
        depth = {0: 0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w in self.adjacency[v]:
                if w not in parent:
                    parent[w] = v
                    parent_edge[w] = self._edge_index[tuple(sorted((v, w)))]
                    depth[w] = depth[v] + 1
                    stack.append(w)
        return parent, parent_edge, depth

    # -- basic queries ----------------------------------------------------- #

    @property
    def num_leaves(self) -> int:
        return self.n + 1

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def leaves(self) -> range:
        return range(self.n + 1)

    def internal_nodes(self) -> range:
        return range(self.n + 1, self.n + 1 + self.num_internal)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def is_leaf(self, v: int) -> bool:
        return 0 <= v <= self.n

    @property
    def is_star(self) -> bool:
        return self.num_internal == 1

    def edge_index(self, u: int, v: int) -> int:
        try:
            return self._edge_index[tuple(sorted((u, v)))]
        except KeyError:
            raise KeyError(f"no edge {{{u},{v}}}") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, PhyloTree) and self.n == other.n and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.n, self.edges))

    def __repr__(self) -> str:
        return f"PhyloTree({to_newick(self)!r})"

    # -- ancestry ------------------------------------------------------------ #

    def lca(self, i: int, j: int) -> int:
        """First common node on the paths joining non-root leaves i, j to leaf 0."""
        if i == j:
            raise ValueError("lca requires two distinct leaves")
        for x in (i, j):
            if not 1 <= x <= self.n:
                raise ValueError(f"lca argument {x} is not a non-root leaf")
        a, b = i, j
        while self._depth[a] > self._depth[b]:
            a = self._parent[a]
        while self._depth[b] > self._depth[a]:
            b = self._parent[b]
        while a != b:
            a = self._parent[a]
            b = self._parent[b]
        return a

    def _chain_to_root(self, v: int) -> list[int]:
        chain = [v]
        while chain[-1] != 0:
            chain.append(self._parent[chain[-1]])
        return chain

    def path_edges(self, a: int, b: int) -> EdgePath:
        """Edge indices along the unique tree path from leaf *a* to leaf *b*."""
        if a == b:
            raise ValueError("path endpoints must differ")
        for x in (a, b):
            if not self.is_leaf(x):
                raise ValueError(f"{x} is not a leaf")
        chain_a = self._chain_to_root(a)
        chain_b = self._chain_to_root(b)
        in_b = {v: k for k, v in enumerate(chain_b)}
        for k, v in enumerate(chain_a):
            if v in in_b:
                meet_a, meet_b = k, in_b[v]
                break
        down = [self._parent_edge[chain_a[t]] for t in range(meet_a)]
        up = [self._parent_edge[chain_b[t]] for t in range(meet_b - 1, -1, -1)]
        return tuple(down + up)

    def path_nodes(self, a: int, b: int) -> tuple[int, ...]:
        chain_a = self._chain_to_root(a)
        chain_b = self._chain_to_root(b)
        in_b = {v: k for k, v in enumerate(chain_b)}
        for k, v in enumerate(chain_a):
            if v in in_b:
                return tuple(chain_a[: k + 1] + list(reversed(chain_b[: in_b[v]])))
        raise AssertionError("disconnected tree")

    def node_leaf_path_edges(self, v: int, leaf: int) -> EdgePath:
        """Edge indices from node *v* (internal or leaf) to leaf *leaf*."""
        if v == leaf:
            return ()
        chain = [leaf]
        while chain[-1] not in (0, v):
            chain.append(self._parent[chain[-1]])
        if chain[-1] == v:
            return tuple(self._parent_edge[chain[t]] for t in range(len(chain) - 1))
        # v is not an ancestor of leaf: go up from v to the meeting point
        chain_v = self._chain_to_root(v)
        in_chain = {u: k for k, u in enumerate(chain)}
        for k, u in enumerate(chain_v):
            if u in in_chain:
                down = [self._parent_edge[chain_v[t]] for t in range(k)]
                up = [self._parent_edge[chain[t]] for t in range(in_chain[u])]
                return tuple(down + list(reversed(up)))
        raise AssertionError("disconnected tree")

    # -- quartets -------------------------------------------------------------- #

    def induced_quartet_cherries(self, quartet: Iterable[int]):
        """Cherry split of the induced 4-leaf topology, or ``"star"``.

        Uses the four-point condition on topological path lengths, which is
        equivalent to contracting degree-2 nodes of the induced Steiner
        subtree and reading off the split.
        """
        q = sorted(set(quartet))
        if len(q) != 4:
            raise ValueError("quartet must contain 4 distinct leaves")
        for x in q:
            if not self.is_leaf(x):
                raise ValueError(f"{x} is not a leaf")
        a, b, c, d = q
        dist = lambda x, y: len(self.path_edges(x, y))
        sums = [
            (dist(a, b) + dist(c, d), ((a, b), (c, d))),
            (dist(a, c) + dist(b, d), ((a, c), (b, d))),
            (dist(a, d) + dist(b, c), ((a, d), (b, c))),
        ]
        values = sorted(s for s, _ in sums)
        if values[0] == values[2]:
            return "star"
        if values[1] != values[2]:
            raise AssertionError("four-point condition violated")
        _, (p, r) = min(sums, key=lambda t: t[0])
        return frozenset({frozenset(p), frozenset(r)})

    def reroot(self, r: int) -> "RerootResult":
        return reroot(self, r)


@dataclass(frozen=True)
class RerootResult:
    """Outcome of re-rooting: the new tree plus label/edge correspondences.

    ``leaf_map`` sends old leaf labels to new ones (the 0 <-> r swap);
    ``node_map`` extends it to internal ids; ``edge_map`` sends old canonical
    edge indices to new ones.  ``identity`` flags a request for r = 0.
    """

    tree: PhyloTree
    leaf_map: dict[int, int]
    node_map: dict[int, int]
    edge_map: dict[int, int]
    identity: bool


# -------------------------------------------------------------------------- #
# Construction from raw edges
# -------------------------------------------------------------------------- #

def _build_canonical(adjacency: dict, n: int) -> tuple[PhyloTree, dict]:
    """Canonicalize an adjacency over arbitrary node tokens.

    Leaves must be exactly the ints 0..n.  Internal ids are reassigned in
    post-order of the canonical traversal (children ordered by smallest
    descendant leaf, root leaf 0 last); returns the tree and the
    token -> new-id map.
    """
    leaves = set(range(n + 1))
    for leaf in leaves:
        if leaf not in adjacency:
            raise TreeError(f"missing leaf {leaf}")
        if len(adjacency[leaf]) != 1:
            raise TreeError(f"leaf {leaf} has degree {len(adjacency[leaf])}")
    outer = adjacency[0][0] if isinstance(adjacency[0], (list, tuple)) else next(iter(adjacency[0]))

    # smallest descendant leaf per (node, parent) direction, computed on the
    # tree rooted at the outermost node with leaf 0 set aside
    min_leaf: dict = {}

    def compute_min(v, parent):
        if v in leaves:
            min_leaf[(v, parent)] = v
            return v
        best = None
        for w in adjacency[v]:
            if w == parent:
                continue
            m = compute_min(w, v)
            best = m if best is None else min(best, m)
        min_leaf[(v, parent)] = best
        return best

    compute_min(outer, None)

    node_map: dict = {leaf: leaf for leaf in leaves}
    next_internal = n + 1
    order: list = []

    def assign(v, parent):
        nonlocal next_internal
        if v in leaves:
            return
        children = [w for w in adjacency[v] if w != parent]
        children.sort(key=lambda w: (w == 0, min_leaf[(w, v)]))
        for w in children:
            assign(w, v)
        node_map[v] = next_internal
        next_internal += 1
        order.append(v)

    assign(outer, None)

    edges = set()
    for v, nbrs in adjacency.items():
        for w in nbrs:
            edges.add(tuple(sorted((node_map[v], node_map[w]))))
    indexed: list = [None] * len(edges)
    internal_edges = []
    for (u, v) in edges:
        if u <= n:
            indexed[u] = (u, v)
        elif v <= n:
            indexed[v] = (u, v)
        else:
            internal_edges.append((u, v))
    internal_edges.sort(key=lambda e: min(e))
    for k, e in enumerate(internal_edges):
        indexed[n + 1 + k] = e
    if any(e is None for e in indexed):
        raise TreeError("inconsistent edge set")
    return PhyloTree(n, indexed), node_map


def from_edges(edges: Iterable[tuple], n: int) -> tuple[PhyloTree, dict]:
    """Canonical tree from an edge list over arbitrary tokens; see
    :func:`_build_canonical` for the id conventions."""
    adjacency: dict = {}
    for u, v in edges:
        adjacency.setdefault(u, []).append(v)
        adjacency.setdefault(v, []).append(u)
    if 0 not in adjacency:
        raise TreeError("missing root leaf 0")
    return _build_canonical(adjacency, n)


def reroot(tree: PhyloTree, r: int) -> RerootResult:
    """Re-root at leaf *r*: swap leaf labels 0 and r, keep the unrooted shape.

    The returned tree is canonical (internal ids and edge indices recomputed),
    and the maps report where every old label, node, and edge index went.
    """
    if not 0 <= r <= tree.n:
        raise ValueError(f"reroot target {r} is not a leaf")
    if r == 0:
        ident_nodes = {v: v for v in tree.adjacency}
        return RerootResult(
            tree=tree,
            leaf_map={i: i for i in tree.leaves()},
            node_map=ident_nodes,
            edge_map={i: i for i in range(tree.num_edges)},
            identity=True,
        )
    swap = {v: v for v in tree.adjacency}
    swap[0], swap[r] = r, 0
    new_edges = [(swap[u], swap[v]) for (u, v) in tree.edges]
    # old internal ids may clash with canonical slots only by accident of the
    # relabelling; tag them to keep tokens unique during the rebuild
    tagged = [
        (u if u <= tree.n else ("old", u), v if v <= tree.n else ("old", v))
        for (u, v) in new_edges
    ]
    new_tree, node_map_tokens = from_edges(tagged, tree.n)
    node_map = {}
    for v in tree.adjacency:
        token = swap[v] if swap[v] <= tree.n else ("old", swap[v])
        node_map[v] = node_map_tokens[token]
    leaf_map = {i: swap[i] for i in tree.leaves()}
    edge_map = {}
    for idx, (u, v) in enumerate(tree.edges):
        edge_map[idx] = new_tree.edge_index(node_map[u], node_map[v])
    return RerootResult(tree=new_tree, leaf_map=leaf_map, node_map=node_map,
                        edge_map=edge_map, identity=False)


# -------------------------------------------------------------------------- #
# Newick
# -------------------------------------------------------------------------- #

def parse_newick(text: str) -> PhyloTree:
    """Parse Newick text into a tree rooted at leaf 0.

    The outermost Newick node is the internal node adjacent to leaf 0, and
    leaf 0 must appear as one of its direct children.  Labels must be the
    integers 0..n, each exactly once.  Internal ids are assigned in
    post-order of the text.
    """
    s = "".join(text.split())
    if not s.endswith(";"):
        raise NewickError("missing terminating ';'")
    s = s[:-1]
    pos = 0

    def parse_node():
        nonlocal pos
        if pos >= len(s):
            raise NewickError("unexpected end of input")
        if s[pos] == "(":
            pos += 1
            children = [parse_node()]
            while pos < len(s) and s[pos] == ",":
                pos += 1
                children.append(parse_node())
            if pos >= len(s) or s[pos] != ")":
                raise NewickError("unbalanced parentheses")
            pos += 1
            return children
        j = pos
        while j < len(s) and s[j] not in "(),;":
            j += 1
        if j == pos:
            raise NewickError(f"expected a label at position {pos}")
        try:
            label = int(s[pos:j])
        except ValueError:
            raise NewickError(f"labels must be integers, got {s[pos:j]!r}") from None
        pos = j
        return label

    root_struct = parse_node()
    if pos != len(s):
        raise NewickError(f"trailing characters at position {pos}")
    if not isinstance(root_struct, list):
        raise NewickError("outermost Newick node must be internal")

    labels: list[int] = []

    def collect(node):
        if isinstance(node, list):
            for ch in node:
                collect(ch)
        else:
            labels.append(node)

    collect(root_struct)
    if len(set(labels)) != len(labels):
        raise NewickError("duplicate leaf labels")
    n = len(labels) - 1
    if sorted(labels) != list(range(n + 1)):
        raise NewickError(f"labels must be 0..{n} exactly once")
    if 0 not in [ch for ch in root_struct if not isinstance(ch, list)]:
        raise NewickError("leaf 0 must be a direct child of the outermost node")

    edges: list[tuple] = []
    next_internal = n + 1

    def build(node):
        """Return this subtree's node id, assigning internal ids post-order."""
        nonlocal next_internal
        if not isinstance(node, list):
            return node
        if len(node) < 2:
            raise NewickError("internal node with fewer than two children")
        child_ids = [build(ch) for ch in node]
        my_id = next_internal
        next_internal += 1
        for cid in child_ids:
            edges.append((cid, my_id))
        return my_id

    outer_id = build(root_struct)
    # degree check: the outermost node has no parent
    degree = {}
    for u, v in edges:
        degree[u] = degree.get(u, 0) + 1
        degree[v] = degree.get(v, 0) + 1
    for v in range(n + 1, outer_id + 1):
        if degree.get(v, 0) < 3:
            raise NewickError(f"internal node of degree {degree.get(v, 0)}")

    indexed: list = [None] * len(edges)
    internal_edges = []
    for (u, v) in edges:
        u, v = min(u, v), max(u, v)
        if u <= n:
            indexed[u] = (u, v)
        else:
            internal_edges.append((u, v))
    internal_edges.sort(key=lambda e: min(e))
    for k, e in enumerate(internal_edges):
        indexed[n + 1 + k] = e
    return PhyloTree(n, indexed)


def to_newick(tree: PhyloTree) -> str:
    """Canonical Newick text: children sorted by smallest descendant leaf,
    root leaf 0 last among the outermost node's children."""
    outer = tree.adjacency[0][0]

    min_leaf: dict = {}

    def compute_min(v, parent):
        if tree.is_leaf(v):
            min_leaf[(v, parent)] = v
            return v
        best = min(compute_min(w, v) for w in tree.adjacency[v] if w != parent)
        min_leaf[(v, parent)] = best
        return best

    compute_min(outer, None)

    def render(v, parent) -> str:
        if tree.is_leaf(v):
            return str(v)
        children = [w for w in tree.adjacency[v] if w != parent]
        children.sort(key=lambda w: (w == 0, min_leaf[(w, v)]))
        return "(" + ",".join(render(w, v) for w in children) + ")"

    children = [w for w in tree.adjacency[outer]]
    children.sort(key=lambda w: (w == 0, min_leaf[(w, outer)]))
    return "(" + ",".join(render(w, outer) for w in children) + ");"


def star_tree(n: int) -> PhyloTree:
    """Star tree on n+1 leaves (one internal node)."""
    if n < 2:
        raise ValueError("star tree needs at least 3 leaves")
    return parse_newick("(" + ",".join(str(i) for i in range(1, n + 1)) + ",0);")
