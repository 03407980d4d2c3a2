"""End-to-end runs: ML-degrees, MLEs, toric degrees, invariance reports.

An ML-degree run draws a deterministic generic integer covariance, builds
the score system (the all-quadratic star form when the tree is a star, the
reciprocal-variable form otherwise), counts torus solutions with
multiplicity by homotopy continuation, discards any cluster sitting on a
removed divisor, checks the count is divisible by the fiber size of the
path parametrization, and divides.

The divisibility check is enforced hard: it is the strongest cheap detector
of lost or spurious paths.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

import numpy as np

from .homotopy import Cluster, SolutionSet, SolveOptions, newton_refine, solve
from .likelihood import (SampleCovariance, ScoreSystem, cholesky_is_pd,
                         loglik_value, random_generic_s, score_system_general,
                         score_system_reciprocal, score_system_star)
from .polynomials import Arena, PolySystem
from .toric import (k_from_p, leaf_pairs, pair_index, path_monomial,
                    path_map_eval, theta_arena)
from .trees import PhyloTree, reroot, to_newick


class ValidityError(RuntimeError):
    """A hard validity check failed (e.g. count not divisible by fiber size)."""


def build_score_system(tree: PhyloTree, S: SampleCovariance, mode: str = "auto") -> ScoreSystem:
    """Pick the score-equation formulation for a tree.

    ``auto`` uses the star form for star trees and the reciprocal-variable
    form otherwise; ``cleared`` forces direct denominator clearing (much
    larger path counts, spurious divisor solutions to filter).
    """
    if mode == "auto":
        mode = "star" if tree.is_star else "reciprocal"
    if mode == "star":
        if not tree.is_star:
            raise ValueError("star mode requires a star tree")
        return score_system_star(tree.n, S)
    if mode == "reciprocal":
        return score_system_reciprocal(tree, S)
    if mode == "cleared":
        return score_system_general(tree, S)
    raise ValueError(f"unknown score-system mode {mode!r}")


def _split_clusters(score: ScoreSystem, solution: SolutionSet, tol: float):
    """Separate clusters on removed divisors from genuine torus solutions."""
    kept: list[Cluster] = []
    filtered = 0
    names = score.system.arena.names
    for cl in solution.clusters:
        assignment = dict(zip(names, cl.point))
        on_divisor = any(abs(complex(d.eval(assignment))) < tol for d in score.removed_divisors)
        if on_divisor:
            filtered += cl.multiplicity
        else:
            kept.append(cl)
    return kept, filtered


@dataclass
class MLDegreeReport:
    tree: str
    seed: int
    fiber_size: int
    raw_count: int
    mld: int
    paths: int
    diverged: int
    filtered_divisor: int
    repeated_clusters: int
    max_residual: float
    wall_time: float
    system_mode: str
    clusters: list[Cluster] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tree": self.tree,
            "seed": self.seed,
            "fiber_size": self.fiber_size,
            "raw_count": self.raw_count,
            "mld": self.mld,
            "diverged": self.diverged,
            "filtered_divisor": self.filtered_divisor,
            "clusters": [
                {
                    "point": [[float(z.real), float(z.imag)] for z in cl.point],
                    "multiplicity": cl.multiplicity,
                    "residual": cl.residual,
                }
                for cl in self.clusters
            ],
        }


def ml_degree(tree: PhyloTree, seed: int = 0, opts: SolveOptions = SolveOptions(),
              system_mode: str = "auto") -> MLDegreeReport:
    """ML-degree of the tree model for a seed-deterministic generic covariance.

    Counts complex critical points of the log-likelihood (with multiplicity)
    in the edge parameters and divides by the fiber size 2^#internal of the
    path parametrization.  Raises :class:`ValidityError` when the raw torus
    count is not divisible by the fiber size.
    """
    if tree.n < 2:
        raise ValueError("need at least 3 leaves")
    t0 = time.perf_counter()
    S = random_generic_s(tree.n, seed)
    score = build_score_system(tree, S, system_mode)
    solution = solve(score.system, seed=seed, opts=opts)
    kept, filtered = _split_clusters(score, solution, opts.tol_cluster)
    raw = sum(cl.multiplicity for cl in kept)
    fiber_size = score.fiber_size
    if raw % fiber_size:
        raise ValidityError(
            f"raw torus count {raw} not divisible by fiber size {fiber_size} "
            f"(tree {to_newick(tree)}, seed {seed})"
        )
    return MLDegreeReport(
        tree=to_newick(tree),
        seed=seed,
        fiber_size=fiber_size,
        raw_count=raw,
        mld=raw // fiber_size,
        paths=solution.num_paths,
        diverged=solution.diverged,
        filtered_divisor=filtered,
        repeated_clusters=sum(1 for cl in kept if cl.multiplicity > 1),
        max_residual=solution.max_residual,
        wall_time=time.perf_counter() - t0,
        system_mode=score.mode,
        clusters=kept,
    )


# -------------------------------------------------------------------------- #
# Maximum likelihood estimation
# -------------------------------------------------------------------------- #

@dataclass
class MLEResult:
    status: str  # "ok" or "not_found"
    tree: str
    loglik: float | None
    p_vector: list[complex] | None
    concentration: np.ndarray | None
    sigma: np.ndarray | None
    score_residual: float | None
    num_real_pd: int
    num_critical: int
    pattern_max_dev: float | None
    inverse_max_dev: float | None

    @property
    def found(self) -> bool:
        return self.status == "ok"


def _pattern_deviation(tree: PhyloTree, sigma: np.ndarray) -> float:
    """Max spread of covariance entries within one least-common-ancestor class."""
    groups: dict[int, list[float]] = {}
    for i in range(1, tree.n + 1):
        for j in range(i + 1, tree.n + 1):
            groups.setdefault(tree.lca(i, j), []).append(float(sigma[i - 1, j - 1]))
    dev = 0.0
    for vals in groups.values():
        dev = max(dev, max(vals) - min(vals))
    return dev


def mle(tree: PhyloTree, S: SampleCovariance, seed: int = 0,
        opts: SolveOptions = SolveOptions(), real_tol: float = 1e-8) -> MLEResult:
    """Maximum likelihood estimate for sample covariance S, if it exists.

    Solves the score equations, maps each torus solution to pair coordinates
    (which collapses the fiber redundancy), keeps the real solutions whose
    concentration matrix is positive definite, and returns the one with the
    largest log-likelihood.  ``status="not_found"`` reports that no real
    positive definite critical point exists among the computed ones.
    """
    if S.n != tree.n:
        raise ValueError("covariance dimension does not match the tree")
    if not S.is_positive_definite():
        raise ValueError("sample covariance must be positive definite")
    score = build_score_system(tree, S, "auto")
    solution = solve(score.system, seed=seed, opts=opts)
    kept, _ = _split_clusters(score, solution, opts.tol_cluster)

    # fiber collapse: distinct theta solutions sharing pair coordinates are
    # the same concentration matrix
    p_clusters: list[dict] = []
    for cl in kept:
        theta = cl.point[: score.theta_count]
        p = np.array(path_map_eval(tree, list(theta)), dtype=complex)
        matched = None
        for entry in p_clusters:
            scale = max(1.0, float(np.abs(entry["p"]).max()))
            if float(np.abs(entry["p"] - p).max()) <= opts.tol_cluster * scale:
                matched = entry
                break
        if matched is None:
            p_clusters.append({"p": p, "residual": cl.residual})

    best = None
    num_real_pd = 0
    for entry in p_clusters:
        p = entry["p"]
        if float(np.abs(p.imag).max()) > real_tol * max(1.0, float(np.abs(p).max())):
            continue
        K = np.array(k_from_p(list(p.real), tree.n), dtype=float)
        if not cholesky_is_pd(K):
            continue
        num_real_pd += 1
        ll = loglik_value(tree, S, K)
        if best is None or ll > best["loglik"]:
            best = {"p": p, "K": K, "loglik": ll, "residual": entry["residual"]}

    if best is None:
        return MLEResult(
            status="not_found", tree=to_newick(tree), loglik=None, p_vector=None,
            concentration=None, sigma=None, score_residual=None,
            num_real_pd=0, num_critical=len(p_clusters),
            pattern_max_dev=None, inverse_max_dev=None,
        )
    sigma = np.linalg.inv(best["K"])
    inverse_dev = float(np.abs(best["K"] @ sigma - np.eye(tree.n)).max())
    return MLEResult(
        status="ok",
        tree=to_newick(tree),
        loglik=best["loglik"],
        p_vector=[complex(z) for z in best["p"]],
        concentration=best["K"],
        sigma=sigma,
        score_residual=float(best["residual"]),
        num_real_pd=num_real_pd,
        num_critical=len(p_clusters),
        pattern_max_dev=_pattern_deviation(tree, sigma),
        inverse_max_dev=inverse_dev,
    )


# -------------------------------------------------------------------------- #
# Toric degree via generic affine-linear sections
# -------------------------------------------------------------------------- #

def toric_degree(tree: PhyloTree, seed: int = 0, opts: SolveOptions = SolveOptions(),
                 max_edges: int = 8) -> int:
    """Degree of the toric concentration variety by generic linear sections.

    Substitutes the path monomials into #edges random affine-linear forms in
    the pair coordinates, counts torus solutions in the edge parameters with
    multiplicity, and divides by the fiber size.  The edge-count guard keeps
    the Bezout path count at desk scale; raise *max_edges* explicitly for
    long runs.
    """
    if tree.num_edges > max_edges:
        raise ValueError(
            f"toric degree run refused: {tree.num_edges} edges > guard {max_edges}"
        )
    arena = theta_arena(tree)
    rng = random.Random(f"toric:{seed}")
    eqs = []
    for _ in range(tree.num_edges):
        eq = arena.const(rng.randint(-99, 99))
        for (i, j) in leaf_pairs(tree.n):
            coeff = 0
            while coeff == 0:
                coeff = rng.randint(-99, 99)
            eq = eq + coeff * path_monomial(tree, arena, i, j)
        eqs.append(eq)
    system = PolySystem(arena, tuple(eqs))
    solution = solve(system, seed=seed, opts=opts)
    raw = 0
    for cl in solution.clusters:
        scale = max(1.0, float(np.abs(cl.point).max()))
        if float(np.abs(cl.point).min()) > opts.tol_cluster * scale:
            raw += cl.multiplicity
    fiber_size = 2 ** tree.num_internal
    if raw % fiber_size:
        raise ValidityError(
            f"torus section count {raw} not divisible by fiber size {fiber_size}"
        )
    return raw // fiber_size


# -------------------------------------------------------------------------- #
# Invariance reports and the star formula
# -------------------------------------------------------------------------- #

@dataclass
class RerootInvarianceReport:
    tree: str
    seed: int
    per_root: dict[int, int]
    common: int


def reroot_invariance_report(tree: PhyloTree, seed: int = 0,
                             opts: SolveOptions = SolveOptions()) -> RerootInvarianceReport:
    """ML-degree of the model re-rooted at every leaf; asserts all equal."""
    per_root = {}
    for r in tree.leaves():
        rr = reroot(tree, r)
        per_root[r] = ml_degree(rr.tree, seed=seed, opts=opts).mld
    values = set(per_root.values())
    if len(values) != 1:
        raise ValidityError(f"re-rooting changed the ML-degree: {per_root}")
    return RerootInvarianceReport(tree=to_newick(tree), seed=seed,
                                  per_root=per_root, common=values.pop())


def star_formula(n: int) -> int:
    """Closed-form star-tree ML-degree: 2^(n+1) - 2n - 3."""
    return 2 ** (n + 1) - 2 * n - 3


@dataclass
class StarVerificationRow:
    n: int
    mld: int
    formula: int
    diverged: int
    expected_diverged: int
    paths: int

    @property
    def ok(self) -> bool:
        return self.mld == self.formula and self.diverged == self.expected_diverged


def verify_star_formula(n_max: int = 6, seed: int = 0,
                        opts: SolveOptions = SolveOptions()) -> list[StarVerificationRow]:
    """Star ML-degrees against the closed form, with exact path accounting.

    For each n the Bezout total is 2^(n+2), the diverged paths must number
    exactly 4(n+1)+2, and the torus count divided by the fiber size 2 must
    match 2^(n+1)-2n-3.  Any mismatch raises.
    """
    from .trees import star_tree

    rows = []
    for n in range(2, n_max + 1):
        rep = ml_degree(star_tree(n), seed=seed, opts=opts)
        row = StarVerificationRow(
            n=n,
            mld=rep.mld,
            formula=star_formula(n),
            diverged=rep.diverged,
            expected_diverged=4 * (n + 1) + 2,
            paths=rep.paths,
        )
        if rep.paths != 2 ** (n + 2):
            raise ValidityError(f"star n={n}: path total {rep.paths} != {2**(n+2)}")
        if not row.ok:
            raise ValidityError(
                f"star n={n}: mld {row.mld} vs formula {row.formula}, "
                f"diverged {row.diverged} vs {row.expected_diverged}"
            )
        rows.append(row)
    return rows
