"""Total-degree homotopy continuation for square polynomial systems.

The start system is ``x_i^{d_i} - c_i`` with random nonzero complex
constants, whose ``prod d_i`` nonsingular roots are available in closed
form.  The homotopy ``H(x, t) = gamma (1 - t) Start(x) + t Target(x)`` is
tracked from t = 0 to t = 1 with an adaptive Euler predictor / Newton
corrector per path, all paths marching together in vectorized numpy
batches.  Endpoints are Newton-refined against the target and clustered;
multiplicity is reported as the number of incoming paths per cluster.

Classification contract: every path ends converged, diverged, or failed,
and the three counts always sum to the Bezout number.  A diverged path hit
the coordinate-norm threshold or ran out of step size close to t = 1; a
failed path triggers one automatic re-run of the whole system with a fresh
gamma, and persistent failures raise.
"""

from __future__ import annotations

import cmath
import random
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .polynomials import PolySystem, _FIELD_BITS, _FIELD_MASK


class SolverError(RuntimeError):
    """Tracking could not classify every path even after a gamma retry."""


@dataclass(frozen=True)
class SolveOptions:
    tol_track: float = 1e-8
    tol_refine: float = 1e-10
    tol_cluster: float = 1e-6
    infinity_threshold: float = 1e8
    dt_init: float = 0.05
    dt_min: float = 1e-14
    dt_max: float = 0.1
    newton_iters: int = 4
    refine_iters: int = 30
    max_steps: int = 20000
    # endgame region t > endgame_t: a path heading to infinity grows without
    # bound as 1 - t shrinks, while a path to a finite endpoint only moves by
    # a bounded transient.  After endgame_min_steps accepted steps in the
    # region, a path whose norm exceeded endgame_norm, or grew by more than
    # endgame_growth while 1 - t decayed below endgame_decay of its entry
    # value, is truncated as diverging.  A path still lingering after
    # endgame_max_steps with bounded growth is handed to Newton refinement
    # against the target, which settles converged vs failed.
    endgame_t: float = 0.9
    endgame_min_steps: int = 10
    endgame_decay: float = 0.5
    endgame_growth: float = 50.0
    endgame_max_steps: int = 300
    endgame_norm: float = 1e6
    chunk_size: int = 16384
    threads: int | None = None  # accepted for CLI compatibility; tracker is vectorized


class CompiledSystem:
    """A square system compiled to exponent/coefficient arrays.

    Shared monomial basis across all equations and all Jacobian entries:
    one gather-product pass evaluates everything at a batch of points.
    """

    def __init__(self, system: PolySystem):
        if not system.is_square:
            raise ValueError("solver requires a square system")
        arena = system.arena
        if set(system.unknowns) != set(arena.names):
            raise ValueError("compile expects every arena variable to be an unknown")
        # unknown order defines coordinate order
        self.names = tuple(system.unknowns)
        self.m = len(self.names)
        self.k = len(system.equations)
        self.degrees = tuple(max(d, 0) for d in system.degrees())
        if any(eq.total_degree() < 1 for eq in system.equations):
            raise ValueError("every equation must have positive degree")
        var_pos = {name: i for i, name in enumerate(self.names)}
        arena_to_coord = [var_pos[name] if name in var_pos else -1 for name in arena.names]

        monomial_index: dict[int, int] = {}

        def col_of(key: int) -> int:
            idx = monomial_index.get(key)
            if idx is None:
                idx = len(monomial_index)
                monomial_index[key] = idx
            return idx

        f_entries: list[tuple[int, int, complex]] = []
        j_entries: list[tuple[int, int, complex]] = []
        for ei, eq in enumerate(system.equations):
            for key, c in eq.terms.items():
                fc = complex(c)
                f_entries.append((ei, col_of(key), fc))
                kk = key
                vi = 0
                while kk:
                    e = kk & _FIELD_MASK
                    if e:
                        j = arena_to_coord[vi]
                        dkey = key - (1 << (_FIELD_BITS * vi))
                        j_entries.append((ei * self.m + j, col_of(dkey), fc * e))
                    kk >>= _FIELD_BITS
                    vi += 1

        K = len(monomial_index)
        self.num_monomials = K
        E = np.zeros((K, self.m), dtype=np.int64)
        for key, col in monomial_index.items():
            kk = key
            vi = 0
            while kk:
                e = kk & _FIELD_MASK
                if e:
                    E[col, arena_to_coord[vi]] = e
                kk >>= _FIELD_BITS
                vi += 1
        self.E = E
        # factor-index lists grouped by total degree: monomial evaluation is
        # then d-1 fused column multiplies per group instead of full
        # power-table gathers
        by_degree: dict[int, list[tuple[int, tuple[int, ...]]]] = {}
        for col in range(K):
            factors = []
            for j in range(self.m):
                factors.extend([j] * int(E[col, j]))
            by_degree.setdefault(len(factors), []).append((col, tuple(factors)))
        self.groups = []
        self.const_cols = np.array([c for c, _ in by_degree.get(0, [])], dtype=np.int64)
        for d, items in sorted(by_degree.items()):
            if d == 0:
                continue
            cols = np.array([c for c, _ in items], dtype=np.int64)
            idx = np.array([f for _, f in items], dtype=np.int64)
            self.groups.append((d, cols, idx))

        CF = np.zeros((self.k, K), dtype=np.complex128)
        for ei, col, c in f_entries:
            CF[ei, col] += c
        self.CF = CF
        rows = np.array([r for r, _, _ in j_entries], dtype=np.int64)
        cols = np.array([c for _, c, _ in j_entries], dtype=np.int64)
        vals = np.array([v for _, _, v in j_entries], dtype=np.complex128)
        # (k*m, K) so that J_flat = (CJ @ V.T).T
        self.CJ = sp.csr_matrix((vals, (rows, cols)), shape=(self.k * self.m, K))

    def _monomials(self, X: np.ndarray) -> np.ndarray:
        N = X.shape[0]
        V = np.empty((N, self.num_monomials), dtype=np.complex128)
        if self.const_cols.size:
            V[:, self.const_cols] = 1.0
        for d, cols, idx in self.groups:
            acc = X[:, idx[:, 0]].copy()
            for level in range(1, d):
                acc *= X[:, idx[:, level]]
            V[:, cols] = acc
        return V

    def values(self, X: np.ndarray) -> np.ndarray:
        V = self._monomials(X)
        return V @ self.CF.T

    def values_and_jacobian(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        V = self._monomials(X)
        F = V @ self.CF.T
        J = (self.CJ @ V.T).T.reshape(X.shape[0], self.k, self.m)
        return F, np.ascontiguousarray(J)


@dataclass(frozen=True)
class Homotopy:
    """Compiled target plus a total-degree start system and the gamma twist."""

    target: CompiledSystem
    start_constants: tuple[complex, ...]
    gamma: complex
    seed: int

    @property
    def degrees(self) -> tuple[int, ...]:
        return self.target.degrees

    @property
    def num_paths(self) -> int:
        b = 1
        for d in self.degrees:
            b *= d
        return b

    def start_roots(self) -> list[list[complex]]:
        roots = []
        for d, c in zip(self.degrees, self.start_constants):
            base = abs(c) ** (1.0 / d)
            ang = cmath.phase(c)
            roots.append([base * cmath.exp(1j * (ang + 2 * cmath.pi * k) / d)
                          for k in range(d)])
        return roots

    def start_point(self, index: int) -> np.ndarray:
        roots = self.start_roots()
        x = np.empty(self.target.m, dtype=np.complex128)
        for i, d in enumerate(self.degrees):
            index, digit = divmod(index, d)
            x[i] = roots[i][digit]
        return x

    def start_block(self, lo: int, hi: int) -> np.ndarray:
        roots = self.start_roots()
        idx = np.arange(lo, hi, dtype=np.int64)
        X = np.empty((hi - lo, self.target.m), dtype=np.complex128)
        for i, d in enumerate(self.degrees):
            idx, digit = np.divmod(idx, d)
            X[:, i] = np.asarray(roots[i], dtype=np.complex128)[digit]
        return X

    def start_values(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and (diagonal of the) Jacobian of the start system."""
        degs = np.asarray(self.degrees, dtype=np.int64)
        G = X ** degs[None, :] - np.asarray(self.start_constants)[None, :]
        Jdiag = degs[None, :] * X ** (degs[None, :] - 1)
        return G, Jdiag


def total_degree_start(target: PolySystem, seed: int) -> Homotopy:
    """Build the homotopy: random unit-circle gamma, random start constants."""
    compiled = CompiledSystem(target)
    rng = random.Random(f"start:{seed}")
    gamma = cmath.exp(2j * cmath.pi * rng.random())
    constants = tuple(
        (0.5 + rng.random()) * cmath.exp(2j * cmath.pi * rng.random())
        for _ in range(compiled.k)
    )
    return Homotopy(target=compiled, start_constants=constants, gamma=gamma, seed=seed)


# -------------------------------------------------------------------------- #
# Tracking
# -------------------------------------------------------------------------- #

STATUS_ACTIVE = 0
STATUS_AT_END = 1
STATUS_CONVERGED = 2
STATUS_DIVERGED = 3
STATUS_FAILED = 4

_STATUS_NAMES = {
    STATUS_CONVERGED: "converged",
    STATUS_DIVERGED: "diverged",
    STATUS_FAILED: "failed",
}


@dataclass
class PathResult:
    status: str
    endpoint: np.ndarray | None
    residual: float
    steps: int
    start_index: int
    cluster: int | None = None


def _solve_batched(J: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve J[i] dx[i] = rhs[i]; flags rows whose matrix is singular."""
    n = J.shape[0]
    ok = np.ones(n, dtype=bool)
    try:
        dx = np.linalg.solve(J, rhs[..., None])[..., 0]
        bad = ~np.isfinite(dx).all(axis=1)
        if bad.any():
            ok[bad] = False
            dx[bad] = 0.0
        return dx, ok
    except np.linalg.LinAlgError:
        dx = np.zeros_like(rhs)
        for i in range(n):
            try:
                dx[i] = np.linalg.solve(J[i], rhs[i])
                if not np.isfinite(dx[i]).all():
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                ok[i] = False
        return dx, ok


def _homotopy_values(hom: Homotopy, X: np.ndarray, t: np.ndarray):
    """H and its Jacobian at per-path parameters t, plus the target values."""
    F, JF = hom.target.values_and_jacobian(X)
    G, JGdiag = hom.start_values(X)
    gt = hom.gamma * (1.0 - t)
    H = gt[:, None] * G + t[:, None] * F
    JH = t[:, None, None] * JF
    m = hom.target.m
    JH[:, np.arange(m), np.arange(m)] += gt[:, None] * JGdiag
    return H, JH, F, G


def _track_block(hom: Homotopy, lo: int, hi: int, opts: SolveOptions):
    """Track paths lo..hi-1.  Returns (status, endpoints, residuals, steps)."""
    X = hom.start_block(lo, hi)
    N = X.shape[0]
    m = hom.target.m
    t = np.zeros(N)
    dt = np.full(N, opts.dt_init)
    status = np.full(N, STATUS_ACTIVE, dtype=np.int8)
    streak = np.zeros(N, dtype=np.int32)
    steps = np.zeros(N, dtype=np.int64)
    endgame_steps = np.zeros(N, dtype=np.int64)
    s_entry = np.full(N, np.nan)  # 1 - t at endgame entry
    n_entry = np.full(N, np.nan)  # coordinate norm at endgame entry
    inf_thr = opts.infinity_threshold

    def max_abs(A):
        return np.abs(A).max(axis=1)

    while True:
        active = np.flatnonzero(status == STATUS_ACTIVE)
        if active.size == 0:
            break
        xa = X[active]
        ta = t[active]
        dta = np.minimum(dt[active], 1.0 - ta)

        # Euler predictor: JH dx/dt = gamma*G - F
        H, JH, F, G = _homotopy_values(hom, xa, ta)
        rhs = (hom.gamma * G - F) * dta[:, None]
        dx, ok_pred = _solve_batched(JH, rhs)
        xp = xa + dx
        tn = ta + dta

        # Newton corrector at t = tn; paths stop iterating once contracted
        last_step = np.full(active.size, np.inf)
        need = np.ones(active.size, dtype=bool)
        for _ in range(opts.newton_iters):
            ids = np.flatnonzero(need)
            if ids.size == 0:
                break
            Hc, JHc, _, _ = _homotopy_values(hom, xp[ids], tn[ids])
            dxc, ok_corr = _solve_batched(JHc, -Hc)
            ok_pred[ids] &= ok_corr
            xnew = xp[ids] + dxc
            xp[ids] = xnew
            ls = max_abs(dxc)
            last_step[ids] = ls
            with np.errstate(invalid="ignore"):
                finite = np.isfinite(xnew).all(axis=1)
                settled = (ls <= opts.tol_track * (1.0 + max_abs(xnew))) | ~finite | ~ok_corr
            need[ids[settled]] = False
        with np.errstate(invalid="ignore"):
            scale = 1.0 + max_abs(xp)
            success = ok_pred & np.isfinite(xp).all(axis=1) & (last_step <= opts.tol_track * scale)

        # commit successes
        acc = active[success]
        if acc.size:
            X[acc] = xp[success]
            t[acc] = tn[success]
            steps[acc] += 1
            streak[acc] += 1
            grow = streak[acc] >= 3
            dt[acc[grow]] = np.minimum(dt[acc[grow]] * 2.0, opts.dt_max)
            # reached the end of the path
            done = acc[t[acc] >= 1.0 - 1e-15]
            status[done] = STATUS_AT_END
            # norm blow-up
            norms_acc = max_abs(X[acc])
            big = acc[norms_acc > inf_thr]
            status[big] = STATUS_DIVERGED
            # endgame bookkeeping: growth-exponent samples and truncation
            in_end = acc[t[acc] > opts.endgame_t]
            if in_end.size:
                fresh = in_end[endgame_steps[in_end] == 0]
                s_entry[fresh] = 1.0 - t[fresh]
                n_entry[fresh] = np.maximum(max_abs(X[fresh]), 1e-300)
                endgame_steps[in_end] += 1
                over = in_end[(endgame_steps[in_end] > opts.endgame_min_steps)
                              & (status[in_end] == STATUS_ACTIVE)]
                if over.size:
                    s_now = np.maximum(1.0 - t[over], 1e-300)
                    n_now = np.maximum(max_abs(X[over]), 1e-300)
                    decay = s_now / s_entry[over]
                    growth = n_now / n_entry[over]
                    blowing = (n_now > opts.endgame_norm) | (
                        (decay <= opts.endgame_decay) & (growth > opts.endgame_growth))
                    # bounded growth but stuck: hand to refinement
                    settle = ~blowing & (endgame_steps[over] > opts.endgame_max_steps)
                    status[over[blowing]] = STATUS_DIVERGED
                    status[over[settle]] = STATUS_AT_END

        # shrink rejected steps
        rej = active[~success]
        if rej.size:
            streak[rej] = 0
            dt[rej] *= 0.5
            under = rej[dt[rej] < opts.dt_min]
            if under.size:
                late = t[under] > 0.99
                status[under[late]] = STATUS_DIVERGED
                status[under[~late]] = STATUS_FAILED

        stuck = active[steps[active] > opts.max_steps]
        if stuck.size:
            status[stuck] = STATUS_FAILED

    # refine the paths that reached t = 1 against the target system
    endpoints = np.zeros((N, m), dtype=np.complex128)
    residuals = np.full(N, np.inf)
    at_end = np.flatnonzero(status == STATUS_AT_END)
    if at_end.size:
        xe = X[at_end]
        live = np.ones(at_end.size, dtype=bool)
        for _ in range(opts.refine_iters):
            if not live.any():
                break
            F, JF = hom.target.values_and_jacobian(xe[live])
            res = np.abs(F).max(axis=1)
            dxr, ok = _solve_batched(JF, -F)
            xnew = xe[live] + dxr
            good = ok & np.isfinite(xnew).all(axis=1)
            upd = xe[live]
            upd[good] = xnew[good]
            xe[live] = upd
            sub = np.zeros(at_end.size, dtype=bool)
            sub[np.flatnonzero(live)[~good | (res <= opts.tol_refine * 0.01)]] = True
            live &= ~sub
        F = hom.target.values(xe)
        res = np.abs(F).max(axis=1)
        norms = np.abs(xe).max(axis=1)
        conv = (res <= opts.tol_refine) & (norms <= inf_thr)
        div = norms > inf_thr
        status[at_end[conv]] = STATUS_CONVERGED
        status[at_end[div & ~conv]] = STATUS_DIVERGED
        status[at_end[~conv & ~div]] = STATUS_FAILED
        endpoints[at_end] = xe
        residuals[at_end] = res
    return status, endpoints, residuals, steps


def track_path(hom: Homotopy, start_index: int, opts: SolveOptions = SolveOptions()) -> PathResult:
    """Track a single start root; statuses are results, never exceptions."""
    status, endpoints, residuals, steps = _track_block(hom, start_index, start_index + 1, opts)
    st = int(status[0])
    return PathResult(
        status=_STATUS_NAMES.get(st, "failed"),
        endpoint=endpoints[0] if st == STATUS_CONVERGED else None,
        residual=float(residuals[0]),
        steps=int(steps[0]),
        start_index=start_index,
    )


# -------------------------------------------------------------------------- #
# Clustering and the public solve
# -------------------------------------------------------------------------- #

@dataclass
class Cluster:
    point: np.ndarray
    multiplicity: int
    residual: float
    members: list[int] = field(default_factory=list)


@dataclass
class SolutionSet:
    clusters: list[Cluster]
    num_paths: int
    converged: int
    diverged: int
    failed: int
    seed: int
    gamma: complex

    def __post_init__(self):
        total = sum(c.multiplicity for c in self.clusters)
        if total != self.converged or self.converged + self.diverged + self.failed != self.num_paths:
            raise AssertionError("path accounting does not add up")

    @property
    def max_residual(self) -> float:
        return max((c.residual for c in self.clusters), default=0.0)


def _cluster(endpoints, residuals, indices, tol: float) -> list[Cluster]:
    clusters: list[Cluster] = []
    for idx in indices:
        x = endpoints[idx]
        r = residuals[idx]
        assigned = False
        for cl in clusters:
            scale = max(1.0, float(np.abs(cl.point).max()))
            if float(np.abs(x - cl.point).max()) <= tol * scale:
                cl.members.append(idx)
                cl.multiplicity += 1
                cl.residual = max(cl.residual, float(r))
                assigned = True
                break
        if not assigned:
            clusters.append(Cluster(point=x.copy(), multiplicity=1,
                                    residual=float(r), members=[idx]))
    for cl in clusters:
        cl.point = np.mean([endpoints[i] for i in cl.members], axis=0)
    return clusters


def _run_once(target: PolySystem, seed: int, opts: SolveOptions, attempt: int):
    hom = total_degree_start(target, seed if attempt == 0 else hash((seed, attempt)) % (2**32))
    total = hom.num_paths
    # keep monomial-value arrays bounded around ~256 MB
    per_path = max(1, hom.target.num_monomials) * 16
    chunk = max(256, min(opts.chunk_size, (1 << 28) // per_path))
    statuses = np.empty(total, dtype=np.int8)
    endpoints = np.empty((total, hom.target.m), dtype=np.complex128)
    residuals = np.empty(total)
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        st, ep, res, _ = _track_block(hom, lo, hi, opts)
        statuses[lo:hi] = st
        endpoints[lo:hi] = ep
        residuals[lo:hi] = res
    return hom, statuses, endpoints, residuals


def solve(target: PolySystem, seed: int = 0, opts: SolveOptions = SolveOptions()) -> SolutionSet:
    """Track every total-degree start root and cluster the finite endpoints.

    Nothing is filtered here; removing solutions on cleared denominators is
    the caller's job.  ``failed > 0`` triggers one automatic re-run with a
    fresh gamma; persistent failures raise :class:`SolverError`.
    """
    last_failed = None
    for attempt in (0, 1):
        hom, statuses, endpoints, residuals = _run_once(target, seed, opts, attempt)
        failed = int((statuses == STATUS_FAILED).sum())
        if failed == 0:
            break
        last_failed = failed
    else:
        raise SolverError(
            f"{last_failed} path(s) failed to classify after a fresh-gamma retry "
            f"(seed={seed}, paths={hom.num_paths})"
        )
    conv_idx = [int(i) for i in np.flatnonzero(statuses == STATUS_CONVERGED)]
    clusters = _cluster(endpoints, residuals, conv_idx, opts.tol_cluster)
    return SolutionSet(
        clusters=clusters,
        num_paths=hom.num_paths,
        converged=len(conv_idx),
        diverged=int((statuses == STATUS_DIVERGED).sum()),
        failed=int((statuses == STATUS_FAILED).sum()),
        seed=seed,
        gamma=hom.gamma,
    )


def newton_refine(target: PolySystem, point, tol: float = 1e-10, max_iter: int = 50):
    """Newton iteration against *target* from *point*.

    Returns ``(refined_point, residual, converged)``; a singular Jacobian or
    stagnation yields ``converged=False`` rather than an exception.
    """
    compiled = target if isinstance(target, CompiledSystem) else CompiledSystem(target)
    x = np.asarray(point, dtype=np.complex128).reshape(1, -1)
    best = x.copy()
    best_res = float(np.abs(compiled.values(x)).max())
    for _ in range(max_iter):
        F, J = compiled.values_and_jacobian(x)
        res = float(np.abs(F).max())
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            return x[0], res, True
        dx, ok = _solve_batched(J, -F)
        if not ok[0] or not np.isfinite(dx).all():
            return best[0], best_res, best_res <= tol
        x = x + dx
    res = float(np.abs(compiled.values(x)).max())
    if res < best_res:
        best, best_res = x, res
    return best[0], best_res, best_res <= tol
