"""Local condensed operators: Schur complements, Robin solves, condensed rhs.

Everything here is per-subdomain and pure: operations take the subdomain
system plus current state and return new values, so distinct subdomains can
be processed concurrently. Results meet only at interface assembly points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ImpedanceError, LocalSolveError, MixddError
from .fem import GaussPointState, assemble
from .impedance import Impedance
from .partition import InterfaceTopology, SubdomainSystem


def _submatrix(k, rows, cols):
    return k.tocsr()[rows][:, cols]


def primal_schur(k_t, boundary_dofs, dirichlet_dofs=()) -> np.ndarray:
    """Dense primal Schur complement ``K_bb - K_bi K_ii^-1 K_ib``.

    Dirichlet dofs are eliminated first (excluded from the interior block).
    """
    n = k_t.shape[0]
    boundary_dofs = np.asarray(boundary_dofs, dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[boundary_dofs] = False
    mask[np.asarray(list(dirichlet_dofs), dtype=int)] = False
    interior = np.flatnonzero(mask)
    kbb = _submatrix(k_t, boundary_dofs, boundary_dofs).toarray()
    if len(interior) == 0:
        return kbb
    kbi = _submatrix(k_t, boundary_dofs, interior)
    kib = _submatrix(k_t, interior, boundary_dofs).toarray()
    kii = _submatrix(k_t, interior, interior).tocsc()
    try:
        lu = spla.splu(kii)
    except RuntimeError as exc:
        raise MixddError("singular interior block in Schur condensation") from exc
    s = kbb - kbi @ lu.solve(kib)
    return 0.5 * (s + s.T)


@dataclass
class RobinFactorization:
    """Factorized generalized Robin matrix ``K_t + t^T Q t`` on the free dofs.

    The sparse part is LU-factorized; the impedance's low-rank correction is
    folded in through the Woodbury identity, whose correction block
    ``M - W^T Ktilde^-1 W`` must stay positive definite for the impedance to
    be admissible.
    """

    lu: object
    n_free: int
    w: np.ndarray | None = None  # prolonged low-rank factor (n_free, m)
    z: np.ndarray | None = None  # Ktilde^-1 W
    corr_cho: tuple | None = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self.lu.solve(rhs)
        if self.w is not None:
            x = x + self.z @ sla.cho_solve(self.corr_cho, self.w.T @ x)
        return x

    def solve_many(self, rhs: np.ndarray) -> np.ndarray:
        x = self.lu.solve(rhs)
        if self.w is not None:
            x = x + self.z @ sla.cho_solve(self.corr_cho, self.w.T @ x)
        return x


def robin_factorize(k_ff, bpos, impedance: Impedance) -> RobinFactorization:
    """Factor ``K_t + t^T Q t`` including the impedance low-rank correction."""
    n = k_ff.shape[0]
    bpos = np.asarray(bpos, dtype=int)
    nb = len(bpos)
    rows = np.repeat(bpos, nb)
    cols = np.tile(bpos, nb)
    k_rob = (
        k_ff + sp.coo_matrix((impedance.sparse.ravel(), (rows, cols)), shape=(n, n))
    ).tocsc()
    try:
        lu = spla.splu(k_rob)
    except RuntimeError as exc:
        raise ImpedanceError("Robin matrix factorization failed") from exc
    if impedance.rank == 0:
        return RobinFactorization(lu=lu, n_free=n)
    w = np.zeros((n, impedance.rank))
    w[bpos] = impedance.lowrank_w
    z = lu.solve(w)
    corr = impedance.lowrank_m - w.T @ z
    try:
        corr_cho = sla.cho_factor(0.5 * (corr + corr.T))
    except np.linalg.LinAlgError as exc:
        raise ImpedanceError("impedance not admissible: correction block indefinite") from exc
    return RobinFactorization(lu=lu, n_free=n, w=w, z=z, corr_cho=corr_cho)


def robin_tangent_trace(fact: RobinFactorization, bpos, x_b: np.ndarray) -> np.ndarray:
    """Apply ``t (K_t + t^T Q t)^-1 t^T`` to a boundary vector."""
    rhs = np.zeros(fact.n_free)
    rhs[bpos] = x_b
    return fact.solve(rhs)[bpos]


@dataclass
class LocalSolveResult:
    u: np.ndarray  # full local displacement, imposed dofs included
    u_b: np.ndarray
    lam_b: np.ndarray
    iterations: int
    residuals: list
    k_t_full: object  # tangent on all local dofs at the converged state
    k_ff: object  # its restriction to the free dofs
    f_int: np.ndarray
    r_free: np.ndarray  # unresolved mixed residual at the returned iterate
    trial_states: GaussPointState
    converged: bool = True


def robin_nonlinear_solve(
    sd: SubdomainSystem,
    materials,
    states: GaussPointState,
    u_start: np.ndarray,
    mu_b: np.ndarray,
    impedance: Impedance,
    load_factor: float,
    tol: float,
    max_iters: int = 25,
    best_effort: bool = False,
    fallback: str = "raise",
    monotone: bool = False,
) -> LocalSolveResult:
    """Local Newton on the generalized Robin problem.

    Solves ``f_int(u) + f_ext + t^T (mu_b - Q u_b) = 0`` on the free dofs.
    A pending change of the imposed values (``u_start`` still carrying the
    previous ones) is applied through the first tangent solve: evaluating the
    state at a raw jump would fabricate yielded trial states at the loaded
    edge and break the Newton basin.

    Exhausting ``max_iters`` raises, except: ``best_effort`` returns the last
    iterate (used for the deliberately truncated first sweep of an
    increment), and ``fallback='best'`` returns the lowest-residual iterate
    as long as the iteration did not blow up (stalled local solves then
    resolve over the following outer iterations). With ``monotone`` the sweep
    stops at the first residual increase and returns the iterate before it:
    while the generalized-force data is far from the transmission fixed
    point, chasing the exact local solution drives soft subdomains into
    enormous artificial plastic excursions, so the sweep only keeps the
    contracting part of the Newton path. A genuinely diverging local Newton
    (residual growth beyond 10x, or non-finite) always raises. The returned
    reaction satisfies ``lam_b = mu_b - Q u_b`` by construction.
    """
    u = u_start.copy()
    fix, vals = sd.dirichlet_pattern()
    delta = load_factor * vals - u[fix]
    pending_lift = len(fix) > 0 and float(np.abs(delta).max(initial=0.0)) > 0.0
    f_ext = load_factor * sd.f_ext_unit
    residuals = []
    iterations = 0
    best = None  # (residual, u snapshot, iterations)
    res0 = None
    for j in range(max_iters + 1):
        f_int, k_t, trial = assemble(sd.mesh, materials, states, u)
        r = (f_int + f_ext)[sd.free_dofs]
        u_b = u[sd.boundary_dofs]
        r[sd.bpos] += mu_b - impedance.apply(u_b)
        k_ff = _submatrix(k_t, sd.free_dofs, sd.free_dofs)
        if pending_lift:
            r_drive = r - _submatrix(k_t, sd.free_dofs, fix) @ delta
            residuals.append(float(np.linalg.norm(r_drive)))
            if j == max_iters:
                break
            fact = robin_factorize(k_ff, sd.bpos, impedance)
            u[sd.free_dofs] += fact.solve(r_drive)
            u[fix] += delta
            pending_lift = False
            iterations += 1
            continue
        res = float(np.linalg.norm(r))
        residuals.append(res)
        res0 = res if res0 is None else res0
        if not np.isfinite(res) or (res0 > 0 and res > 10.0 * max(res0, tol)):
            raise LocalSolveError(
                f"local Robin Newton on subdomain {sd.index} diverged "
                f"(residual {res:.3e} from {res0:.3e})",
                residual_history=residuals,
            )
        if res <= tol or (best_effort and j == max_iters):
            lam_b = mu_b - impedance.apply(u_b)
            return LocalSolveResult(
                u, u_b, lam_b, iterations, residuals, k_t, k_ff, f_int, r, trial,
                converged=res <= tol,
            )
        if monotone and best is not None and res >= best[0]:
            break
        if best is None or res < best[0]:
            best = (res, u.copy(), iterations)
        if j == max_iters:
            break
        fact = robin_factorize(k_ff, sd.bpos, impedance)
        u[sd.free_dofs] += fact.solve(r)
        iterations += 1
    if fallback == "best" and best is not None:
        _, u, iterations = best
        f_int, k_t, trial = assemble(sd.mesh, materials, states, u)
        u_b = u[sd.boundary_dofs]
        r = (f_int + f_ext)[sd.free_dofs]
        r[sd.bpos] += mu_b - impedance.apply(u_b)
        lam_b = mu_b - impedance.apply(u_b)
        k_ff = _submatrix(k_t, sd.free_dofs, sd.free_dofs)
        return LocalSolveResult(
            u, u_b, lam_b, iterations, residuals, k_t, k_ff, f_int, r, trial,
            converged=False,
        )
    raise LocalSolveError(
        f"local Robin Newton on subdomain {sd.index} did not reach {tol:.3e} "
        f"in {max_iters} iterations",
        residual_history=residuals,
    )


def dirichlet_to_neumann(
    sd: SubdomainSystem,
    materials,
    states: GaussPointState,
    u_b: np.ndarray,
    load_factor: float = 0.0,
    tol: float = None,
    max_iters: int = 25,
    u_start: np.ndarray | None = None,
):
    """Nonlinear Dirichlet-to-Neumann map: impose ``u_b``, return the reaction.

    Solves the interior equilibrium with the trace imposed, then reads the
    boundary reaction ``lam_b`` off the equilibrium ``f_int + f_ext + t^T
    lam_b = 0``. In the linear case this is the affine map ``S_t u_b`` plus
    the condensed load term.
    """
    u = u_start.copy() if u_start is not None else np.zeros(sd.mesh.n_dofs)
    fix, vals = sd.dirichlet_pattern()
    constrained = np.concatenate([fix, sd.boundary_dofs]).astype(int)
    target = np.concatenate([load_factor * vals, u_b])
    delta = target - u[constrained]
    pending_lift = float(np.abs(delta).max(initial=0.0)) > 0.0
    f_ext = load_factor * sd.f_ext_unit
    ifree = sd.free_dofs[sd.ipos]
    residuals = []
    for j in range(max_iters + 1):
        f_int, k_t, _ = assemble(sd.mesh, materials, states, u)
        r_full = f_int + f_ext
        r_i = r_full[ifree]
        if pending_lift and len(ifree) > 0:
            # Constrained values enter through the first tangent solve.
            r_drive = r_i - _submatrix(k_t, ifree, constrained) @ delta
            residuals.append(float(np.linalg.norm(r_drive)))
            if j == max_iters:
                break
            kii = _submatrix(k_t, ifree, ifree).tocsc()
            u[ifree] += spla.splu(kii).solve(r_drive)
            u[constrained] += delta
            pending_lift = False
            continue
        if pending_lift:
            u[constrained] += delta
            pending_lift = False
            continue
        res = float(np.linalg.norm(r_i))
        residuals.append(res)
        if tol is None:
            tol = max(1e-12 * max(residuals[0], 1.0), 1e-300)
        if res <= tol or len(ifree) == 0:
            lam_b = -r_full[sd.boundary_dofs]
            return lam_b, u, j
        if j == max_iters:
            break
        kii = _submatrix(k_t, ifree, ifree).tocsc()
        u[ifree] += spla.splu(kii).solve(r_i)
    raise LocalSolveError(
        f"interior Newton on subdomain {sd.index} did not converge",
        residual_history=residuals,
    )


def assemble_interface_impedance(topology: InterfaceTopology, impedances):
    """Dense assembled impedance ``A Q A^T`` on the interface with its factor."""
    acc = np.zeros((topology.n_A, topology.n_A))
    for s, imp in enumerate(impedances):
        topology.scatter_matrix(imp.dense(), s, acc)
    try:
        return acc, sla.cho_factor(acc)
    except np.linalg.LinAlgError as exc:
        raise ImpedanceError("assembled interface impedance is not positive definite") from exc


def condensed_rhs(topology: InterfaceTopology, impedances, schurs, mu_list, u_b_list, qa_cho=None):
    """Condensed right-hand sides of the interface tangent problem.

    ``b_m`` measures the gap between the impedance-weighted average of the
    mixed unknown and the local solves' traces; ``b_p = (S_t + Q) b_m``.
    """
    if qa_cho is None:
        _, qa_cho = assemble_interface_impedance(topology, impedances)
    v_a = sla.cho_solve(qa_cho, topology.assemble(mu_list))
    b_m = [v_a[amap] - u_b for amap, u_b in zip(topology.a_maps, u_b_list)]
    b_p = [s @ bm + imp.apply(bm) for s, imp, bm in zip(schurs, impedances, b_m)]
    return b_m, b_p
