"""Outer nonlinear drivers over load increments.

``run_mixed`` orchestrates the mixed substructured Newton: per global
iteration, independent local Robin solves resolve the nonlinearity, the
condensed gap feeds a balancing-preconditioned tangent solve on the primal
interface, and the recovered increments update displacements, reactions and
the mixed unknown consistently. ``run_nks`` is the classical baseline: one
global Newton with the same interface solver per tangent system and purely
linear local work. ``monolithic_newton`` is the sequential reference both are
checked against.

The mixed unknown is pure bookkeeping over the physical pair ``(u, lambda)``:
whenever the impedance is rebuilt from fresh tangents, ``mu`` is rebased as
``lambda + Q u_b`` so the identity holds exactly at every step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import GlobalSolveError, MixddError
from .fem import GaussPointState, Mesh, apply_dirichlet, assemble
from .impedance import (
    STRATEGIES,
    exact_complement,
    lumped_neighbor,
    superlumped_neighbor,
    two_scale,
)
from .linsolve import (
    RitzStore,
    bdd_solve,
    build_coarse,
    make_nn_preconditioner,
    make_s_apply,
    recover_fields,
    srks_extract,
)
from .partition import build_scaled, partition_mesh, rigid_body_modes
from .schur import (
    assemble_interface_impedance,
    condensed_rhs,
    primal_schur,
    robin_factorize,
    robin_nonlinear_solve,
)

log = logging.getLogger("mixdd")


@dataclass
class Thresholds:
    """Convergence thresholds.

    The local tolerance follows a non-increasing schedule synchronized with
    the global residual: relaxed on the first global iteration of each
    increment (so the right-hand side can propagate before the subdomains
    resolve their nonlinearity deeply), then ``local_forcing`` times the
    current global residual, floored at ``eps_local`` relative."""

    eps_global: float = 1e-6
    eps_local: float = 1e-8
    eps_local_first: float = 1e-4
    local_forcing: float = 1e-2
    eps_krylov: float = 1e-8
    max_global_iters: int = 30
    max_local_iters: int = 25

    def __post_init__(self):
        for name in ("eps_global", "eps_local", "eps_local_first", "eps_krylov",
                     "local_forcing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_local > self.eps_local_first:
            raise ValueError("local tolerance schedule must be non-increasing")

    def local_tol(self, global_iter: int, ref: float, current: float,
                  previous_tol: float | None = None) -> float:
        if global_iter == 0:
            return self.eps_local_first * ref
        tol = max(self.eps_local * ref, self.local_forcing * current)
        if previous_tol is not None:
            tol = min(tol, previous_tol)
        return tol


@dataclass
class LoadProgram:
    factors: list

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=float)
        if len(f) == 0 or np.any(np.diff(f) <= 0):
            raise ValueError("load factors must be strictly increasing")
        self.factors = [float(x) for x in f]


@dataclass
class Problem:
    """Mesh, materials and substructuring bundled for the drivers."""

    mesh: Mesh
    materials: list
    subs: list
    topo: object

    @classmethod
    def build(cls, mesh: Mesh, materials, strategy):
        mesh.validate(require_dirichlet=True)
        subs, topo = partition_mesh(mesh, strategy)
        if not isinstance(materials, (list, tuple)):
            materials = [materials]
        return cls(mesh=mesh, materials=list(materials), subs=subs, topo=topo)

    @property
    def n_subdomains(self):
        return len(self.subs)


@dataclass
class GlobalState:
    """Per-subdomain displacement, reactions, mixed unknown, committed states."""

    u: list
    lam: list
    mu: list
    states: list

    @classmethod
    def initial(cls, problem: Problem):
        u = [np.zeros(sd.mesh.n_dofs) for sd in problem.subs]
        lam = [np.zeros(sd.n_boundary) for sd in problem.subs]
        mu = [np.zeros(sd.n_boundary) for sd in problem.subs]
        states = [GaussPointState.virgin(sd.mesh.n_elements) for sd in problem.subs]
        return cls(u, lam, mu, states)

    def traces(self, problem: Problem):
        return [self.u[s][sd.boundary_dofs] for s, sd in enumerate(problem.subs)]

    def global_displacement(self, problem: Problem) -> np.ndarray:
        out = np.zeros(problem.mesh.n_dofs)
        for s, sd in enumerate(problem.subs):
            out[sd.global_dofs] = self.u[s]
        return out


@dataclass
class IncrementRecord:
    load: float
    global_iterations: int
    krylov_iterations: int
    local_iterations: int
    local_iterations_max: int  # largest inner Newton count of any local solve
    cum_krylov: int
    cum_global: int
    residual_history: list
    displacement: np.ndarray


@dataclass
class SolveReport:
    method: str
    srks: bool
    increments: list = field(default_factory=list)
    error: str | None = None

    @property
    def cumulated_krylov(self):
        return self.increments[-1].cum_krylov if self.increments else 0

    @property
    def cumulated_global(self):
        return self.increments[-1].cum_global if self.increments else 0

    def rows(self):
        for rec in self.increments:
            yield {
                "increment": rec.load,
                "strategy": self.method,
                "cumulated_krylov": rec.cum_krylov,
                "cumulated_global_newton": rec.cum_global,
            }


@dataclass
class _Tangents:
    """Everything rebuilt from one set of per-subdomain tangent matrices."""

    k_full: list
    k_ff: list
    kbb: list
    deltas: list
    schurs: list
    scaled: object
    coarse: object
    s_apply: object
    m_apply: object


def _assemble_all(problem: Problem, state: GlobalState, factor: float):
    """Per-subdomain assembly at the current state (pure per subdomain)."""
    f_ints, k_fulls, trials = [], [], []
    for s, sd in enumerate(problem.subs):
        f_int, k, trial = assemble(sd.mesh, problem.materials, state.states[s], state.u[s])
        f_ints.append(f_int)
        k_fulls.append(k)
        trials.append(trial)
    return f_ints, k_fulls, trials


def _build_tangents(problem: Problem, k_fulls):
    subs, topo = problem.subs, problem.topo
    k_ff, kbb, deltas, schurs, traces = [], [], [], [], []
    for s, sd in enumerate(subs):
        kf = k_fulls[s][sd.free_dofs][:, sd.free_dofs]
        k_ff.append(kf)
        kb = kf[sd.bpos][:, sd.bpos].toarray()
        kbb.append(kb)
        deltas.append(kb.diagonal().copy())
        fix, _ = sd.dirichlet_pattern()
        schurs.append(primal_schur(k_fulls[s], sd.boundary_dofs, fix))
        traces.append(rigid_body_modes(sd)[1])
    scaled = build_scaled(topo, deltas)
    coarse = build_coarse(topo, scaled, traces, schurs)
    return _Tangents(
        k_full=k_fulls,
        k_ff=k_ff,
        kbb=kbb,
        deltas=deltas,
        schurs=schurs,
        scaled=scaled,
        coarse=coarse,
        s_apply=make_s_apply(topo, schurs),
        m_apply=make_nn_preconditioner(topo, scaled, schurs),
    )


def build_impedances(problem: Problem, tg: _Tangents, strategy: str):
    """One impedance per subdomain from the current tangent bundle."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown impedance strategy {strategy!r}; pick one of {STRATEGIES}")
    topo = problem.topo
    out = []
    for j in range(problem.n_subdomains):
        if strategy == "lumped":
            out.append(lumped_neighbor(j, topo, tg.kbb))
        elif strategy == "superlumped":
            out.append(superlumped_neighbor(j, topo, tg.deltas))
        elif strategy == "two-scale":
            out.append(
                two_scale(j, topo, tg.scaled, tg.deltas, tg.coarse.g, tg.coarse.cho,
                          tg.coarse.col_slices)
            )
        else:
            out.append(
                exact_complement(j, problem.subs, topo, tg.k_full,
                                 problem.mesh.n_dofs, problem.mesh.dirichlet)
            )
    return out


def global_residual(problem: Problem, state: GlobalState, impedances, f_ints, factor):
    """The two norms of the mixed convergence test.

    Residual: per-subdomain ``f_int + f_ext + t^T (mu - Q u_b)`` stacked over
    free dofs. Jump: Euclidean norm of the signed trace jumps, each entry
    scaled by one over (multiplicity - 1).
    """
    parts = []
    for s, sd in enumerate(problem.subs):
        r = (f_ints[s] + factor * sd.f_ext_unit)[sd.free_dofs]
        u_b = state.u[s][sd.boundary_dofs]
        r[sd.bpos] += state.mu[s] - impedances[s].apply(u_b)
        parts.append(r)
    r_norm = float(np.linalg.norm(np.concatenate(parts))) if parts else 0.0
    jump_norm = problem.topo.jump_norm(state.traces(problem))
    return r_norm, jump_norm


def mixed_increment(
    problem: Problem,
    state: GlobalState,
    factor: float,
    strategy: str,
    thresholds: Thresholds,
    store: RitzStore | None = None,
):
    """One load increment of the mixed substructured Newton.

    Iteration 0 is a propagation step: single-step local sweeps apply the
    imposed-displacement change and feed the condensed right-hand side, but
    the interface operator and the state update use the tangents of the
    converged previous state, so the concentrated lift never pollutes the
    state (in the affine case this step is exact). Subsequent iterations are
    the mixed algorithm proper: local Newton sweeps that iterate while they
    contract, then the interface tangent solve at the local tangents with
    consistent recovery. While some local sweep cannot reach its tolerance
    (generalized forces still infeasible, e.g. demanding more than a yielded
    subdomain can carry), the iteration takes a plain coupled Newton step
    from the pre-sweep state instead and re-estimates balanced reactions.
    Returns ``(global_iterations, krylov_iterations, local_iterations,
    max_local_iterations, residual_history, trial_states)``; the caller
    commits the trial plastic states. ``mu = lambda + Q u_b`` holds exactly
    after every update.
    """
    subs, topo = problem.subs, problem.topo
    f_ints, k_fulls, trials = _assemble_all(problem, state, factor)
    tg = _build_tangents(problem, k_fulls)
    imps = build_impedances(problem, tg, strategy)
    state.mu = [
        state.lam[s] + imps[s].apply(state.u[s][sd.boundary_dofs])
        for s, sd in enumerate(subs)
    ]
    # Increment driving force: residual at the old state plus the coupling
    # force of the pending imposed-value change.
    drive = []
    deltas_fix = []
    for s, sd in enumerate(subs):
        r = (f_ints[s] + factor * sd.f_ext_unit)[sd.free_dofs]
        u_b = state.u[s][sd.boundary_dofs]
        r[sd.bpos] += state.mu[s] - imps[s].apply(u_b)
        fix, vals = sd.dirichlet_pattern()
        delta = factor * vals - state.u[s][fix]
        deltas_fix.append((fix, delta))
        if len(fix):
            r = r - k_fulls[s][sd.free_dofs][:, fix] @ delta
        drive.append(r)
    ref = float(np.linalg.norm(np.concatenate(drive))) if drive else 0.0
    ref += topo.jump_norm(state.traces(problem))
    history = [(ref, 0.0)]
    n_global = n_krylov = n_local = n_local_max = 0
    tol_prev = None
    if ref == 0.0:
        return n_global, n_krylov, n_local, n_local_max, history, trials

    def extract_ritz(rep):
        nonlocal n_krylov
        n_krylov += rep.iterations
        if store is not None:
            vals, vecs = srks_extract(rep, store.theta)
            if vecs is not None:
                store.add(vals, vecs, tg.s_apply)

    while True:
        if n_global >= thresholds.max_global_iters:
            raise GlobalSolveError(
                f"global Newton did not converge in {thresholds.max_global_iters} "
                f"iterations (residual {history[-1]})"
            )
        current = history[-1][0] + history[-1][1]
        tol_local = thresholds.local_tol(n_global, ref, current, tol_prev)
        tol_prev = tol_local
        first_sweep = n_global == 0
        max_local = 1 if first_sweep else thresholds.max_local_iters
        results = []
        for s, sd in enumerate(subs):
            res = robin_nonlinear_solve(
                sd, problem.materials, state.states[s], state.u[s], state.mu[s],
                imps[s], factor, tol_local, max_local, best_effort=first_sweep,
                fallback="best", monotone=True,
            )
            results.append(res)
            n_local += res.iterations
            n_local_max = max(n_local_max, res.iterations)
        resolved = all(r.converged for r in results)
        if first_sweep or resolved:
            # Mixed tangent step. On the propagation step the operator stays
            # on the healthy previous-state tangents and the update restarts
            # from the previous state; afterwards everything sits on the
            # tangents at the local equilibria.
            if not first_sweep:
                tg = _build_tangents(problem, [r.k_t_full for r in results])
                imps = build_impedances(problem, tg, strategy)
            mu0 = [m.copy() for m in state.mu]
            mu_hat = [results[s].lam_b + imps[s].apply(results[s].u_b)
                      for s in range(len(subs))]
            facts = [robin_factorize(tg.k_ff[s], subs[s].bpos, imps[s])
                     for s in range(len(subs))]
            _, qa_cho = assemble_interface_impedance(topo, imps)
            b_m, b_p = condensed_rhs(
                topo, imps, tg.schurs, mu_hat, [r.u_b for r in results], qa_cho
            )
            rhs_a = -topo.assemble(b_p)
            dv, rep = bdd_solve(
                tg.s_apply, tg.m_apply, tg.coarse, rhs_a, thresholds.eps_krylov,
                augmentation=store,
            )
            extract_ritz(rep)
            dmu, _, _, _ = recover_fields(
                dv, b_m, b_p, tg.schurs, imps, facts, [sd.bpos for sd in subs], topo
            )
            for s, sd in enumerate(subs):
                if first_sweep:
                    # Linearize at the previous state: residual with the
                    # updated mixed unknown plus the imposed-value coupling.
                    rhs = drive[s] + np.zeros(facts[s].n_free)
                    rhs[sd.bpos] += mu_hat[s] + dmu[s] - mu0[s]
                    fix, delta = deltas_fix[s]
                    state.u[s][sd.free_dofs] += facts[s].solve(rhs)
                    state.u[s][fix] += delta
                else:
                    rhs = np.zeros(facts[s].n_free)
                    rhs[sd.bpos] = dmu[s]
                    state.u[s] = results[s].u.copy()
                    state.u[s][sd.free_dofs] += facts[s].solve(rhs)
                state.mu[s] = mu_hat[s] + dmu[s]
                state.lam[s] = state.mu[s] - imps[s].apply(state.u[s][sd.boundary_dofs])
            mode = "mixed" if not first_sweep else "propagation"
        else:
            # Coupled Newton step from the pre-sweep state.
            tg = _build_tangents(problem, k_fulls)
            imps = build_impedances(problem, tg, strategy)
            rhs_a = np.zeros(topo.n_A)
            lus, r_is = [], []
            for s, sd in enumerate(subs):
                r_free = (f_ints[s] + factor * sd.f_ext_unit)[sd.free_dofs]
                kf = tg.k_ff[s]
                kii = kf[sd.ipos][:, sd.ipos].tocsc()
                lu = spla.splu(kii)
                lus.append(lu)
                r_i = r_free[sd.ipos]
                r_is.append(r_i)
                cond = r_free[sd.bpos] - kf[sd.bpos][:, sd.ipos] @ lu.solve(r_i)
                np.add.at(rhs_a, topo.a_maps[s], cond)
            dv, rep = bdd_solve(
                tg.s_apply, tg.m_apply, tg.coarse, rhs_a, thresholds.eps_krylov,
                augmentation=store,
            )
            extract_ritz(rep)
            for s, sd in enumerate(subs):
                du_b = dv[topo.a_maps[s]]
                kf = tg.k_ff[s]
                du_i = lus[s].solve(r_is[s] - kf[sd.ipos][:, sd.bpos] @ du_b)
                state.u[s][sd.free_dofs[sd.bpos]] += du_b
                state.u[s][sd.free_dofs[sd.ipos]] += du_i
            mode = "coupled"
        n_global += 1
        f_ints, k_fulls, trials = _assemble_all(problem, state, factor)
        if mode == "coupled":
            # Balanced reaction estimate at the new state; mu rebased on it.
            lam_raw = [
                -(f_ints[s] + factor * sd.f_ext_unit)[sd.boundary_dofs]
                for s, sd in enumerate(subs)
            ]
            lam_sum = topo.assemble(lam_raw)
            weights = topo.equal_weights()
            for s, sd in enumerate(subs):
                state.lam[s] = lam_raw[s] - weights[s] * lam_sum[topo.a_maps[s]]
                state.mu[s] = state.lam[s] + imps[s].apply(state.u[s][sd.boundary_dofs])
        r_norm, jump_norm = global_residual(problem, state, imps, f_ints, factor)
        history.append((r_norm, jump_norm))
        log.info(
            "    global iter %d [%s]: residual %.3e jump %.3e (krylov %d, ref %.3e)",
            n_global, mode, r_norm, jump_norm, rep.iterations, ref,
        )
        if r_norm + jump_norm <= thresholds.eps_global * ref:
            break
    return n_global, n_krylov, n_local, n_local_max, history, trials


def run_mixed(
    problem: Problem,
    load_program: LoadProgram,
    thresholds: Thresholds | None = None,
    strategy: str = "two-scale",
    srks: bool = False,
    srks_theta: float = 1e-3,
    srks_cap: int = 150,
    raise_errors: bool = True,
) -> SolveReport:
    """Mixed nonlinear substructuring over the whole load program.

    With ``raise_errors=False`` a divergence ends the run early and is
    recorded on the report instead of propagating."""
    thresholds = thresholds or Thresholds()
    state = GlobalState.initial(problem)
    store = RitzStore(theta=srks_theta, cap=srks_cap) if srks else None
    report = SolveReport(method=strategy, srks=srks)
    cum_k = cum_g = 0
    for factor in load_program.factors:
        log.info("mixed[%s] increment %.6g", strategy, factor)
        try:
            n_g, n_k, n_l, n_lmax, history, trials = mixed_increment(
                problem, state, factor, strategy, thresholds, store
            )
        except MixddError as exc:
            if raise_errors:
                raise
            report.error = str(exc)
            log.warning("mixed[%s] diverged at increment %.6g: %s", strategy, factor, exc)
            break
        state.states = [t.copy() for t in trials]
        cum_k += n_k
        cum_g += n_g
        report.increments.append(
            IncrementRecord(
                load=factor, global_iterations=n_g, krylov_iterations=n_k,
                local_iterations=n_l, local_iterations_max=n_lmax,
                cum_krylov=cum_k, cum_global=cum_g,
                residual_history=history,
                displacement=state.global_displacement(problem),
            )
        )
    return report


def run_nks(
    problem: Problem,
    load_program: LoadProgram,
    thresholds: Thresholds | None = None,
    srks: bool = False,
    srks_theta: float = 1e-3,
    srks_cap: int = 150,
    raise_errors: bool = True,
) -> SolveReport:
    """Classical baseline: global Newton, tangent systems condensed on the
    interface and solved by the same balancing solver, linear local work.

    Imposed-displacement changes enter through the first tangent solve of
    each increment, exactly as in the mixed driver."""
    thresholds = thresholds or Thresholds()
    subs, topo = problem.subs, problem.topo
    state = GlobalState.initial(problem)
    store = RitzStore(theta=srks_theta, cap=srks_cap) if srks else None
    report = SolveReport(method="nks", srks=srks)
    cum_k = cum_g = 0
    for factor in load_program.factors:
        log.info("nks increment %.6g", factor)
        n_g = n_k = 0
        ref = None
        history = []
        trials = None
        diverged = None
        while True:
            f_ints, k_fulls, trials = _assemble_all(problem, state, factor)
            deltas_fix = []
            pending = False
            rhs_free = []
            for s, sd in enumerate(subs):
                fix, vals = sd.dirichlet_pattern()
                delta = factor * vals - state.u[s][fix]
                deltas_fix.append((fix, delta))
                r = (f_ints[s] + factor * sd.f_ext_unit)[sd.free_dofs]
                if len(fix):
                    if float(np.abs(delta).max(initial=0.0)) > 0.0:
                        pending = True
                    r = r - k_fulls[s][sd.free_dofs][:, fix] @ delta
                rhs_free.append(r)
            r_glob = np.zeros(problem.mesh.n_dofs)
            for s, sd in enumerate(subs):
                np.add.at(r_glob, sd.global_dofs[sd.free_dofs], rhs_free[s])
            r_norm = float(np.linalg.norm(r_glob[sd_free_mask(problem)]))
            history.append((r_norm, 0.0))
            ref = r_norm if ref is None else ref
            if not pending and (ref == 0.0 or r_norm <= thresholds.eps_global * ref):
                break
            if n_g >= thresholds.max_global_iters:
                diverged = GlobalSolveError(
                    f"NKS Newton did not converge in {thresholds.max_global_iters} iterations"
                )
                break
            tg = _build_tangents(problem, k_fulls)
            rhs_a = np.zeros(topo.n_A)
            lus = []
            r_is = []
            for s, sd in enumerate(subs):
                kf = tg.k_ff[s]
                kii = kf[sd.ipos][:, sd.ipos].tocsc()
                lu = spla.splu(kii)
                lus.append(lu)
                r_i = rhs_free[s][sd.ipos]
                r_is.append(r_i)
                cond = rhs_free[s][sd.bpos] - kf[sd.bpos][:, sd.ipos] @ lu.solve(r_i)
                np.add.at(rhs_a, topo.a_maps[s], cond)
            dv, rep = bdd_solve(
                tg.s_apply, tg.m_apply, tg.coarse, rhs_a, thresholds.eps_krylov,
                augmentation=store,
            )
            n_k += rep.iterations
            if store is not None:
                vals, vecs = srks_extract(rep, store.theta)
                if vecs is not None:
                    store.add(vals, vecs, tg.s_apply)
            for s, sd in enumerate(subs):
                du_b = dv[topo.a_maps[s]]
                kf = tg.k_ff[s]
                du_i = lus[s].solve(r_is[s] - kf[sd.ipos][:, sd.bpos] @ du_b)
                state.u[s][sd.free_dofs[sd.bpos]] += du_b
                state.u[s][sd.free_dofs[sd.ipos]] += du_i
                fix, delta = deltas_fix[s]
                state.u[s][fix] += delta
            n_g += 1
            log.info("    nks iter %d: residual %.3e (krylov %d)", n_g, r_norm, rep.iterations)
        if diverged is not None:
            if raise_errors:
                raise diverged
            report.error = str(diverged)
            log.warning("nks diverged at increment %.6g: %s", factor, diverged)
            break
        state.states = [t.copy() for t in trials]
        cum_k += n_k
        cum_g += n_g
        report.increments.append(
            IncrementRecord(
                load=factor, global_iterations=n_g, krylov_iterations=n_k,
                local_iterations=0, local_iterations_max=0,
                cum_krylov=cum_k, cum_global=cum_g,
                residual_history=history,
                displacement=state.global_displacement(problem),
            )
        )
    return report


def sd_free_mask(problem: Problem) -> np.ndarray:
    mask = np.ones(problem.mesh.n_dofs, dtype=bool)
    for d in problem.mesh.dirichlet:
        mask[d] = False
    return mask


def monolithic_newton(
    mesh: Mesh,
    materials,
    load_program: LoadProgram,
    tol: float = 1e-10,
    max_iters: int = 40,
):
    """Sequential Newton on the unpartitioned problem (reference oracle)."""
    if not isinstance(materials, (list, tuple)):
        materials = [materials]
    states = GaussPointState.virgin(mesh.n_elements)
    u = np.zeros(mesh.n_dofs)
    fix, vals = mesh.dirichlet_arrays()
    zero_inc = {int(d): 0.0 for d in fix}
    snapshots = []
    for factor in load_program.factors:
        ref = None
        trial = states
        for it in range(max_iters + 1):
            delta = factor * vals - u[fix]
            pending = float(np.abs(delta).max(initial=0.0)) > 0.0
            f_int, k_t, trial = assemble(mesh, materials, states, u)
            rhs = f_int + mesh.external_force(factor)
            if pending:
                constraints = dict(zip((int(d) for d in fix), delta))
            else:
                constraints = zero_inc
            k_c, rhs_c = apply_dirichlet(k_t, rhs, constraints)
            r_norm = float(np.linalg.norm(rhs_c))
            ref = r_norm if ref is None else ref
            if not pending and (ref == 0.0 or r_norm <= tol * ref):
                break
            if it == max_iters:
                raise GlobalSolveError("monolithic Newton did not converge")
            u = u + spla.spsolve(k_c.tocsc(), rhs_c)
        states = trial.copy()
        snapshots.append(u.copy())
    return snapshots


def feti2lm_linear_study(
    problem: Problem,
    strategy: str,
    eps_krylov: float = 1e-8,
    factor: float = 1.0,
    bdd_init: bool = False,
):
    """Linear interface solve with the mixed-unknown Krylov solver.

    Elastic-materials study: assembles the tangents once, builds the chosen
    impedance and solves the interface problem of the full linear system.
    ``bdd_init`` seeds the Krylov iteration with the fields of a single
    balancing-solver iteration (untuned convenience).
    Returns ``(mu, u_b, KrylovReport)``.
    """
    from .linsolve import feti2lm_solve
    from .schur import robin_factorize as _rf

    subs, topo = problem.subs, problem.topo
    f_ints, k_fulls = [], []
    local_rhs = []
    for sd in subs:
        u = sd.imposed_displacement(factor)
        states = GaussPointState.virgin(sd.mesh.n_elements)
        f_int, k, _ = assemble(sd.mesh, problem.materials, states, u)
        f_ints.append(f_int)
        k_fulls.append(k)
        local_rhs.append((f_int + factor * sd.f_ext_unit)[sd.free_dofs])
    tg = _build_tangents(problem, k_fulls)
    imps = build_impedances(problem, tg, strategy)
    facts = [_rf(tg.k_ff[s], subs[s].bpos, imps[s]) for s in range(len(subs))]
    x0 = None
    if bdd_init:
        rhs_a = np.zeros(topo.n_A)
        conds = []
        for s, sd in enumerate(subs):
            kf = tg.k_ff[s]
            r_i = local_rhs[s][sd.ipos]
            lu = spla.splu(kf[sd.ipos][:, sd.ipos].tocsc())
            cond = local_rhs[s][sd.bpos] - kf[sd.bpos][:, sd.ipos] @ lu.solve(r_i)
            conds.append(cond)
            np.add.at(rhs_a, topo.a_maps[s], cond)
        try:
            dv, _ = bdd_solve(tg.s_apply, tg.m_apply, tg.coarse, rhs_a,
                              tol=0.5, max_iters=1)
        except Exception:
            dv = np.zeros(topo.n_A)
        x0 = np.concatenate([
            (tg.schurs[s] + imps[s].dense()) @ dv[topo.a_maps[s]] - conds[s]
            for s in range(len(subs))
        ])
    mu, u_b, rep = feti2lm_solve(
        facts, [sd.bpos for sd in subs], imps, topo, local_rhs,
        tol=eps_krylov, x0=x0,
    )
    return mu, u_b, rep
