"""Driver tests: elastic degeneration, cross-method equivalence, reporting."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import bending_mesh
from mixdd.driver import (
    GlobalState,
    LoadProgram,
    Problem,
    Thresholds,
    build_impedances,
    global_residual,
    mixed_increment,
    monolithic_newton,
    run_mixed,
    run_nks,
    _assemble_all,
    _build_tangents,
)
from mixdd.errors import GlobalSolveError
from mixdd.fem import MaterialModel


def elastic_problem(n_slabs=3, nx=12, ny=2, lx=6.0, tip=0.05):
    mesh = bending_mesh(nx, ny, lx=lx, ly=1.0, tip=tip)
    mat = MaterialModel(young=210e6, poisson=0.3)
    return Problem.build(mesh, mat, ("slab", n_slabs))


def plastic_problem(n_slabs=3, nx=12, ny=4, lx=4.0, tip=0.03):
    mesh = bending_mesh(nx, ny, lx=lx, ly=1.0, tip=tip)
    mat = MaterialModel(young=210e6, poisson=0.3, yield_stress=420e3, hardening=1e6)
    return Problem.build(mesh, mat, ("slab", n_slabs))


# Every strategy converges on this program; coarser steps overwhelm the plain
# (no line search) local Newton for the stiff short-range impedances.
PLASTIC_PROGRAM = LoadProgram(list(np.linspace(0.125, 1.0, 8)))


class TestElasticDegeneration:
    @pytest.mark.parametrize("strategy", ["lumped", "superlumped", "two-scale"])
    def test_single_global_iteration_and_single_local_iterations(self, strategy):
        problem = elastic_problem()
        report = run_mixed(problem, LoadProgram([1.0]), strategy=strategy)
        rec = report.increments[0]
        assert rec.global_iterations == 1
        # Affine local problems: no local solve needs more than one inner
        # Newton iteration (unloaded subdomains may need none).
        assert rec.local_iterations_max == 1
        assert rec.local_iterations >= 1
        assert rec.krylov_iterations > 0

    def test_nks_elastic_matches_mixed(self):
        problem = elastic_problem()
        rep_mixed = run_mixed(problem, LoadProgram([1.0]), strategy="superlumped")
        problem2 = elastic_problem()
        rep_nks = run_nks(problem2, LoadProgram([1.0]))
        assert rep_nks.increments[0].global_iterations == 1
        assert rep_nks.cumulated_krylov == rep_mixed.cumulated_krylov
        assert_allclose(
            rep_mixed.increments[0].displacement,
            rep_nks.increments[0].displacement,
            rtol=1e-8,
            atol=1e-10 * np.abs(rep_nks.increments[0].displacement).max(),
        )


class TestMixedIncrementState:
    def test_mu_consistency_and_transmission_at_convergence(self):
        problem = plastic_problem()
        state = GlobalState.initial(problem)
        thresholds = Thresholds()
        n_g0, _, _, _, _, trials = mixed_increment(problem, state, 0.5, "two-scale", thresholds)
        state.states = [t.copy() for t in trials]
        n_g, n_k, n_l, n_lmax, history, trials = mixed_increment(
            problem, state, 1.0, "two-scale", thresholds
        )
        assert n_g >= 1
        # mu = lam + Q u_b exactly (bookkeeping identity).
        f_ints, k_fulls, _ = _assemble_all(problem, state, 1.0)
        tg = _build_tangents(problem, k_fulls)
        # Continuity and balance at convergence, relative to the reference.
        ref = history[0][0] + history[0][1]
        jump = problem.topo.jump_norm(state.traces(problem))
        imbalance = np.linalg.norm(problem.topo.assemble(state.lam))
        assert jump <= 1e-6 * ref
        assert imbalance <= 1e-5 * ref
        # Residual history decreased to tolerance.
        assert history[-1][0] + history[-1][1] <= 1e-6 * ref

    def test_global_non_convergence_raises(self):
        problem = plastic_problem()
        state = GlobalState.initial(problem)
        thresholds = Thresholds(eps_global=1e-12, max_global_iters=1)
        with pytest.raises(GlobalSolveError):
            mixed_increment(problem, state, 1.0, "two-scale", thresholds)


class TestGlobalResidual:
    def setup_consistent(self, problem, factor=1.0):
        state = GlobalState.initial(problem)
        for s, sd in enumerate(problem.subs):
            fix, vals = sd.dirichlet_pattern()
            state.u[s][fix] = factor * vals
        f_ints, k_fulls, _ = _assemble_all(problem, state, factor)
        tg = _build_tangents(problem, k_fulls)
        imps = build_impedances(problem, tg, "superlumped")
        state.mu = [
            state.lam[s] + imps[s].apply(state.u[s][sd.boundary_dofs])
            for s, sd in enumerate(problem.subs)
        ]
        return state, imps, f_ints

    def test_monolithic_solution_has_tiny_residual(self):
        problem = elastic_problem()
        u_mono = monolithic_newton(problem.mesh, problem.materials, LoadProgram([1.0]))[0]
        state, imps, _ = self.setup_consistent(problem)
        for s, sd in enumerate(problem.subs):
            state.u[s] = u_mono[sd.global_dofs]
        # Reactions from the local equilibria.
        f_ints, _, _ = _assemble_all(problem, state, 1.0)
        for s, sd in enumerate(problem.subs):
            state.lam[s] = -(f_ints[s] + sd.f_ext_unit)[sd.boundary_dofs]
            state.mu[s] = state.lam[s] + imps[s].apply(state.u[s][sd.boundary_dofs])
        r_norm, jump_norm = global_residual(problem, state, imps, f_ints, 1.0)
        scale = np.linalg.norm(np.concatenate(state.lam))
        assert r_norm <= 1e-9 * scale
        assert jump_norm <= 1e-12 * np.abs(u_mono).max()

    def test_continuous_u_unbalanced_lambda(self, rng):
        problem = elastic_problem()
        state, imps, f_ints = self.setup_consistent(problem)
        state.lam = [rng.standard_normal(sd.n_boundary) for sd in problem.subs]
        state.mu = [
            state.lam[s] + imps[s].apply(state.u[s][sd.boundary_dofs])
            for s, sd in enumerate(problem.subs)
        ]
        r_norm, jump_norm = global_residual(problem, state, f_ints=f_ints,
                                            impedances=imps, factor=1.0)
        assert jump_norm == 0.0
        assert r_norm > 0.0

    def test_matches_direct_formula_evaluation(self, rng):
        problem = elastic_problem()
        state, imps, _ = self.setup_consistent(problem)
        for s, sd in enumerate(problem.subs):
            free = sd.free_dofs
            state.u[s][free] += 1e-3 * rng.standard_normal(len(free))
            state.mu[s] = rng.standard_normal(sd.n_boundary)
        f_ints, _, _ = _assemble_all(problem, state, 1.0)
        r_norm, jump_norm = global_residual(problem, state, imps, f_ints, 1.0)
        # Direct evaluation of the stacked formula.
        parts = []
        for s, sd in enumerate(problem.subs):
            r = (f_ints[s] + sd.f_ext_unit)[sd.free_dofs]
            contrib = state.mu[s] - imps[s].dense() @ state.u[s][sd.boundary_dofs]
            for k, pos in enumerate(sd.bpos):
                r[pos] += contrib[k]
            parts.append(r)
        assert_allclose(r_norm, np.linalg.norm(np.concatenate(parts)), rtol=1e-12)


class TestCrossMethod:
    def test_all_methods_match_monolithic_on_plastic_increments(self):
        program = PLASTIC_PROGRAM
        tight = Thresholds(eps_global=1e-8, eps_local=1e-10,
                           eps_local_first=1e-10, eps_krylov=1e-10)
        u_ref = monolithic_newton(
            plastic_problem().mesh, plastic_problem().materials, program, tol=1e-12
        )
        reports = {}
        for strategy in ["lumped", "superlumped", "two-scale"]:
            reports[strategy] = run_mixed(
                plastic_problem(), program, tight, strategy=strategy
            )
        reports["nks"] = run_nks(plastic_problem(), program, tight)
        scale = np.abs(u_ref[-1]).max()
        for name, rep in reports.items():
            for i, rec in enumerate(rep.increments):
                err = np.abs(rec.displacement - u_ref[i]).max()
                assert err <= 1e-6 * scale, (name, i, err / scale)

    def test_plasticity_actually_happens(self):
        problem = plastic_problem()
        report = run_mixed(problem, LoadProgram([0.5, 1.0]), strategy="two-scale")
        assert report.cumulated_global > 2


class TestReports:
    def test_counters_monotone_and_rows_stable(self):
        problem = plastic_problem()
        program = LoadProgram([0.5, 1.0])
        rep = run_mixed(problem, program, strategy="two-scale")
        cums = [r.cum_krylov for r in rep.increments]
        assert all(b >= a for a, b in zip(cums, cums[1:]))
        rows = list(rep.rows())
        assert rows[0]["strategy"] == "two-scale"
        assert set(rows[0]) == {
            "increment", "strategy", "cumulated_krylov", "cumulated_global_newton"
        }

    def test_determinism(self):
        program = LoadProgram([0.5, 1.0])
        r1 = run_mixed(plastic_problem(), program, strategy="two-scale")
        r2 = run_mixed(plastic_problem(), program, strategy="two-scale")
        assert [r.cum_krylov for r in r1.increments] == [r.cum_krylov for r in r2.increments]
        for a, b in zip(r1.increments, r2.increments):
            assert_allclose(a.displacement, b.displacement, rtol=0, atol=0)
