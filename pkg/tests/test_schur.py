"""Condensed-operator tests: Schur complements, Robin solves, condensed rhs."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.testing import assert_allclose

from conftest import bending_mesh
from mixdd.fem import GaussPointState, MaterialModel, apply_dirichlet, assemble
from mixdd.impedance import Impedance
from mixdd.partition import partition_mesh, rigid_body_modes
from mixdd.schur import (
    condensed_rhs,
    dirichlet_to_neumann,
    primal_schur,
    robin_factorize,
    robin_nonlinear_solve,
    robin_tangent_trace,
)


def two_subdomains(nx=8, ny=2, tip=0.05, lx=4.0):
    mesh = bending_mesh(nx, ny, lx=lx, ly=1.0, tip=tip)
    return mesh, *partition_mesh(mesh, ("slab", 2))


def local_stiffness(sd, material):
    states = GaussPointState.virgin(sd.mesh.n_elements)
    _, k, _ = assemble(sd.mesh, material, states, np.zeros(sd.mesh.n_dofs))
    return k


class TestPrimalSchur:
    def test_no_interior_returns_kbb(self, rng):
        k = sp.csr_matrix(np.diag(rng.uniform(1.0, 2.0, 4)))
        s = primal_schur(k, np.arange(4))
        assert_allclose(s, k.toarray())

    def test_spring_chain_hand_elimination(self):
        k = 2.0
        chain = sp.csr_matrix(np.array([[2 * k, -k, 0.0], [-k, 2 * k, -k], [0.0, -k, 2 * k]]))
        s = primal_schur(chain, np.array([0, 2]))
        assert_allclose(s, np.array([[1.5 * k, -0.5 * k], [-0.5 * k, 1.5 * k]]))

    def test_random_spd_matches_dense_elimination(self, rng):
        n, nb = 24, 7
        a = rng.standard_normal((n, n))
        kd = a @ a.T + n * np.eye(n)
        b = rng.permutation(n)[:nb]
        i = np.setdiff1d(np.arange(n), b)
        s = primal_schur(sp.csr_matrix(kd), b)
        expected = kd[np.ix_(b, b)] - kd[np.ix_(b, i)] @ np.linalg.solve(
            kd[np.ix_(i, i)], kd[np.ix_(i, b)]
        )
        assert_allclose(s, expected, rtol=1e-10)

    def test_dirichlet_eliminated_first(self, soft_elastic):
        mesh, subs, topo = two_subdomains()
        sd = subs[0]
        k = local_stiffness(sd, soft_elastic)
        fix, _ = sd.dirichlet_pattern()
        s = primal_schur(k, sd.boundary_dofs, fix)
        kd = k.toarray()
        free_i = sd.free_dofs[sd.ipos]
        expected = kd[np.ix_(sd.boundary_dofs, sd.boundary_dofs)] - kd[
            np.ix_(sd.boundary_dofs, free_i)
        ] @ np.linalg.solve(kd[np.ix_(free_i, free_i)], kd[np.ix_(free_i, sd.boundary_dofs)])
        assert_allclose(s, expected, rtol=1e-10, atol=1e-8)


class TestDirichletToNeumann:
    def test_linear_equals_schur_action(self, soft_elastic, rng):
        mesh = bending_mesh(9, 2, lx=4.5, ly=1.0, tip=0.05)
        subs, topo = partition_mesh(mesh, ("slab", 3))
        sd = subs[1]  # interior slab: no local Dirichlet, f_ext = 0
        states = GaussPointState.virgin(sd.mesh.n_elements)
        u_b = rng.standard_normal(sd.n_boundary)
        lam, _, _ = dirichlet_to_neumann(sd, soft_elastic, states, u_b)
        k = local_stiffness(sd, soft_elastic)
        s = primal_schur(k, sd.boundary_dofs)
        assert_allclose(lam, s @ u_b, rtol=1e-10, atol=1e-10 * np.abs(lam).max())

    def test_rigid_trace_gives_zero_reaction(self, soft_elastic):
        mesh = bending_mesh(9, 2, lx=4.5, ly=1.0, tip=0.05)
        subs, topo = partition_mesh(mesh, ("slab", 3))
        sd = subs[1]
        modes, traces = rigid_body_modes(sd)
        assert traces.shape[1] == 3
        states = GaussPointState.virgin(sd.mesh.n_elements)
        lam, _, _ = dirichlet_to_neumann(sd, soft_elastic, states, traces[:, 0])
        scale = np.abs(local_stiffness(sd, soft_elastic).toarray()).max()
        assert np.abs(lam).max() <= 1e-9 * scale

    def test_plastic_matches_monolithic_constrained_solve(self, steel):
        mesh, subs, topo = two_subdomains(tip=0.0, lx=2.0)
        sd = subs[0]
        states = GaussPointState.virgin(sd.mesh.n_elements)
        # Bending-like imposed trace, large enough to drive plasticity.
        xb = sd.mesh.nodes[sd.boundary_dofs // 2]
        u_b = np.where(sd.boundary_dofs % 2 == 1, 6e-3, 2e-3 * (xb[:, 1] - 0.5))
        lam, u_sol, _ = dirichlet_to_neumann(sd, steel, states, u_b, load_factor=1.0, tol=1e-8)
        # Monolithic oracle on the same local problem: treat the trace as
        # extra Dirichlet data and solve the full constrained Newton system.
        imposed = dict(zip(sd.boundary_dofs.tolist(), u_b))
        fix, vals = sd.dirichlet_pattern()
        imposed.update(zip(fix.tolist(), vals))
        u = np.zeros(sd.mesh.n_dofs)
        for d, v in imposed.items():
            u[d] = v
        zero_inc = {d: 0.0 for d in imposed}
        for _ in range(30):
            f_int, k_t, _ = assemble(sd.mesh, steel, states, u)
            k_c, rhs_c = apply_dirichlet(k_t, f_int, zero_inc)
            du = spla.spsolve(k_c.tocsc(), rhs_c)
            u += du
            if np.linalg.norm(du) <= 1e-13 * max(np.linalg.norm(u), 1.0):
                break
        f_int, _, trial = assemble(sd.mesh, steel, states, u)
        assert trial.accumulated_plastic.max() > 0.0
        lam_oracle = -f_int[sd.boundary_dofs]
        assert_allclose(u_sol, u, rtol=1e-8, atol=1e-10 * np.abs(u).max())
        assert_allclose(lam, lam_oracle, rtol=1e-8, atol=1e-8 * np.abs(lam_oracle).max())


def make_impedance(rng, nb, rank=0, scale=1.0):
    a = rng.standard_normal((nb, nb + 2))
    base = scale * (a @ a.T + nb * np.eye(nb))
    if rank == 0:
        return Impedance(sparse=base)
    w = rng.standard_normal((nb, rank))
    m = rng.standard_normal((rank, rank + 1))
    m = m @ m.T + rank * np.eye(rank)
    # Keep Q = base - w m^-1 w^T definite: shrink w.
    w *= 0.1 * np.sqrt(np.abs(base).max())
    return Impedance(sparse=base, lowrank_w=w, lowrank_m=m)


class TestRobinFactorize:
    def test_pure_sparse_equals_direct_solve(self, soft_elastic, rng):
        mesh, subs, topo = two_subdomains()
        sd = subs[0]
        k_ff = local_stiffness(sd, soft_elastic)[sd.free_dofs][:, sd.free_dofs]
        imp = make_impedance(rng, sd.n_boundary, rank=0, scale=soft_elastic.young)
        fact = robin_factorize(k_ff, sd.bpos, imp)
        rhs = rng.standard_normal(len(sd.free_dofs))
        kd = k_ff.toarray()
        kd[np.ix_(sd.bpos, sd.bpos)] += imp.sparse
        assert_allclose(fact.solve(rhs), np.linalg.solve(kd, rhs), rtol=1e-12, atol=1e-14)

    def test_rank_one_matches_dense_inverse(self, rng):
        n, nb = 10, 4
        a = rng.standard_normal((n, n))
        k = sp.csr_matrix(a @ a.T + n * np.eye(n))
        bpos = np.arange(nb)
        w = 0.3 * rng.standard_normal((nb, 1))
        m = np.array([[2.5]])
        sparse = 4.0 * np.eye(nb)
        imp = Impedance(sparse=sparse, lowrank_w=w, lowrank_m=m)
        fact = robin_factorize(k, bpos, imp)
        kd = k.toarray()
        kd[:nb, :nb] += sparse - w @ w.T / m[0, 0]
        rhs = rng.standard_normal(n)
        assert_allclose(fact.solve(rhs), np.linalg.solve(kd, rhs), rtol=1e-10)

    def test_tangent_trace_identity(self, soft_elastic, rng):
        """t (K + t^T Q t)^-1 t^T equals (S_t + Q)^-1."""
        mesh, subs, topo = two_subdomains()
        for sd in subs:
            k = local_stiffness(sd, soft_elastic)
            fix, _ = sd.dirichlet_pattern()
            s_t = primal_schur(k, sd.boundary_dofs, fix)
            k_ff = k[sd.free_dofs][:, sd.free_dofs]
            imp = make_impedance(rng, sd.n_boundary, rank=3, scale=soft_elastic.young)
            fact = robin_factorize(k_ff, sd.bpos, imp)
            x = rng.standard_normal(sd.n_boundary)
            lhs = robin_tangent_trace(fact, sd.bpos, x)
            rhs = np.linalg.solve(s_t + imp.dense(), x)
            assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(rhs).max())

    def test_sherman_morrison_paths_up_to_200_dofs(self, rng):
        for n, nb, rank in [(40, 12, 2), (120, 30, 5), (200, 50, 8)]:
            a = rng.standard_normal((n, n))
            k = sp.csr_matrix(a @ a.T + n * np.eye(n))
            bpos = rng.permutation(n)[:nb]
            imp = make_impedance(rng, nb, rank=rank, scale=2.0)
            fact = robin_factorize(k, bpos, imp)
            kd = k.toarray()
            kd[np.ix_(bpos, bpos)] += imp.dense()
            rhs = rng.standard_normal(n)
            assert_allclose(fact.solve(rhs), np.linalg.solve(kd, rhs), rtol=1e-10, atol=1e-12)

    def test_inadmissible_impedance_rejected(self, rng):
        n, nb = 12, 5
        a = rng.standard_normal((n, n))
        k = sp.csr_matrix(a @ a.T + n * np.eye(n))
        w = 100.0 * np.ones((nb, 1))
        imp = Impedance(sparse=0.01 * np.eye(nb), lowrank_w=w, lowrank_m=np.array([[1.0]]))
        from mixdd.errors import ImpedanceError

        with pytest.raises(ImpedanceError):
            robin_factorize(k, np.arange(nb), imp)


class TestRobinNonlinearSolve:
    def test_linear_converges_in_one_iteration(self, soft_elastic, rng):
        mesh, subs, topo = two_subdomains()
        sd = subs[0]
        states = GaussPointState.virgin(sd.mesh.n_elements)
        imp = make_impedance(rng, sd.n_boundary, scale=soft_elastic.young)
        mu = soft_elastic.young * 1e-4 * rng.standard_normal(sd.n_boundary)
        res = robin_nonlinear_solve(
            sd, soft_elastic, states, np.zeros(sd.mesh.n_dofs), mu, imp,
            load_factor=1.0, tol=1e-9 * soft_elastic.young,
        )
        assert res.iterations == 1

    def test_zero_data_is_immediate(self, soft_elastic, rng):
        mesh, subs, topo = two_subdomains(tip=0.0)
        sd = subs[1]
        sd.mesh.dirichlet.clear()
        states = GaussPointState.virgin(sd.mesh.n_elements)
        imp = make_impedance(rng, sd.n_boundary, scale=soft_elastic.young)
        res = robin_nonlinear_solve(
            sd, soft_elastic, states, np.zeros(sd.mesh.n_dofs),
            np.zeros(sd.n_boundary), imp, load_factor=0.0, tol=1e-12,
        )
        assert res.iterations == 0
        assert_allclose(res.u, 0.0)

    def test_plastic_satisfies_robin_identity(self, steel, rng):
        mesh, subs, topo = two_subdomains(tip=2e-2, lx=2.0)
        sd = subs[1]
        states = GaussPointState.virgin(sd.mesh.n_elements)
        imp = make_impedance(rng, sd.n_boundary, rank=2, scale=1e-2 * steel.young)
        # Imposed bending drives the material plastic; a mild generalized
        # force keeps the mixed term exercised.
        mu = steel.young * 1e-4 * rng.standard_normal(sd.n_boundary)
        tol = 1e-10 * float(np.linalg.norm(mu))
        res = robin_nonlinear_solve(
            sd, steel, states, np.zeros(sd.mesh.n_dofs), mu, imp,
            load_factor=1.0, tol=tol, max_iters=40,
        )
        assert res.residuals[-1] <= tol
        assert res.trial_states.accumulated_plastic.max() > 0.0
        assert_allclose(res.lam_b + imp.apply(res.u_b), mu, rtol=0, atol=1e-12 * np.abs(mu).max())


class TestCondensedRhs:
    def test_two_subdomain_dense_oracle(self, soft_elastic, rng):
        mesh, subs, topo = two_subdomains()
        imps, schurs, u_bs, mus = [], [], [], []
        for sd in subs:
            k = local_stiffness(sd, soft_elastic)
            fix, _ = sd.dirichlet_pattern()
            schurs.append(primal_schur(k, sd.boundary_dofs, fix))
            imps.append(make_impedance(rng, sd.n_boundary, scale=soft_elastic.young))
            u_bs.append(rng.standard_normal(sd.n_boundary))
            mus.append(soft_elastic.young * rng.standard_normal(sd.n_boundary))
        b_m, b_p = condensed_rhs(topo, imps, schurs, mus, u_bs)
        # Dense oracle.
        qa = np.zeros((topo.n_A, topo.n_A))
        for s, imp in enumerate(imps):
            qa[np.ix_(topo.a_maps[s], topo.a_maps[s])] += imp.dense()
        v = np.linalg.solve(qa, topo.assemble(mus))
        for s in range(2):
            bm_expected = v[topo.a_maps[s]] - u_bs[s]
            assert_allclose(b_m[s], bm_expected, rtol=1e-10, atol=1e-12)
            bp_expected = (schurs[s] + imps[s].dense()) @ bm_expected
            assert_allclose(b_p[s], bp_expected, rtol=1e-9, atol=1e-9 * np.abs(bp_expected).max())

    def test_consistent_state_gives_zero_bm(self, soft_elastic, rng):
        mesh, subs, topo = two_subdomains()
        imps, schurs = [], []
        for sd in subs:
            k = local_stiffness(sd, soft_elastic)
            fix, _ = sd.dirichlet_pattern()
            schurs.append(primal_schur(k, sd.boundary_dofs, fix))
            imps.append(make_impedance(rng, sd.n_boundary, scale=soft_elastic.young))
        # Continuous trace + balanced reactions: mu = lam + Q u with A lam = 0.
        v = rng.standard_normal(topo.n_A)
        u_bs = topo.restrict_all(v)
        lam0 = rng.standard_normal(subs[0].n_boundary)
        lams = [lam0, -lam0]  # balanced on a two-subdomain matched interface
        mus = [lam + imp.apply(ub) for lam, imp, ub in zip(lams, imps, u_bs)]
        b_m, _ = condensed_rhs(topo, imps, schurs, mus, u_bs)
        for bm in b_m:
            assert np.abs(bm).max() <= 1e-10 * max(np.abs(v).max(), 1.0)
