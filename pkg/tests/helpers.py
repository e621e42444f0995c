"""Tangent-context builder shared by the operator-level tests."""

from dataclasses import dataclass

import numpy as np

from mixdd.fem import GaussPointState, assemble
from mixdd.linsolve import build_coarse
from mixdd.partition import build_scaled, partition_mesh, rigid_body_modes
from mixdd.schur import primal_schur


@dataclass
class TangentContext:
    mesh: object
    materials: object
    subs: list
    topo: object
    k_full: list
    k_ff: list
    kbb: list
    deltas: list
    schurs: list
    scaled: object
    rbm_traces: list
    coarse: object

    def s_dense(self):
        s_a = np.zeros((self.topo.n_A, self.topo.n_A))
        for s, schur in enumerate(self.schurs):
            self.topo.scatter_matrix(schur, s, s_a)
        return s_a


def tangent_context(mesh, strategy, materials, u_global=None):
    """Assemble every per-subdomain tangent quantity at a given global state."""
    subs, topo = partition_mesh(mesh, strategy)
    u_global = np.zeros(mesh.n_dofs) if u_global is None else u_global
    k_full, k_ff, kbb, deltas, schurs, traces = [], [], [], [], [], []
    for sd in subs:
        states = GaussPointState.virgin(sd.mesh.n_elements)
        _, k, _ = assemble(sd.mesh, materials, states, u_global[sd.global_dofs])
        k_full.append(k)
        kf = k[sd.free_dofs][:, sd.free_dofs]
        k_ff.append(kf)
        kb = kf[sd.bpos][:, sd.bpos].toarray()
        kbb.append(kb)
        deltas.append(kb.diagonal().copy())
        fix, _ = sd.dirichlet_pattern()
        schurs.append(primal_schur(k, sd.boundary_dofs, fix))
        traces.append(rigid_body_modes(sd)[1])
    scaled = build_scaled(topo, deltas)
    coarse = build_coarse(topo, scaled, traces, schurs)
    return TangentContext(
        mesh=mesh, materials=materials, subs=subs, topo=topo, k_full=k_full,
        k_ff=k_ff, kbb=kbb, deltas=deltas, schurs=schurs, scaled=scaled,
        rbm_traces=traces, coarse=coarse,
    )
