"""Interface impedance strategies.

Each strategy builds, for one subdomain, the symmetric positive definite
operator weighting the displacement in the Robin interface condition
``mu_b = lambda_b + Q u_b``. Storage is sparse-part minus low-rank
correction, ``Q = sparse - W M^-1 W^T``, so local Robin solves can factor the
sparse part once and fold the correction in with the Woodbury identity.

Strategies:

* ``lumped_neighbor``    - assembled neighbor boundary stiffness blocks
* ``superlumped_neighbor`` - their diagonals only (diagonal impedance)
* ``two_scale``          - superlumped flexibility plus the low-rank
  rigid-body flexibility of the remainder, inverted back to stiffness form
* ``exact_complement``   - the true condensed stiffness of everything
  outside the subdomain (sequential/testing oracle)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ImpedanceError
from .partition import InterfaceTopology, ScaledAssembly, SubdomainSystem

STRATEGIES = ("lumped", "superlumped", "two-scale", "exact-complement")


@dataclass
class Impedance:
    """SPD interface operator ``Q = sparse - W M^-1 W^T`` on one subdomain."""

    sparse: np.ndarray  # (n_b, n_b) symmetric
    lowrank_w: np.ndarray | None = None  # (n_b, m)
    lowrank_m: np.ndarray | None = None  # (m, m) SPD
    label: str = ""
    _m_cho: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_boundary(self) -> int:
        return self.sparse.shape[0]

    @property
    def rank(self) -> int:
        return 0 if self.lowrank_w is None else self.lowrank_w.shape[1]

    def _solve_m(self, x):
        if self._m_cho is None:
            try:
                self._m_cho = (sla.cho_factor(self.lowrank_m),)
            except np.linalg.LinAlgError as exc:
                raise ImpedanceError("impedance not admissible: correction block") from exc
        return sla.cho_solve(self._m_cho[0], x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = self.sparse @ x
        if self.rank:
            y -= self.lowrank_w @ self._solve_m(self.lowrank_w.T @ x)
        return y

    def dense(self) -> np.ndarray:
        q = self.sparse.copy()
        if self.rank:
            q -= self.lowrank_w @ self._solve_m(self.lowrank_w.T)
        return q


def lumped_neighbor(j: int, topology: InterfaceTopology, kbb_blocks) -> Impedance:
    """Assembled boundary stiffness of the neighbors, restricted to the subdomain."""
    if not topology.neighbors[j]:
        raise ImpedanceError(f"subdomain {j} has no neighbors: lumped impedance undefined")
    acc = np.zeros((topology.n_A, topology.n_A))
    for s in sorted(topology.neighbors[j]):
        topology.scatter_matrix(kbb_blocks[s], s, acc)
    amap = topology.a_maps[j]
    return Impedance(sparse=acc[np.ix_(amap, amap)], label="lumped")


def superlumped_neighbor(j: int, topology: InterfaceTopology, deltas) -> Impedance:
    """Diagonal variant: assembled neighbor boundary diagonals."""
    if not topology.neighbors[j]:
        raise ImpedanceError(f"subdomain {j} has no neighbors: superlumped impedance undefined")
    acc = np.zeros(topology.n_A)
    for s in sorted(topology.neighbors[j]):
        np.add.at(acc, topology.a_maps[s], deltas[s])
    return Impedance(sparse=np.diag(acc[topology.a_maps[j]]), label="superlumped")


def superlumped_diagonal(j: int, topology: InterfaceTopology, deltas) -> np.ndarray:
    """The assembled neighbor diagonal as a plain vector on the subdomain boundary."""
    acc = np.zeros(topology.n_A)
    for s in sorted(topology.neighbors[j]):
        np.add.at(acc, topology.a_maps[s], deltas[s])
    return acc[topology.a_maps[j]]


def two_scale(
    j: int,
    topology: InterfaceTopology,
    scaled: ScaledAssembly,
    deltas,
    g_tilde: np.ndarray,
    coarse_cho,
    col_slices,
) -> Impedance:
    """Two-scale impedance: short-range superlumped stiffness corrected by the
    long-range rigid-body flexibility of the remainder.

    The flexibility is ``K_sl^-1 + V F V^T`` with ``V`` the locally rescaled
    traces of the other subdomains' coarse modes and ``F`` the corresponding
    block of the inverted assembled coarse matrix; the Woodbury identity turns
    it back into stiffness form ``K_sl - W M^-1 W^T``.
    """
    sl = superlumped_diagonal(j, topology, deltas)
    if not topology.neighbors[j]:
        raise ImpedanceError(f"subdomain {j} has no neighbors: impedance undefined")
    lo, hi = col_slices[j]
    other_cols = np.r_[np.arange(lo), np.arange(hi, g_tilde.shape[1])].astype(int)
    if len(other_cols) == 0:
        return Impedance(sparse=np.diag(sl), label="two-scale")
    amap = topology.a_maps[j]
    v = scaled.d_tilde[j][:, None] * g_tilde[np.ix_(amap, other_cols)]
    live = np.flatnonzero(np.abs(v).max(axis=0) > 0.0)
    if len(live) == 0:
        return Impedance(sparse=np.diag(sl), label="two-scale")
    v = v[:, live]
    cols = other_cols[live]
    # F: the (cols, cols) block of the inverse of the full coarse matrix.
    rhs = np.zeros((g_tilde.shape[1], len(cols)))
    rhs[cols, np.arange(len(cols))] = 1.0
    f_block = sla.cho_solve(coarse_cho, rhs)[cols, :]
    f_block = 0.5 * (f_block + f_block.T)
    try:
        f_inv = sla.cho_solve(sla.cho_factor(f_block), np.eye(len(cols)))
    except np.linalg.LinAlgError as exc:
        raise ImpedanceError("two-scale impedance: coarse flexibility block singular") from exc
    w_b = sl[:, None] * v
    m = f_inv + v.T @ w_b
    m = 0.5 * (m + m.T)
    return Impedance(sparse=np.diag(sl), lowrank_w=w_b, lowrank_m=m, label="two-scale")


def exact_complement(
    j: int,
    subdomains: list[SubdomainSystem],
    topology: InterfaceTopology,
    k_full_list,
    n_global_dofs: int,
    dirichlet: dict[int, float],
    with_load: bool = False,
    load_factor: float = 1.0,
):
    """Condensed tangent stiffness of everything outside subdomain ``j``.

    Sequential/testing oracle: assembles the global tangent from the other
    subdomains' local matrices and eliminates every complement dof that is
    neither constrained nor on the subdomain's interface. With ``with_load``
    the complement's condensed load is returned too, so the operator can act
    as the affine Dirichlet-to-Neumann map ``u_b -> S u_b - c``.
    """
    rows, cols, vals = [], [], []
    present = np.zeros(n_global_dofs, dtype=bool)
    for s, sd in enumerate(subdomains):
        if s == j:
            continue
        k = k_full_list[s].tocoo()
        gd = sd.global_dofs
        rows.append(gd[k.row])
        cols.append(gd[k.col])
        vals.append(k.data)
        present[gd] = True
    if not rows:
        raise ImpedanceError("exact complement undefined for a single subdomain")
    k_c = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_global_dofs, n_global_dofs),
    ).tocsr()
    sd_j = subdomains[j]
    b_dofs = sd_j.global_dofs[sd_j.boundary_dofs]
    fixed = np.zeros(n_global_dofs, dtype=bool)
    for d in dirichlet:
        fixed[d] = True
    i_mask = present.copy()
    i_mask[b_dofs] = False
    i_mask &= ~fixed
    i_dofs = np.flatnonzero(i_mask)
    kbb = k_c[b_dofs][:, b_dofs].toarray()
    kbi = k_c[b_dofs][:, i_dofs]
    kib = k_c[i_dofs][:, b_dofs]
    kii = k_c[i_dofs][:, i_dofs].tocsc()
    try:
        lu = spla.splu(kii)
        x = lu.solve(kib.toarray())
    except RuntimeError as exc:
        raise ImpedanceError(
            "exact complement singular: Dirichlet support concentrated on the subdomain"
        ) from exc
    schur = kbb - kbi @ x
    schur = 0.5 * (schur + schur.T)
    imp = Impedance(sparse=schur, label="exact-complement")
    if not with_load:
        return imp
    f = np.zeros(n_global_dofs)
    for s, sd in enumerate(subdomains):
        if s != j:
            np.add.at(f, sd.global_dofs, load_factor * sd.f_ext_unit)
    lift = np.zeros(n_global_dofs)
    for d, val in dirichlet.items():
        lift[d] = load_factor * val
    f_eff = f - k_c @ lift
    c = f_eff[b_dofs] - kbi @ lu.solve(f_eff[i_dofs])
    return imp, c
