"""Substructuring: subdomain systems, interface maps, scalings, rigid modes.

The primal interface carries every non-Dirichlet dof shared by at least two
subdomains. Boolean assembly is realized as index maps (one per subdomain,
ordered by global dof), signed jumps as dof pairs against the lowest-numbered
touching subdomain, and the stiffness-scaled assembly as per-dof weight
vectors. All maps are immutable after construction and safe to share across
concurrent per-subdomain workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import PartitionError
from .fem import Mesh, rigid_body_basis


@dataclass
class SubdomainSystem:
    """One substructure: local mesh, dof splits and load localization.

    ``boundary_dofs`` realizes the trace operator as an index map into the
    local dof vector; ``bpos`` locates those dofs inside the free (non
    Dirichlet) vector used by the local solvers.
    """

    index: int
    mesh: Mesh
    global_nodes: np.ndarray
    global_dofs: np.ndarray
    element_ids: np.ndarray
    boundary_dofs: np.ndarray  # local dof ids on the interface
    interior_dofs: np.ndarray  # complement of boundary_dofs (includes Dirichlet dofs)
    free_dofs: np.ndarray  # local dofs without a Dirichlet condition
    bpos: np.ndarray  # boundary positions within free_dofs
    ipos: np.ndarray  # interior-free positions within free_dofs
    f_ext_unit: np.ndarray  # Neumann load pattern on local dofs

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_dofs)

    def dirichlet_pattern(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mesh.dirichlet_arrays()

    def imposed_displacement(self, factor: float) -> np.ndarray:
        """Full local displacement vector with the scaled imposed values set."""
        u = np.zeros(self.mesh.n_dofs)
        dofs, vals = self.dirichlet_pattern()
        u[dofs] = factor * vals
        return u


@dataclass
class InterfaceTopology:
    """Global primal interface with boolean/signed assembly maps."""

    n_A: int
    a_maps: list[np.ndarray]  # per subdomain: boundary position -> interface dof
    multiplicity: np.ndarray  # (n_A,)
    pair_sub: np.ndarray  # (n_pairs, 2) subdomain of (master, other)
    pair_pos: np.ndarray  # (n_pairs, 2) boundary position of (master, other)
    pair_dof: np.ndarray  # (n_pairs,) interface dof of each pair
    neighbors: list[set] = field(default_factory=list)

    @property
    def n_subdomains(self) -> int:
        return len(self.a_maps)

    def assemble(self, boundary_vectors) -> np.ndarray:
        """Plain sum over subdomains: ``A x`` on the interface."""
        out = np.zeros(self.n_A)
        for amap, x in zip(self.a_maps, boundary_vectors):
            np.add.at(out, amap, x)
        return out

    def assemble_weighted(self, boundary_vectors, weights) -> np.ndarray:
        out = np.zeros(self.n_A)
        for amap, x, w in zip(self.a_maps, boundary_vectors, weights):
            np.add.at(out, amap, w * x)
        return out

    def restrict(self, interface_vector, s: int) -> np.ndarray:
        """``A^T y`` for subdomain ``s``."""
        return interface_vector[self.a_maps[s]]

    def restrict_all(self, interface_vector) -> list[np.ndarray]:
        return [interface_vector[amap] for amap in self.a_maps]

    def scatter_matrix(self, local_matrix, s: int, out: np.ndarray) -> None:
        """Accumulate a local boundary matrix into an interface-sized dense matrix."""
        amap = self.a_maps[s]
        out[np.ix_(amap, amap)] += local_matrix

    def jump(self, boundary_vectors) -> np.ndarray:
        """Signed pairwise differences; zero iff the field is single-valued."""
        vals = np.empty(len(self.pair_dof))
        for i in range(len(self.pair_dof)):
            (sm, so), (km, ko) = self.pair_sub[i], self.pair_pos[i]
            vals[i] = boundary_vectors[sm][km] - boundary_vectors[so][ko]
        return vals

    def jump_norm(self, boundary_vectors) -> float:
        """Euclidean jump norm with entries scaled by 1/(multiplicity - 1)."""
        if len(self.pair_dof) == 0:
            return 0.0
        vals = self.jump(boundary_vectors) / (self.multiplicity[self.pair_dof] - 1)
        return float(np.linalg.norm(vals))

    def equal_weights(self) -> list[np.ndarray]:
        """Multiplicity-scaled partition-of-unity weights."""
        return [1.0 / self.multiplicity[amap] for amap in self.a_maps]


@dataclass
class ScaledAssembly:
    """Stiffness-scaled assembly weights and the complement scaling diagonal.

    ``a_tilde[s]`` holds the per-dof weights of the scaled assembly operator,
    ``d_tilde[s]`` the diagonal that converts classical scaled weights into
    weights that ignore the matter inside subdomain ``s``.
    """

    delta: list[np.ndarray]
    a_tilde: list[np.ndarray]
    d_tilde: list[np.ndarray]


def jump(topology: InterfaceTopology, boundary_vectors) -> np.ndarray:
    return topology.jump(boundary_vectors)


def build_scaled(topology: InterfaceTopology, deltas) -> ScaledAssembly:
    """Stiffness scaling from tangent boundary diagonals.

    Weights on dof x are ``delta_x^(s) / sum_q delta_x^(q)`` and the local
    scaling diagonal is ``1 / (1 - weight)``, which requires every interface
    dof to be shared by at least two subdomains.
    """
    for d in deltas:
        if np.any(np.asarray(d) <= 0.0):
            raise PartitionError("tangent diagonal must be strictly positive")
    if np.any(topology.multiplicity < 2):
        raise PartitionError("interface dof touched by a single subdomain: scaling undefined")
    total = topology.assemble(deltas)
    a_tilde = [np.asarray(d) / total[amap] for d, amap in zip(deltas, topology.a_maps)]
    d_tilde = [1.0 / (1.0 - w) for w in a_tilde]
    return ScaledAssembly(list(map(np.asarray, deltas)), a_tilde, d_tilde)


def _modified_gram_schmidt(columns, drop_tol=1e-12):
    """Orthonormalize columns, returning kept basis and the combination matrix."""
    q = []
    combo = []
    n_cols = columns.shape[1]
    scale = max(np.linalg.norm(columns, axis=0).max(initial=0.0), 1.0)
    for j in range(n_cols):
        v = columns[:, j].copy()
        c = np.zeros(n_cols)
        c[j] = 1.0
        for qi, ci in zip(q, combo):
            h = qi @ v
            v -= h * qi
            c -= h * ci
        nv = np.linalg.norm(v)
        if nv > drop_tol * scale:
            q.append(v / nv)
            combo.append(c / nv)
    if not q:
        return np.zeros((columns.shape[0], 0)), np.zeros((n_cols, 0))
    return np.column_stack(q), np.column_stack(combo)


def rigid_body_modes(subdomain: SubdomainSystem, drop_tol=1e-12):
    """Admissible rigid-body motions and their orthonormal boundary traces.

    Builds the three in-plane modes about the subdomain centroid, keeps the
    combinations compatible with the local Dirichlet constraints, and
    orthonormalizes the boundary traces (the full modes follow the same
    combinations so they stay in the tangent kernel).
    """
    raw = rigid_body_basis(subdomain.mesh.nodes)
    fix, _ = subdomain.dirichlet_pattern()
    if len(fix):
        c = raw[fix, :]
        _, svals, vt = np.linalg.svd(c, full_matrices=True)
        rank = int(np.sum(svals > drop_tol * max(svals.max(initial=0.0), 1.0)))
        null = vt[rank:].T
        modes = raw @ null
    else:
        modes = raw
    if modes.shape[1] == 0:
        nb = subdomain.n_boundary
        return np.zeros((subdomain.mesh.n_dofs, 0)), np.zeros((nb, 0))
    traces = modes[subdomain.boundary_dofs, :]
    if subdomain.n_boundary == 0:
        q, combo = _modified_gram_schmidt(modes, drop_tol)
        return q, traces[:, : q.shape[1]]
    q, combo = _modified_gram_schmidt(traces, drop_tol)
    return modes @ combo, q


def _element_labels(mesh: Mesh, strategy) -> np.ndarray:
    if isinstance(strategy, np.ndarray) or isinstance(strategy, list):
        labels = np.asarray(strategy, dtype=int)
        if labels.shape != (mesh.n_elements,):
            raise PartitionError("explicit partition length does not match element count")
        return labels
    kind = strategy[0]
    centroids = mesh.nodes[mesh.elements].mean(axis=1)
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    span = np.maximum(hi - lo, 1e-30)
    if kind == "slab":
        n = int(strategy[1])
        if n < 1:
            raise PartitionError("slab partition needs n >= 1")
        ix = np.minimum((n * (centroids[:, 0] - lo[0]) / span[0]).astype(int), n - 1)
        return ix
    if kind == "grid":
        nx, ny = int(strategy[1]), int(strategy[2])
        if nx < 1 or ny < 1:
            raise PartitionError("grid partition needs nx, ny >= 1")
        ix = np.minimum((nx * (centroids[:, 0] - lo[0]) / span[0]).astype(int), nx - 1)
        iy = np.minimum((ny * (centroids[:, 1] - lo[1]) / span[1]).astype(int), ny - 1)
        return iy * nx + ix
    raise PartitionError(f"unknown partition strategy {kind!r}")


def _check_complements(mesh: Mesh, labels: np.ndarray, n_sub: int) -> None:
    """Every complement must stay solvable: each of its connected components
    has to carry at least one Dirichlet dof, otherwise its rigid motions make
    the complement tangent operator singular."""
    dir_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    for dof in mesh.dirichlet:
        dir_nodes[dof // 2] = True
    edges_i, edges_j, owner = [], [], []
    for el, lab in zip(mesh.elements, labels):
        for a in range(3):
            edges_i.append(el[a])
            edges_j.append(el[(a + 1) % 3])
            owner.append(lab)
    edges_i = np.asarray(edges_i)
    edges_j = np.asarray(edges_j)
    owner = np.asarray(owner)
    for j in range(n_sub):
        keep = owner != j
        if not np.any(keep):
            continue
        adj = sp.coo_matrix(
            (np.ones(keep.sum()), (edges_i[keep], edges_j[keep])),
            shape=(mesh.n_nodes, mesh.n_nodes),
        )
        n_comp, comp = connected_components(adj, directed=False)
        used = np.zeros(n_comp, dtype=bool)
        used[comp[np.unique(edges_i[keep])]] = True
        constrained = np.zeros(n_comp, dtype=bool)
        constrained[comp[dir_nodes & np.isin(np.arange(mesh.n_nodes), np.unique(edges_i[keep]))]] = True
        if np.any(used & ~constrained):
            raise PartitionError(
                f"complement of subdomain {j} has a component without Dirichlet support"
            )


def partition_mesh(mesh: Mesh, strategy):
    """Split a mesh into subdomains and build the interface topology.

    ``strategy`` is ``("slab", n)``, ``("grid", nx, ny)`` or an explicit
    element-to-subdomain label array. Raises when a subdomain ends up empty
    or when some complement would be singular (Dirichlet support missing in
    one of its connected components).
    """
    labels = _element_labels(mesh, strategy)
    n_sub = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels, minlength=n_sub)
    if np.any(counts == 0):
        raise PartitionError(f"partition produced empty subdomains: {np.nonzero(counts == 0)[0]}")
    if n_sub > 1:
        _check_complements(mesh, labels, n_sub)

    node_owner_sets = [set() for _ in range(mesh.n_nodes)]
    for el, lab in zip(mesh.elements, labels):
        for n in el:
            node_owner_sets[n].add(int(lab))

    dirichlet = mesh.dirichlet
    shared = [n for n in range(mesh.n_nodes) if len(node_owner_sets[n]) >= 2]
    interface_dofs = []
    for n in shared:
        for c in (0, 1):
            dof = 2 * n + c
            if dof not in dirichlet:
                interface_dofs.append(dof)
    interface_dofs = np.asarray(sorted(interface_dofs), dtype=int)
    gdof_to_interface = {int(d): i for i, d in enumerate(interface_dofs)}
    n_A = len(interface_dofs)

    subdomains = []
    a_maps = []
    for s in range(n_sub):
        el_ids = np.nonzero(labels == s)[0]
        els = mesh.elements[el_ids]
        gnodes = np.unique(els)
        l_of_g = {int(g): i for i, g in enumerate(gnodes)}
        local_els = np.vectorize(lambda g: l_of_g[int(g)])(els).reshape(els.shape)
        gdofs = np.empty(2 * len(gnodes), dtype=int)
        gdofs[0::2] = 2 * gnodes
        gdofs[1::2] = 2 * gnodes + 1
        local_dirichlet = {}
        f_ext = np.zeros(2 * len(gnodes))
        for i, g in enumerate(gdofs):
            g = int(g)
            if g in dirichlet:
                local_dirichlet[i] = dirichlet[g]
            if g in mesh.neumann and min(node_owner_sets[g // 2]) == s:
                f_ext[i] = mesh.neumann[g]
        bnd = np.asarray(
            [i for i, g in enumerate(gdofs) if int(g) in gdof_to_interface], dtype=int
        )
        interior = np.setdiff1d(np.arange(2 * len(gnodes)), bnd)
        fix = np.asarray(sorted(local_dirichlet), dtype=int)
        free = np.setdiff1d(np.arange(2 * len(gnodes)), fix)
        pos_in_free = -np.ones(2 * len(gnodes), dtype=int)
        pos_in_free[free] = np.arange(len(free))
        bpos = pos_in_free[bnd]
        ipos = np.setdiff1d(np.arange(len(free)), bpos)
        local_mesh = Mesh(
            nodes=mesh.nodes[gnodes].copy(),
            elements=local_els,
            dirichlet=local_dirichlet,
            neumann={},
            material_ids=mesh.material_ids[el_ids].copy(),
        )
        subdomains.append(
            SubdomainSystem(
                index=s,
                mesh=local_mesh,
                global_nodes=gnodes,
                global_dofs=gdofs,
                element_ids=el_ids,
                boundary_dofs=bnd,
                interior_dofs=interior,
                free_dofs=free,
                bpos=bpos,
                ipos=ipos,
                f_ext_unit=f_ext,
            )
        )
        a_maps.append(np.asarray([gdof_to_interface[int(gdofs[i])] for i in bnd], dtype=int))

    multiplicity = np.zeros(n_A, dtype=int)
    owners = [[] for _ in range(n_A)]
    for s, amap in enumerate(a_maps):
        for k, idx in enumerate(amap):
            multiplicity[idx] += 1
            owners[idx].append((s, k))
    pair_sub, pair_pos, pair_dof = [], [], []
    for idx, own in enumerate(owners):
        own.sort()
        for other in own[1:]:
            pair_sub.append((own[0][0], other[0]))
            pair_pos.append((own[0][1], other[1]))
            pair_dof.append(idx)
    neighbors = [set() for _ in range(n_sub)]
    for idx, own in enumerate(owners):
        subs = [s for s, _ in own]
        for s in subs:
            neighbors[s].update(q for q in subs if q != s)

    topology = InterfaceTopology(
        n_A=n_A,
        a_maps=a_maps,
        multiplicity=multiplicity,
        pair_sub=np.asarray(pair_sub, dtype=int).reshape(-1, 2),
        pair_pos=np.asarray(pair_pos, dtype=int).reshape(-1, 2),
        pair_dof=np.asarray(pair_dof, dtype=int),
        neighbors=neighbors,
    )
    return subdomains, topology
