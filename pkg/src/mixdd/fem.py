"""2D small-strain finite-element kernel.

Linear 3-node triangles with one Gauss point, plane strain. Materials are
either linear elastic or J2 elastoplastic with linear isotropic hardening
(closed-form radial return). The internal force carries the sign convention
``f_int(u) = -K u`` in the linear case, so the consistent tangent
``K_t = -d f_int / d u`` is positive definite once constrained.

Strain and stress use a 4-component Voigt layout ``[xx, yy, zz, xy]`` with
engineering shear strain; plane strain pins the total ``zz`` strain to zero
while the out-of-plane stress and plastic strain stay live.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError

VOIGT = 4  # [xx, yy, zz, xy]


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic material: elastic, or elastoplastic with linear hardening."""

    young: float
    poisson: float
    yield_stress: float | None = None
    hardening: float | None = None

    def __post_init__(self):
        if self.young <= 0.0:
            raise ValueError("Young modulus must be positive")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.yield_stress is not None:
            if self.yield_stress <= 0.0:
                raise ValueError("yield stress must be positive")
            if (self.hardening or 0.0) < 0.0:
                raise ValueError("hardening modulus must be non-negative")

    @property
    def kind(self) -> str:
        return "elastic" if self.yield_stress is None else "elastoplastic-linear-hardening"

    @property
    def is_elastoplastic(self) -> bool:
        return self.yield_stress is not None

    @property
    def shear_modulus(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson
        return self.young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def elastic_matrix(self) -> np.ndarray:
        """Plane-strain elasticity matrix in engineering-shear Voigt form."""
        lam, g = self.lame_lambda, self.shear_modulus
        c = lam * np.ones((VOIGT, VOIGT))
        c[3, :] = c[:, 3] = 0.0
        c[np.diag_indices(3)] += 2.0 * g
        c[3, 3] = g
        return c


@dataclass
class GaussPointState:
    """Per-Gauss-point plastic state for a batch of elements.

    ``plastic_strain`` is stored in the same engineering Voigt layout as the
    total strain; ``accumulated_plastic`` is the equivalent plastic strain and
    never decreases across committed increments.
    """

    plastic_strain: np.ndarray  # (n_gp, 4)
    accumulated_plastic: np.ndarray  # (n_gp,)

    @classmethod
    def virgin(cls, n_gp: int) -> "GaussPointState":
        return cls(np.zeros((n_gp, VOIGT)), np.zeros(n_gp))

    def copy(self) -> "GaussPointState":
        return GaussPointState(self.plastic_strain.copy(), self.accumulated_plastic.copy())


@dataclass
class Mesh:
    """Triangle mesh with Dirichlet values and Neumann loads keyed by dof.

    ``material_ids`` selects one entry of the material list handed to
    :func:`assemble` per element (all zero for a homogeneous mesh). Dirichlet
    values are the unit load pattern; load stepping scales them.
    """

    nodes: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_el, 3) int
    dirichlet: dict[int, float] = field(default_factory=dict)
    neumann: dict[int, float] = field(default_factory=dict)
    material_ids: np.ndarray | None = None
    _geom: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=int)
        if self.material_ids is None:
            self.material_ids = np.zeros(len(self.elements), dtype=int)
        else:
            self.material_ids = np.asarray(self.material_ids, dtype=int)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def validate(self, require_dirichlet: bool = True) -> None:
        if self.elements.size and self.elements.max() >= self.n_nodes:
            raise AssemblyError("element references an invalid node index")
        if self.elements.size and self.elements.min() < 0:
            raise AssemblyError("element references a negative node index")
        if require_dirichlet and not self.dirichlet:
            raise AssemblyError("global problem needs a nonempty Dirichlet boundary")
        geom = element_geometry(self)
        if np.any(geom.area <= 0.0):
            raise AssemblyError("mesh contains degenerate (non-positive area) elements")

    def dirichlet_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.dirichlet:
            return np.zeros(0, dtype=int), np.zeros(0)
        dofs = np.fromiter(self.dirichlet.keys(), dtype=int)
        vals = np.fromiter(self.dirichlet.values(), dtype=float)
        order = np.argsort(dofs)
        return dofs[order], vals[order]

    def external_force(self, factor: float = 1.0) -> np.ndarray:
        f = np.zeros(self.n_dofs)
        for dof, val in self.neumann.items():
            f[dof] += factor * val
        return f


@dataclass(frozen=True)
class ElementGeometry:
    """Cached per-element strain-displacement operators."""

    b_mat: np.ndarray  # (n_el, 4, 6)
    area: np.ndarray  # (n_el,)
    dof_map: np.ndarray  # (n_el, 6)


def element_geometry(mesh: Mesh) -> ElementGeometry:
    """Build (and cache on the mesh) B matrices, areas and dof maps."""
    if mesh._geom is not None:
        return mesh._geom[0]
    xy = mesh.nodes[mesh.elements]  # (n_el, 3, 2)
    x, y = xy[:, :, 0], xy[:, :, 1]
    # Signed area from the cross product of two edges.
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * area2
    scale = np.abs(area2).max(initial=0.0)
    if scale == 0.0 or np.any(np.abs(area2) < 1e-12 * scale):
        raise AssemblyError("degenerate element Jacobian in assembly")
    b = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)  # b_i = y_j - y_k
    c = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)  # c_i = x_k - x_j
    n_el = mesh.n_elements
    bm = np.zeros((n_el, VOIGT, 6))
    inv = 1.0 / area2
    for i in range(3):
        bm[:, 0, 2 * i] = b[:, i] * inv
        bm[:, 1, 2 * i + 1] = c[:, i] * inv
        bm[:, 3, 2 * i] = c[:, i] * inv
        bm[:, 3, 2 * i + 1] = b[:, i] * inv
    dof_map = np.empty((n_el, 6), dtype=int)
    dof_map[:, 0::2] = 2 * mesh.elements
    dof_map[:, 1::2] = 2 * mesh.elements + 1
    geom = ElementGeometry(bm, np.abs(area), dof_map)
    mesh._geom = (geom,)
    return geom


def _material_tables(materials) -> tuple[np.ndarray, ...]:
    if isinstance(materials, MaterialModel):
        materials = [materials]
    cs = np.stack([m.elastic_matrix() for m in materials])
    g = np.array([m.shear_modulus for m in materials])
    sig0 = np.array([m.yield_stress if m.is_elastoplastic else np.inf for m in materials])
    hard = np.array([m.hardening or 0.0 for m in materials])
    return cs, g, sig0, hard


def _von_mises(stress: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deviator and von Mises equivalent of a batch of Voigt stresses."""
    p = stress[:, :3].sum(axis=1) / 3.0
    s = stress.copy()
    s[:, :3] -= p[:, None]
    q = np.sqrt(1.5 * (s[:, 0] ** 2 + s[:, 1] ** 2 + s[:, 2] ** 2) + 3.0 * s[:, 3] ** 2)
    return s, q


def radial_return_batch(strain, plastic_strain, accumulated, c_el, g, sig0, hard):
    """Vectorized closed-form radial return for J2 linear isotropic hardening.

    Parameters are per-Gauss-point arrays; elastic points pass through with
    the elastic moduli. Returns stress, updated plastic state and the
    consistent tangent batch.
    """
    stress = np.einsum("gij,gj->gi", c_el, strain - plastic_strain)
    s, q = _von_mises(stress)
    f_trial = q - (sig0 + hard * accumulated)
    c_ep = c_el.copy()
    ep_new = plastic_strain.copy()
    acc_new = accumulated.copy()
    mask = f_trial > 0.0
    if np.any(mask):
        gm, hm, qm = g[mask], hard[mask], q[mask]
        dgamma = f_trial[mask] / (3.0 * gm + hm)
        sm = s[mask]
        scale = 3.0 * gm * dgamma / qm
        stress[mask] -= scale[:, None] * sm
        # Engineering shear doubles the tensor flow component.
        flow = sm * np.array([1.5, 1.5, 1.5, 3.0]) / qm[:, None]
        ep_new[mask] += dgamma[:, None] * flow
        acc_new[mask] += dgamma
        # Consistent tangent: C - (6 G^2 dg/q) P_dev + 9 G^2 (dg/q^3 - 1/((3G+h) q^2)) s s^T
        pdev = np.zeros((VOIGT, VOIGT))
        pdev[np.diag_indices(3)] = 1.0
        pdev[:3, :3] -= 1.0 / 3.0
        pdev[3, 3] = 0.5
        coef_dev = 6.0 * gm**2 * dgamma / qm
        coef_dir = 9.0 * gm**2 * (dgamma / qm**3 - 1.0 / ((3.0 * gm + hm) * qm**2))
        c_ep[mask] += (
            -coef_dev[:, None, None] * pdev[None]
            + coef_dir[:, None, None] * np.einsum("gi,gj->gij", sm, sm)
        )
    return stress, ep_new, acc_new, c_ep


def radial_return(strain_trial, state, material: MaterialModel):
    """Single-point radial return.

    ``state`` is a ``(plastic_strain, accumulated_plastic)`` pair in Voigt
    form. Returns ``(stress, new_state, consistent_modulus)``.
    """
    if not material.is_elastoplastic:
        raise ValueError("radial return requires an elastoplastic material")
    ep, acc = state
    cs, g, sig0, hard = _material_tables(material)
    stress, ep_new, acc_new, c_ep = radial_return_batch(
        np.asarray(strain_trial, dtype=float)[None, :],
        np.asarray(ep, dtype=float)[None, :],
        np.atleast_1d(float(acc)),
        cs[[0]],
        g[[0]],
        sig0[[0]],
        hard[[0]],
    )
    return stress[0], (ep_new[0], acc_new[0]), c_ep[0]


def assemble(mesh: Mesh, materials, states: GaussPointState, u: np.ndarray):
    """Assemble internal force, consistent tangent and trial plastic states.

    ``f_int`` follows the equilibrium convention ``f_int(u) + f_ext = 0``;
    the tangent is ``K_t = -d f_int / d u``. ``states`` holds the committed
    plastic state per element (one Gauss point each); the returned trial
    states are not committed.
    """
    if isinstance(materials, MaterialModel):
        materials = [materials]
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_dofs,):
        raise ValueError(f"displacement vector has size {u.size}, expected {mesh.n_dofs}")
    if len(states.accumulated_plastic) != mesh.n_elements:
        raise ValueError("plastic state array does not match the Gauss point count")
    geom = element_geometry(mesh)
    cs, g_tab, s0_tab, h_tab = _material_tables(materials)
    ids = mesh.material_ids
    if ids.size and ids.max() >= len(cs):
        raise ValueError("mesh references a material id beyond the material list")
    strain = np.einsum("eij,ej->ei", geom.b_mat, u[geom.dof_map])
    stress, ep_new, acc_new, c_ep = radial_return_batch(
        strain, states.plastic_strain, states.accumulated_plastic,
        cs[ids], g_tab[ids], s0_tab[ids], h_tab[ids],
    )
    f_el = -np.einsum("eji,ej,e->ei", geom.b_mat, stress, geom.area)
    f_int = np.zeros(mesh.n_dofs)
    np.add.at(f_int, geom.dof_map, f_el)
    k_el = np.einsum("eki,ekl,elj,e->eij", geom.b_mat, c_ep, geom.b_mat, geom.area, optimize=True)
    rows = np.broadcast_to(geom.dof_map[:, :, None], k_el.shape)
    cols = np.broadcast_to(geom.dof_map[:, None, :], k_el.shape)
    k_t = sp.coo_matrix(
        (k_el.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_dofs, mesh.n_dofs)
    ).tocsr()
    return f_int, k_t, GaussPointState(ep_new, acc_new)


def apply_dirichlet(k_t, rhs, dirichlet: dict[int, float]):
    """Row/column elimination with right-hand-side lift.

    Keeps the system size: constrained rows become identity equations with
    the imposed value on the right-hand side, and the coupling columns are
    folded into the free right-hand side.
    """
    if not dirichlet:
        return k_t, rhs
    n = k_t.shape[0]
    fix = np.fromiter(dirichlet.keys(), dtype=int)
    vals = np.fromiter(dirichlet.values(), dtype=float)
    lift = np.zeros(n)
    lift[fix] = vals
    rhs_c = np.asarray(rhs, dtype=float) - k_t @ lift
    rhs_c[fix] = vals
    mask = np.ones(n, dtype=bool)
    mask[fix] = False
    diag = sp.diags(mask.astype(float))
    k_c = diag @ k_t @ diag + sp.diags((~mask).astype(float))
    return k_c.tocsr(), rhs_c


def rigid_body_basis(nodes: np.ndarray) -> np.ndarray:
    """Three in-plane rigid modes (two translations, rotation about the centroid)."""
    n = len(nodes)
    center = nodes.mean(axis=0)
    modes = np.zeros((2 * n, 3))
    modes[0::2, 0] = 1.0
    modes[1::2, 1] = 1.0
    modes[0::2, 2] = -(nodes[:, 1] - center[1])
    modes[1::2, 2] = nodes[:, 0] - center[0]
    return modes


def save_mesh(mesh: Mesh, path) -> None:
    data = {
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "dirichlet": [[int(d), float(v)] for d, v in sorted(mesh.dirichlet.items())],
        "neumann": [[int(d), float(v)] for d, v in sorted(mesh.neumann.items())],
        "material_ids": mesh.material_ids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)


def load_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return Mesh(
        nodes=np.asarray(data["nodes"], dtype=float),
        elements=np.asarray(data["elements"], dtype=int),
        dirichlet={int(d): float(v) for d, v in data.get("dirichlet", [])},
        neumann={int(d): float(v) for d, v in data.get("neumann", [])},
        material_ids=np.asarray(data["material_ids"], dtype=int)
        if "material_ids" in data
        else None,
    )
