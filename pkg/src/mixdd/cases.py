"""Benchmark case generators.

Two plastic bending benchmarks plus a homogeneous elastic beam for the
linear solver studies. Both beams are clamped at x=0 and loaded by an
imposed displacement vector (0, u_D) on the x=L edge, so Dirichlet support
is spread over both ends and every slab complement stays solvable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .driver import LoadProgram
from .errors import MixddError
from .fem import MaterialModel, Mesh

BIMATERIAL_PROGRAM = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.375, 0.4, 0.425, 0.45]
BIMATERIAL_UMAX = 7.1
MULTIPERF_PROGRAM = [0.4, 0.6, 0.8, 1.0, 1.15, 1.3, 1.45, 1.5]
MULTIPERF_UMAX = 0.275
HOLE_RADIUS = 2.0 / 30.0


@dataclass
class Case:
    name: str
    mesh: Mesh
    materials: list
    partition: object  # strategy tuple or explicit label array
    load_program: LoadProgram
    meta: dict = field(default_factory=dict)


def _grid(nx, ny, lx, ly):
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    nodes = np.array([[x, y] for y in ys for x in xs])
    elements = []
    for j in range(ny):
        for i in range(nx):
            n0 = j * (nx + 1) + i
            n1 = n0 + 1
            n2 = n0 + nx + 1
            n3 = n2 + 1
            elements.append([n0, n1, n3])
            elements.append([n0, n3, n2])
    return nodes, np.asarray(elements)


def _bending_bcs(mesh: Mesh, lx: float, u_max: float):
    """Clamp x=0; impose the displacement vector (0, u_max) at x=lx."""
    for n in np.nonzero(np.abs(mesh.nodes[:, 0]) < 1e-12)[0]:
        mesh.dirichlet[2 * n] = 0.0
        mesh.dirichlet[2 * n + 1] = 0.0
    for n in np.nonzero(np.abs(mesh.nodes[:, 0] - lx) < 1e-12)[0]:
        mesh.dirichlet[2 * n] = 0.0
        mesh.dirichlet[2 * n + 1] = u_max


def bimaterial_case(nx: int = 91, ny: int = 16) -> Case:
    """Bending beam with two stiff elastoplastic armature layers.

    Geometry L=13, H=2, armature height 0.25; the soft core stays elastic
    while the armatures (stiffness contrast 5000) carry the plasticity.
    """
    lx, ly, h_arm = 13.0, 2.0, 0.25
    if ny < 4:
        raise MixddError("bimaterial case needs at least 4 elements through the height")
    rows_per_arm = h_arm / (ly / ny)
    if abs(rows_per_arm - round(rows_per_arm)) > 1e-9 or round(rows_per_arm) < 1:
        raise MixddError(
            "bimaterial case: element rows must resolve the 0.25-high armatures "
            f"(ny divisible by {int(ly / h_arm)})"
        )
    nodes, elements = _grid(nx, ny, lx, ly)
    centroids = nodes[elements].mean(axis=1)
    armature = (centroids[:, 1] < h_arm) | (centroids[:, 1] > ly - h_arm)
    mesh = Mesh(nodes=nodes, elements=elements, material_ids=armature.astype(int))
    _bending_bcs(mesh, lx, BIMATERIAL_UMAX)
    materials = [
        MaterialModel(young=420e2, poisson=0.3),
        MaterialModel(young=210e6, poisson=0.3, yield_stress=420e3, hardening=1e3),
    ]
    return Case(
        name="bimaterial",
        mesh=mesh,
        materials=materials,
        partition=("slab", 13),
        load_program=LoadProgram(BIMATERIAL_PROGRAM),
        meta={"armature_fraction": float(armature.mean())},
    )


def multiperf_case(nx: int = 200, ny: int = 20) -> Case:
    """Homogeneous elastoplastic beam with two rows of periodic holes.

    Holes of radius 2/30 are approximated by removing every triangle whose
    centroid falls inside a disc; rows sit at y=0.25 and y=0.75 so a grid
    partition can cut cleanly along y=0.5.
    """
    lx, ly = 10.0, 1.0
    if ny < 4:
        raise MixddError("multiperforated case needs at least 4 elements through the height")
    if ly / ny > 1.2 * HOLE_RADIUS:
        raise MixddError("multiperforated case: elements too coarse to represent the holes")
    nodes, elements = _grid(nx, ny, lx, ly)
    # Half-cell-offset rows keep the removed patches unbiased at the default
    # resolution and clear of the y=0.5 partition line.
    centers = [
        (x, y)
        for y in (0.275, 0.725)
        for x in np.arange(0.525, lx - 0.4, 0.5)
    ]
    centroids = nodes[elements].mean(axis=1)
    keep = np.ones(len(elements), dtype=bool)
    for cx, cy in centers:
        keep &= (centroids[:, 0] - cx) ** 2 + (centroids[:, 1] - cy) ** 2 > HOLE_RADIUS**2
    removed_area = 0.0
    for el in elements[~keep]:
        xy = nodes[el]
        removed_area += 0.5 * abs(
            (xy[1, 0] - xy[0, 0]) * (xy[2, 1] - xy[0, 1])
            - (xy[2, 0] - xy[0, 0]) * (xy[1, 1] - xy[0, 1])
        )
    elements = elements[keep]
    used = np.unique(elements)
    remap = -np.ones(len(nodes), dtype=int)
    remap[used] = np.arange(len(used))
    mesh = Mesh(nodes=nodes[used], elements=remap[elements])
    _bending_bcs(mesh, lx, MULTIPERF_UMAX)
    materials = [
        MaterialModel(young=210e6, poisson=0.3, yield_stress=420e3, hardening=1e6)
    ]
    return Case(
        name="multiperf",
        mesh=mesh,
        materials=materials,
        partition=("grid", 15, 2),
        load_program=LoadProgram(MULTIPERF_PROGRAM),
        meta={
            "hole_count": len(centers),
            "hole_area_removed": removed_area,
            "hole_area_ideal": len(centers) * np.pi * HOLE_RADIUS**2,
        },
    )


def elastic_case(nx: int = 60, ny: int = 6, n_slabs: int = 5, u_d: float = 1.5e-3) -> Case:
    """Homogeneous elastic bending beam for the linear impedance studies."""
    lx, ly = 10.0, 1.0
    nodes, elements = _grid(nx, ny, lx, ly)
    mesh = Mesh(nodes=nodes, elements=elements)
    _bending_bcs(mesh, lx, u_d)
    materials = [MaterialModel(young=210e6, poisson=0.3)]
    return Case(
        name="elastic",
        mesh=mesh,
        materials=materials,
        partition=("slab", n_slabs),
        load_program=LoadProgram([1.0]),
    )


def materialize_partition(case: Case):
    """Resolve the case's partition strategy into explicit element labels."""
    from .partition import _element_labels

    return _element_labels(case.mesh, case.partition)


def save_case(case: Case, mesh_path, partition_path) -> None:
    from .fem import save_mesh

    save_mesh(case.mesh, mesh_path)
    labels = materialize_partition(case)
    with open(partition_path, "w", encoding="utf-8") as fh:
        json.dump([int(x) for x in labels], fh)


def material_from_dict(d: dict) -> MaterialModel:
    return MaterialModel(
        young=float(d["young"]),
        poisson=float(d["poisson"]),
        yield_stress=float(d["yield_stress"]) if d.get("yield_stress") is not None else None,
        hardening=float(d["hardening"]) if d.get("hardening") is not None else None,
    )


def gen_case(kind: str, nx: int | None = None, ny: int | None = None, **kwargs) -> Case:
    """Build one of the named cases at the requested resolution."""
    if kind == "bimaterial":
        return bimaterial_case(nx or 91, ny or 16)
    if kind == "multiperf":
        return multiperf_case(nx or 200, ny or 20)
    if kind == "elastic":
        return elastic_case(nx or 60, ny or 6, **kwargs)
    raise MixddError(f"unknown case kind {kind!r}")
