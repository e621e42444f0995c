"""Shared test helpers: small structured meshes and reference materials."""

import numpy as np
import pytest

from mixdd.fem import MaterialModel, Mesh


def grid_mesh(nx, ny, lx=1.0, ly=1.0, material_ids=None):
    """Structured triangulation of an ``lx`` x ``ly`` rectangle (2 triangles per cell)."""
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
    return Mesh(nodes=nodes, elements=np.array(elements), material_ids=material_ids)


def clamp_edge(mesh, axis=0, value=0.0, tol=1e-9):
    """Clamp both dofs of every node with coordinate ``axis`` equal to ``value``."""
    for n in np.nonzero(np.abs(mesh.nodes[:, axis] - value) < tol)[0]:
        mesh.dirichlet[2 * n] = 0.0
        mesh.dirichlet[2 * n + 1] = 0.0


def impose_edge(mesh, axis=0, value=1.0, component=1, amount=1.0, tol=1e-9):
    """Impose a displacement component on every node of an edge."""
    for n in np.nonzero(np.abs(mesh.nodes[:, axis] - value) < tol)[0]:
        mesh.dirichlet[2 * n + component] = amount


def cantilever_mesh(nx=8, ny=2, lx=4.0, ly=1.0, tip_load=-1.0):
    """Clamped-at-left rectangle with a vertical Neumann tip load."""
    mesh = grid_mesh(nx, ny, lx, ly)
    clamp_edge(mesh, axis=0, value=0.0)
    for n in np.nonzero(np.abs(mesh.nodes[:, 0] - lx) < 1e-9)[0]:
        mesh.neumann[2 * n + 1] = tip_load / (ny + 1)
    return mesh


def bending_mesh(nx=8, ny=2, lx=4.0, ly=1.0, tip=0.1, pin_x=True):
    """Clamped at x=0, imposed displacement (0, tip) at x=lx.

    Pinning both components on the loaded edge keeps every slab complement
    fully constrained (SPD exact-complement impedances); pass ``pin_x=False``
    for a vertical-only imposed displacement.
    """
    mesh = grid_mesh(nx, ny, lx, ly)
    clamp_edge(mesh, axis=0, value=0.0)
    impose_edge(mesh, axis=0, value=lx, component=1, amount=tip)
    if pin_x:
        impose_edge(mesh, axis=0, value=lx, component=0, amount=0.0)
    return mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def steel():
    return MaterialModel(young=210e6, poisson=0.3, yield_stress=420e3, hardening=1e6)


@pytest.fixture
def soft_elastic():
    return MaterialModel(young=420e2, poisson=0.3)
