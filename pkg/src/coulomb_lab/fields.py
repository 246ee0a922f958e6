"""Sphere-valued fields on the disc: sampling, Jacobian density, energies."""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .mesh import DiscMesh, element_gradient, integrate

FOUR_PI = 4.0 * np.pi


class SamplingError(Exception):
    """Closure returned a (near-)zero vector at some node."""


@dataclass(frozen=True, eq=False)
class SphereField:
    """Unit vectors at mesh nodes, with the sampling closure retained.

    Derived per-element data (P1 derivatives, normalized centroid
    value) is computed once at construction:

    d1, d2 : (nt, 3) derivatives of the affine interpolant
    nbar   : (nt, 3) normalized triangle-centroid value
    """

    mesh: DiscMesh
    values: np.ndarray
    closure: Optional[Callable] = None
    d1: np.ndarray = field(repr=False, default=None)
    d2: np.ndarray = field(repr=False, default=None)
    nbar: np.ndarray = field(repr=False, default=None)


def _derive(mesh, values):
    g = element_gradient(values, mesh)  # (nt, 2, 3)
    d1, d2 = g[:, 0], g[:, 1]
    nbar = values[mesh.triangles].mean(axis=1)
    nbar = nbar / np.linalg.norm(nbar, axis=1, keepdims=True)
    return d1, d2, nbar


def field_from_values(values, mesh, closure=None):
    """Wrap nodal vectors as a SphereField, normalizing to unit length."""
    values = np.array(values, dtype=float)
    if values.shape != (mesh.node_count, 3):
        raise ValueError("values must have shape (node_count, 3)")
    norms = np.linalg.norm(values, axis=1)
    bad = np.flatnonzero(norms < 1e-14)
    if bad.size:
        raise SamplingError(f"zero vector at node {bad[0]}")
    values /= norms[:, None]
    d1, d2, nbar = _derive(mesh, values)
    for arr in (values, d1, d2, nbar):
        arr.setflags(write=False)
    return SphereField(mesh=mesh, values=values, closure=closure,
                       d1=d1, d2=d2, nbar=nbar)


def sample_field(closure, mesh):
    """Evaluate a closure (X1, X2) -> R^3 at the nodes and normalize.

    The closure must be vectorized over numpy arrays and nonzero at
    every node; the raw closure is retained for exact resampling.
    """
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    raw = np.asarray(closure(x, y), dtype=float)
    if raw.shape == (3, mesh.node_count):
        raw = raw.T
    if raw.shape != (mesh.node_count, 3):
        raise ValueError("closure must return one 3-vector per node")
    return field_from_values(raw, mesh, closure=closure)


def phi(fld):
    """Per-element Jacobian density nbar . (d1 x d2)."""
    return np.einsum("ti,ti->t", fld.nbar, np.cross(fld.d1, fld.d2))


def dirichlet_energy(fld):
    """Integral of |d1 n|^2 + |d2 n|^2 over the disc."""
    dens = (fld.d1 ** 2).sum(axis=1) + (fld.d2 ** 2).sum(axis=1)
    return integrate(dens, fld.mesh)


class AreaResult(NamedTuple):
    value: float
    delta: float  # 4*pi - value; may be negative


def area_functional(fld):
    """Integral of |d1 n x d2 n|, with the implied margin below 4*pi."""
    dens = np.linalg.norm(np.cross(fld.d1, fld.d2), axis=1)
    value = integrate(dens, fld.mesh)
    return AreaResult(value=value, delta=FOUR_PI - value)


def export_field(fld, stream):
    """CSV export with header `node,x,y,n1,n2,n3`."""
    stream.write("node,x,y,n1,n2,n3\n")
    for i, ((x, y), (n1, n2, n3)) in enumerate(
        zip(fld.mesh.nodes, fld.values)
    ):
        stream.write(
            f"{i},{x:.17g},{y:.17g},{n1:.17g},{n2:.17g},{n3:.17g}\n"
        )
