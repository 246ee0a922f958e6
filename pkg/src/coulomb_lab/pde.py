"""P1 finite-element solvers on the disc.

Stiffness matrices are assembled once per mesh and the sparse direct
factorizations (Dirichlet restriction, pinned Neumann system) are
cached on the mesh, keyed weakly so meshes can be garbage collected.
"""

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import element_gradient, integrate, nodal_to_element

_cache = weakref.WeakKeyDictionary()


def _mesh_cache(mesh):
    entry = _cache.get(mesh)
    if entry is None:
        entry = {}
        _cache[mesh] = entry
    return entry


def stiffness_matrix(mesh):
    """Assemble the P1 stiffness matrix (CSR)."""
    entry = _mesh_cache(mesh)
    if "K" not in entry:
        gx, gy, a = mesh.grad_x, mesh.grad_y, mesh.areas
        local = (
            np.einsum("ti,tj->tij", gx, gx)
            + np.einsum("ti,tj->tij", gy, gy)
        ) * a[:, None, None]
        rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
        cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
        K = sp.coo_matrix(
            (local.reshape(-1), (rows, cols)),
            shape=(mesh.node_count, mesh.node_count),
        ).tocsr()
        entry["K"] = K
    return entry["K"]


def lumped_mass(mesh):
    """Nodal weights w_i with sum w = polygonal area (lumped mass)."""
    entry = _mesh_cache(mesh)
    if "M" not in entry:
        w = np.zeros(mesh.node_count)
        np.add.at(w, mesh.triangles.reshape(-1),
                  np.repeat(mesh.areas / 3.0, 3))
        entry["M"] = w
    return entry["M"]


def _dirichlet_factor(mesh):
    entry = _mesh_cache(mesh)
    if "dirichlet" not in entry:
        K = stiffness_matrix(mesh)
        idx = mesh.interior_nodes
        entry["dirichlet"] = (idx, spla.splu(K[np.ix_(idx, idx)].tocsc()))
    return entry["dirichlet"]


def _pinned_factor(mesh):
    entry = _mesh_cache(mesh)
    if "pinned" not in entry:
        K = stiffness_matrix(mesh)
        idx = np.arange(1, mesh.node_count)  # pin the center node
        entry["pinned"] = (idx, spla.splu(K[np.ix_(idx, idx)].tocsc()))
    return entry["pinned"]


def element_load(rhs, mesh):
    """Load vector for a piecewise-constant right-hand side."""
    rhs = np.asarray(rhs, dtype=float)
    b = np.zeros(mesh.node_count)
    np.add.at(b, mesh.triangles.reshape(-1),
              np.repeat(rhs * mesh.areas / 3.0, 3))
    return b


def flux_load(h, mesh):
    """Load vector b_i = integral of h . grad(zeta_i), h per element."""
    h = np.asarray(h, dtype=float)
    contrib = (
        h[:, 0, None] * mesh.grad_x + h[:, 1, None] * mesh.grad_y
    ) * mesh.areas[:, None]
    b = np.zeros(mesh.node_count)
    np.add.at(b, mesh.triangles.reshape(-1), contrib.reshape(-1))
    return b


def curl_load(h, mesh):
    """Load vector b_i = integral of (h1 d2 - h2 d1) zeta_i's gradient.

    This is the weak form of the scalar curl d1 h2 - d2 h1 after one
    integration by parts: b_i = integral h1 d2(zeta_i) - h2 d1(zeta_i).
    """
    h = np.asarray(h, dtype=float)
    contrib = (
        h[:, 0, None] * mesh.grad_y - h[:, 1, None] * mesh.grad_x
    ) * mesh.areas[:, None]
    b = np.zeros(mesh.node_count)
    np.add.at(b, mesh.triangles.reshape(-1), contrib.reshape(-1))
    return b


@dataclass(frozen=True)
class PoissonSolution:
    f: np.ndarray
    gradient_norm: float
    max_abs: float
    residual: float


def _dirichlet_solve_load(b, mesh):
    idx, lu = _dirichlet_factor(mesh)
    f = np.zeros(mesh.node_count)
    bi = b[idx]
    fi = lu.solve(bi)
    f[idx] = fi
    K = stiffness_matrix(mesh)
    r = K[idx] @ f - bi
    bnorm = np.linalg.norm(bi)
    residual = float(np.linalg.norm(r) / (bnorm if bnorm > 0 else 1.0))
    # energy identity: |grad f|^2 = f^T K f = f^T b for the exact solve
    grad2 = max(float(fi @ bi), 0.0)
    return PoissonSolution(
        f=f,
        gradient_norm=float(np.sqrt(grad2)),
        max_abs=float(np.abs(f).max()),
        residual=residual,
    )


def solve_poisson_dirichlet(rhs, mesh):
    """Weak solution of -Laplace(f) = rhs with f = 0 on the boundary."""
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("right-hand side must be finite")
    return _dirichlet_solve_load(element_load(rhs, mesh), mesh)


def dual_norm(rhs, mesh):
    """sup of (rhs, zeta) / |grad zeta| over discrete zeta vanishing on
    the boundary; equals |grad f| for the Dirichlet solution."""
    return solve_poisson_dirichlet(rhs, mesh).gradient_norm


def solve_gauge_neumann(h, mesh):
    """Zero-mean theta minimizing the integral of |grad(theta) + h|^2.

    Weak form: (grad theta, grad zeta) = -(h, grad zeta) for all zeta,
    the natural-boundary-condition problem.  The singular Neumann
    system is made definite by pinning the center node, then theta is
    shifted to zero area-weighted mean.
    """
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be finite")
    b = -flux_load(h, mesh)
    idx, lu = _pinned_factor(mesh)
    theta = np.zeros(mesh.node_count)
    theta[idx] = lu.solve(b[idx] - 0.0)
    w = lumped_mass(mesh)
    theta -= (w @ theta) / w.sum()
    return theta


@dataclass(frozen=True)
class WenteReport:
    ratio: float          # nan when not applicable
    applicable: bool
    f_max: float
    grad_a: float
    grad_b: float


def wente_diagnostic(a, b, mesh):
    """Ratio |f|_inf / (|grad a| |grad b|) for -Laplace(f) = {a, b}."""
    ga = element_gradient(np.asarray(a, dtype=float), mesh)
    gb = element_gradient(np.asarray(b, dtype=float), mesh)
    rhs = ga[:, 0] * gb[:, 1] - ga[:, 1] * gb[:, 0]
    sol = solve_poisson_dirichlet(rhs, mesh)
    na = np.sqrt(integrate((ga ** 2).sum(axis=1), mesh))
    nb = np.sqrt(integrate((gb ** 2).sum(axis=1), mesh))
    if na * nb < 1e-14:
        return WenteReport(ratio=float("nan"), applicable=False,
                           f_max=sol.max_abs, grad_a=na, grad_b=nb)
    return WenteReport(ratio=sol.max_abs / (na * nb), applicable=True,
                       f_max=sol.max_abs, grad_a=na, grad_b=nb)


def gradient_l2(values, mesh):
    """L2 norm of the P1 gradient of nodal data."""
    g = element_gradient(np.asarray(values, dtype=float), mesh)
    return float(np.sqrt(integrate((g ** 2).sum(axis=1), mesh)))


def pair_phi_nodal(element_values, zeta, mesh):
    """Integral of a per-element density against nodal zeta (centroid
    average of zeta per element)."""
    zbar = nodal_to_element(np.asarray(zeta, dtype=float), mesh)
    return integrate(np.asarray(element_values, dtype=float) * zbar, mesh)
