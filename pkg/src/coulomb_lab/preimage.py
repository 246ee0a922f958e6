"""Preimage counting, regular-value filtering, coarea and holography.

The preimage census solves, per triangle, the 3x3 linear system that
makes the affine interpolant of the nodal sphere values parallel to
the target direction (with positive ray orientation) in barycentric
coordinates.  A k-d tree over element centroid values prunes the
candidate triangles, so a census costs O(hits), not O(elements).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .divform import rotation_matrices
from .fields import phi
from .mesh import element_gradient, integrate, nodal_to_element
from .sphere import spherical_areas, subdivide_faces

FOUR_PI = 4.0 * np.pi
BARY_TOL = 1e-9


def _tangent_basis(nprime):
    a = np.zeros(3)
    a[int(np.argmin(np.abs(nprime)))] = 1.0
    t1 = np.cross(a, nprime)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(nprime, t1)


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    sign: int
    element: int
    bary: np.ndarray


@dataclass(frozen=True)
class PreimageCensus:
    target: np.ndarray
    hits: tuple
    degenerate_elements: tuple

    @property
    def card(self):
        return len(self.hits)


class PreimageSolver:
    """Reusable census context: centroid tree plus per-element radii."""

    def __init__(self, fld):
        self.fld = fld
        self.phi = phi(fld)
        verts = fld.values[fld.mesh.triangles]  # (nt, 3, 3)
        self.radius = np.linalg.norm(
            verts - fld.nbar[:, None, :], axis=2
        ).max(axis=1)
        self.max_radius = float(self.radius.max())
        self.tree = cKDTree(fld.nbar)

    def candidates(self, nprime):
        idx = self.tree.query_ball_point(
            np.asarray(nprime, dtype=float),
            2.0 * self.max_radius + 1e-9,
        )
        idx = np.asarray(sorted(idx), dtype=np.int64)
        if idx.size == 0:
            return idx
        d = np.linalg.norm(self.fld.nbar[idx] - nprime, axis=1)
        return idx[d <= 2.0 * self.radius[idx] + 1e-9]

    def census(self, nprime):
        return preimages(self.fld, nprime, solver=self)

    def kernel_integral(self, nprime):
        """Discrete integral of dX / |nbar(X) - n'| over the disc."""
        d = np.linalg.norm(self.fld.nbar - nprime, axis=1)
        d = np.maximum(d, 1e-300)
        return float((self.fld.mesh.areas / d).sum())


def preimages(fld, nprime, solver=None):
    """Census of {X : n(X) = n'} for the element-affine interpolant."""
    nprime = np.asarray(nprime, dtype=float)
    nprime = nprime / np.linalg.norm(nprime)
    if solver is None:
        solver = PreimageSolver(fld)
    cand = solver.candidates(nprime)
    hits, degenerate = [], []
    if cand.size == 0:
        return PreimageCensus(target=nprime, hits=(), degenerate_elements=())
    t1, t2 = _tangent_basis(nprime)
    verts = fld.values[fld.mesh.triangles[cand]]  # (m, 3, 3)
    A = np.empty((cand.size, 3, 3))
    A[:, 0] = verts @ t1
    A[:, 1] = verts @ t2
    A[:, 2] = 1.0
    rhs = np.array([0.0, 0.0, 1.0])
    dets = np.linalg.det(A)
    solvable = np.abs(dets) > 1e-12
    degenerate_mask = ~solvable & (
        np.linalg.norm(fld.nbar[cand] - nprime, axis=1)
        <= 2.0 * solver.radius[cand] + 1e-9
    )
    degenerate.extend(int(e) for e in cand[degenerate_mask])
    idx = np.flatnonzero(solvable)
    if idx.size:
        alpha = np.linalg.solve(
            A[idx], np.broadcast_to(rhs[:, None], (idx.size, 3, 1)).copy()
        )[..., 0]
        m = np.einsum("ki,kij->kj", alpha, verts[idx])
        ray_ok = m @ nprime > 0.0
        amin = alpha.min(axis=1)
        # closed-element solutions; edge/vertex hits are duplicated by
        # the neighbouring elements and deduplicated below
        inside = ray_ok & (amin > -BARY_TOL)
        tri_pts = fld.mesh.nodes[fld.mesh.triangles[cand[idx]]]
        pts = np.einsum("ki,kij->kj", alpha, tri_pts)
        for k in np.flatnonzero(inside):
            e = int(cand[idx[k]])
            if any(
                np.linalg.norm(h.point - pts[k]) < 1e-9 for h in hits
            ):
                continue
            sign = int(np.sign(solver.phi[e]))
            if sign == 0:
                degenerate.append(e)
            hits.append(
                Hit(point=pts[k], sign=sign, element=e, bary=alpha[k])
            )
    hits.sort(key=lambda hh: hh.element)
    return PreimageCensus(
        target=nprime,
        hits=tuple(hits),
        degenerate_elements=tuple(sorted(set(degenerate))),
    )


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reasons: tuple
    census: PreimageCensus


def regular_filter(fld, nprime, N=64, solver=None):
    """Regular-value test for a target direction.

    Rejects targets near the poles, with degenerate or zero-sign hits,
    with more than N hits, with hits too close to the boundary or to
    each other (within one mesh width), or with a large discrete
    kernel integral of dX / |nbar - n'|.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    nprime = np.asarray(nprime, dtype=float)
    nprime = nprime / np.linalg.norm(nprime)
    if solver is None:
        solver = PreimageSolver(fld)
    reasons = []
    k = np.array([0.0, 0.0, 1.0])
    if min(np.linalg.norm(nprime - k), np.linalg.norm(nprime + k)) < 1.0 / N:
        reasons.append("pole")
    census = solver.census(nprime)
    if census.degenerate_elements:
        reasons.append("degenerate")
    if any(h.sign == 0 for h in census.hits):
        reasons.append("zero_jacobian")
    if census.card > N:
        reasons.append("count")
    h_mesh = fld.mesh.h_max
    pts = np.array([h.point for h in census.hits]).reshape(-1, 2)
    if pts.size and np.linalg.norm(pts, axis=1).max() > 1.0 - h_mesh:
        reasons.append("boundary")
    if pts.shape[0] >= 2:
        dd = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        np.fill_diagonal(dd, np.inf)
        if dd.min() < h_mesh:
            reasons.append("separation")
    if solver.kernel_integral(nprime) > N:
        reasons.append("integral")
    return FilterResult(
        accepted=not reasons, reasons=tuple(reasons), census=census
    )


@dataclass(frozen=True, eq=False)
class CoareaReport:
    lhs: float
    rhs: float
    gap: float
    excluded_measure: float
    region_measure: float
    cards: np.ndarray = field(repr=False, default=None)
    accepted: np.ndarray = field(repr=False, default=None)
    signed_sums: np.ndarray = field(repr=False, default=None)


def coarea_check(fld, g, region, N=64, solver=None):
    """Both sides of the coarea identity over a sphere region.

    lhs integrates g |Phi| over elements whose centroid value lies in
    the region; rhs sums, over accepted quadrature nodes, the hit-wise
    total of g.  Nodes failing the regular filter contribute to the
    reported excluded measure instead.
    """
    g = np.asarray(g, dtype=float)
    if solver is None:
        solver = PreimageSolver(fld)
    if region.predicate is None:
        raise ValueError("region needs a membership predicate")
    inside = region.contains(fld.nbar)
    lhs = integrate(np.where(inside, g * np.abs(solver.phi), 0.0), fld.mesh)
    rhs = 0.0
    excluded = 0.0
    cards = np.zeros(region.nodes.shape[0], dtype=int)
    accepted = np.zeros(region.nodes.shape[0], dtype=bool)
    signed = np.zeros(region.nodes.shape[0], dtype=int)
    for q in range(region.nodes.shape[0]):
        res = regular_filter(fld, region.nodes[q], N=N, solver=solver)
        cards[q] = res.census.card
        signed[q] = sum(h.sign for h in res.census.hits)
        if res.accepted:
            accepted[q] = True
            rhs += region.weights[q] * sum(
                g[h.element] for h in res.census.hits
            )
        else:
            excluded += region.weights[q]
    return CoareaReport(
        lhs=lhs,
        rhs=rhs,
        gap=lhs - rhs,
        excluded_measure=excluded,
        region_measure=region.measure,
        cards=cards,
        accepted=accepted,
        signed_sums=signed,
    )


def _safe_nodes(nodes):
    """Nudge quadrature nodes off the rotation-family poles."""
    nodes = np.array(nodes, dtype=float)
    lam = nodes[:, 0] ** 2 + nodes[:, 1] ** 2
    bad = lam < 1e-10
    if np.any(bad):
        nodes[bad, 0] += 1e-5
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    return nodes


@dataclass(frozen=True, eq=False)
class HolographyReport:
    raw_term: float
    f_term: float
    omega_term: float
    residual: float
    mu: float
    omega_l2: float
    ratio: float
    excluded_measure: float
    omega1: np.ndarray = field(repr=False, default=None)
    omega2: np.ndarray = field(repr=False, default=None)


def region_averaged_omega(fld, region, tol=1e-3, max_depth=12):
    """(1/mu) integral over the region of omega_i(X, n'), per element.

    Faces whose centroid lies within half a face-diameter of an
    element's centroid value are integrated by recursive subdivision:
    a child face enters the centroid rule for an element once the
    element's value is farther than the child diameter, and the
    innermost neighborhood is dropped only when its analytic bound
    (|omega_i| <= 2 |d_i n| / dist, integrable) falls below `tol` of
    that element's accumulated value; the dropped weight is recorded
    per element.  Returns (omega1, omega2, excluded_per_element).
    """
    mesh = fld.mesh
    nt = mesh.triangle_count
    quad = region.quadrature
    r_excl = 0.5 * quad.face_diameter
    nodes = _safe_nodes(region.nodes)
    Us = rotation_matrices(nodes)
    acc1 = np.zeros(nt)
    acc2 = np.zeros(nt)
    excluded = np.zeros(nt)
    pending = {}  # q -> element indices needing local refinement
    for q in range(nodes.shape[0]):
        s, w = nodes[q], region.weights[q]
        diff = fld.nbar - s
        dist2 = (diff ** 2).sum(axis=1)
        far = dist2 > r_excl ** 2
        U = Us[q]
        m = fld.nbar @ U.T
        u1 = fld.d1 @ U.T
        u2 = fld.d2 @ U.T
        denom = 1.0 - m[:, 2]
        denom[~far] = 1.0
        w1 = (m[:, 0] * u1[:, 1] - m[:, 1] * u1[:, 0]) / denom
        w2 = (m[:, 0] * u2[:, 1] - m[:, 1] * u2[:, 0]) / denom
        acc1 += np.where(far, w * w1, 0.0)
        acc2 += np.where(far, w * w2, 0.0)
        near = np.flatnonzero(~far)
        if near.size:
            pending[q] = near
    if pending:
        gmax = np.maximum(
            np.linalg.norm(fld.d1, axis=1), np.linalg.norm(fld.d2, axis=1)
        )
        thresh = tol * np.maximum(
            np.maximum(np.abs(acc1), np.abs(acc2)), 1e-12
        )
        for q, elems in pending.items():
            scale = region.weights[q] / max(
                quad.weights[region.indices[q]], 1e-300
            )
            stack = [(quad.faces[region.indices[q]], elems, 0)]
            while stack:
                face, idx, depth = stack.pop()
                w_face = float(spherical_areas(face[None])[0]) * scale
                diam = float(
                    np.linalg.norm(face - face[[1, 2, 0]], axis=1).max()
                )
                c = face.mean(axis=0)
                c = _safe_nodes((c / np.linalg.norm(c))[None])[0]
                nb = fld.nbar[idx]
                dist = np.linalg.norm(nb - c, axis=1)
                far = dist > diam
                if np.any(far):
                    sel = idx[far]
                    U = rotation_matrices(c[None])[0]
                    m = fld.nbar[sel] @ U.T
                    u1 = fld.d1[sel] @ U.T
                    u2 = fld.d2[sel] @ U.T
                    denom = 1.0 - m[:, 2]
                    acc1[sel] += w_face * (
                        m[:, 0] * u1[:, 1] - m[:, 1] * u1[:, 0]
                    ) / denom
                    acc2[sel] += w_face * (
                        m[:, 0] * u2[:, 1] - m[:, 1] * u2[:, 0]
                    ) / denom
                near_idx = idx[~far]
                if near_idx.size == 0:
                    continue
                # the face sits within 2 diam of the element value, so
                # int 2 g / dist over it is below 2 g * 2 pi * (2 diam)
                bound = 8.0 * np.pi * diam * gmax[near_idx]
                done = (bound <= thresh[near_idx]) | (depth >= max_depth)
                if np.any(done):
                    excluded[near_idx[done]] += w_face
                rest = near_idx[~done]
                if rest.size:
                    for child in subdivide_faces(face[None]):
                        stack.append((child, rest, depth + 1))
    mu = region.measure
    return acc1 / mu, acc2 / mu, excluded


def holography_identity(fld, region, zeta):
    """Terms and residual of the region-holography identity.

    raw = integral Phi zeta; f_term = (4 pi / mu) of the same integral
    restricted to elements whose centroid value lies in the region;
    omega_term pairs the region-averaged potentials with grad zeta.
    """
    mu = region.measure
    if mu <= 0:
        raise ValueError("region must have positive measure")
    if region.predicate is None:
        raise ValueError("region needs a membership predicate")
    mesh = fld.mesh
    zeta = np.asarray(zeta, dtype=float)
    ph = phi(fld)
    zbar = nodal_to_element(zeta, mesh)
    raw = integrate(ph * zbar, mesh)
    inside = region.contains(fld.nbar)
    f_term = (FOUR_PI / mu) * integrate(
        np.where(inside, ph * zbar, 0.0), mesh
    )
    om1, om2, excl = region_averaged_omega(fld, region)
    gz = element_gradient(zeta, mesh)
    omega_term = integrate(om2 * gz[:, 0] - om1 * gz[:, 1], mesh)
    residual = raw - f_term - omega_term
    l2 = np.sqrt(
        integrate(om1 ** 2, mesh) + integrate(om2 ** 2, mesh)
    )
    dens = (fld.d1 ** 2).sum(axis=1) + (fld.d2 ** 2).sum(axis=1)
    grad_n = np.sqrt(integrate(dens, mesh))
    gz_norm = np.sqrt(integrate((gz ** 2).sum(axis=1), mesh))
    denom = grad_n * gz_norm / np.sqrt(mu)
    return HolographyReport(
        raw_term=raw,
        f_term=f_term,
        omega_term=omega_term,
        residual=residual,
        mu=mu,
        omega_l2=float(l2),
        ratio=abs(residual) / denom if denom > 0 else float("nan"),
        excluded_measure=float(excl.max(initial=0.0)),
        omega1=om1,
        omega2=om2,
    )
