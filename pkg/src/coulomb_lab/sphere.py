"""Quadrature and regions on the unit sphere.

Nodes come from recursive icosahedral subdivision: each face of the
icosahedron is split into four by projected edge midpoints, and every
face contributes its (normalized) centroid with the spherical-excess
area as weight.  The weights tile the sphere, so they sum to 4*pi up
to rounding at every level.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

MAX_SPHERE_LEVEL = 9

FOUR_PI = 4.0 * np.pi


def _normalize_rows(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _icosahedron_faces():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            verts.extend([(0.0, a, b), (a, b, 0.0), (b, 0.0, a)])
    verts = _normalize_rows(np.asarray(verts))
    hull = ConvexHull(verts)
    faces = verts[hull.simplices]  # (20, 3, 3)
    # orient every face outward (counterclockwise seen from outside)
    n = np.cross(faces[:, 1] - faces[:, 0], faces[:, 2] - faces[:, 0])
    inward = np.einsum("fi,fi->f", n, faces.mean(axis=1)) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return faces


def subdivide_faces(faces):
    """Split each spherical triangle into four via projected midpoints."""
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    m01 = _normalize_rows(v0 + v1)
    m12 = _normalize_rows(v1 + v2)
    m02 = _normalize_rows(v0 + v2)
    children = np.stack(
        [
            np.stack([v0, m01, m02], axis=1),
            np.stack([m01, v1, m12], axis=1),
            np.stack([m02, m12, v2], axis=1),
            np.stack([m01, m12, m02], axis=1),
        ],
        axis=1,
    )
    return children.reshape(-1, 3, 3)


def spherical_areas(faces):
    """Solid angle of each spherical triangle (Oosterom-Strackee)."""
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    num = np.einsum("fi,fi->f", a, np.cross(b, c))
    den = (
        1.0
        + np.einsum("fi,fi->f", a, b)
        + np.einsum("fi,fi->f", b, c)
        + np.einsum("fi,fi->f", c, a)
    )
    return 2.0 * np.arctan2(np.abs(num), den)


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    level: int
    faces: np.ndarray = field(repr=False)  # (nf, 3, 3)
    nodes: np.ndarray = field(repr=False)  # (nf, 3) face centroids
    weights: np.ndarray = field(repr=False)  # (nf,) spherical areas
    face_diameter: float = 0.0  # max vertex-to-vertex distance


_quadrature_cache = {}


def sphere_quadrature(level):
    """Centroid nodes and spherical-excess weights at a subdivision level."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    if level > MAX_SPHERE_LEVEL:
        raise ValueError(f"level {level} exceeds guard {MAX_SPHERE_LEVEL}")
    if level in _quadrature_cache:
        return _quadrature_cache[level]
    faces = _icosahedron_faces()
    for _ in range(level):
        faces = subdivide_faces(faces)
    nodes = _normalize_rows(faces.mean(axis=1))
    weights = spherical_areas(faces)
    d = np.linalg.norm(faces - faces[:, [1, 2, 0]], axis=2)
    quad = SphereQuadrature(
        level=level,
        faces=faces,
        nodes=nodes,
        weights=weights,
        face_diameter=float(d.max()),
    )
    for arr in (quad.faces, quad.nodes, quad.weights):
        arr.setflags(write=False)
    _quadrature_cache[level] = quad
    return quad


@dataclass(frozen=True, eq=False)
class SphereRegion:
    """Subset of S2 carried by filtered quadrature nodes.

    `measure` is exact when a closed form is available (caps, full
    sphere) and otherwise the empirical weight sum.  Weights are
    rescaled so they sum to `measure`.
    """

    quadrature: SphereQuadrature
    indices: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    measure: float = 0.0
    empirical_measure: float = 0.0
    predicate: object = None

    def contains(self, points):
        if self.predicate is None:
            raise ValueError("region has no membership predicate")
        return self.predicate(np.atleast_2d(np.asarray(points, dtype=float)))


def _make_region(quad, mask, predicate, exact_measure=None):
    idx = np.flatnonzero(mask)
    w = quad.weights[idx].copy()
    empirical = float(w.sum())
    if exact_measure is None:
        measure = empirical
    else:
        measure = float(exact_measure)
        if empirical > 0:
            w *= measure / empirical
    return SphereRegion(
        quadrature=quad,
        indices=idx,
        nodes=quad.nodes[idx].copy(),
        weights=w,
        measure=measure,
        empirical_measure=empirical,
        predicate=predicate,
    )


def full_sphere(level):
    quad = sphere_quadrature(level)
    return _make_region(
        quad,
        np.ones(quad.nodes.shape[0], dtype=bool),
        lambda p: np.ones(p.shape[0], dtype=bool),
        exact_measure=FOUR_PI,
    )


def cap(center, rho, level=4):
    """Geodesic cap {s : angle(s, center) <= rho} with exact measure."""
    if not 0.0 < rho < np.pi:
        raise ValueError("cap radius must lie strictly between 0 and pi")
    center = np.asarray(center, dtype=float)
    center = center / np.linalg.norm(center)
    cos_rho = np.cos(rho)

    def predicate(p):
        return p @ center >= cos_rho

    quad = sphere_quadrature(level)
    return _make_region(
        quad,
        predicate(quad.nodes),
        predicate,
        exact_measure=2.0 * np.pi * (1.0 - cos_rho),
    )


def complement_region(region):
    """Complement of a region on the same quadrature, measure 4pi - m."""
    quad = region.quadrature
    mask = np.ones(quad.nodes.shape[0], dtype=bool)
    mask[region.indices] = False
    pred = region.predicate

    def predicate(p):
        return ~pred(p)

    return _make_region(
        quad, mask, predicate if pred is not None else None,
        exact_measure=FOUR_PI - region.measure,
    )


def region_from_predicate(predicate, level=4, exact_measure=None):
    quad = sphere_quadrature(level)
    return _make_region(quad, predicate(quad.nodes), predicate, exact_measure)


class SingularQuadratureError(Exception):
    """Non-finite integrand value at a node without singularity handling."""


def _eval(f, points):
    vals = np.asarray(f(points), dtype=float)
    if vals.shape != (points.shape[0],):
        raise ValueError("integrand must map (k,3) points to (k,) values")
    return vals


def integrate_sphere(f, region, singularity=None, tol=1e-4, max_depth=12):
    """Quadrature over a region; `f` maps an (k,3) array to (k,) values.

    With `singularity` set to a point on S2, faces whose centroid lies
    within two face-diameters of it are subdivided recursively until
    each face's contribution bound drops below `tol` of the running
    total (integrable 1/|s-x| type kernels).  Returns (value,
    error_indicator) where the indicator collects dropped-face bounds.
    """
    quad = region.quadrature
    scale = region.weights.sum() / max(region.empirical_measure, 1e-300)
    if singularity is None:
        vals = _eval(f, region.nodes)
        if not np.all(np.isfinite(vals)):
            raise SingularQuadratureError(
                "non-finite integrand; declare the singularity"
            )
        return float(np.dot(vals, region.weights)), 0.0

    x0 = np.asarray(singularity, dtype=float)
    x0 = x0 / np.linalg.norm(x0)
    near = (
        np.linalg.norm(region.nodes - x0, axis=1)
        < 2.0 * quad.face_diameter
    )
    vals_far = _eval(f, region.nodes[~near])
    if not np.all(np.isfinite(vals_far)):
        raise SingularQuadratureError("non-finite integrand away from the "
                                      "declared singularity")
    total = float(np.dot(vals_far, region.weights[~near]))
    dropped = 0.0

    # stack of (faces, depth); refine near-singular faces adaptively
    stack = [(quad.faces[region.indices[near]], 0)]
    while stack:
        faces, depth = stack.pop()
        if faces.shape[0] == 0:
            continue
        w = spherical_areas(faces) * scale
        c = _normalize_rows(faces.mean(axis=1))
        vals = _eval(f, c)
        contrib = np.where(np.isfinite(vals), w * vals, np.inf)
        small = np.isfinite(contrib) & (
            np.abs(contrib) <= tol * max(abs(total), 1.0)
        )
        total += float(contrib[small].sum())
        rest = ~small
        if not np.any(rest):
            continue
        if depth >= max_depth:
            # tiny faces hugging the singularity: drop, record a bound
            finite = rest & np.isfinite(contrib)
            total += float(contrib[finite].sum())
            dropped += float(np.abs(contrib[finite]).sum()) + float(
                w[rest & ~np.isfinite(contrib)].sum()
            )
            continue
        stack.append((subdivide_faces(faces[rest]), depth + 1))
    return total, dropped
