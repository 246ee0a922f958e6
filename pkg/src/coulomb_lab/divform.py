"""Rotated divergence-form machinery for the Jacobian density.

For a target n' away from the poles, U(n') rotates n' to the north
pole k.  With m = U(n') n, the kernel

    Gamma(n, n', xi) = (m1 (U xi)_2 - m2 (U xi)_1) / (1 - m3)

is linear in xi and bounded by 2|xi| / |n - n'|.  Evaluating Gamma on
the element derivatives of a field gives per-element potentials
(omega_1, omega_2) whose curl reproduces the Jacobian density weakly;
averaging over an admissible sphere region K gives square-integrable
potentials with the 8 pi / meas(K) certificate.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .fields import area_functional, phi
from .mesh import integrate, nodal_to_element
from .sphere import SphereRegion, sphere_quadrature, _make_region

FOUR_PI = 4.0 * np.pi
POLE_TOL = 1e-12


class PoleDegeneracyError(Exception):
    """Rotation requested at n' = +-k where the family degenerates."""


class SingularElementError(Exception):
    """Element centroid value coincides with the target n'."""


class HypothesisViolationError(Exception):
    """Field violates the area margin needed for an admissible region."""


def rotation_matrix(nprime):
    """Rotation U with U(n') n' = k, smooth away from the poles."""
    nprime = np.asarray(nprime, dtype=float)
    return rotation_matrices(nprime[None])[0]


def rotation_matrices(nprimes):
    """Batched rotation family, one 3x3 matrix per target."""
    nprimes = np.asarray(nprimes, dtype=float)
    n1, n2, n3 = nprimes[:, 0], nprimes[:, 1], nprimes[:, 2]
    lam = n1 ** 2 + n2 ** 2
    if np.any(lam < POLE_TOL):
        raise PoleDegeneracyError("rotation family degenerates at +-k")
    s = np.sqrt(lam)
    U = np.empty(nprimes.shape[:1] + (3, 3))
    U[:, 0, 0] = n1 * n3 / s
    U[:, 0, 1] = n2 * n3 / s
    U[:, 0, 2] = -s
    U[:, 1, 0] = -n2 / s
    U[:, 1, 1] = n1 / s
    U[:, 1, 2] = 0.0
    U[:, 2, 0] = n1
    U[:, 2, 1] = n2
    U[:, 2, 2] = n3
    return U


def gamma_many(n, nprime, xi):
    """Vectorized Gamma over matching stacks of (n, n', xi)."""
    n = np.atleast_2d(np.asarray(n, dtype=float))
    nprime = np.atleast_2d(np.asarray(nprime, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    U = rotation_matrices(nprime)
    m = np.einsum("kij,kj->ki", U, n)
    u = np.einsum("kij,kj->ki", U, xi)
    denom = 1.0 - m[:, 2]
    if np.any(denom < 1e-14):
        raise ValueError("Gamma undefined at n = n'")
    return (m[:, 0] * u[:, 1] - m[:, 1] * u[:, 0]) / denom


def gamma(n, nprime, xi):
    """The kernel Gamma(n, n', xi); requires n != n' and n' off-pole."""
    return float(gamma_many(n, nprime, xi)[0])


def omega(fld, nprime, strict=True, singular_tol=1e-9):
    """Per-element potentials omega_i = Gamma(nbar, n', d_i n).

    Returns (omega1, omega2, singular_mask).  In strict mode a
    coincidence nbar = n' raises; otherwise the element is masked and
    its value set to zero.
    """
    nprime = np.asarray(nprime, dtype=float)
    U = rotation_matrices(nprime[None])[0]
    m = fld.nbar @ U.T
    u1 = fld.d1 @ U.T
    u2 = fld.d2 @ U.T
    dist2 = ((fld.nbar - nprime) ** 2).sum(axis=1)
    singular = dist2 < singular_tol ** 2
    if strict and np.any(singular):
        raise SingularElementError(
            f"element {int(np.flatnonzero(singular)[0])} has centroid "
            "value at n'"
        )
    denom = 1.0 - m[:, 2]
    denom[singular] = 1.0
    w1 = (m[:, 0] * u1[:, 1] - m[:, 1] * u1[:, 0]) / denom
    w2 = (m[:, 0] * u2[:, 1] - m[:, 1] * u2[:, 0]) / denom
    w1[singular] = 0.0
    w2[singular] = 0.0
    return w1, w2, singular


@dataclass(frozen=True)
class AdmissibleRegionReport:
    region: SphereRegion
    sigma: float          # achieved minimum distance to image and poles
    measure: float
    delta: float


def admissible_region(fld, n_samples=None, level=4, margin=0.05):
    """Sphere-quadrature nodes at distance > margin from the image.

    The image is approximated by element-centroid values (optionally
    subsampled to n_samples); nodes within `margin` (chord distance)
    of any sample or of +-k are discarded.  Requires a positive area
    margin delta = 4 pi - area, and reports the achieved sigma.
    """
    area = area_functional(fld)
    if area.delta <= 0:
        raise HypothesisViolationError(
            f"area functional {area.value:.6f} >= 4 pi; no margin"
        )
    samples = fld.nbar
    if n_samples is not None and samples.shape[0] > n_samples:
        step = samples.shape[0] // n_samples
        samples = samples[::step]
    quad = sphere_quadrature(level)
    tree = cKDTree(samples)
    dist, _ = tree.query(quad.nodes, k=1)
    pole = np.minimum(
        np.linalg.norm(quad.nodes - np.array([0.0, 0.0, 1.0]), axis=1),
        np.linalg.norm(quad.nodes + np.array([0.0, 0.0, 1.0]), axis=1),
    )
    dist = np.minimum(dist, pole)
    mask = dist > margin
    if not np.any(mask):
        raise HypothesisViolationError(
            "no admissible sphere region: field image too large"
        )
    region = _make_region(quad, mask, None)
    return AdmissibleRegionReport(
        region=region,
        sigma=float(dist[mask].min()),
        measure=region.measure,
        delta=area.delta,
    )


@dataclass(frozen=True, eq=False)
class DivergenceForm:
    omega1: np.ndarray = field(repr=False)
    omega2: np.ndarray = field(repr=False)
    region_measure: float = 0.0
    delta: float = 0.0
    l2_omega1: float = 0.0
    l2_omega2: float = 0.0
    bound_slack: np.ndarray = field(repr=False, default=None)
    kernel_bound1: np.ndarray = field(repr=False, default=None)
    kernel_bound2: np.ndarray = field(repr=False, default=None)


def averaged_omega(fld, region, min_margin=0.025):
    """Region-averaged potentials Omega_i with bound certificates.

    Omega_i(T) = (1/meas K) sum_q w_q Gamma(nbar_T, s_q, d_i n_T).
    Certifies elementwise both the quadrature bound
    (2/measK) (sum_q w_q/|nbar-s_q|) |d_i n| and the closed-form
    8 pi / meas(K) |d_i n|; `bound_slack` is the minimum slack of the
    latter over i = 1, 2 (positive means satisfied).
    """
    mesh = fld.mesh
    nt = mesh.triangle_count
    acc1 = np.zeros(nt)
    acc2 = np.zeros(nt)
    kern1 = np.zeros(nt)
    Us = rotation_matrices(region.nodes)
    for q in range(region.nodes.shape[0]):
        s = region.nodes[q]
        w = region.weights[q]
        dist = np.linalg.norm(fld.nbar - s, axis=1)
        if dist.min() < min_margin:
            raise SingularElementError(
                "averaging region touches the field image"
            )
        U = Us[q]
        m = fld.nbar @ U.T
        u1 = fld.d1 @ U.T
        u2 = fld.d2 @ U.T
        denom = 1.0 - m[:, 2]
        acc1 += w * (m[:, 0] * u1[:, 1] - m[:, 1] * u1[:, 0]) / denom
        acc2 += w * (m[:, 0] * u2[:, 1] - m[:, 1] * u2[:, 0]) / denom
        kern1 += w / dist
    mu = region.measure
    om1 = acc1 / mu
    om2 = acc2 / mu
    g1 = np.linalg.norm(fld.d1, axis=1)
    g2 = np.linalg.norm(fld.d2, axis=1)
    qbound1 = (2.0 / mu) * kern1 * g1
    qbound2 = (2.0 / mu) * kern1 * g2
    cbound1 = (2.0 * FOUR_PI / mu) * g1
    cbound2 = (2.0 * FOUR_PI / mu) * g2
    slack = np.minimum(cbound1 - np.abs(om1), cbound2 - np.abs(om2))
    if np.any(np.abs(om1) > qbound1 + 1e-9) or np.any(
        np.abs(om2) > qbound2 + 1e-9
    ):
        raise AssertionError("averaged potential violates its kernel bound")
    delta = area_functional(fld).delta
    return DivergenceForm(
        omega1=om1,
        omega2=om2,
        region_measure=mu,
        delta=delta,
        l2_omega1=float(np.sqrt(integrate(om1 ** 2, mesh))),
        l2_omega2=float(np.sqrt(integrate(om2 ** 2, mesh))),
        bound_slack=slack,
        kernel_bound1=qbound1,
        kernel_bound2=qbound2,
    )


def weak_identity_residual(fld, form, zeta):
    """Residual of the weak identity against a test function.

    Returns integral of Phi zeta minus integral of
    Omega_2 d1(zeta) - Omega_1 d2(zeta); zeta must vanish on the
    boundary.
    """
    from .mesh import element_gradient

    zeta = np.asarray(zeta, dtype=float)
    mesh = fld.mesh
    if np.abs(zeta[mesh.boundary_mask]).max(initial=0.0) > 1e-12:
        raise ValueError("test function must vanish on the boundary")
    zbar = nodal_to_element(zeta, mesh)
    lhs = integrate(phi(fld) * zbar, mesh)
    gz = element_gradient(zeta, mesh)
    rhs = integrate(form.omega2 * gz[:, 0] - form.omega1 * gz[:, 1], mesh)
    return lhs - rhs


def export_divform(fld, form, stream):
    """CSV of per-element (phi, omega1, omega2, bound slack)."""
    stream.write("element,phi,omega1,omega2,bound_slack\n")
    ph = phi(fld)
    for t in range(fld.mesh.triangle_count):
        stream.write(
            f"{t},{ph[t]:.17g},{form.omega1[t]:.17g},"
            f"{form.omega2[t]:.17g},{form.bound_slack[t]:.17g}\n"
        )
