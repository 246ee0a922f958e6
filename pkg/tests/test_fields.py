import io

import numpy as np
import pytest

from coulomb_lab.fields import (SamplingError, area_functional,
                                dirichlet_energy, export_field,
                                field_from_values, phi, sample_field)
from coulomb_lab.mesh import build_disc_mesh, integrate
from coulomb_lab.surfaces import closed_form_table, enneper_gauss_closure

FOUR_PI = 4.0 * np.pi


@pytest.fixture(scope="module")
def mesh():
    return build_disc_mesh(4)


@pytest.fixture(scope="module")
def field(mesh):
    return sample_field(enneper_gauss_closure(0.5), mesh)


def test_values_unit_norm(field):
    norms = np.linalg.norm(field.values, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-14)


def test_sampling_normalizes(mesh):
    fld = sample_field(lambda x, y: (2.0 * np.ones_like(x),
                                     np.zeros_like(x),
                                     np.zeros_like(x)), mesh)
    assert np.allclose(fld.values, [1.0, 0.0, 0.0])


def test_zero_vector_rejected(mesh):
    with pytest.raises(SamplingError):
        field_from_values(np.zeros((mesh.node_count, 3)), mesh)


def test_wrong_shape_rejected(mesh):
    with pytest.raises(ValueError):
        sample_field(lambda x, y: np.ones((5, 3)), mesh)


def test_phi_sign_and_magnitude(field, mesh):
    # the eps = 0.5 family has Phi = -4 eps^2 / lambda^2 < 0 everywhere
    ph = phi(field)
    assert ph.max() < 0
    table = closed_form_table(0.5)
    ref = table.phi_at(mesh.centroids[:, 0], mesh.centroids[:, 1])
    assert np.abs(ph - ref).max() < 0.05 * np.abs(ref).max()


def test_integral_abs_phi(field, mesh):
    val = integrate(np.abs(phi(field)), mesh)
    assert val == pytest.approx(FOUR_PI / 1.25, rel=5e-3)


def test_dirichlet_energy(field):
    assert dirichlet_energy(field) == pytest.approx(
        8.0 * np.pi / 1.25, rel=5e-3
    )


def test_minimal_surface_equality(field, mesh):
    # conformal harmonic maps satisfy 2 int |Phi| = int |grad n|^2
    val = 2.0 * integrate(np.abs(phi(field)), mesh)
    assert val == pytest.approx(dirichlet_energy(field), rel=5e-3)


def test_area_functional_margin(field):
    area = area_functional(field)
    assert 0 < area.value < FOUR_PI
    assert area.delta == pytest.approx(FOUR_PI - area.value)
    # |Phi| = |d1 n x d2 n| for conformal fields
    assert area.value == pytest.approx(FOUR_PI / 1.25, rel=5e-3)


def test_constant_field_trivial(mesh):
    fld = sample_field(lambda x, y: (np.zeros_like(x), np.zeros_like(x),
                                     np.ones_like(x)), mesh)
    assert np.abs(phi(fld)).max() < 1e-12
    assert dirichlet_energy(fld) < 1e-12
    assert area_functional(fld).value < 1e-12


def test_rotation_invariance(field, mesh):
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    rotated = field_from_values(field.values @ q.T, mesh)
    assert np.abs(phi(rotated) - phi(field)).max() < 1e-12


def test_reflection_antisymmetry(field, mesh):
    flipped = field.values.copy()
    flipped[:, 2] = -flipped[:, 2]
    reflected = field_from_values(flipped, mesh)
    assert np.abs(phi(reflected) + phi(field)).max() < 1e-12


def test_export_field_header(mesh):
    fld = sample_field(lambda x, y: (np.zeros_like(x), np.zeros_like(x),
                                     np.ones_like(x)), mesh)
    buf = io.StringIO()
    export_field(fld, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "node,x,y,n1,n2,n3"
    assert len(lines) == 1 + mesh.node_count
    row = lines[1].split(",")
    assert row[0] == "0" and float(row[5]) == 1.0


def test_resampling_matches_closure(field, mesh):
    resampled = sample_field(field.closure, mesh)
    assert np.array_equal(resampled.values, field.values)
