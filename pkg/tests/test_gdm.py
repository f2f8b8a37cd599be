import io
import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from hmmgdm.errors import DimensionMismatch
from hmmgdm.gdm import HMMDiscretisation
from hmmgdm.mesh import build_mesh
from hmmgdm.models import gbf_exact

from conftest import FAMILIES

SQ2 = math.sqrt(2.0)


def square_disc():
    return HMMDiscretisation(build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [[0, 1, 2, 3]]))


def face_by_midpoint(mesh, point):
    return int(np.argmin(np.linalg.norm(mesh.face_midpoints - point, axis=1)))


def hexagon(radius=1.0, centre=(0.0, 0.0)):
    ang = np.arange(6) * np.pi / 3
    pts = np.column_stack([centre[0] + radius * np.cos(ang), centre[1] + radius * np.sin(ang)])
    return build_mesh(pts, [list(range(6))])


def harmonic_extension(disc, rng):
    """Random cell and boundary values; interior faces solve their own rows."""
    u = rng.standard_normal(disc.n_dofs)
    S = disc.stiffness.tocsr()
    fi = disc.n_cells + np.flatnonzero(~disc.mesh.is_boundary)
    rest = np.setdiff1d(np.arange(disc.n_dofs), fi)
    u[fi] = spla.spsolve(S[fi][:, fi].tocsc(), -S[fi][:, rest] @ u[rest])
    return u


# -- reconstruction and interpolation -------------------------------------------

def test_reconstruct_ones(level1):
    _, disc = level1["hexagonal"]
    u = np.ones(disc.n_dofs)
    assert all(disc.reconstruct(u, k) == 1.0 for k in range(0, disc.n_cells, 7))


def test_interpolate_on_unit_square():
    disc = square_disc()
    u = disc.interpolate(lambda x, y: x + y)
    assert disc.reconstruct(u, 0) == pytest.approx(1.0)
    v = disc.interpolate_initial(lambda x, y: x)
    assert v[0] == pytest.approx(0.5)
    m = disc.mesh
    for mid, val in [((0.5, 0), 0.5), ((1, 0.5), 1.0), ((0.5, 1), 0.5), ((0, 0.5), 0.0)]:
        assert v[disc.face_dof(face_by_midpoint(m, mid))] == pytest.approx(val)
    assert not disc.interpolate(lambda x, y: 0 * x).any()


@pytest.mark.parametrize("p,expected", [(2.0, 2 ** -0.5), (0.5, 0.25)])
def test_gbf_interpolant_at_origin(p, expected):
    disc = HMMDiscretisation(hexagon())
    u = disc.interpolate(lambda x, y: gbf_exact(x, y, 0.0, p))
    assert disc.reconstruct(u, 0) == pytest.approx(expected, rel=1e-14)


def test_dimension_check(level1):
    _, disc = level1["triangular"]
    with pytest.raises(DimensionMismatch):
        disc.gradients(np.zeros(disc.n_dofs + 1))


# -- gradients ---------------------------------------------------------------------

def test_consistent_gradient_unit_square():
    disc = square_disc()
    u = disc.interpolate(lambda x, y: x)
    np.testing.assert_allclose(disc.consistent_cell_gradient(u, 0), [1, 0], atol=1e-15)
    np.testing.assert_allclose(disc.consistent_cell_gradient(np.full(5, 3.0), 0), [0, 0],
                               atol=1e-15)


def test_consistent_gradient_hexagon():
    disc = HMMDiscretisation(hexagon(0.7, (0.3, -0.2)))
    u = disc.interpolate(lambda x, y: 3 * x - 2 * y)
    np.testing.assert_allclose(disc.consistent_cell_gradient(u, 0), [3, -2], atol=1e-12)


def test_stabilized_gradient_hand_expansion():
    # u_K = 0, bottom face 1, other faces 0 on [0,1]^2 with x_K = (1/2, 1/2):
    # G_K = (0,-1); residual 1/2 on bottom and top, 0 on the sides; d = 1/2.
    disc = square_disc()
    m = disc.mesh
    bottom = face_by_midpoint(m, (0.5, 0))
    u = np.zeros(disc.n_dofs)
    u[disc.face_dof(bottom)] = 1.0
    expect = {(0.5, 0): (0, -1 - SQ2), (1, 0.5): (0, -1), (0.5, 1): (0, -1 + SQ2),
              (0, 0.5): (0, -1)}
    for mid, g in expect.items():
        s = face_by_midpoint(m, mid)
        np.testing.assert_allclose(disc.stabilized_gradient(u, 0, s), g, atol=1e-14)


def test_constant_dofs_have_zero_gradient(level1):
    for _, disc in level1.values():
        assert np.abs(disc.gradients(np.full(disc.n_dofs, 2.5))).max() < 1e-12


@pytest.mark.parametrize("family", FAMILIES)
@settings(max_examples=10, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5))
def test_affine_exactness(level1, family, a, b, c):
    _, disc = level1[family]
    u = disc.interpolate(lambda x, y: a * x + b * y + c)
    g = disc.gradients(u)
    assert np.abs(g - [a, b]).max() <= 1e-12 * max(1, abs(a), abs(b), abs(c))
    assert np.abs(disc.consistent_gradients(u) - [a, b]).max() <= 1e-12 * max(1, abs(a), abs(b), abs(c))


# -- half-diamonds and norms ---------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
def test_half_diamond_partition(level1, family):
    mesh, disc = level1[family]
    assert (disc.hd_distance > 0).all()
    tot = np.bincount(disc.hd_cell, disc.hd_measure, minlength=mesh.n_cells)
    np.testing.assert_allclose(tot, mesh.areas, rtol=0, atol=1e-12)
    hd = disc.half_diamond(3, mesh.cell_faces(3)[1])
    assert hd.measure == pytest.approx(0.5 * mesh.face_measures[hd.face] * hd.distance)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_norm_is_a_norm(level1, family, rng):
    _, disc = level1[family]
    for _ in range(100):
        u = rng.standard_normal(disc.n_dofs)
        u[disc.boundary_dofs] = 0
        assert disc.gradient_norm(u) > 0


# -- local matrices ----------------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
def test_local_matrices_spsd(level1, family):
    _, disc = level1[family]
    for dofs, A in disc.local_matrices():
        assert np.abs(A - A.transpose(0, 2, 1)).max() < 1e-13
        w = np.linalg.eigvalsh(A)
        assert (w[:, 0] >= -1e-12 * w[:, -1]).all()
        assert np.abs(A.sum(axis=2)).max() < 1e-12


def test_local_matrix_affine_energy():
    disc = square_disc()
    u = disc.interpolate(lambda x, y: x)
    lm = disc.local_diffusion_matrix(0)
    uk = u[lm.dofs]
    assert uk @ lm.matrix @ uk == pytest.approx(1.0, abs=1e-13)
    np.testing.assert_allclose(lm.matrix @ np.ones(5), 0, atol=1e-14)


def test_local_matrix_matches_half_diamond_sum(rng):
    # random convex pentagon; independent evaluation of the stabilised gradient
    ang = np.sort(rng.uniform(0, 2 * np.pi, 5))
    r = rng.uniform(0.6, 1.0, 5)
    pts = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    mesh = build_mesh(pts, [list(range(5))])
    disc = HMMDiscretisation(mesh)
    lam = 1.7
    lm = disc.local_diffusion_matrix(0, lam)
    xk = mesh.barycenters[0]
    faces = mesh.cell_faces(0)
    normals = mesh.outward_normals(0)

    def grads(u):
        uK, uf = u[0], u[1:]
        G = sum(mesh.face_measures[s] * uf[i] * normals[i] for i, s in enumerate(faces)) / mesh.areas[0]
        out = []
        for i, s in enumerate(faces):
            xs = mesh.face_midpoints[s]
            d = abs(np.dot(xs - xk, normals[i]))
            R = uf[i] - uK - G @ (xs - xk)
            out.append((G + SQ2 / d * R * normals[i], 0.5 * mesh.face_measures[s] * d))
        return out

    for _ in range(5):
        u, v = rng.standard_normal(6), rng.standard_normal(6)
        brute = lam * sum(m * gu @ gv for (gu, m), (gv, _) in zip(grads(u), grads(v)))
        assert u @ lm.matrix @ v == pytest.approx(brute, abs=1e-12)


def test_dump_local_matrices():
    disc = square_disc()
    buf = io.StringIO()
    disc.dump_local_matrices(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("CELL 0 DOFS 0 ")
    A = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    np.testing.assert_array_equal(A, disc.local_diffusion_matrix(0).matrix)


# -- fluxes ---------------------------------------------------------------------------------

def test_fluxes_constant_and_affine(level1):
    for mesh, disc in level1.values():
        assert np.abs(disc.all_fluxes(np.ones(disc.n_dofs))).max() < 1e-12
        u = disc.interpolate(lambda x, y: x)
        F = disc.all_fluxes(u)
        nx = mesh.face_normals[disc.hd_face, 0] * mesh.cell_face_sign
        np.testing.assert_allclose(F, -nx, atol=1e-12)


def test_flux_local_balance(level1, rng):
    mesh, disc = level1["nonconforming"]
    u = rng.standard_normal(disc.n_dofs)
    for k in (0, 5, mesh.n_cells - 1):
        F = disc.fluxes(u, k)
        lm = disc.local_diffusion_matrix(k)
        meas = mesh.face_measures[mesh.cell_faces(k)]
        assert np.sum(meas * F) == pytest.approx((lm.matrix @ u[lm.dofs])[0], abs=1e-12)
        np.testing.assert_allclose(
            F, disc.all_fluxes(u)[mesh.cell_ptr[k]:mesh.cell_ptr[k + 1]], atol=1e-14)


@pytest.mark.parametrize("family", FAMILIES)
def test_conservativity(level1, family, rng):
    mesh, disc = level1[family]
    u = harmonic_extension(disc, rng)
    F = disc.all_fluxes(u, lam=2.0)
    sums = np.bincount(disc.hd_face, F, minlength=mesh.n_faces)
    assert np.abs(sums[~mesh.is_boundary]).max() < 1e-11
